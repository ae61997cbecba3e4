"""Datasets: CIFAR-10 binary ingestion, a synthetic bar-pattern generator,
deterministic splits and validation sampling."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

log = logging.getLogger(__name__)

CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


class MalformedFileError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class Batch:
    images: np.ndarray  # [N, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64

    def __post_init__(self):
        if len(self.images) < 1 or len(self.images) != len(self.labels):
            raise ValueError(f"batch needs N >= 1 matching labels, got {len(self.images)}/{len(self.labels)}")

    def __len__(self):
        return len(self.labels)


@dataclass
class Split:
    """A batch source: images, labels and the global example index of each row."""

    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.labels)

    def batches(self, batch_size: int, order: np.ndarray | None = None) -> Iterator[Batch]:
        order = np.arange(len(self)) if order is None else order
        for s in range(0, len(order), batch_size):
            sel = order[s:s + batch_size]
            yield Batch(self.images[sel], self.labels[sel])

    def as_batch(self) -> Batch:
        return Batch(self.images, self.labels)


@dataclass
class DatasetSplits:
    train: Split
    val_pool: Split
    test: Split
    num_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.train.images.shape[1:])


@dataclass
class ValidationSample:
    batches: list[Batch]
    seed: int
    total_images: int
    indices: np.ndarray  # positions in the val pool, in draw order

    @property
    def n_val(self) -> int:
        return len(self.batches)


# ---------------------------------------------------------------------------
# CIFAR-10


def parse_cifar_records(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Decode CIFAR-10 binary records into (uint8 images [N,3,32,32], labels [N])."""
    if len(raw) % CIFAR_RECORD_BYTES:
        raise MalformedFileError(
            f"length {len(raw)} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record size")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    return rec[:, 1:].reshape(-1, 3, 32, 32), rec[:, 0].astype(np.int64)


def write_cifar_records(path, images: np.ndarray, labels) -> None:
    """Inverse of :func:`parse_cifar_records` (uint8 images [N,3,32,32])."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def _read_cifar_file(path):
    with open(path, "rb") as fh:
        try:
            return parse_cifar_records(fh.read())
        except MalformedFileError as e:
            raise MalformedFileError(f"{path}: {e}") from None


def load_cifar10(path, class_subset=tuple(range(10)), max_per_class: int | None = None,
                 seed: int = 0, val_fraction: float = 0.2) -> DatasetSplits:
    """Load the binary CIFAR-10 release from ``path``.

    Training files are filtered to ``class_subset`` (labels remapped to
    0..len-1 in subset order), capped at ``max_per_class`` per class, then
    split per class into train and validation pool. ``test_batch.bin``
    becomes the test split, filtered but not capped.
    """
    class_subset = [int(c) for c in class_subset]
    bad = [c for c in class_subset if not 0 <= c < 10]
    if bad or not class_subset or len(set(class_subset)) != len(class_subset):
        raise ConfigError(f"invalid CIFAR-10 class subset {class_subset}")
    if not os.path.isdir(path):
        raise FileNotFoundError(f"CIFAR-10 directory not found: {path}")
    train_files = [os.path.join(path, f) for f in CIFAR_TRAIN_FILES if os.path.exists(os.path.join(path, f))]
    test_file = os.path.join(path, CIFAR_TEST_FILE)
    if not train_files or not os.path.exists(test_file):
        raise FileNotFoundError(f"{path} lacks data_batch_*.bin / {CIFAR_TEST_FILE}")

    parts = [_read_cifar_file(f) for f in train_files]
    tr_img = np.concatenate([p[0] for p in parts])
    tr_lab = np.concatenate([p[1] for p in parts])
    te_img, te_lab = _read_cifar_file(test_file)
    remap = {c: i for i, c in enumerate(class_subset)}

    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c in class_subset:
        idx = np.flatnonzero(tr_lab == c)
        if max_per_class is not None:
            idx = idx[:max_per_class]
        idx = rng.permutation(idx)
        n_val = int(round(len(idx) * val_fraction))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    test_idx = np.flatnonzero(np.isin(te_lab, class_subset))

    def make(img, lab, idx, offset):
        images = img[idx].astype(np.float32) / np.float32(255.0)
        labels = np.array([remap[int(l)] for l in lab[idx]], dtype=np.int64)
        return Split(images, labels, idx + offset)

    # test indices are offset past the training files so all splits share one index space
    return DatasetSplits(
        train=make(tr_img, tr_lab, train_idx, 0),
        val_pool=make(tr_img, tr_lab, val_idx, 0),
        test=make(te_img, te_lab, test_idx, len(tr_lab)),
        num_classes=len(class_subset),
        meta={"dataset": "cifar10", "classes": ",".join(map(str, class_subset)),
              "max_per_class": max_per_class, "seed": seed},
    )


# ---------------------------------------------------------------------------
# synthetic bars


def _bar_images(labels, num_classes, hw, rng, noise):
    n = len(labels)
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64)
    yy = (yy - (hw - 1) / 2)[None]
    xx = (xx - (hw - 1) / 2)[None]
    angle = np.pi * labels / num_classes + rng.normal(0, 0.08, n)
    offset = rng.uniform(-hw / 4, hw / 4, n)
    width = rng.uniform(0.8, 1.6, n)
    # signed distance from a line through (offset along the normal) at the given angle
    dist = xx * np.sin(angle)[:, None, None] - yy * np.cos(angle)[:, None, None] - offset[:, None, None]
    bar = np.exp(-0.5 * (dist / width[:, None, None]) ** 2)
    color = rng.uniform(0.4, 1.0, (n, 3))
    background = rng.uniform(0.0, 0.3, (n, 3))
    img = background[:, :, None, None] + (color - background)[:, :, None, None] * bar[:, None]
    img += rng.normal(0, noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_dataset(num_classes: int = 4, size: int = 2400, image_hw: int = 16, seed: int = 0,
                  noise: float = 0.25, fractions=(0.6, 0.2, 0.2)) -> DatasetSplits:
    """Class-conditional oriented bars on a random background, plus pixel noise.

    Class ``c`` draws a bar at angle ``c * pi / num_classes`` (jittered) with a
    random offset, width and colour. Exactly ``size // num_classes`` examples
    per class; the shuffled pool is cut into train / val_pool / test by
    ``fractions``.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if size < num_classes:
        raise ValueError(f"size {size} smaller than num_classes {num_classes}")
    rng = np.random.default_rng(seed)
    per_class = size // num_classes
    labels = np.repeat(np.arange(num_classes), per_class)
    images = _bar_images(labels, num_classes, image_hw, rng, noise)
    order = rng.permutation(len(labels))
    n_train = int(round(fractions[0] * len(order)))
    n_val = int(round(fractions[1] * len(order)))
    cuts = [order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]]
    splits = [Split(images[np.sort(c)], labels[np.sort(c)], np.sort(c)) for c in cuts]
    return DatasetSplits(*splits, num_classes=num_classes,
                         meta={"dataset": "synth", "num_classes": num_classes, "size": size,
                               "image_hw": image_hw, "seed": seed, "noise": noise})


# ---------------------------------------------------------------------------


def sample_validation(splits: DatasetSplits, total_images: int = 256, batch_size: int = 32,
                      seed: int = 0) -> ValidationSample:
    """Uniform sample without replacement from the validation pool, cut into equal batches."""
    pool = splits.val_pool
    if total_images > len(pool):
        raise ValueError(f"requested {total_images} validation images but the pool holds {len(pool)}")
    if batch_size < 1 or total_images < 1 or total_images % batch_size:
        raise ValueError(f"batch_size {batch_size} must divide total_images {total_images}")
    idx = np.random.default_rng(seed).choice(len(pool), size=total_images, replace=False)
    log.debug("validation sample seed=%d indices=%s", seed, idx.tolist())
    batches = [Batch(pool.images[idx[s:s + batch_size]], pool.labels[idx[s:s + batch_size]])
               for s in range(0, total_images, batch_size)]
    return ValidationSample(batches=batches, seed=seed, total_images=total_images, indices=idx)
