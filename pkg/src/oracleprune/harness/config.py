"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Every key is optional; unknown
keys are rejected so typos surface immediately.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from ..data import DatasetSplits, load_cifar10, synth_dataset
from ..network import ARCHITECTURES, NetworkDef, build_architecture
from ..oracle import OracleConfig
from ..pruning import PruneConfig
from ..saliency import METRIC_NAMES, parse_metric
from ..training import TrainConfig


class UsageError(ValueError):
    pass


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _opt_int(s: str):
    return None if s.lower() in ("", "none", "all") else int(s)


@dataclass
class ExperimentConfig:
    name: str = "toy"
    dataset: str = "synth"
    data_dir: str = ""
    classes: tuple[int, ...] = (0, 1, 2, 3)
    max_per_class: int | None = 1500
    val_fraction: float = 0.2
    synth_classes: int = 4
    synth_size: int = 2400
    synth_noise: float = 0.25
    image_hw: int = 16
    data_seed: int = 0
    arch: str = "convnet2"
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 12
    lr_decay_epochs: int = 5
    lr_decay_gamma: float = 0.2
    weight_decay: float = 5e-4
    train_seed: int = 0
    metrics: tuple[str, ...] = METRIC_NAMES
    ks: tuple[int, ...] = (5,)
    replications: int = 8
    max_acc_drop: float = 0.05
    val_images: int = 256
    val_batch: int = 32
    val_seed: int = 0

    _parsers = {"classes": _ints, "ks": _ints, "metrics": _names, "max_per_class": _opt_int}

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.replications < 1:
            raise UsageError("replications must be >= 1")
        if self.dataset not in ("synth", "cifar10"):
            raise UsageError(f"dataset must be 'synth' or 'cifar10', got {self.dataset!r}")
        if self.arch not in ARCHITECTURES:
            raise UsageError(f"arch must be one of {sorted(ARCHITECTURES)}, got {self.arch!r}")
        for m in self.metrics:
            if m not in METRIC_NAMES:
                raise UsageError(f"metrics: unknown metric {m!r}; valid names: {', '.join(METRIC_NAMES)}")
        if any(k < 1 for k in self.ks):
            raise UsageError("ks: every k must be >= 1")

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = (p.strip() for p in line.partition("="))
            if not sep:
                raise UsageError(f"line {lineno}: expected 'key = value', got {raw!r}")
            if key not in known:
                raise UsageError(f"line {lineno}: unknown config key {key!r}")
            parse = cls._parsers.get(key)
            if parse is None:
                default = known[key].default
                parse = type(default) if default is not None else str
            try:
                values[key] = parse(val)
            except ValueError:
                raise UsageError(f"config key {key!r}: cannot parse {val!r}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as e:
            raise UsageError(f"--config: cannot read {path}: {e.strerror}") from None

    def items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append((f.name, ",".join(map(str, v)) if isinstance(v, tuple) else str(v)))
        return out

    # -- builders

    def load_data(self) -> DatasetSplits:
        if self.dataset == "synth":
            return synth_dataset(self.synth_classes, self.synth_size, self.image_hw, self.data_seed,
                                 noise=self.synth_noise)
        if not self.data_dir:
            raise UsageError("missing dataset path: set data_dir in the config (dataset = cifar10)")
        try:
            return load_cifar10(self.data_dir, self.classes, self.max_per_class, self.data_seed,
                                val_fraction=self.val_fraction)
        except FileNotFoundError as e:
            raise UsageError(f"data_dir: {e}") from None

    def network(self, splits: DatasetSplits) -> NetworkDef:
        return build_architecture(self.arch, splits.image_shape, splits.num_classes)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(lr=self.lr, momentum=self.momentum, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.train_seed if seed is None else seed, lr_decay_epochs=self.lr_decay_epochs,
                           lr_decay_gamma=self.lr_decay_gamma, weight_decay=self.weight_decay)

    def prune_config(self, metric: str, k: int, seed: int, max_acc_drop: float | None = None) -> PruneConfig:
        drop = self.max_acc_drop if max_acc_drop is None else max_acc_drop
        return PruneConfig(metric=parse_metric(metric), oracle=OracleConfig(k=k), max_test_acc_drop=drop,
                           seed=seed, val_images=self.val_images, val_batch=self.val_batch)
