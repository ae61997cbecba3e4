from .cli import cmd_compare, cmd_prune, cmd_train, main
from .config import ExperimentConfig, UsageError

__all__ = ["ExperimentConfig", "UsageError", "cmd_compare", "cmd_prune", "cmd_train", "main"]
