from src.clients.weights import fetch_checkpoint
from src.toolkit.commands import (
    cli_evaluate,
    cli_stylize,
    cli_sweep,
    cli_train,
    cli_visualize_features,
    read_seeds,
    run_directory,
)
from src.toolkit.images import load_image, save_image
from src.toolkit.metrics import MetricSuite, direction_cosine, evaluate_bundle

__all__ = [
    "MetricSuite",
    "cli_evaluate",
    "cli_stylize",
    "cli_sweep",
    "cli_train",
    "cli_visualize_features",
    "direction_cosine",
    "evaluate_bundle",
    "fetch_checkpoint",
    "load_image",
    "read_seeds",
    "run_directory",
    "save_image",
]
