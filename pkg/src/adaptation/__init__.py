from src.adaptation.references import color_align, prepare_references, reference_digest, reference_direction
from src.adaptation.state import TrainState, load_checkpoint, save_checkpoint
from src.adaptation.trainer import AdaptationSession, run_adaptation

__all__ = [
    "AdaptationSession",
    "TrainState",
    "color_align",
    "load_checkpoint",
    "prepare_references",
    "reference_digest",
    "reference_direction",
    "run_adaptation",
    "save_checkpoint",
]
