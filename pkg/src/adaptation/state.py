import os
import tempfile
from pathlib import Path
from typing import List, Optional
import torch
from pydantic import BaseModel, ConfigDict
from torch import nn
from src.errors import BundleFormatError
from src.generator import ReferencePair
from src.logger import logger
from src.models import LossRecord

CHECKPOINT_NAME = "checkpoint.pt"


class TrainState(BaseModel):
    """Everything besides module weights needed to continue a run exactly"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int = 0
    rng_state: Optional[torch.Tensor] = None
    best_loss: float = float("inf")
    best_step: int = -1
    records: List[LossRecord] = []
    resume_key: Optional[str] = None

    def observe(self, record: LossRecord):
        self.records.append(record)
        if record.L_total < self.best_loss:
            self.best_loss = record.L_total
            self.best_step = record.step


def save_checkpoint(
    path: Path,
    state: TrainState,
    target: nn.Module,
    discriminator: nn.Module,
    optimizer_g: torch.optim.Optimizer,
    optimizer_d: torch.optim.Optimizer,
    refs: ReferencePair,
) -> Path:
    """torch.save to a temp file next to `path`, then rename over it"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "state": state.model_dump(exclude={"rng_state", "records"}),
        "records": [r.model_dump() for r in state.records],
        "rng_state": state.rng_state,
        "target": target.state_dict(),
        "discriminator": discriminator.state_dict(),
        "optimizer_g": optimizer_g.state_dict(),
        "optimizer_d": optimizer_d.state_dict(),
        "refs": refs.to_state(),
    }

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp_name)
        os.replace(tmp_name, path)
    finally:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)

    logger.info(f"[green]Checkpoint saved at step {state.step} to {path}[/green]")
    return path


def read_checkpoint(path: Path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu")
    except (RuntimeError, EOFError) as e:
        raise BundleFormatError(f"Unreadable checkpoint {path}: {e}") from e
    missing = {"state", "records", "target", "discriminator", "optimizer_g", "optimizer_d", "refs"} - set(payload)
    if missing:
        raise BundleFormatError(f"Checkpoint {path} lacks {sorted(missing)}")
    return payload


def load_checkpoint(
    path: Path,
    target: nn.Module,
    discriminator: nn.Module,
    optimizer_g: torch.optim.Optimizer,
    optimizer_d: torch.optim.Optimizer,
) -> TrainState:
    """Restore weights and optimizer moments in place and return the run state"""
    payload = read_checkpoint(path)
    target.load_state_dict(payload["target"])
    discriminator.load_state_dict(payload["discriminator"])
    optimizer_g.load_state_dict(payload["optimizer_g"])
    optimizer_d.load_state_dict(payload["optimizer_d"])

    state = TrainState(
        **payload["state"],
        rng_state=payload["rng_state"],
        records=[LossRecord(**r) for r in payload["records"]],
    )
    logger.info(f"[cyan]Resumed from {path} at step {state.step}[/cyan]")
    return state
