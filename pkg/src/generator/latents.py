from typing import Optional, Union
import torch
from pydantic import BaseModel, ConfigDict, model_validator

N_LAYERS = 18
STYLE_DIM = 512
FINE_SPLIT = 9


class LatentCode(BaseModel):
    """A W+ code: 18 rows of 512, optionally with a leading batch axis"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: torch.Tensor
    space: str = "W+"

    @model_validator(mode="after")
    def _check_shape(self) -> "LatentCode":
        if self.values.dim() not in (2, 3) or tuple(self.values.shape[-2:]) != (N_LAYERS, STYLE_DIM):
            raise ValueError(f"W+ codes must be {N_LAYERS} x {STYLE_DIM}, got {tuple(self.values.shape)}")
        return self

    @property
    def batched(self) -> torch.Tensor:
        return self.values if self.values.dim() == 3 else self.values.unsqueeze(0)

    def rows(self, first: int, last: int) -> torch.Tensor:
        """Rows first..last inclusive, 1-based"""
        if not 1 <= first <= last <= N_LAYERS:
            raise ValueError(f"Row range {first}..{last} outside 1..{N_LAYERS}")
        return self.values[..., first - 1:last, :]

    def detach(self) -> "LatentCode":
        return LatentCode(values=self.values.detach().clone())


def mix_rows(w: torch.Tensor, w_ref: torch.Tensor, split: int = FINE_SPLIT) -> torch.Tensor:
    """Rows 1..split-1 from w, rows split..18 from w_ref (1-based)"""
    if not 1 <= split <= N_LAYERS:
        raise ValueError(f"Style-mix split must be in [1, {N_LAYERS}], got {split}")
    w_ref = w_ref.expand_as(w) if w_ref.shape != w.shape else w_ref
    return torch.cat([w[..., :split - 1, :], w_ref[..., split - 1:, :]], dim=-2)


def style_mix(w: LatentCode, w_ref: LatentCode, split: int = FINE_SPLIT) -> LatentCode:
    return LatentCode(values=mix_rows(w.values, w_ref.values.to(w.values), split))


def broadcast_rows(w: torch.Tensor) -> torch.Tensor:
    """[B, 512] W codes -> [B, 18, 512] W+ codes"""
    return w.unsqueeze(1).repeat(1, N_LAYERS, 1)


def as_tensor(w: Union[LatentCode, torch.Tensor]) -> torch.Tensor:
    if isinstance(w, LatentCode):
        return w.batched
    return w if w.dim() == 3 else w.unsqueeze(0)


class ReferencePair(BaseModel):
    """The single real/style example and their codes in the source W+ space"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    source_image: torch.Tensor  # [1, 3, H, W] in [-1, 1]
    target_image: torch.Tensor
    w_ref_s: LatentCode
    w_ref_t: LatentCode
    name: Optional[str] = None

    @model_validator(mode="after")
    def _same_resolution(self) -> "ReferencePair":
        if self.source_image.shape[-2:] != self.target_image.shape[-2:]:
            raise ValueError(
                f"Reference images differ in resolution: {tuple(self.source_image.shape[-2:])} "
                f"vs {tuple(self.target_image.shape[-2:])}"
            )
        return self

    def to_state(self) -> dict:
        return {
            "source_image": self.source_image.detach().cpu(),
            "target_image": self.target_image.detach().cpu(),
            "w_ref_s": self.w_ref_s.values.detach().cpu(),
            "w_ref_t": self.w_ref_t.values.detach().cpu(),
            "name": self.name,
        }

    @classmethod
    def from_state(cls, state: dict) -> "ReferencePair":
        return cls(
            source_image=state["source_image"],
            target_image=state["target_image"],
            w_ref_s=LatentCode(values=state["w_ref_s"]),
            w_ref_t=LatentCode(values=state["w_ref_t"]),
            name=state.get("name"),
        )
