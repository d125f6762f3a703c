from typing import Optional
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, model_validator
from src.warp.field import WarpField


class AffineParams(BaseModel):
    """Translation, rotation and per-axis scale of a basic spatial transformer"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    translation: torch.Tensor  # [B, 2]
    rotation: torch.Tensor     # [B]
    scale: torch.Tensor        # [B, 2]

    @model_validator(mode="after")
    def _check(self) -> "AffineParams":
        if self.translation.shape[-1] != 2 or self.scale.shape[-1] != 2:
            raise ValueError("translation and scale must be 2-vectors")
        if not bool((self.scale.detach() > 0).all()):
            raise ValueError("Affine scale components must be strictly positive")
        return self

    @classmethod
    def identity(
        cls, batch_size: int = 1, dtype: torch.dtype = torch.float32, device: Optional[torch.device] = None
    ) -> "AffineParams":
        return cls(
            translation=torch.zeros(batch_size, 2, dtype=dtype, device=device),
            rotation=torch.zeros(batch_size, dtype=dtype, device=device),
            scale=torch.ones(batch_size, 2, dtype=dtype, device=device),
        )

    @classmethod
    def from_values(
        cls, translation=(0.0, 0.0), rotation: float = 0.0, scale=(1.0, 1.0), dtype: torch.dtype = torch.float32
    ) -> "AffineParams":
        return cls(
            translation=torch.tensor([translation], dtype=dtype),
            rotation=torch.tensor([rotation], dtype=dtype),
            scale=torch.tensor([scale], dtype=dtype),
        )

    def scaled(self, alpha: float) -> "AffineParams":
        """Move the transform toward identity in parameter space (log scale for the scale)"""
        return AffineParams(
            translation=self.translation * alpha,
            rotation=self.rotation * alpha,
            scale=torch.exp(torch.log(self.scale) * alpha),
        )

    def inverse_theta(self) -> torch.Tensor:
        """
        [B, 2, 3] sampling matrix of the inverse map.

        The forward map is T(p) = R S p + t, so the output at p reads the input
        at S^-1 R^T (p - t).
        """
        cos, sin = torch.cos(self.rotation), torch.sin(self.rotation)
        rot_t = torch.stack(
            [torch.stack([cos, sin], dim=-1), torch.stack([-sin, cos], dim=-1)], dim=-2
        )
        linear = rot_t / self.scale.unsqueeze(-1)
        offset = -(linear @ self.translation.unsqueeze(-1))
        return torch.cat([linear, offset], dim=-1)


def _as_batch(features: torch.Tensor):
    if features.dim() == 3:
        return features.unsqueeze(0), True
    if features.dim() != 4:
        raise ValueError(f"Expected a C x H x W or B x C x H x W feature map, got {tuple(features.shape)}")
    return features, False


def _match_batch(grid: torch.Tensor, batch: int) -> torch.Tensor:
    if grid.shape[0] == batch:
        return grid
    if grid.shape[0] == 1:
        return grid.expand(batch, *grid.shape[1:])
    raise ValueError(f"Field batch {grid.shape[0]} does not match feature batch {batch}")


def tps_warp(features: torch.Tensor, field: WarpField) -> torch.Tensor:
    """Bilinear resampling of `features` at the field's dense grid, border padding"""
    batch_features, squeeze = _as_batch(features)
    batch, _, height, width = batch_features.shape
    grid_h, grid_w = field.grid_size
    if height < grid_h or width < grid_w:
        raise ValueError(f"Feature map {height}x{width} is smaller than the {grid_h}x{grid_w} control grid")

    grid = field.at_resolution(height, width).dense_grid
    grid = _match_batch(grid.to(batch_features.dtype), batch)
    out = F.grid_sample(batch_features, grid, mode="bilinear", padding_mode="border", align_corners=False)
    return out.squeeze(0) if squeeze else out


def affine_warp(features: torch.Tensor, params: AffineParams) -> torch.Tensor:
    """Resample `features` under the inverse of the affine map, border padding"""
    batch_features, squeeze = _as_batch(features)
    batch = batch_features.shape[0]

    theta = _match_batch(params.inverse_theta().to(batch_features.dtype), batch)
    grid = F.affine_grid(theta, list(batch_features.shape), align_corners=False)
    out = F.grid_sample(batch_features, grid, mode="bilinear", padding_mode="border", align_corners=False)
    return out.squeeze(0) if squeeze else out
