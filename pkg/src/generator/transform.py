from typing import Optional, Tuple
import torch
from torch import nn
from src.warp import (
    AffinePredictor,
    TPSPredictor,
    WarpField,
    affine_warp,
    interpolate_field,
    make_identity_field,
    tps_warp,
)


class Transform(nn.Module):
    """
    Feature-map deformation plugged after a synthesis block.

    A basic STN (translation, rotation, scale) runs first, then the TPS-STN
    warps locally. `alpha` blends both toward identity; alpha=0 skips warping.
    """

    def __init__(self, channels: int, resolution: int, grid_size: int = 10, stn_channels: int = 64, stn_hidden: int = 128):
        super().__init__()
        self.resolution = resolution
        self.grid_size = grid_size
        self.basic = AffinePredictor(channels, resolution, stn_channels, stn_hidden)
        self.tps = TPSPredictor(channels, resolution, grid_size, stn_channels, stn_hidden)

    def forward(self, x: torch.Tensor, alpha: float = 1.0) -> Tuple[torch.Tensor, Optional[WarpField]]:
        if alpha == 0:
            return x, None

        params = self.basic.predict(x)
        if alpha != 1:
            params = params.scaled(alpha)
        x = affine_warp(x, params)

        field = self.tps.predict(x)
        if alpha != 1:
            identity = make_identity_field(
                self.grid_size, self.grid_size, field.resolution, dtype=x.dtype, device=x.device
            )
            field = interpolate_field(identity, field, alpha)
        return tps_warp(x, field), field
