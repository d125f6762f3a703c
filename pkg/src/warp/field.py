"""
Warping fields: control-point displacements on a regular grid, interpolated to a
dense sampling grid by a thin-plate spline.

Coordinates are normalised to [-1, 1] in (x, y) order, pixel centres at
(2k + 1) / size - 1, matching ``grid_sample(..., align_corners=False)``.
"""
import functools
from typing import Optional, Tuple
import torch
from pydantic import BaseModel, ConfigDict, model_validator
from src.errors import SingularSolveError
from src.logger import logger

KERNEL_REGULARIZER = 1e-6


def canonical_lattice(
    height: int,
    width: int,
    dtype: torch.dtype = torch.float32,
    device: Optional[torch.device] = None,
) -> torch.Tensor:
    """Pixel-centre coordinates of an H x W map, shape [H, W, 2]"""
    xs = (torch.arange(width, dtype=torch.float64) * 2 + 1) / width - 1
    ys = (torch.arange(height, dtype=torch.float64) * 2 + 1) / height - 1
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([grid_x, grid_y], dim=-1).to(dtype=dtype, device=device)


def control_lattice(grid_h: int, grid_w: int, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """Control point locations spanning [-1, 1], shape [grid_h * grid_w, 2]"""
    xs = torch.linspace(-1, 1, grid_w, dtype=dtype)
    ys = torch.linspace(-1, 1, grid_h, dtype=dtype)
    grid_y, grid_x = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([grid_x, grid_y], dim=-1).reshape(-1, 2)


def _radial_kernel(points_a: torch.Tensor, points_b: torch.Tensor) -> torch.Tensor:
    """U(r) = r^2 log r^2 between two point sets, U(0) = 0"""
    dist_sq = (points_a.unsqueeze(1) - points_b.unsqueeze(0)).pow(2).sum(-1)
    return dist_sq * torch.log(dist_sq.clamp_min(1e-12))


def tps_interpolation_matrix(controls: torch.Tensor, queries: torch.Tensor) -> torch.Tensor:
    """
    Linear map from control displacements to query displacements.

    Solves the TPS system [[K + eps*I, P], [P^T, 0]] once per control layout and
    returns M with shape [n_queries, n_controls], so that dense = M @ control.
    """
    n_controls = controls.shape[0]
    dtype = controls.dtype

    kernel = _radial_kernel(controls, controls)
    kernel = kernel + KERNEL_REGULARIZER * torch.eye(n_controls, dtype=dtype)
    affine = torch.cat([torch.ones(n_controls, 1, dtype=dtype), controls], dim=1)

    top = torch.cat([kernel, affine], dim=1)
    bottom = torch.cat([affine.T, torch.zeros(3, 3, dtype=dtype)], dim=1)
    system = torch.cat([top, bottom], dim=0)

    rhs = torch.eye(n_controls + 3, dtype=dtype)[:, :n_controls]
    solution, info = torch.linalg.solve_ex(system, rhs)
    if int(info) != 0 or not torch.isfinite(solution).all():
        raise SingularSolveError(
            f"TPS system with {n_controls} control points is singular "
            f"(collinear or duplicate control points)"
        )

    query_kernel = _radial_kernel(queries, controls)
    query_affine = torch.cat([torch.ones(queries.shape[0], 1, dtype=dtype), queries], dim=1)
    return torch.cat([query_kernel, query_affine], dim=1) @ solution


@functools.lru_cache(maxsize=64)
def _lattice_matrix(
    grid_h: int, grid_w: int, height: int, width: int, dtype: torch.dtype, device: torch.device
) -> torch.Tensor:
    queries = canonical_lattice(height, width, dtype=torch.float64).reshape(-1, 2)
    matrix = tps_interpolation_matrix(control_lattice(grid_h, grid_w), queries)
    return matrix.to(dtype=dtype, device=device)


def interpolate_displacements(displacements: torch.Tensor, resolution: Tuple[int, int]) -> torch.Tensor:
    """Control displacements [B, gh, gw, 2] -> dense displacements [B, H, W, 2]"""
    batch, grid_h, grid_w, _ = displacements.shape
    height, width = resolution
    matrix = _lattice_matrix(grid_h, grid_w, height, width, displacements.dtype, displacements.device)
    dense = torch.einsum("qn,bnc->bqc", matrix, displacements.reshape(batch, grid_h * grid_w, 2))
    return dense.reshape(batch, height, width, 2)


class WarpField(BaseModel):
    """A TPS deformation: control displacements plus the dense sampling grid they induce"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    control_points: torch.Tensor
    dense_grid: torch.Tensor
    grid_size: Tuple[int, int]

    @model_validator(mode="after")
    def _check_shapes(self) -> "WarpField":
        if self.control_points.dim() != 4 or self.control_points.shape[-1] != 2:
            raise ValueError("control_points must have shape [B, grid_h, grid_w, 2]")
        if tuple(self.control_points.shape[1:3]) != tuple(self.grid_size):
            raise ValueError("control_points do not match grid_size")
        if not torch.isfinite(self.dense_grid.detach()).all():
            raise ValueError("dense_grid contains non-finite coordinates")
        return self

    @classmethod
    def from_displacements(cls, displacements: torch.Tensor, resolution: Tuple[int, int]) -> "WarpField":
        if displacements.dim() == 3:
            displacements = displacements.unsqueeze(0)
        height, width = resolution
        lattice = canonical_lattice(height, width, displacements.dtype, displacements.device)
        dense = lattice.unsqueeze(0) + interpolate_displacements(displacements, resolution)
        return cls(
            control_points=displacements,
            dense_grid=dense,
            grid_size=(displacements.shape[1], displacements.shape[2]),
        )

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.dense_grid.shape[1], self.dense_grid.shape[2]

    @property
    def batch_size(self) -> int:
        return self.control_points.shape[0]

    @property
    def dense_displacement(self) -> torch.Tensor:
        height, width = self.resolution
        lattice = canonical_lattice(height, width, self.dense_grid.dtype, self.dense_grid.device)
        return self.dense_grid - lattice

    def at_resolution(self, height: int, width: int) -> "WarpField":
        if (height, width) == self.resolution:
            return self
        return WarpField.from_displacements(self.control_points, (height, width))


def make_identity_field(
    grid_h: int,
    grid_w: int,
    resolution: Optional[Tuple[int, int]] = None,
    batch_size: int = 1,
    dtype: torch.dtype = torch.float32,
    device: Optional[torch.device] = None,
) -> WarpField:
    """The no-deformation field: zero displacements, canonical dense grid"""
    if grid_h < 2 or grid_w < 2:
        raise ValueError(f"Grid dimensions must be >= 2, got {grid_h}x{grid_w}")
    resolution = resolution or (grid_h, grid_w)
    zeros = torch.zeros(batch_size, grid_h, grid_w, 2, dtype=dtype, device=device)
    return WarpField.from_displacements(zeros, resolution)


def interpolate_field(base: WarpField, target: WarpField, alpha: float) -> WarpField:
    """(1 - alpha) * base + alpha * target on the control points; dense grid recomputed"""
    if tuple(base.grid_size) != tuple(target.grid_size):
        raise ValueError(f"Grid mismatch: {base.grid_size} vs {target.grid_size}")
    if not 0.0 <= alpha <= 1.0:
        logger.warning(f"[yellow]Extrapolating warping field with alpha={alpha}[/yellow]")

    base_points = base.control_points.to(target.control_points)
    blended = (1 - alpha) * base_points + alpha * target.control_points
    return WarpField.from_displacements(blended, target.resolution)


def displacement_norm(field: WarpField) -> torch.Tensor:
    """Mean L2 length of the dense displacement, per batch item"""
    return field.dense_displacement.norm(dim=-1).mean(dim=(1, 2))
