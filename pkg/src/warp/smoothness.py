from typing import Union
import torch
from src.warp.field import WarpField

DEGENERATE_NORM = 1e-8


def neighbour_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """
    Cosine similarity of displacement vectors along the last axis.

    Pairs involving a zero vector, and exactly equal pairs, count as parallel (1).
    """
    norm_a = (a * a).sum(-1).clamp_min(DEGENERATE_NORM ** 2).sqrt()
    norm_b = (b * b).sum(-1).clamp_min(DEGENERATE_NORM ** 2).sqrt()
    cosine = (a * b).sum(-1) / (norm_a * norm_b)

    degenerate = (norm_a <= DEGENERATE_NORM) | (norm_b <= DEGENERATE_NORM) | (a == b).all(-1)
    return torch.where(degenerate, torch.ones_like(cosine), cosine)


def smoothness_regularizer(field: Union[WarpField, torch.Tensor]) -> torch.Tensor:
    """
    Sum over interior grid nodes of 2 - sim(left, node) - sim(up, node).

    Compares control-point displacements, which the interpolating spline
    reproduces at the control locations. Batched fields are averaged.
    """
    displacements = field.control_points if isinstance(field, WarpField) else field
    if displacements.dim() == 3:
        displacements = displacements.unsqueeze(0)
    if displacements.shape[1] < 2 or displacements.shape[2] < 2:
        raise ValueError("Smoothness needs a grid of at least 2 x 2")

    node = displacements[:, 1:, 1:]
    left = displacements[:, 1:, :-1]
    up = displacements[:, :-1, 1:]

    per_node = 2 - neighbour_similarity(left, node) - neighbour_similarity(up, node)
    return per_node.sum(dim=(1, 2)).mean()
