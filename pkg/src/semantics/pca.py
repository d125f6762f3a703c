from typing import List, Union
import numpy as np
import torch
from pydantic import BaseModel, ConfigDict
from sklearn.decomposition import PCA
from src.logger import logger
from src.semantics.tokens import SemanticEncoder, TokenMatrix


class PCAMaps(BaseModel):
    """Per-image colour maps [h, w, k] in [0, 1] from one PCA fitted over all images"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    maps: List[np.ndarray]
    explained_variance_ratio: np.ndarray
    components: int
    level: Union[str, int]


def fit_joint_pca(token_matrices: List[TokenMatrix], components: int = 3) -> PCAMaps:
    if not token_matrices:
        raise ValueError("PCA visualisation needs at least one token matrix")
    arrays = [m.tokens.detach().cpu().double().reshape(-1, m.tokens.shape[-1]).numpy() for m in token_matrices]
    dim = arrays[0].shape[-1]
    if components > dim:
        raise ValueError(f"Requested {components} components from {dim}-dimensional tokens")

    stacked = np.concatenate(arrays, axis=0)
    rank = int(np.linalg.matrix_rank(stacked - stacked.mean(axis=0)))
    available = min(components, rank)
    if available < components:
        logger.warning(
            f"[yellow]Token covariance has rank {rank}; using {available} of {components} components[/yellow]"
        )

    side = int(round(arrays[0].shape[0] ** 0.5))
    if available == 0:
        maps = [np.zeros((side, side, 0)) for _ in arrays]
        return PCAMaps(maps=maps, explained_variance_ratio=np.zeros(0), components=0, level=token_matrices[0].level)

    pca = PCA(n_components=available)
    projected = pca.fit_transform(stacked)
    lo = projected.min(axis=0)
    hi = projected.max(axis=0)
    projected = (projected - lo) / (hi - lo + 1e-8)

    maps, start = [], 0
    for array in arrays:
        n = array.shape[0]
        maps.append(projected[start:start + n].reshape(side, side, available))
        start += n
    return PCAMaps(
        maps=maps,
        explained_variance_ratio=pca.explained_variance_ratio_,
        components=available,
        level=token_matrices[0].level,
    )


def pca_visualize(encoder: SemanticEncoder, images: List[torch.Tensor], level: Union[str, int], components: int = 3) -> PCAMaps:
    """Colour maps of the leading principal components of each image's tokens at `level`"""
    with torch.no_grad():
        tokens = [encoder.extract_tokens(image, level) for image in images]
    return fit_joint_pca(tokens, components)


def to_rgb(colour_map: np.ndarray) -> np.ndarray:
    """[h, w, k] in [0, 1] -> uint8 [h, w, 3], missing channels left black"""
    rgb = np.zeros(colour_map.shape[:2] + (3,))
    k = min(colour_map.shape[-1], 3)
    rgb[..., :k] = colour_map[..., :k]
    return (np.clip(rgb, 0, 1) * 255).astype(np.uint8)
