"""
ViT token features as structure descriptors.

Tokens are taken from the configured L/M/H layers with the class token
dropped. The self-similarity descriptor is the flattened matrix of pairwise
cosine similarities between an image's tokens; a directional vector is the
flattened token difference between two images over one or more levels.
"""
from typing import Dict, Iterable, Optional, Tuple, Union
import torch
from pydantic import BaseModel, ConfigDict
from torch.nn import functional as F
from src.config import LEVEL_NAMES, SemanticsConfig
from src.semantics.backbones import TokenBackbone, build_backbone


class TokenMatrix(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tokens: torch.Tensor  # [n_patches, d] or [B, n_patches, d]
    level: Union[str, int]
    source_resolution: int

    @property
    def n_patches(self) -> int:
        return self.tokens.shape[-2]


class StructureDescriptor(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: torch.Tensor  # [n_patches ** 2] or [B, n_patches ** 2]
    norm: str = "cosine"


class DirectionalVector(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: torch.Tensor  # [D] or [B, D]
    levels: Tuple[str, ...]

    def __neg__(self) -> "DirectionalVector":
        return DirectionalVector(values=-self.values, levels=self.levels)


def self_similarity(tokens: TokenMatrix) -> StructureDescriptor:
    """Per-pair cosine similarity of every token with every other, flattened row-major"""
    t = tokens.tokens
    norms = t.norm(dim=-1, keepdim=True)
    if (norms == 0).any():
        rows = (norms.squeeze(-1) == 0).nonzero()[:, -1].unique().tolist()
        raise ValueError(f"Token rows {rows} at level {tokens.level} have zero norm; cosine similarity is undefined")
    unit = t / norms
    similarity = unit @ unit.transpose(-1, -2)
    return StructureDescriptor(values=similarity.flatten(-2))


class SemanticEncoder:
    """Resizes and normalises images, runs the frozen backbone and slices levels"""

    def __init__(self, config: SemanticsConfig, backbone: Optional[TokenBackbone] = None):
        self.config = config
        self.backbone = backbone or build_backbone(config)
        self.backbone.requires_grad_(False)
        self.backbone.eval()
        self._mean = torch.tensor(config.mean).view(1, 3, 1, 1)
        self._std = torch.tensor(config.std).view(1, 3, 1, 1)

    def to(self, device) -> "SemanticEncoder":
        self.backbone.to(device)
        return self

    @property
    def grid_side(self) -> int:
        return self.config.input_size // self.backbone.patch_size

    def preprocess(self, images: torch.Tensor) -> torch.Tensor:
        """[-1, 1] images -> backbone input at config.input_size with ImageNet statistics"""
        x = (images + 1) / 2
        if x.shape[-1] != self.config.input_size or x.shape[-2] != self.config.input_size:
            x = F.interpolate(x, size=self.config.input_size, mode="bilinear", align_corners=False, antialias=True)
        mean = self._mean.to(x)
        std = self._std.to(x)
        return (x - mean) / std

    def _layer(self, level: Union[str, int]) -> int:
        if isinstance(level, int):
            layer = level
        elif level not in self.config.levels:
            raise ValueError(f"Unknown feature level '{level}', expected one of {list(LEVEL_NAMES)}")
        else:
            layer = self.config.levels[level]
        if not 0 <= layer <= self.backbone.num_layers:
            raise ValueError(f"Level {level} maps to layer {layer}, backbone has {self.backbone.num_layers}")
        return layer

    def extract_levels(self, images: torch.Tensor, levels: Iterable[Union[str, int]]) -> Dict[str, TokenMatrix]:
        """One backbone pass, tokens for each requested level"""
        levels = list(levels)
        layers = {level: self._layer(level) for level in levels}
        batched = images.dim() == 4
        x = images if batched else images.unsqueeze(0)

        states = self.backbone.hidden_states(self.preprocess(x))
        result = {}
        for level in levels:
            tokens = states[layers[level]][:, 1:]
            if tokens.shape[1] != self.grid_side ** 2:
                raise ValueError(f"Backbone returned {tokens.shape[1]} patch tokens, expected {self.grid_side ** 2}")
            result[level] = TokenMatrix(
                tokens=tokens if batched else tokens[0],
                level=level,
                source_resolution=self.config.input_size,
            )
        return result

    def extract_tokens(self, image: torch.Tensor, level: Union[str, int]) -> TokenMatrix:
        return self.extract_levels(image, [level])[level]

    def structure(self, images: torch.Tensor, level: Optional[str] = None) -> StructureDescriptor:
        return self_similarity(self.extract_tokens(images, level or self.config.consistency_level))

    def deformation_direction(
        self, image_a: torch.Tensor, image_b: torch.Tensor, levels: Optional[Iterable[str]] = None
    ) -> DirectionalVector:
        """Concatenated, flattened tokens(b) - tokens(a) over the given levels"""
        levels = tuple(levels or self.config.direction_levels)
        tokens_a = self.extract_levels(image_a, levels)
        tokens_b = self.extract_levels(image_b, levels)
        parts = [(tokens_b[level].tokens - tokens_a[level].tokens).flatten(-2) for level in levels]
        return DirectionalVector(values=torch.cat(parts, dim=-1), levels=levels)
