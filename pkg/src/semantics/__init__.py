from src.semantics.backbones import DinoBackbone, StubBackbone, TokenBackbone, build_backbone
from src.semantics.pca import PCAMaps, fit_joint_pca, pca_visualize
from src.semantics.tokens import (
    DirectionalVector,
    SemanticEncoder,
    StructureDescriptor,
    TokenMatrix,
    self_similarity,
)

__all__ = [
    "DinoBackbone",
    "DirectionalVector",
    "PCAMaps",
    "SemanticEncoder",
    "StructureDescriptor",
    "StubBackbone",
    "TokenBackbone",
    "TokenMatrix",
    "build_backbone",
    "fit_joint_pca",
    "pca_visualize",
    "self_similarity",
]
