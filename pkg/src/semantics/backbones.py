from typing import List
import torch
from torch import nn
from torch.nn import functional as F
from src.config import SemanticsConfig
from src.errors import MissingBackendError
from src.logger import logger

STUB_LAYERS = 12


class TokenBackbone(nn.Module):
    """
    A frozen ViT-like encoder.

    `hidden_states(x)[k]` is the sequence after block k (k = 0 is the patch
    embedding), shape [B, 1 + n_patches, d], class token first.
    """

    patch_size: int

    def hidden_states(self, pixels: torch.Tensor) -> List[torch.Tensor]:
        raise NotImplementedError

    @property
    def num_layers(self) -> int:
        raise NotImplementedError


class DinoBackbone(TokenBackbone):
    def __init__(self, model_name: str = "facebook/dino-vits8", input_size: int = 224):
        super().__init__()
        try:
            from transformers import ViTModel

            self.model = ViTModel.from_pretrained(model_name, add_pooling_layer=False)
        except (ImportError, OSError) as e:
            raise MissingBackendError(f"ViT backbone '{model_name}'") from e

        self.model.requires_grad_(False)
        self.model.eval()
        self.patch_size = self.model.config.patch_size
        self.interpolate = input_size != self.model.config.image_size
        logger.info(f"[green]Loaded ViT backbone {model_name} (patch {self.patch_size})[/green]")

    @property
    def num_layers(self) -> int:
        return self.model.config.num_hidden_layers

    def hidden_states(self, pixels: torch.Tensor) -> List[torch.Tensor]:
        kwargs = {"interpolate_pos_encoding": True} if self.interpolate else {}
        outputs = self.model(pixel_values=pixels, output_hidden_states=True, **kwargs)
        return list(outputs.hidden_states)


class StubBackbone(TokenBackbone):
    """Seeded linear patch embedder per layer; the class token is a constant row"""

    def __init__(self, patch_size: int = 8, dim: int = 32, seed: int = 0, num_layers: int = STUB_LAYERS):
        super().__init__()
        self.patch_size = patch_size
        self.dim = dim
        self._num_layers = num_layers
        generator = torch.Generator().manual_seed(seed)
        fan_in = 3 * patch_size * patch_size
        projections = torch.randn(num_layers + 1, fan_in, dim, generator=generator) / fan_in ** 0.5
        self.register_buffer("projections", projections)

    @property
    def num_layers(self) -> int:
        return self._num_layers

    def patches(self, pixels: torch.Tensor) -> torch.Tensor:
        """[B, n_patches, 3 * p * p], row-major over the patch grid"""
        return F.unfold(pixels, self.patch_size, stride=self.patch_size).transpose(1, 2)

    def hidden_states(self, pixels: torch.Tensor) -> List[torch.Tensor]:
        patches = self.patches(pixels)
        states = []
        for layer in range(self._num_layers + 1):
            tokens = patches @ self.projections[layer].to(patches)
            cls = torch.full_like(tokens[:, :1], float(layer))
            states.append(torch.cat([cls, tokens], dim=1))
        return states


def build_backbone(config: SemanticsConfig) -> TokenBackbone:
    if config.backend == "stub":
        return StubBackbone(config.patch_size, config.stub_dim, config.stub_seed)
    return DinoBackbone(config.model_name, config.input_size)
