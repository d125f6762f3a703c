from pathlib import Path
from typing import List, Optional
import torch
from pydantic import BaseModel, ConfigDict
from torch.nn import functional as F
from src.config import InversionConfig, StylizerConfig
from src.errors import MissingBackendError
from src.generator.latents import N_LAYERS, STYLE_DIM, LatentCode, broadcast_rows
from src.generator.synthesis import Generator
from src.logger import logger
from src.perceptual import PerceptualDistance, build_perceptual


class InversionResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    latent: LatentCode
    initial_loss: float
    best_loss: float
    final_loss: float
    history: List[float]  # best-so-far per evaluation, starting at the mean latent

    @property
    def converged(self) -> bool:
        return self.final_loss <= self.initial_loss


class Inverter:
    """Optimises a W+ code from the mean latent to reproduce an image with a frozen generator"""

    def __init__(self, generator: Generator, config: InversionConfig, perceptual: Optional[PerceptualDistance] = None):
        self.generator = generator
        self.config = config
        self.perceptual = perceptual or build_perceptual(config.perceptual_backend)
        self.perceptual.to(generator.latent_avg.device)

    def reconstruction_loss(self, rendered: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        l1 = F.l1_loss(rendered, target)
        percept = self.perceptual(rendered, target).mean()
        return self.config.l1_weight * l1 + self.config.perceptual_weight * percept

    def invert(self, image: torch.Tensor, steps: Optional[int] = None) -> InversionResult:
        steps = self.config.steps if steps is None else steps
        image = image if image.dim() == 4 else image.unsqueeze(0)
        if image.shape[-1] != self.generator.size or image.shape[-2] != self.generator.size:
            raise ValueError(
                f"Image is {tuple(image.shape[-2:])}, generator renders {self.generator.size}x{self.generator.size}"
            )
        image = image.to(self.generator.latent_avg)

        w = broadcast_rows(self.generator.latent_avg.detach()[None]).clone().requires_grad_(True)
        optimizer = torch.optim.Adam([w], lr=self.config.lr)

        best_w = w.detach().clone()
        history = []
        for step in range(steps + 1):
            current = w.detach().clone()
            optimizer.zero_grad()
            loss = self.reconstruction_loss(self.generator(w, deform=False), image)
            value = loss.item()

            if step == 0:
                initial = best = value
            elif value < best:
                best, best_w = value, current
            history.append(best)

            if step == steps:
                break
            loss.backward()
            optimizer.step()

        final = value
        if final > initial:
            logger.warning(
                f"[yellow]Inversion did not converge (final {final:.4f} > initial {initial:.4f}); "
                f"returning best iterate ({best:.4f})[/yellow]"
            )
        else:
            logger.debug(f"Inversion loss {initial:.4f} -> {best:.4f} in {steps} steps")

        return InversionResult(
            latent=LatentCode(values=best_w[0]),
            initial_loss=initial,
            best_loss=best,
            final_loss=final,
            history=history,
        )


def invert_reference(
    image: torch.Tensor,
    frozen_generator: Generator,
    steps: Optional[int] = None,
    config: Optional[InversionConfig] = None,
    perceptual: Optional[PerceptualDistance] = None,
) -> LatentCode:
    inverter = Inverter(frozen_generator, config or InversionConfig(), perceptual)
    return inverter.invert(image, steps).latent


class TorchScriptEncoder:
    """Feed-forward image -> W+ encoder exported with torch.jit"""

    def __init__(self, path: Path, device: str = "cpu"):
        self.module = torch.jit.load(str(path), map_location=device)
        self.module.eval()

    @torch.no_grad()
    def __call__(self, image: torch.Tensor) -> LatentCode:
        image = image if image.dim() == 4 else image.unsqueeze(0)
        codes = self.module(image)
        if tuple(codes.shape[-2:]) != (N_LAYERS, STYLE_DIM):
            raise ValueError(f"Encoder produced {tuple(codes.shape)}, expected [B, {N_LAYERS}, {STYLE_DIM}]")
        return LatentCode(values=codes[0])


def encode_image(
    image: torch.Tensor,
    generator: Generator,
    config: StylizerConfig,
    weights_client=None,
    perceptual: Optional[PerceptualDistance] = None,
) -> LatentCode:
    """Encoder when configured, otherwise optimisation-based inversion"""
    if config.encoder.checkpoint is not None:
        from src.clients.weights import WeightsClient

        client = weights_client or WeightsClient(config.checkpoints)
        encoder = TorchScriptEncoder(client.resolve(config.encoder.checkpoint), str(generator.latent_avg.device))
        return encoder(image.to(generator.latent_avg))

    if not config.inversion.enabled:
        raise MissingBackendError("image encoder (encoder.checkpoint unset and inversion disabled)")
    return invert_reference(image, generator, config=config.inversion, perceptual=perceptual)
