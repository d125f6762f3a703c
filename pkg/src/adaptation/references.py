import hashlib
from typing import Iterable, Optional, Tuple, Union
import torch
from src.config import StylizerConfig
from src.errors import UndefinedDirectionError
from src.generator import Generator, LatentCode, ReferencePair, encode_image, mix_rows
from src.generator.latents import FINE_SPLIT, as_tensor
from src.logger import logger
from src.perceptual import PerceptualDistance
from src.semantics import DirectionalVector, SemanticEncoder


def reference_direction(
    source_image: torch.Tensor,
    target_image: torch.Tensor,
    encoder: SemanticEncoder,
    levels: Optional[Iterable[str]] = None,
) -> DirectionalVector:
    """d_ref from the raw reference images; a zero direction is rejected"""
    with torch.no_grad():
        direction = encoder.deformation_direction(source_image, target_image, levels)
    if direction.values.norm() == 0:
        raise UndefinedDirectionError(
            "Reference images encode identically; the reference deformation direction is zero"
        )
    return direction


def reference_digest(source_image: torch.Tensor, target_image: torch.Tensor) -> str:
    """SHA-256 of the reference pair pixels, shapes included"""
    digest = hashlib.sha256()
    for image in (source_image, target_image):
        image = image.detach().cpu().float().contiguous()
        digest.update(str(tuple(image.shape)).encode())
        digest.update(image.numpy().tobytes())
    return digest.hexdigest()


def prepare_references(
    source_image: torch.Tensor,
    target_image: torch.Tensor,
    frozen_generator: Generator,
    config: StylizerConfig,
    encoder: Optional[SemanticEncoder] = None,
    perceptual: Optional[PerceptualDistance] = None,
    name: Optional[str] = None,
) -> ReferencePair:
    """Invert both reference images into the source W+ space"""
    size = frozen_generator.size
    for label, image in (("real", source_image), ("style", target_image)):
        if tuple(image.shape[-2:]) != (size, size):
            raise ValueError(f"The {label} reference is {tuple(image.shape[-2:])}, expected {size}x{size}")

    if encoder is not None:
        reference_direction(source_image, target_image, encoder)

    logger.info("[cyan]Inverting reference pair into the source latent space[/cyan]")
    w_ref_s = encode_image(source_image, frozen_generator, config, perceptual=perceptual)
    w_ref_t = encode_image(target_image, frozen_generator, config, perceptual=perceptual)
    logger.info("[green]Reference latents ready[/green]")

    return ReferencePair(
        source_image=source_image.detach().cpu(),
        target_image=target_image.detach().cpu(),
        w_ref_s=w_ref_s.detach(),
        w_ref_t=w_ref_t.detach(),
        name=name,
    )


def color_align(
    w: Union[LatentCode, torch.Tensor], refs: ReferencePair, split: int = FINE_SPLIT
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Fine rows of w swapped for the source and the style reference codes"""
    codes = as_tensor(w)
    w_s = mix_rows(codes, refs.w_ref_s.batched.to(codes), split)
    w_t = mix_rows(codes, refs.w_ref_t.batched.to(codes), split)
    return w_s, w_t
