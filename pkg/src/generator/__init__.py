from src.generator.bundle import Bundle, load_bundle, save_bundle
from src.generator.discriminator import Discriminator, PatchDiscriminator, load_discriminator
from src.generator.inversion import Inverter, InversionResult, encode_image, invert_reference
from src.generator.latents import LatentCode, ReferencePair, mix_rows, style_mix
from src.generator.synthesis import (
    Generator,
    build_generator,
    clone_for_adaptation,
    freeze,
    load_source,
    sample_latent,
    sample_latents,
    state_digest,
    synthesize,
)
from src.generator.transform import Transform

__all__ = [
    "Bundle",
    "Discriminator",
    "Generator",
    "InversionResult",
    "Inverter",
    "LatentCode",
    "PatchDiscriminator",
    "ReferencePair",
    "Transform",
    "build_generator",
    "clone_for_adaptation",
    "encode_image",
    "freeze",
    "invert_reference",
    "load_bundle",
    "load_discriminator",
    "load_source",
    "mix_rows",
    "sample_latent",
    "sample_latents",
    "save_bundle",
    "state_digest",
    "style_mix",
    "synthesize",
]
