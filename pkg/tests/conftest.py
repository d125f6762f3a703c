from pathlib import Path
import pytest
import torch
from src.config import StylizerConfig, StylizerSettings
from src.generator import clone_for_adaptation, load_discriminator, load_source
from src.perceptual import StubDistance
from src.semantics import SemanticEncoder
from src.toolkit.images import save_image

MINI_SIZE = 64


def mini_config_data(**training) -> dict:
    return {
        "generator": {
            "output_resolution": MINI_SIZE,
            "mini_mode": True,
            "mini_channels": 16,
            "n_mlp": 2,
            "transform_resolutions": [16, 32],
            "grid_size": 4,
            "stn_channels": 8,
            "stn_hidden": 16,
            "seed": 0,
        },
        "discriminator": {"patch_size": 22},
        "semantics": {"backend": "stub", "input_size": 32, "patch_size": 8, "stub_dim": 16},
        "inversion": {"steps": 3, "perceptual_backend": "stub"},
        "training": {
            "batch_size": 2,
            "iterations": 4,
            "log_every": 1,
            "checkpoint_every": 2,
            "truncation": 0.7,
            **training,
        },
        "metrics": {"lpips_backend": "stub", "feature_backend": "stub", "identity_backend": "stub"},
    }


def make_config(**training) -> StylizerConfig:
    return StylizerConfig(**mini_config_data(**training))


def reference_images(size: int = MINI_SIZE):
    """A smooth 'real' face stand-in and a brighter, squashed 'style' counterpart"""
    rng = torch.Generator().manual_seed(123)
    base = torch.nn.functional.interpolate(torch.rand(1, 3, 8, 8, generator=rng), size=size, mode="bicubic")
    real = (base * 2 - 1).clamp(-1, 1)
    style = torch.nn.functional.interpolate(real[..., size // 4: -size // 4, :], size=size, mode="bilinear")
    style = (style * 0.5 + 0.4).clamp(-1, 1)
    return real, style


@pytest.fixture
def config() -> StylizerConfig:
    return make_config()


@pytest.fixture
def settings(tmp_path) -> StylizerSettings:
    return StylizerSettings(cache_dir=tmp_path / "cache", device="cpu")


@pytest.fixture
def source(config):
    return load_source(config.generator)


@pytest.fixture
def target(source, config):
    return clone_for_adaptation(source, config.generator)


@pytest.fixture
def discriminator(config):
    return load_discriminator(config.discriminator, config.generator)


@pytest.fixture
def encoder(config) -> SemanticEncoder:
    return SemanticEncoder(config.semantics)


@pytest.fixture
def perceptual() -> StubDistance:
    return StubDistance(seed=0)


@pytest.fixture
def pair():
    return reference_images()


@pytest.fixture
def pair_paths(tmp_path, pair) -> tuple:
    real, style = pair
    return save_image(real, tmp_path / "real.png"), save_image(style, tmp_path / "style.png")


@pytest.fixture
def config_path(tmp_path) -> Path:
    import yaml

    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(mini_config_data()))
    return path
