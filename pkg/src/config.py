import hashlib
import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
import yaml

LEVEL_NAMES = ("L", "M", "H")


class GeneratorConfig(BaseModel):
    output_resolution: int = Field(1024, description="Output side length, a power of two")
    style_dim: int = Field(512, description="Width of one W+ row")
    n_mlp: int = Field(8, description="Depth of the mapping network")
    channel_multiplier: int = 2
    transform_resolutions: List[int] = Field(
        default_factory=lambda: [32, 64],
        description="Synthesis resolutions hosting a Transform module",
    )
    grid_size: int = Field(10, ge=2, description="TPS control grid side")
    use_transforms: bool = Field(True, description="Insert Transform modules into the target generator")
    stn_channels: int = Field(64, ge=1, description="Conv width of the STN predictors")
    stn_hidden: int = Field(128, ge=1, description="Hidden width of the STN predictors")
    checkpoint: Optional[str] = Field(None, description="Path or checkpoint name of pretrained weights")
    mini_mode: bool = Field(False, description="Randomly initialised small generator for tests")
    mini_channels: int = Field(32, ge=4, description="Channel width used in mini mode")
    seed: int = Field(0, description="Initialisation seed for mini mode")

    @field_validator("output_resolution")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 8 or value & (value - 1):
            raise ValueError(f"output_resolution must be a power of two >= 8, got {value}")
        return value

    @field_validator("style_dim")
    @classmethod
    def _latent_width(cls, value: int) -> int:
        if value != 512:
            raise ValueError("W+ codes are 18 x 512; style_dim must be 512")
        return value

    @model_validator(mode="after")
    def _transforms_fit(self) -> "GeneratorConfig":
        synthesis = {2 ** i for i in range(3, self.output_resolution.bit_length())}
        unknown = sorted(set(self.transform_resolutions) - synthesis)
        if unknown:
            raise ValueError(
                f"transform_resolutions {unknown} are not synthesis resolutions of a "
                f"{self.output_resolution}px generator"
            )
        if any(r < self.grid_size for r in self.transform_resolutions):
            raise ValueError("every transform resolution must be at least grid_size")
        return self

    @property
    def synthesis_resolutions(self) -> List[int]:
        return [2 ** i for i in range(2, self.output_resolution.bit_length())]


class DiscriminatorConfig(BaseModel):
    checkpoint: Optional[str] = Field(None, description="Path or checkpoint name of pretrained weights")
    patch_size: int = Field(22, ge=1, description="Target receptive field of the read-off layer")


class SemanticsConfig(BaseModel):
    backend: Literal["dino", "stub"] = "dino"
    model_name: str = Field("facebook/dino-vits8", description="transformers ViT checkpoint id")
    input_size: int = Field(224, ge=8)
    patch_size: int = Field(8, ge=1)
    levels: Dict[str, int] = Field(default_factory=lambda: {"L": 3, "M": 6, "H": 12})
    direction_levels: List[str] = Field(default_factory=lambda: ["M", "H"])
    consistency_level: str = "M"
    mean: Tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: Tuple[float, float, float] = (0.229, 0.224, 0.225)
    stub_dim: int = Field(32, ge=1, description="Token width of the stub backbone")
    stub_seed: int = 0

    @model_validator(mode="after")
    def _levels_known(self) -> "SemanticsConfig":
        for level in [*self.direction_levels, self.consistency_level]:
            if level not in self.levels:
                raise ValueError(f"Unknown feature level '{level}', expected one of {sorted(self.levels)}")
        if self.input_size % self.patch_size:
            raise ValueError("input_size must be a multiple of patch_size")
        return self

    @property
    def n_patches(self) -> int:
        return (self.input_size // self.patch_size) ** 2


class InversionConfig(BaseModel):
    enabled: bool = Field(True, description="Allow optimisation-based inversion of photos")
    steps: int = Field(600, ge=1)
    lr: float = Field(0.01, gt=0)
    l1_weight: float = Field(1.0, ge=0)
    perceptual_weight: float = Field(0.8, ge=0)
    perceptual_backend: Literal["lpips", "stub"] = "lpips"


class EncoderConfig(BaseModel):
    checkpoint: Optional[str] = Field(None, description="TorchScript image-to-W+ encoder")


class LossWeights(BaseModel):
    lambda_direct: float = Field(6.0, ge=0)
    lambda_cons: float = Field(5e4, ge=0)
    lambda_reg: float = Field(1e-6, ge=0)


class AblationConfig(BaseModel):
    use_direct: bool = True
    use_cons: bool = True
    use_adv: bool = True
    use_reg: bool = True


class TrainConfig(BaseModel):
    batch_size: int = Field(4, ge=2, description="Latents per step; pairs are needed for L_cons")
    iterations: int = Field(600, ge=0)
    lr_generator: float = Field(0.002, ge=0)
    lr_tps_stn: float = Field(5e-6, ge=0)
    lr_basic_stn: float = Field(1e-4, ge=0)
    lr_discriminator: float = Field(0.002, ge=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = Field(default_factory=LossWeights)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    softmax_temperature: float = Field(1.0, gt=0)
    color_align: bool = Field(True, description="Swap the fine W+ rows for the reference codes")
    style_mix_split: int = Field(9, ge=1, le=18)
    truncation: float = Field(0.7, gt=0, le=1)
    seed: int = 0
    log_every: int = Field(10, ge=1)
    checkpoint_every: int = Field(100, ge=1)
    resume: bool = True


class MetricsConfig(BaseModel):
    lpips_backend: Literal["lpips", "stub"] = "lpips"
    feature_backend: Literal["vgg", "stub"] = "vgg"
    identity_backend: Literal["arcface", "stub"] = "arcface"
    vgg_layers: List[str] = Field(default_factory=lambda: ["relu3_3", "relu4_3"])
    stub_seed: int = 0


class StylizerConfig(BaseModel):
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)
    semantics: SemanticsConfig = Field(default_factory=SemanticsConfig)
    inversion: InversionConfig = Field(default_factory=InversionConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)
    checkpoints: Dict[str, str] = Field(
        default_factory=dict, description="Checkpoint name -> download URL"
    )

    def config_hash(self) -> str:
        """Stable hash of the canonical JSON form"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


class StylizerSettings(BaseSettings):
    """Process-level settings read from STYLIZER_* environment variables"""

    model_config = SettingsConfigDict(env_prefix="STYLIZER_")

    cache_dir: Path = Path.home() / ".cache" / "face_stylizer"
    device: str = "cpu"
    log_level: str = "INFO"


class AppConfig:
    """Main application configuration loaded from a YAML file plus the environment"""

    def __init__(self, config_path: Path = Path("config.yaml")):
        self.config_path = config_path
        self.stylizer = self._load()
        self.settings = StylizerSettings()

    def _load(self) -> StylizerConfig:
        """Load and validate the YAML config file"""
        if not self.config_path.exists():
            raise FileNotFoundError(
                f"Config file not found: {self.config_path}. "
                f"Copy config.yaml.example to config.yaml and update it."
            )

        with open(self.config_path, "r") as f:
            data = yaml.safe_load(f) or {}

        return StylizerConfig(**data)
