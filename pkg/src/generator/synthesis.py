import copy
import hashlib
import math
from typing import Iterator, List, Optional, Union
import torch
from torch import nn
from src.config import GeneratorConfig
from src.errors import MissingBackendError
from src.generator.latents import N_LAYERS, LatentCode, as_tensor, broadcast_rows
from src.generator.layers import (
    DEFAULT_BLUR,
    ConstantInput,
    EqualLinear,
    PixelNorm,
    StyledConv,
    ToRGB,
    channel_table,
)
from src.generator.transform import Transform
from src.logger import logger
from src.warp import WarpField


class Generator(nn.Module):
    """Style-based generator with optional Transform modules after synthesis blocks"""

    def __init__(
        self,
        size: int,
        style_dim: int = 512,
        n_mlp: int = 8,
        channel_multiplier: int = 2,
        mini_channels: Optional[int] = None,
        blur_kernel=DEFAULT_BLUR,
        lr_mlp: float = 0.01,
    ):
        super().__init__()
        self.size = size
        self.style_dim = style_dim

        layers = [PixelNorm()]
        for _ in range(n_mlp):
            layers.append(EqualLinear(style_dim, style_dim, lr_mul=lr_mlp, activation="fused_lrelu"))
        self.style = nn.Sequential(*layers)

        self.channels = channel_table(channel_multiplier, mini_channels)
        self.input = ConstantInput(self.channels[4])
        self.conv1 = StyledConv(self.channels[4], self.channels[4], 3, style_dim, blur_kernel=blur_kernel)
        self.to_rgb1 = ToRGB(self.channels[4], style_dim, upsample=False)

        self.log_size = int(math.log2(size))
        self.num_layers = (self.log_size - 2) * 2 + 1
        self.n_latent = self.log_size * 2 - 2

        self.convs = nn.ModuleList()
        self.to_rgbs = nn.ModuleList()
        self.noises = nn.Module()

        for layer_idx in range(self.num_layers):
            res = (layer_idx + 5) // 2
            self.noises.register_buffer(f"noise_{layer_idx}", torch.randn(1, 1, 2 ** res, 2 ** res))

        in_channel = self.channels[4]
        for i in range(3, self.log_size + 1):
            out_channel = self.channels[2 ** i]
            self.convs.append(StyledConv(in_channel, out_channel, 3, style_dim, upsample=True, blur_kernel=blur_kernel))
            self.convs.append(StyledConv(out_channel, out_channel, 3, style_dim, blur_kernel=blur_kernel))
            self.to_rgbs.append(ToRGB(out_channel, style_dim))
            in_channel = out_channel

        self.transforms = nn.ModuleDict()
        self.register_buffer("latent_avg", torch.zeros(style_dim))
        self.frozen = False

    def add_transforms(self, resolutions: List[int], grid_size: int = 10, stn_channels: int = 64, stn_hidden: int = 128):
        for resolution in sorted(resolutions):
            self.transforms[str(resolution)] = Transform(
                self.channels[resolution], resolution, grid_size, stn_channels, stn_hidden
            )

    def stn_parameters(self, kind: str) -> Iterator[nn.Parameter]:
        """Parameters of the `tps` or `basic` predictors of every Transform"""
        for transform in self.transforms.values():
            yield from getattr(transform, kind).parameters()

    def synthesis_parameters(self) -> Iterator[nn.Parameter]:
        stn_ids = {id(p) for p in self.transforms.parameters()}
        for param in self.parameters():
            if id(param) not in stn_ids:
                yield param

    @torch.no_grad()
    def mean_latent(self, n_samples: int = 4096, seed: int = 0) -> torch.Tensor:
        rng = torch.Generator().manual_seed(seed)
        z = torch.randn(n_samples, self.style_dim, generator=rng).to(self.latent_avg)
        return self.style(z).mean(0)

    def forward(
        self,
        latent: Union[LatentCode, torch.Tensor],
        deform: bool = True,
        alpha: float = 1.0,
        return_fields: bool = False,
    ):
        latent = as_tensor(latent)
        if latent.shape[1:] != (N_LAYERS, self.style_dim):
            raise ValueError(f"Expected latents of shape [B, {N_LAYERS}, {self.style_dim}], got {tuple(latent.shape)}")

        noise = [getattr(self.noises, f"noise_{i}") for i in range(self.num_layers)]
        fields: List[WarpField] = []

        out = self.input(latent.shape[0])
        out = self.conv1(out, latent[:, 0], noise[0])
        skip = self.to_rgb1(out, latent[:, 1])

        i = 1
        for conv1, conv2, noise1, noise2, to_rgb in zip(
            self.convs[::2], self.convs[1::2], noise[1::2], noise[2::2], self.to_rgbs
        ):
            out = conv1(out, latent[:, i], noise1)
            out = conv2(out, latent[:, i + 1], noise2)

            key = str(out.shape[-1])
            if deform and key in self.transforms:
                out, field = self.transforms[key](out, alpha)
                if field is not None:
                    fields.append(field)

            skip = to_rgb(out, latent[:, i + 2], skip)
            i += 2

        if return_fields:
            return skip, fields
        return skip


def build_generator(config: GeneratorConfig) -> Generator:
    """Architecture only, no weights loaded"""
    return Generator(
        config.output_resolution,
        style_dim=config.style_dim,
        n_mlp=config.n_mlp,
        channel_multiplier=config.channel_multiplier,
        mini_channels=config.mini_channels if config.mini_mode else None,
    )


def freeze(module: nn.Module) -> nn.Module:
    module.requires_grad_(False)
    module.eval()
    if isinstance(module, Generator):
        module.frozen = True
    return module


def load_source(config: GeneratorConfig, weights_client=None) -> Generator:
    """The frozen source generator: pretrained weights, or a seeded random mini model"""
    if config.mini_mode:
        logger.info(f"[cyan]Building mini generator ({config.output_resolution}px, seed {config.seed})[/cyan]")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            generator = build_generator(config)
        generator.latent_avg.copy_(generator.mean_latent(seed=config.seed))
        return freeze(generator)

    if config.checkpoint is None:
        raise MissingBackendError("source generator checkpoint")

    from src.clients.weights import WeightsClient

    client = weights_client or WeightsClient()
    path = client.resolve(config.checkpoint)
    logger.info(f"[cyan]Loading source generator from {path}[/cyan]")

    generator = build_generator(config)
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    state = ckpt.get("g_ema", ckpt)
    missing, unexpected = generator.load_state_dict(state, strict=False)
    missing = [k for k in missing if k != "latent_avg"]
    if missing:
        logger.warning(f"[yellow]Checkpoint is missing {len(missing)} generator tensors, e.g. {missing[:3]}[/yellow]")
    if unexpected:
        logger.warning(f"[yellow]Ignoring {len(unexpected)} unexpected tensors, e.g. {unexpected[:3]}[/yellow]")

    if "latent_avg" in ckpt:
        generator.latent_avg.copy_(ckpt["latent_avg"].reshape(-1)[: config.style_dim])
    else:
        generator.latent_avg.copy_(generator.mean_latent())

    logger.info("[green]Source generator loaded[/green]")
    return freeze(generator)


def clone_for_adaptation(source: Generator, config: GeneratorConfig) -> Generator:
    """Independent trainable copy of the source with identity-initialised Transforms"""
    freeze(source)
    target = copy.deepcopy(source)
    target.frozen = False
    target.requires_grad_(True)
    target.train()

    if config.use_transforms:
        target.add_transforms(config.transform_resolutions, config.grid_size, config.stn_channels, config.stn_hidden)
        target.transforms.to(source.latent_avg.device)
        logger.info(
            f"[cyan]Inserted {len(target.transforms)} Transform modules at "
            f"{sorted(config.transform_resolutions)}[/cyan]"
        )
    return target


def synthesize(generator: Generator, w: Union[LatentCode, torch.Tensor], deform: Union[bool, float] = True) -> torch.Tensor:
    """Render W+ codes; deform is on/off or an alpha for the warping fields"""
    if isinstance(deform, bool):
        return generator(w, deform=deform)
    alpha = float(deform)
    if not 0 <= alpha <= 1:
        logger.warning(f"[yellow]alpha={alpha} lies outside [0, 1]; the warp is extrapolated[/yellow]")
    return generator(w, deform=True, alpha=alpha)


def sample_latents(
    generator: Generator, n: int, truncation: float = 1.0, rng: Optional[torch.Generator] = None
) -> torch.Tensor:
    """[n, 18, 512] W+ codes through the mapping network, truncated toward the mean"""
    if not 0 < truncation <= 1:
        raise ValueError(f"Truncation must be in (0, 1], got {truncation}")
    z = torch.randn(n, generator.style_dim, generator=rng).to(generator.latent_avg)
    with torch.no_grad():
        w = generator.style(z)
    w = generator.latent_avg + truncation * (w - generator.latent_avg)
    return broadcast_rows(w)


def sample_latent(generator: Generator, seed: int, truncation: float = 1.0) -> LatentCode:
    rng = torch.Generator().manual_seed(seed)
    return LatentCode(values=sample_latents(generator, 1, truncation, rng)[0])


def state_digest(module: nn.Module) -> str:
    """SHA-256 over the module's state dict in key order"""
    digest = hashlib.sha256()
    for key, tensor in sorted(module.state_dict().items()):
        digest.update(key.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
