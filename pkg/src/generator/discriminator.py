import math
from typing import List, Optional
import torch
from pydantic import BaseModel
from torch import nn
from src.config import DiscriminatorConfig, GeneratorConfig
from src.errors import MissingBackendError
from src.generator.layers import (
    DEFAULT_BLUR,
    ConvLayer,
    EqualConv2d,
    EqualLinear,
    ResBlock,
    channel_table,
)
from src.logger import logger

AUDIT_SIZE = 128


class ReceptiveField(BaseModel):
    depth: int
    resolution: int
    extent: int


class Discriminator(nn.Module):
    """Residual discriminator in the community StyleGAN2 layout"""

    def __init__(
        self,
        size: int,
        channel_multiplier: int = 2,
        mini_channels: Optional[int] = None,
        blur_kernel=DEFAULT_BLUR,
    ):
        super().__init__()
        channels = channel_table(channel_multiplier, mini_channels)
        log_size = int(math.log2(size))

        convs = [ConvLayer(3, channels[size], 1)]
        in_channel = channels[size]
        for i in range(log_size, 2, -1):
            out_channel = channels[2 ** (i - 1)]
            convs.append(ResBlock(in_channel, out_channel, blur_kernel))
            in_channel = out_channel
        self.convs = nn.Sequential(*convs)

        self.stddev_group = 4
        self.stddev_feat = 1
        self.final_conv = ConvLayer(in_channel + 1, channels[4], 3)
        self.final_linear = nn.Sequential(
            EqualLinear(channels[4] * 4 * 4, channels[4], activation="fused_lrelu"),
            EqualLinear(channels[4], 1),
        )
        self.size = size
        self.channels = channels

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        out = self.convs(image)
        batch, channel, height, width = out.shape

        group = min(batch, self.stddev_group)
        while batch % group:
            group -= 1
        stddev = out.view(group, -1, self.stddev_feat, channel // self.stddev_feat, height, width)
        stddev = torch.sqrt(stddev.var(0, unbiased=False) + 1e-8)
        stddev = stddev.mean([2, 3, 4], keepdim=True).squeeze(2)
        stddev = stddev.repeat(group, 1, height, width)
        out = torch.cat([out, stddev], 1)

        out = self.final_conv(out)
        return self.final_linear(out.view(batch, -1))


class PatchDiscriminator(Discriminator):
    """
    Discriminator read off at an internal layer so each logit sees a small patch.

    The read-off depth is picked by measuring the gradient footprint of a centre
    unit at every depth and keeping the one closest to `patch_size`.
    """

    def __init__(self, size: int, patch_size: int = 22, channel_multiplier: int = 2, mini_channels: Optional[int] = None):
        super().__init__(size, channel_multiplier, mini_channels)
        self.patch_size = patch_size
        self.receptive_fields = self.audit_receptive_fields()
        chosen = min(self.receptive_fields, key=lambda rf: (abs(rf.extent - patch_size), rf.depth))
        self.readoff_depth = chosen.depth
        width = self._layer_widths()[chosen.depth]
        self.patch_head = EqualConv2d(width, 1, 1)
        logger.info(
            f"[cyan]Patch discriminator reads layer {chosen.depth} "
            f"({chosen.resolution}px map, receptive field {chosen.extent}x{chosen.extent})[/cyan]"
        )

    def _layer_widths(self) -> List[int]:
        widths = []
        for layer in self.convs:
            if isinstance(layer, ResBlock):
                widths.append(layer.skip[-1].weight.shape[0])
            else:
                widths.append(layer[0].weight.shape[0])
        return widths

    @torch.enable_grad()
    def audit_receptive_fields(self) -> List[ReceptiveField]:
        """Empirical receptive field of every depth of `convs`"""
        size = min(self.size, AUDIT_SIZE)
        generator = torch.Generator().manual_seed(0)
        param = next(self.parameters())
        image = torch.randn(1, 3, size, size, generator=generator).to(param)
        image.requires_grad_(True)

        fields = []
        out = image
        for depth, layer in enumerate(self.convs):
            out = layer(out)
            cy, cx = out.shape[2] // 2, out.shape[3] // 2
            (grad,) = torch.autograd.grad(out[:, :, cy, cx].sum(), image, retain_graph=True)
            footprint = grad.abs().sum(dim=(0, 1)) > 0
            rows = footprint.any(dim=1).nonzero()
            cols = footprint.any(dim=0).nonzero()
            extent = int(max(rows.max() - rows.min() + 1, cols.max() - cols.min() + 1))
            fields.append(ReceptiveField(depth=depth, resolution=out.shape[-1] * self.size // size, extent=extent))
            if extent >= size:
                break
        return fields

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Patch logits [B, 1, h, w]"""
        out = self.convs[: self.readoff_depth + 1](image)
        return self.patch_head(out)


def load_discriminator(
    config: DiscriminatorConfig, generator_config: GeneratorConfig, weights_client=None
) -> PatchDiscriminator:
    mini_channels = generator_config.mini_channels if generator_config.mini_mode else None
    if generator_config.mini_mode:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(generator_config.seed + 1)
            return PatchDiscriminator(
                generator_config.output_resolution, config.patch_size,
                generator_config.channel_multiplier, mini_channels,
            )

    checkpoint = config.checkpoint or generator_config.checkpoint
    if checkpoint is None:
        raise MissingBackendError("discriminator checkpoint")

    from src.clients.weights import WeightsClient

    client = weights_client or WeightsClient()
    path = client.resolve(checkpoint)
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if "d" not in ckpt:
        raise MissingBackendError(f"discriminator weights ('d' key) in {path}")

    discriminator = PatchDiscriminator(
        generator_config.output_resolution, config.patch_size, generator_config.channel_multiplier
    )
    missing, _ = discriminator.load_state_dict(ckpt["d"], strict=False)
    missing = [k for k in missing if not k.startswith("patch_head")]
    if missing:
        logger.warning(f"[yellow]Discriminator checkpoint is missing {len(missing)} tensors[/yellow]")
    logger.info(f"[green]Discriminator loaded from {path}[/green]")
    return discriminator
