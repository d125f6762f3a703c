"""
Perceptual image distances shared by inversion and evaluation.

`lpips` wraps the learned LPIPS metric (VGG trunk); `stub` is a fixed random
two-layer conv trunk scored the same way, for runs without downloads.
"""
import torch
from torch import nn
from torch.nn import functional as F
from src.errors import MissingBackendError

LPIPS_MAX_SIDE = 256


def _unit_channels(x: torch.Tensor) -> torch.Tensor:
    return x / (x.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)


class PerceptualDistance(nn.Module):
    """Distance per batch item between images in [-1, 1]"""

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class LPIPSDistance(PerceptualDistance):
    def __init__(self, net: str = "vgg"):
        super().__init__()
        try:
            import lpips
        except ImportError as e:
            raise MissingBackendError("lpips") from e
        self.metric = lpips.LPIPS(net=net, verbose=False)
        self.metric.requires_grad_(False)
        self.metric.eval()

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape[-1] > LPIPS_MAX_SIDE:
            a = F.interpolate(a, size=LPIPS_MAX_SIDE, mode="area")
            b = F.interpolate(b, size=LPIPS_MAX_SIDE, mode="area")
        return self.metric(a, b).view(-1)


class StubDistance(PerceptualDistance):
    """Random-projection stand-in with the LPIPS scoring rule and unit layer weights"""

    def __init__(self, seed: int = 0, widths=(16, 32)):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        layers = []
        in_channels = 3
        for width in widths:
            conv = nn.Conv2d(in_channels, width, 4, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) / (in_channels * 16) ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            in_channels = width
        self.layers = nn.ModuleList(layers)
        self.requires_grad_(False)

    def features(self, x: torch.Tensor):
        feats = []
        for conv in self.layers:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        total = 0
        for fa, fb in zip(self.features(a), self.features(b)):
            total = total + (_unit_channels(fa) - _unit_channels(fb)).pow(2).sum(1).mean(dim=(1, 2))
        return total


def build_perceptual(backend: str, seed: int = 0) -> PerceptualDistance:
    if backend == "lpips":
        return LPIPSDistance()
    if backend == "stub":
        return StubDistance(seed)
    raise ValueError(f"Unknown perceptual backend '{backend}'")
