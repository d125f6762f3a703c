import torch
from torch import nn
from src.warp.field import WarpField
from src.warp.sampling import AffineParams


class Localization(nn.Module):
    """Two stride-2 convolutions followed by a hidden linear layer"""

    def __init__(self, in_channels: int, resolution: int, channels: int = 64, hidden: int = 128):
        super().__init__()
        self.in_channels = in_channels
        self.resolution = resolution
        pooled = min(resolution // 4, 8)

        self.conv1 = nn.Conv2d(in_channels, channels, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, kernel_size=3, stride=2, padding=1)
        self.pool = nn.AdaptiveAvgPool2d(pooled)
        self.fc1 = nn.Linear(channels * pooled * pooled, hidden)
        self.relu = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels or x.shape[-2:] != (self.resolution, self.resolution):
            raise ValueError(
                f"Predictor built for {self.in_channels}x{self.resolution}x{self.resolution} "
                f"features, got {tuple(x.shape[1:])}"
            )
        x = self.relu(self.conv1(x))
        x = self.relu(self.conv2(x))
        x = self.pool(x).flatten(1)
        return self.relu(self.fc1(x))


class TPSPredictor(nn.Module):
    """Predicts grid_size x grid_size control displacements from a feature map"""

    def __init__(self, in_channels: int, resolution: int, grid_size: int = 10, channels: int = 64, hidden: int = 128):
        super().__init__()
        self.grid_size = grid_size
        self.localization = Localization(in_channels, resolution, channels, hidden)
        self.fc2 = nn.Linear(hidden, grid_size * grid_size * 2)

        # start from the identity deformation
        self.fc2.weight.data.zero_()
        self.fc2.bias.data.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.fc2(self.localization(x))
        return out.view(-1, self.grid_size, self.grid_size, 2)

    def predict(self, x: torch.Tensor) -> WarpField:
        return WarpField.from_displacements(self(x), (x.shape[-2], x.shape[-1]))


class AffinePredictor(nn.Module):
    """Basic STN head: translation, rotation and log-scale"""

    def __init__(self, in_channels: int, resolution: int, channels: int = 64, hidden: int = 128):
        super().__init__()
        self.localization = Localization(in_channels, resolution, channels, hidden)
        self.fc2 = nn.Linear(hidden, 5)

        self.fc2.weight.data.zero_()
        self.fc2.bias.data.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.localization(x))

    def predict(self, x: torch.Tensor) -> AffineParams:
        out = self(x)
        return AffineParams(
            translation=out[:, 0:2],
            rotation=out[:, 2],
            scale=torch.exp(out[:, 3:5]),
        )


def predict_field(predictor: nn.Module, features: torch.Tensor):
    """Run a TPS or basic predictor, returning a WarpField or AffineParams"""
    if features.dim() == 3:
        features = features.unsqueeze(0)
    return predictor.predict(features)
