"""
Evaluation metrics for an adapted bundle.

LPIPS between G^s(w) and G^t(w); dir-CC, the cosine between the perceptual
feature change of a generated pair and of the reference pair; dir-ID, the
same with face identity embeddings.
"""
from typing import Dict, List, Optional, Sequence
import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
from src.config import MetricsConfig
from src.errors import MissingBackendError
from src.generator import Bundle, sample_latent, state_digest
from src.logger import logger
from src.models import EvalReport, EvalSample
from src.perceptual import PerceptualDistance, StubDistance, build_perceptual

VGG_LAYER_INDEX = {"relu1_2": 3, "relu2_2": 8, "relu3_3": 15, "relu4_3": 22, "relu5_3": 29}
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
ARCFACE_SIZE = 112


class FeatureEmbedder(nn.Module):
    """Maps [-1, 1] images to one flat feature vector per image"""

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class VGGFeatures(FeatureEmbedder):
    def __init__(self, layers: Sequence[str] = ("relu3_3", "relu4_3")):
        super().__init__()
        unknown = [layer for layer in layers if layer not in VGG_LAYER_INDEX]
        if unknown:
            raise ValueError(f"Unknown VGG layers {unknown}, expected some of {list(VGG_LAYER_INDEX)}")
        try:
            from torchvision.models import VGG16_Weights, vgg16

            trunk = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        except (ImportError, OSError, RuntimeError) as e:
            raise MissingBackendError("VGG16 perceptual features") from e

        self.indices = sorted(VGG_LAYER_INDEX[layer] for layer in layers)
        self.trunk = trunk[: self.indices[-1] + 1].eval().requires_grad_(False)
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = F.interpolate((images + 1) / 2, size=224, mode="bilinear", align_corners=False, antialias=True)
        x = (x - self.mean) / self.std
        features = []
        for index, layer in enumerate(self.trunk):
            x = layer(x)
            if index in self.indices:
                features.append(x.flatten(1))
        return torch.cat(features, dim=1)


class StubFeatures(FeatureEmbedder):
    """Fixed random conv projection standing in for VGG or ArcFace"""

    def __init__(self, seed: int = 0, dim: int = 64):
        super().__init__()
        self.trunk = StubDistance(seed)
        generator = torch.Generator().manual_seed(seed + 1)
        self.register_buffer("head", torch.randn(32, dim, generator=generator))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        low, high = self.trunk.features(images)
        pooled = F.adaptive_avg_pool2d(high, 4).permute(0, 2, 3, 1) @ self.head
        return torch.cat([F.adaptive_avg_pool2d(low, 4).flatten(1), pooled.flatten(1)], dim=1)


class ArcFaceIdentity(FeatureEmbedder):
    """insightface recognition embeddings; the whole image is used when no face is detected"""

    def __init__(self):
        super().__init__()
        try:
            from insightface.app import FaceAnalysis

            self.app = FaceAnalysis(allowed_modules=["detection", "recognition"])
            self.app.prepare(ctx_id=-1, det_size=(320, 320))
        except (ImportError, AssertionError, RuntimeError, OSError) as e:
            raise MissingBackendError("ArcFace identity model (insightface)") from e
        self.recognizer = self.app.models["recognition"]

    @staticmethod
    def _bgr(image: torch.Tensor) -> np.ndarray:
        array = ((image.clamp(-1, 1) + 1) * 127.5).round().byte().permute(1, 2, 0).cpu().numpy()
        return np.ascontiguousarray(array[..., ::-1])

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        embeddings = []
        for image in images:
            bgr = self._bgr(image)
            faces = self.app.get(bgr)
            if faces:
                embeddings.append(faces[0].normed_embedding)
                continue
            logger.debug("No face detected; embedding the full frame")
            crop = F.interpolate(image[None], size=ARCFACE_SIZE, mode="area")[0]
            embedding = self.recognizer.get_feat(self._bgr(crop)).reshape(-1)
            embeddings.append(embedding / np.linalg.norm(embedding))
        return torch.from_numpy(np.stack(embeddings)).float()


def direction_cosine(delta: torch.Tensor, delta_ref: torch.Tensor) -> float:
    """Cosine between two change vectors; 0 when either is zero"""
    norm = delta.norm() * delta_ref.norm()
    if norm == 0:
        logger.warning("[yellow]Zero feature change; directional similarity reported as 0[/yellow]")
        return 0.0
    return float(((delta * delta_ref).sum() / norm).clamp(-1, 1))


class MetricSuite:
    """LPIPS, content-feature and identity backends used by evaluation"""

    def __init__(
        self,
        config: MetricsConfig,
        lpips: Optional[PerceptualDistance] = None,
        features: Optional[FeatureEmbedder] = None,
        identity: Optional[FeatureEmbedder] = None,
    ):
        self.config = config
        missing = []
        self.lpips = lpips or self._build(lambda: build_perceptual(config.lpips_backend, config.stub_seed), missing)
        self.features = features or self._build(
            lambda: StubFeatures(config.stub_seed) if config.feature_backend == "stub" else VGGFeatures(config.vgg_layers),
            missing,
        )
        self.identity = identity or self._build(
            lambda: StubFeatures(config.stub_seed + 7) if config.identity_backend == "stub" else ArcFaceIdentity(),
            missing,
        )
        if missing:
            raise MissingBackendError(*missing)

    @staticmethod
    def _build(factory, missing: List[str]):
        try:
            return factory()
        except MissingBackendError as e:
            missing.extend(e.backends)
            return None

    def to(self, device) -> "MetricSuite":
        for module in (self.lpips, self.features, self.identity):
            module.to(device)
        return self

    @property
    def backends(self) -> Dict[str, str]:
        return {
            "lpips": self.config.lpips_backend,
            "features": self.config.feature_backend,
            "identity": self.config.identity_backend,
        }

    @torch.no_grad()
    def pair(
        self,
        seed: int,
        source: torch.Tensor,
        target: torch.Tensor,
        ref_source: torch.Tensor,
        ref_target: torch.Tensor,
    ) -> EvalSample:
        """Metrics for one generated pair against the reference pair"""
        lpips = float(self.lpips(source, target).reshape(-1)[0].clamp_min(0))
        content = self.features(torch.cat([source, target, ref_source, ref_target]))
        identity = self.identity(torch.cat([source, target, ref_source, ref_target]))
        return EvalSample(
            seed=seed,
            lpips=lpips,
            dir_cc=direction_cosine(content[1] - content[0], content[3] - content[2]),
            dir_id=direction_cosine(identity[1] - identity[0], identity[3] - identity[2]),
        )


@torch.no_grad()
def evaluate_bundle(bundle: Bundle, seeds: Sequence[int], suite: MetricSuite, truncation: float = 1.0) -> EvalReport:
    device = bundle.source.latent_avg.device
    ref_source = bundle.refs.source_image.to(device)
    ref_target = bundle.refs.target_image.to(device)

    samples = []
    for seed in seeds:
        w = sample_latent(bundle.source, seed, truncation)
        source = bundle.source(w, deform=False)
        target = bundle.target(w)
        samples.append(suite.pair(seed, source, target, ref_source, ref_target))
        logger.debug(f"seed {seed}: {samples[-1]}")

    return EvalReport.from_samples(
        samples,
        style_name=bundle.manifest.metadata.get("style_name") or bundle.refs.name,
        model_hash=state_digest(bundle.target),
        feature_layers=list(suite.config.vgg_layers) if suite.config.feature_backend == "vgg" else ["stub"],
        backends=suite.backends,
    )
