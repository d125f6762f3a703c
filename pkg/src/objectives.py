"""
Training losses: directional deformation, relative structural consistency,
patch adversarial, field smoothness and their weighted total.
"""
import csv
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union
import torch
from pydantic import BaseModel, ConfigDict
from torch.nn import functional as F
from src.config import AblationConfig, LossWeights
from src.errors import NonFiniteLossError, UndefinedDirectionError
from src.models import LossRecord
from src.semantics import DirectionalVector, StructureDescriptor
from src.warp import WarpField, smoothness_regularizer

LOSS_COLUMNS = ["step", "L_adv_G", "L_adv_D", "L_direct", "L_cons", "L_reg", "L_total"]

Direction = Union[DirectionalVector, torch.Tensor]
Descriptor = Union[StructureDescriptor, torch.Tensor]


def _values(x):
    return x.values if isinstance(x, (DirectionalVector, StructureDescriptor)) else x


def directional_loss(d_w: Direction, d_ref: Direction) -> torch.Tensor:
    """1 - cos(d_w, d_ref), averaged over a leading batch axis if present"""
    a, b = _values(d_w), _values(d_ref)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"Direction lengths differ: {a.shape[-1]} vs {b.shape[-1]}")

    norm_a = a.norm(dim=-1)
    norm_b = b.norm(dim=-1)
    if (norm_a == 0).any() or (norm_b == 0).any():
        raise UndefinedDirectionError("Deformation direction has zero norm; its cosine is undefined")

    cosine = (a * b).sum(-1) / (norm_a * norm_b)
    return (1 - cosine).mean()


class SimilarityDistribution(BaseModel):
    """
    Softmax over generated-generated pair similarities (i > j, row-major) followed
    by a separate softmax over generated-reference similarities.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    probs: torch.Tensor
    n: int
    domain: str = "source"

    @property
    def n_pairs(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def pair_group(self) -> torch.Tensor:
        return self.probs[: self.n_pairs]

    @property
    def reference_group(self) -> torch.Tensor:
        return self.probs[self.n_pairs:]


def _stack(descriptors) -> torch.Tensor:
    if isinstance(descriptors, StructureDescriptor):
        return descriptors.values
    if isinstance(descriptors, torch.Tensor):
        return descriptors
    return torch.stack([_values(d) for d in descriptors])


def _unit(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(1e-12)


def build_similarity_distribution(
    descriptors: Union[Sequence[Descriptor], Descriptor],
    ref_descriptor: Descriptor,
    temperature: float = 1.0,
    domain: str = "source",
) -> SimilarityDistribution:
    values = _stack(descriptors)
    n = values.shape[0]
    if n < 2:
        raise ValueError(f"Similarity distributions need at least 2 samples, got {n}")

    ref = _values(ref_descriptor).reshape(-1).to(values)
    unit = _unit(values)
    similarity = unit @ unit.T

    rows, cols = torch.tril_indices(n, n, offset=-1, device=values.device)
    pair_logits = similarity[rows, cols] / temperature
    ref_logits = (unit @ _unit(ref)) / temperature

    probs = torch.cat([F.softmax(pair_logits, dim=0), F.softmax(ref_logits, dim=0)])
    return SimilarityDistribution(probs=probs, n=n, domain=domain)


def consistency_loss(
    c_source: Union[SimilarityDistribution, torch.Tensor],
    c_target: Union[SimilarityDistribution, torch.Tensor],
) -> torch.Tensor:
    """Mean squared difference between two distributions over the same slots"""
    if isinstance(c_source, SimilarityDistribution) and isinstance(c_target, SimilarityDistribution):
        if c_source.n != c_target.n:
            raise ValueError(f"Distributions built from {c_source.n} and {c_target.n} samples")
    p = c_source.probs if isinstance(c_source, SimilarityDistribution) else c_source
    q = c_target.probs if isinstance(c_target, SimilarityDistribution) else c_target
    if p.shape != q.shape:
        raise ValueError(f"Distribution lengths differ: {tuple(p.shape)} vs {tuple(q.shape)}")
    return (q - p.to(q)).pow(2).mean()


def generator_adversarial_loss(fake_patch_logits: torch.Tensor) -> torch.Tensor:
    """-E[log D(fake)] with D = sigmoid(logits)"""
    if fake_patch_logits.numel() == 0:
        raise ValueError("Adversarial losses need non-empty logits")
    return -F.logsigmoid(fake_patch_logits).mean()


def adversarial_losses(real_patch_logits: torch.Tensor, fake_patch_logits: torch.Tensor):
    """
    d_loss = log(1 - D(real)) + E[log D(fake)], g_loss = -E[log D(fake)],
    with D = sigmoid(logits) and log-sigmoid for the logs.
    """
    if real_patch_logits.numel() == 0:
        raise ValueError("Adversarial losses need non-empty logits")
    g_loss = generator_adversarial_loss(fake_patch_logits)
    d_loss = F.logsigmoid(-real_patch_logits).mean() - g_loss
    return d_loss, g_loss


def regularization_loss(fields: Iterable[WarpField], like: torch.Tensor) -> torch.Tensor:
    """Smoothness summed over every TPS field of one forward pass; zero without fields"""
    total = like.new_zeros(())
    for field in fields:
        total = total + smoothness_regularizer(field)
    return total


class LossParts(BaseModel):
    """Loss components of one training step; adv_d belongs to the discriminator update"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    adv_g: torch.Tensor
    direct: torch.Tensor
    cons: torch.Tensor
    reg: torch.Tensor
    adv_d: Optional[torch.Tensor] = None

    def check_finite(self):
        for term in ("adv_g", "direct", "cons", "reg", "adv_d"):
            value = getattr(self, term)
            if value is not None and not torch.isfinite(value).all():
                raise NonFiniteLossError(term, float(value.detach().reshape(-1)[0]))

    def record(self, step: int, total: torch.Tensor) -> LossRecord:
        return LossRecord(
            step=step,
            L_adv_G=float(self.adv_g.detach()),
            L_adv_D=float(self.adv_d.detach()) if self.adv_d is not None else 0.0,
            L_direct=float(self.direct.detach()),
            L_cons=float(self.cons.detach()),
            L_reg=float(self.reg.detach()),
            L_total=float(total.detach()),
        )


def total_loss(parts: LossParts, weights: LossWeights, ablation: Optional[AblationConfig] = None) -> torch.Tensor:
    """L_adv + lambda_direct * L_direct + lambda_cons * L_cons + lambda_reg * L_reg"""
    ablation = ablation or AblationConfig()
    for term in ("adv_g", "direct", "cons", "reg"):
        value = getattr(parts, term)
        if not torch.isfinite(value).all():
            raise NonFiniteLossError(term, float(value.detach().reshape(-1)[0]))

    total = torch.zeros_like(parts.direct)
    if ablation.use_adv:
        total = total + parts.adv_g
    if ablation.use_direct:
        total = total + weights.lambda_direct * parts.direct
    if ablation.use_cons:
        total = total + weights.lambda_cons * parts.cons
    if ablation.use_reg:
        total = total + weights.lambda_reg * parts.reg
    return total


def write_loss_csv(path: Path, records: List[LossRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOSS_COLUMNS)
        writer.writeheader()
        for record in records:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in record.model_dump().items()})
    return path


def read_loss_csv(path: Path) -> List[LossRecord]:
    with open(path, newline="") as f:
        return [
            LossRecord(**{k: int(v) if k == "step" else float(v) for k, v in row.items()})
            for row in csv.DictReader(f)
        ]

