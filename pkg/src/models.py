from typing import Dict, List, Optional
from pydantic import BaseModel, Field, model_validator

BUNDLE_VERSION = 1


class LossRecord(BaseModel):
    """One row of the per-step loss log"""
    step: int
    L_adv_G: float = 0.0
    L_adv_D: float = 0.0
    L_direct: float = 0.0
    L_cons: float = 0.0
    L_reg: float = 0.0
    L_total: float = 0.0


class BundleManifest(BaseModel):
    """manifest.json of an adapted-model bundle"""
    version: int = BUNDLE_VERSION
    config: Dict
    weights: Dict[str, str] = Field(default_factory=lambda: {"target": "target.pt", "source": "source.pt"})
    refs: str = "refs.pt"
    metadata: Dict = Field(default_factory=dict)


class EvalSample(BaseModel):
    """Metrics for one (G^s(w), G^t(w)) pair"""
    seed: int
    lpips: float = Field(ge=0)
    dir_cc: float = Field(ge=-1 - 1e-6, le=1 + 1e-6)
    dir_id: float = Field(ge=-1 - 1e-6, le=1 + 1e-6)


class EvalReport(BaseModel):
    """Per-sample and mean metrics of one evaluated bundle"""
    samples: List[EvalSample] = []
    mean_lpips: float = 0.0
    mean_dir_cc: float = 0.0
    mean_dir_id: float = 0.0
    style_name: Optional[str] = None
    model_hash: Optional[str] = None
    n_samples: int = 0
    feature_layers: List[str] = []
    backends: Dict[str, str] = {}

    @classmethod
    def from_samples(cls, samples: List[EvalSample], **metadata) -> "EvalReport":
        n = len(samples)
        return cls(
            samples=samples,
            mean_lpips=sum(s.lpips for s in samples) / n if n else 0.0,
            mean_dir_cc=sum(s.dir_cc for s in samples) / n if n else 0.0,
            mean_dir_id=sum(s.dir_id for s in samples) / n if n else 0.0,
            n_samples=n,
            **metadata,
        )

    @model_validator(mode="after")
    def _count(self) -> "EvalReport":
        if self.n_samples != len(self.samples):
            raise ValueError(f"n_samples={self.n_samples} but {len(self.samples)} samples recorded")
        return self


class SweepEntry(BaseModel):
    """One rendered alpha of a deformation sweep"""
    alpha: float
    path: str
    displacement_norm: float
