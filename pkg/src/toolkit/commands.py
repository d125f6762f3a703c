"""
Subcommand implementations behind main.py.

Each function takes plain paths and options, does the work and returns what it
wrote, so the CLI stays a thin argument parser.
"""
import csv
import json
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence
import torch
from src.adaptation import reference_digest, run_adaptation
from src.adaptation.state import CHECKPOINT_NAME
from src.adaptation.trainer import resume_key
from src.config import AppConfig, SemanticsConfig, StylizerConfig, StylizerSettings
from src.generator import Bundle, LatentCode, encode_image, load_bundle, sample_latent, synthesize
from src.logger import logger
from src.models import EvalReport, SweepEntry
from src.perceptual import build_perceptual
from src.semantics import SemanticEncoder, pca_visualize
from src.semantics.pca import to_rgb
from src.toolkit.images import load_image, save_image
from src.toolkit.metrics import MetricSuite, evaluate_bundle
from src.warp import displacement_norm

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
SWEEP_JSON = "sweep.json"
DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


def run_directory(root: Path, digest: str, resume: bool = False) -> Path:
    """<root>/<timestamp>-<digest[:8]>; with resume, the newest existing one holding a checkpoint"""
    root = Path(root)
    suffix = digest[:8]
    if resume and root.is_dir():
        candidates = sorted(
            p for p in root.glob(f"*-{suffix}") if p.is_dir() and (p / CHECKPOINT_NAME).exists()
        )
        if candidates:
            logger.info(f"[cyan]Resuming in {candidates[-1]}[/cyan]")
            return candidates[-1]

    run_dir = root / f"{datetime.now().strftime('%Y%m%d-%H%M%S')}-{suffix}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _check_exists(*paths: Path):
    for path in paths:
        if not Path(path).exists():
            raise FileNotFoundError(f"File not found: {path}")


def _open_bundle(bundle_path: Path, settings: StylizerSettings) -> Bundle:
    bundle = load_bundle(bundle_path)
    bundle.source.to(settings.device)
    bundle.target.to(settings.device)
    return bundle


def _latent_for(
    bundle: Bundle,
    settings: StylizerSettings,
    image_path: Optional[Path] = None,
    seed: Optional[int] = None,
    truncation: float = 1.0,
) -> LatentCode:
    """W+ code of a photo (encoder or inversion) or of a seeded sample"""
    if (image_path is None) == (seed is None):
        raise ValueError("Give exactly one of an image or a seed")
    if seed is not None:
        return sample_latent(bundle.source, seed, truncation)

    image = load_image(image_path, bundle.source.size).to(settings.device)
    config = bundle.config
    perceptual = None
    if config.encoder.checkpoint is None and config.inversion.enabled:
        perceptual = build_perceptual(config.inversion.perceptual_backend).to(settings.device)
    return encode_image(image, bundle.source, config, perceptual=perceptual)


def cli_train(
    real_path: Path,
    style_path: Path,
    config_path: Path,
    out_root: Path,
    name: Optional[str] = None,
    config: Optional[StylizerConfig] = None,
    settings: Optional[StylizerSettings] = None,
    **session_overrides,
) -> Path:
    """Adapt on one real/style pair; returns the bundle path"""
    _check_exists(real_path, style_path)
    if config is None:
        app_config = AppConfig(config_path=Path(config_path))
        config, settings = app_config.stylizer, settings or app_config.settings
    settings = settings or StylizerSettings()

    size = config.generator.output_resolution
    real = load_image(real_path, size)
    style = load_image(style_path, size)

    key = resume_key(config, reference_digest(real, style))
    run_dir = run_directory(out_root, key, resume=config.training.resume)
    logger.info(f"[cyan]Run directory: {run_dir}[/cyan]")
    return run_adaptation(
        real,
        style,
        config,
        run_dir,
        settings=settings,
        name=name or Path(style_path).stem,
        **session_overrides,
    )


@torch.no_grad()
def _render(bundle: Bundle, w: LatentCode, alpha: float) -> torch.Tensor:
    return synthesize(bundle.target, w, deform=float(alpha))


def cli_stylize(
    bundle_path: Path,
    out_path: Path,
    image_path: Optional[Path] = None,
    seed: Optional[int] = None,
    alpha: float = 1.0,
    truncation: float = 1.0,
    settings: Optional[StylizerSettings] = None,
) -> Path:
    """Render G^t(w) for a photo or a seed at deformation strength alpha"""
    settings = settings or StylizerSettings()
    bundle = _open_bundle(bundle_path, settings)
    w = _latent_for(bundle, settings, image_path, seed, truncation)
    path = save_image(_render(bundle, w, alpha), out_path)
    logger.info(f"[green]Wrote {path} (alpha={alpha})[/green]")
    return path


def cli_sweep(
    bundle_path: Path,
    out_root: Path,
    image_path: Optional[Path] = None,
    seed: Optional[int] = None,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    truncation: float = 1.0,
    settings: Optional[StylizerSettings] = None,
) -> List[SweepEntry]:
    """One image per alpha plus the mean TPS displacement norm of each"""
    settings = settings or StylizerSettings()
    bundle = _open_bundle(bundle_path, settings)
    w = _latent_for(bundle, settings, image_path, seed, truncation)
    run_dir = run_directory(out_root, bundle.config.config_hash())

    if not bundle.target.transforms:
        logger.warning("[yellow]Bundle has no Transform modules; every alpha renders the same image[/yellow]")

    entries = []
    with torch.no_grad():
        for alpha in alphas:
            if not 0 <= alpha <= 1:
                logger.warning(f"[yellow]alpha={alpha} lies outside [0, 1]; the warp is extrapolated[/yellow]")
            image, fields = bundle.target(w, alpha=float(alpha), return_fields=True)
            norm = torch.stack([displacement_norm(f).mean() for f in fields]).mean() if fields else torch.zeros(())
            path = save_image(image, run_dir / f"alpha_{alpha:.2f}.png")
            entries.append(SweepEntry(alpha=float(alpha), path=str(path), displacement_norm=float(norm)))
            logger.info(f"alpha {alpha:.2f}: displacement {float(norm):.4e}")

    with open(run_dir / SWEEP_JSON, "w") as f:
        json.dump([entry.model_dump() for entry in entries], f, indent=2)
    logger.info(f"[green]Sweep of {len(entries)} alphas written to {run_dir}[/green]")
    return entries


def read_seeds(path: Path) -> List[int]:
    """Integers separated by whitespace or commas; '#' starts a comment"""
    _check_exists(path)
    seeds = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        seeds.extend(int(token) for token in line.replace(",", " ").split())
    return seeds


def write_report(report: EvalReport, out_dir: Path):
    out_dir = Path(out_dir)
    with open(out_dir / REPORT_JSON, "w") as f:
        f.write(report.model_dump_json(indent=2))
    with open(out_dir / REPORT_CSV, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["seed", "lpips", "dir_cc", "dir_id"])
        writer.writeheader()
        for sample in report.samples:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in sample.model_dump().items()})


def cli_evaluate(
    bundle_path: Path,
    out_root: Path,
    n_samples: Optional[int] = None,
    seeds_path: Optional[Path] = None,
    truncation: float = 1.0,
    settings: Optional[StylizerSettings] = None,
    suite: Optional[MetricSuite] = None,
) -> EvalReport:
    """LPIPS, dir-CC and dir-ID over seeded samples; writes report.json and report.csv"""
    settings = settings or StylizerSettings()
    if seeds_path is not None:
        seeds = read_seeds(seeds_path)
        if n_samples is not None:
            if n_samples > len(seeds):
                raise ValueError(f"Asked for {n_samples} samples but {seeds_path} lists {len(seeds)} seeds")
            seeds = seeds[:n_samples]
    elif n_samples is not None:
        seeds = list(range(n_samples))
    else:
        raise ValueError("Give a sample count, a seeds file, or both")

    bundle = _open_bundle(bundle_path, settings)
    suite = (suite or MetricSuite(bundle.config.metrics)).to(settings.device)
    run_dir = run_directory(out_root, bundle.config.config_hash())

    report = evaluate_bundle(bundle, seeds, suite, truncation)
    write_report(report, run_dir)
    logger.info(
        f"[green]{report.n_samples} samples: LPIPS {report.mean_lpips:.3f} "
        f"dir-CC {report.mean_dir_cc:.3f} dir-ID {report.mean_dir_id:.3f}[/green]"
    )
    return report


def cli_visualize_features(
    image_paths: Sequence[Path],
    layers: Sequence[int],
    out_root: Path,
    backbone: str = "dino",
    model_name: Optional[str] = None,
    size: int = 224,
    components: int = 3,
    semantics: Optional[SemanticsConfig] = None,
) -> List[Path]:
    """PCA colour maps per image and layer, fitted jointly over the images"""
    if not image_paths:
        raise ValueError("Need at least one image")
    _check_exists(*image_paths)

    if semantics is None:
        overrides = {"backend": backbone}
        if model_name:
            overrides["model_name"] = model_name
        semantics = SemanticsConfig(**overrides)
    encoder = SemanticEncoder(semantics)
    images = [load_image(path, size) for path in image_paths]

    digest = StylizerConfig(semantics=semantics).config_hash()
    run_dir = run_directory(out_root, digest)

    written = []
    for layer in layers:
        maps = pca_visualize(encoder, images, int(layer), components)
        for path, colour_map in zip(image_paths, maps.maps):
            rgb = torch.from_numpy(to_rgb(colour_map)).permute(2, 0, 1).float()[None] / 127.5 - 1
            rgb = torch.nn.functional.interpolate(rgb, size=size, mode="bicubic", align_corners=False)
            written.append(save_image(rgb, run_dir / f"{Path(path).stem}_pca_L{layer}.png"))
        ratios = ", ".join(f"{r:.3f}" for r in maps.explained_variance_ratio)
        logger.info(f"layer {layer}: explained variance {ratios}")

    logger.info(f"[green]Wrote {len(written)} feature maps to {run_dir}[/green]")
    return written
