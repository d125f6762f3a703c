import hashlib
from pathlib import Path
from typing import Dict, List, Optional, Tuple
import torch
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from src.adaptation.references import color_align, prepare_references, reference_digest, reference_direction
from src.adaptation.state import CHECKPOINT_NAME, TrainState, load_checkpoint, read_checkpoint, save_checkpoint
from src.config import StylizerConfig, StylizerSettings
from src.generator import (
    Generator,
    PatchDiscriminator,
    ReferencePair,
    clone_for_adaptation,
    load_discriminator,
    load_source,
    sample_latents,
    save_bundle,
)
from src.logger import console, logger, run_log
from src.models import LossRecord
from src.objectives import (
    LossParts,
    SimilarityDistribution,
    adversarial_losses,
    build_similarity_distribution,
    consistency_loss,
    directional_loss,
    generator_adversarial_loss,
    regularization_loss,
    total_loss,
    write_loss_csv,
)
from src.perceptual import PerceptualDistance
from src.semantics import SemanticEncoder, TokenMatrix, self_similarity

BUNDLE_NAME = "bundle.zip"
LOSS_LOG_NAME = "losses.csv"


def resume_key(config: StylizerConfig, pair_digest: Optional[str] = None) -> str:
    """Config hash ignoring the fields that may change between a run and its resumption,
    combined with the digest of the reference pair when one is given"""
    training = config.training.model_copy(update={"iterations": 0, "resume": True})
    config_hash = config.model_copy(update={"training": training}).config_hash()
    if pair_digest is None:
        return config_hash
    return hashlib.sha256(f"{config_hash}:{pair_digest}".encode()).hexdigest()


class AdaptationSession:
    """One-shot fine-tuning of a target generator against a frozen source"""

    def __init__(
        self,
        config: StylizerConfig,
        source: Generator,
        target: Generator,
        discriminator: PatchDiscriminator,
        encoder: SemanticEncoder,
        refs: ReferencePair,
    ):
        self.config = config
        self.training = config.training
        self.source = source
        self.target = target
        self.discriminator = discriminator
        self.encoder = encoder
        self.refs = refs

        self.device = source.latent_avg.device
        self.ref_source = refs.source_image.to(self.device)
        self.ref_target = refs.target_image.to(self.device)

        semantics = config.semantics
        self.direction_levels = tuple(semantics.direction_levels)
        self.feature_levels = tuple(dict.fromkeys([*self.direction_levels, semantics.consistency_level]))

        self.d_ref = reference_direction(self.ref_source, self.ref_target, encoder, self.direction_levels)
        with torch.no_grad():
            self.ref_structure_s = encoder.structure(self.ref_source[0])
            self.ref_structure_t = encoder.structure(self.ref_target[0])

        self.optimizer_g = torch.optim.Adam(self.param_groups(), betas=self.training.betas)
        self.optimizer_d = torch.optim.Adam(
            discriminator.parameters(), lr=self.training.lr_discriminator, betas=self.training.betas
        )
        self.rng = torch.Generator().manual_seed(self.training.seed)
        self.state = TrainState(resume_key=resume_key(config, reference_digest(refs.source_image, refs.target_image)))

    def param_groups(self) -> List[Dict]:
        """Synthesis weights, TPS predictors and basic predictors each at their own learning rate"""
        groups = [
            {"name": "generator", "params": list(self.target.synthesis_parameters()), "lr": self.training.lr_generator},
            {"name": "tps_stn", "params": list(self.target.stn_parameters("tps")), "lr": self.training.lr_tps_stn},
            {"name": "basic_stn", "params": list(self.target.stn_parameters("basic")), "lr": self.training.lr_basic_stn},
        ]
        return [g for g in groups if g["params"]]

    def features(self, images: torch.Tensor) -> Dict[str, TokenMatrix]:
        return self.encoder.extract_levels(images, self.feature_levels)

    def _direction(self, feats_s: Dict[str, TokenMatrix], feats_t: Dict[str, TokenMatrix]) -> torch.Tensor:
        parts = [(feats_t[lv].tokens - feats_s[lv].tokens).flatten(-2) for lv in self.direction_levels]
        return torch.cat(parts, dim=-1)

    def similarity_distributions(
        self, feats_s: Dict[str, TokenMatrix], feats_t: Dict[str, TokenMatrix]
    ) -> Tuple[SimilarityDistribution, SimilarityDistribution]:
        """Batch self-similarity plus the reference slots, per domain"""
        level = self.config.semantics.consistency_level
        temperature = self.training.softmax_temperature
        c_source = build_similarity_distribution(
            self_similarity(feats_s[level]), self.ref_structure_s, temperature, "source"
        )
        c_target = build_similarity_distribution(
            self_similarity(feats_t[level]), self.ref_structure_t, temperature, "target"
        )
        return c_source, c_target

    def aligned_latents(self, w: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Source- and target-side codes; both are w itself with colour alignment off"""
        if not self.training.color_align:
            return w, w
        return color_align(w, self.refs, self.training.style_mix_split)

    def generator_losses(self, w: torch.Tensor) -> Tuple[LossParts, torch.Tensor]:
        """Losses of the generator update for sampled W+ codes, plus the target-side codes"""
        ablation = self.training.ablation
        w_s, w_t = self.aligned_latents(w)

        with torch.no_grad():
            images_s = self.source(w_s, deform=False)
        images_t, fields = self.target(w_t, return_fields=True)
        zero = images_t.new_zeros(())

        direct = cons = zero
        if ablation.use_direct or ablation.use_cons:
            feats_t = self.features(images_t)
            with torch.no_grad():
                feats_s = self.features(images_s)

            if ablation.use_direct:
                direct = directional_loss(self._direction(feats_s, feats_t), self.d_ref.values.to(images_t))

            if ablation.use_cons:
                cons = consistency_loss(*self.similarity_distributions(feats_s, feats_t))

        reg = regularization_loss(fields, images_t) if ablation.use_reg else zero

        adv_g = zero
        if ablation.use_adv:
            adv_g = generator_adversarial_loss(self.discriminator(images_t))

        return LossParts(adv_g=adv_g, direct=direct, cons=cons, reg=reg), w_t

    def discriminator_loss(self, w_t: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            fakes = self.target(w_t)
        d_loss, _ = adversarial_losses(self.discriminator(self.ref_target), self.discriminator(fakes))
        return d_loss

    def train_step(self) -> LossRecord:
        """Sample, color-align, update G^t and its STNs, then update the discriminator"""
        step = self.state.step
        w = sample_latents(self.source, self.training.batch_size, self.training.truncation, self.rng)

        self.target.train()
        self.discriminator.requires_grad_(False)
        parts, w_t = self.generator_losses(w)
        total = total_loss(parts, self.training.weights, self.training.ablation)

        self.optimizer_g.zero_grad(set_to_none=True)
        if total.requires_grad:
            total.backward()
            self.optimizer_g.step()

        if self.training.ablation.use_adv:
            self.discriminator.requires_grad_(True)
            d_loss = self.discriminator_loss(w_t)
            parts.adv_d = d_loss.detach()
            parts.check_finite()
            self.optimizer_d.zero_grad(set_to_none=True)
            d_loss.backward()
            self.optimizer_d.step()

        record = parts.record(step, total.detach())
        self.state.observe(record)
        self.state.step += 1
        return record

    def snapshot(self) -> TrainState:
        self.state.rng_state = self.rng.get_state()
        return self.state

    def restore(self, path: Path):
        self.state = load_checkpoint(path, self.target, self.discriminator, self.optimizer_g, self.optimizer_d)
        self.rng.set_state(self.state.rng_state)

    def save(self, out_dir: Path) -> Path:
        return save_checkpoint(
            Path(out_dir) / CHECKPOINT_NAME,
            self.snapshot(),
            self.target,
            self.discriminator,
            self.optimizer_g,
            self.optimizer_d,
            self.refs,
        )

    def run(self, out_dir: Path) -> List[LossRecord]:
        """Train up to `training.iterations` steps with progress display and periodic checkpoints"""
        out_dir = Path(out_dir)
        iterations = self.training.iterations

        progress = Progress(
            TextColumn("[cyan]Adapting"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            console=console,
            transient=True,
        )
        with progress:
            task = progress.add_task("adapt", total=iterations, completed=self.state.step)
            try:
                while self.state.step < iterations:
                    record = self.train_step()
                    progress.advance(task)

                    if record.step % self.training.log_every == 0:
                        logger.info(
                            f"step {record.step}: total {record.L_total:.4f} direct {record.L_direct:.4f} "
                            f"cons {record.L_cons:.3e} reg {record.L_reg:.3e} "
                            f"adv G {record.L_adv_G:.4f} D {record.L_adv_D:.4f}"
                        )
                    if self.state.step % self.training.checkpoint_every == 0:
                        self.save(out_dir)
            except KeyboardInterrupt:
                logger.warning("[yellow]Interrupted; writing checkpoint before exit[/yellow]")
                self.save(out_dir)
                raise

        self.save(out_dir)
        return self.state.records


def run_adaptation(
    source_image: torch.Tensor,
    target_image: torch.Tensor,
    config: StylizerConfig,
    out_dir: Path,
    settings: Optional[StylizerSettings] = None,
    encoder: Optional[SemanticEncoder] = None,
    perceptual: Optional[PerceptualDistance] = None,
    weights_client=None,
    name: Optional[str] = None,
) -> Path:
    """Full adaptation run; returns the path of the written bundle"""
    settings = settings or StylizerSettings()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if weights_client is None:
        from src.clients.weights import WeightsClient

        weights_client = WeightsClient(config.checkpoints, settings.cache_dir)

    with run_log(out_dir):
        source = load_source(config.generator, weights_client).to(settings.device)
        target = clone_for_adaptation(source, config.generator)
        discriminator = load_discriminator(config.discriminator, config.generator, weights_client).to(settings.device)
        encoder = (encoder or SemanticEncoder(config.semantics)).to(settings.device)

        checkpoint = out_dir / CHECKPOINT_NAME
        payload = read_checkpoint(checkpoint) if config.training.resume and checkpoint.exists() else None
        key = resume_key(config, reference_digest(source_image, target_image))
        resuming = payload is not None and payload["state"].get("resume_key") == key
        if payload is not None and not resuming:
            logger.warning(
                f"[yellow]Ignoring {checkpoint}: it was written for a different configuration or reference pair[/yellow]"
            )

        if resuming:
            refs = ReferencePair.from_state(payload["refs"])
        else:
            refs = prepare_references(
                source_image.to(settings.device), target_image.to(settings.device),
                source, config, encoder, perceptual, name,
            )

        session = AdaptationSession(config, source, target, discriminator, encoder, refs)
        if resuming:
            session.restore(checkpoint)

        logger.info(
            f"[cyan]Adapting for {config.training.iterations} iterations "
            f"(batch {config.training.batch_size}, {len(target.transforms)} Transform modules)[/cyan]"
        )
        records = session.run(out_dir)
        write_loss_csv(out_dir / LOSS_LOG_NAME, records)

        bundle = save_bundle(
            out_dir / BUNDLE_NAME,
            target,
            source,
            refs,
            config,
            metadata={"style_name": name, "iterations": session.state.step},
        )
        logger.info(f"[bold green]Adaptation finished: {bundle}[/bold green]")
        return bundle
