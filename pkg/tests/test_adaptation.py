import pytest
import torch
from src.adaptation import (
    AdaptationSession,
    color_align,
    load_checkpoint,
    prepare_references,
    reference_digest,
    reference_direction,
    run_adaptation,
)
from src.adaptation.state import CHECKPOINT_NAME, read_checkpoint
from src.adaptation.trainer import LOSS_LOG_NAME, resume_key
from src.errors import UndefinedDirectionError
from src.generator import (
    LatentCode,
    ReferencePair,
    clone_for_adaptation,
    load_bundle,
    load_discriminator,
    load_source,
    sample_latent,
    state_digest,
)
from src.logger import RUN_LOG_NAME
from src.objectives import build_similarity_distribution, consistency_loss, read_loss_csv, total_loss
from tests.conftest import MINI_SIZE, make_config


def make_refs(source, pair) -> ReferencePair:
    real, style = pair
    return ReferencePair(
        source_image=real,
        target_image=style,
        w_ref_s=sample_latent(source, 100, 0.7),
        w_ref_t=sample_latent(source, 101, 0.7),
        name="test",
    )


def make_session(config, source, encoder, pair) -> AdaptationSession:
    target = clone_for_adaptation(source, config.generator)
    discriminator = load_discriminator(config.discriminator, config.generator)
    return AdaptationSession(config, source, target, discriminator, encoder, make_refs(source, pair))


def fixed_codes(source):
    return torch.stack([sample_latent(source, seed, 0.7).values for seed in range(4)])


def test_color_align_swaps_fine_rows(source, pair):
    refs = make_refs(source, pair)
    w = fixed_codes(source)
    w_s, w_t = color_align(w, refs)

    assert torch.equal(w_s[:, :8], w_t[:, :8])
    assert torch.equal(w_s[:, :8], w[:, :8])
    assert torch.equal(w_t[:, 8:], refs.w_ref_t.values[8:].expand(4, -1, -1))
    assert torch.equal(w_s[:, 8:], refs.w_ref_s.values[8:].expand(4, -1, -1))


def test_color_align_with_equal_refs(source, pair):
    refs = make_refs(source, pair).model_copy(update={"w_ref_t": sample_latent(source, 100, 0.7)})
    w_s, w_t = color_align(fixed_codes(source), refs)
    assert torch.equal(w_s, w_t)


def test_color_alignment_can_be_switched_off(source, encoder, pair):
    w = fixed_codes(source)
    plain = make_session(make_config(color_align=False), source, encoder, pair)
    w_s, w_t = plain.aligned_latents(w)
    assert torch.equal(w_s, w)
    assert torch.equal(w_t, w)

    aligned = make_session(make_config(), source, encoder, pair)
    w_s, w_t = aligned.aligned_latents(w)
    expected_s, expected_t = color_align(w, aligned.refs, aligned.training.style_mix_split)
    assert torch.equal(w_s, expected_s)
    assert torch.equal(w_t, expected_t)
    assert not torch.equal(w_t, w)


def test_degenerate_reference_pair_is_rejected(source, encoder, pair, config, perceptual):
    real, _ = pair
    with pytest.raises(UndefinedDirectionError):
        reference_direction(real, real, encoder)
    with pytest.raises(UndefinedDirectionError):
        prepare_references(real, real.clone(), source, config, encoder, perceptual)


def test_reference_resolution_is_checked(source, config, perceptual):
    small = torch.zeros(1, 3, 32, 32)
    with pytest.raises(ValueError):
        prepare_references(small, small, source, config, perceptual=perceptual)


def test_prepare_references_is_deterministic(source, encoder, pair, config, perceptual):
    real, style = pair
    a = prepare_references(real, style, source, config, encoder, perceptual, "x")
    b = prepare_references(real, style, source, config, encoder, perceptual, "x")

    assert torch.equal(a.w_ref_s.values, b.w_ref_s.values)
    assert torch.equal(a.w_ref_t.values, b.w_ref_t.values)
    assert a.w_ref_s.values.shape == (18, 512)


def test_learning_rates_are_routed_per_group(config, source, encoder, pair):
    session = make_session(config, source, encoder, pair)
    groups = {g["name"]: g for g in session.optimizer_g.param_groups}

    assert set(groups) == {"generator", "tps_stn", "basic_stn"}
    assert groups["generator"]["lr"] == config.training.lr_generator
    assert groups["tps_stn"]["lr"] == config.training.lr_tps_stn
    assert groups["basic_stn"]["lr"] == config.training.lr_basic_stn
    assert session.optimizer_d.param_groups[0]["lr"] == config.training.lr_discriminator


def test_zero_tps_learning_rate_freezes_only_tps_weights(source, encoder, pair):
    session = make_session(make_config(lr_tps_stn=0.0), source, encoder, pair)
    before = {name: p.detach().clone() for name, p in session.target.named_parameters()}
    for _ in range(2):
        session.train_step()

    moved = {name for name, p in session.target.named_parameters() if not torch.equal(p, before[name])}
    tps = {name for name in before if ".tps." in name}
    assert tps
    assert not moved & tps
    assert any(".basic." in name for name in moved)
    assert any(not name.startswith("transforms.") for name in moved)


def test_composed_loss_gradient_matches_finite_differences(config, encoder, pair):
    source = load_source(config.generator).double()
    target = clone_for_adaptation(source, config.generator).double()
    discriminator = load_discriminator(config.discriminator, config.generator).double()
    real, style = pair
    refs = make_refs(source, (real.double(), style.double()))
    session = AdaptationSession(config, source, target, discriminator, encoder, refs)
    w = fixed_codes(source)[:2]

    linear = target.transforms["32"].tps.fc2
    rng = torch.Generator().manual_seed(5)
    bias = (0.02 * torch.randn(linear.bias.shape, generator=rng, dtype=torch.float64)).requires_grad_(True)
    del linear.bias

    def loss(b):
        linear.bias = b
        parts, _ = session.generator_losses(w)
        return total_loss(parts, config.training.weights, config.training.ablation)

    assert torch.autograd.gradcheck(loss, (bias,), eps=1e-6, atol=1e-5, rtol=1e-2)


def test_first_step_distributions_with_identical_samples(source, encoder, pair):
    session = make_session(make_config(color_align=False), source, encoder, pair)
    session.ref_structure_t = session.ref_structure_s
    w = sample_latent(source, 7, 0.7).values.expand(3, -1, -1).contiguous()

    with torch.no_grad():
        feats_s = session.features(source(w, deform=False))
        feats_t = session.features(session.target(w))
    c_source, c_target = session.similarity_distributions(feats_s, feats_t)

    for dist in (c_source, c_target):
        assert dist.n == 3
        assert dist.reference_group.shape == (3,)
        assert dist.probs.shape == (3 + 3,)
        assert torch.allclose(dist.pair_group, torch.full((3,), 1 / 3))
    assert float(consistency_loss(c_source, c_target)) < 1e-10

    parts, _ = session.generator_losses(w)
    assert float(parts.cons) < 1e-10

    descriptors = torch.stack([session.ref_structure_s.values] * 4)
    shared = build_similarity_distribution(descriptors, session.ref_structure_s)
    assert shared.reference_group.shape == (4,)
    assert float(consistency_loss(shared, shared)) == 0.0


def test_first_step_losses(config, source, encoder, pair):
    session = make_session(config, source, encoder, pair)
    record = session.train_step()

    assert record.step == 0
    assert record.L_reg == 0.0
    assert 0 < record.L_direct <= 2
    assert record.L_cons >= 0
    assert record.L_adv_D != 0.0
    for value in record.model_dump().values():
        assert torch.isfinite(torch.tensor(float(value)))


def test_source_is_untouched_by_training(config, source, encoder, pair):
    digest = state_digest(source)
    w = fixed_codes(source)
    with torch.no_grad():
        before = source(w, deform=False)

    session = make_session(config, source, encoder, pair)
    for _ in range(3):
        session.train_step()

    assert state_digest(source) == digest
    with torch.no_grad():
        assert torch.equal(source(w, deform=False), before)


def test_zero_learning_rates_leave_weights_unchanged(source, encoder, pair):
    config = make_config(lr_generator=0.0, lr_tps_stn=0.0, lr_basic_stn=0.0, lr_discriminator=0.0)
    session = make_session(config, source, encoder, pair)
    target_digest = state_digest(session.target)
    discriminator_digest = state_digest(session.discriminator)

    for _ in range(2):
        session.train_step()

    assert state_digest(session.target) == target_digest
    assert state_digest(session.discriminator) == discriminator_digest


def test_ablated_terms_are_logged_as_zero(source, encoder, pair):
    config = make_config(ablation={"use_adv": False, "use_cons": False})
    record = make_session(config, source, encoder, pair).train_step()

    assert record.L_adv_G == 0.0
    assert record.L_adv_D == 0.0
    assert record.L_cons == 0.0
    assert record.L_direct > 0


def test_training_without_any_generator_term(source, encoder, pair):
    config = make_config(ablation={"use_adv": False, "use_cons": False, "use_direct": False, "use_reg": False})
    session = make_session(config, source, encoder, pair)
    digest = state_digest(session.target)

    record = session.train_step()
    assert record.L_total == 0.0
    assert state_digest(session.target) == digest


def test_interrupt_writes_checkpoint(tmp_path, config, source, encoder, pair, monkeypatch):
    session = make_session(config, source, encoder, pair)
    original = session.train_step

    def interrupted():
        if session.state.step == 1:
            raise KeyboardInterrupt
        return original()

    monkeypatch.setattr(session, "train_step", interrupted)
    with pytest.raises(KeyboardInterrupt):
        session.run(tmp_path)

    payload = read_checkpoint(tmp_path / CHECKPOINT_NAME)
    assert payload["state"]["step"] == 1
    assert len(payload["records"]) == 1


def test_checkpoint_restores_session(tmp_path, config, source, encoder, pair):
    session = make_session(config, source, encoder, pair)
    session.train_step()
    session.save(tmp_path)

    fresh = make_session(config, source, encoder, pair)
    fresh.restore(tmp_path / CHECKPOINT_NAME)

    assert fresh.state.step == 1
    assert state_digest(fresh.target) == state_digest(session.target)
    assert torch.equal(fresh.rng.get_state(), session.rng.get_state())
    assert fresh.train_step() == session.train_step()


def test_resume_key_ignores_iteration_count():
    assert resume_key(make_config(iterations=2)) == resume_key(make_config(iterations=400))
    assert resume_key(make_config(seed=1)) != resume_key(make_config(seed=2))


def test_runs_are_deterministic(tmp_path, pair, settings, perceptual):
    real, style = pair
    config = make_config(resume=False)
    run_adaptation(real, style, config, tmp_path / "a", settings=settings, perceptual=perceptual)
    run_adaptation(real, style, config, tmp_path / "b", settings=settings, perceptual=perceptual)

    a = (tmp_path / "a" / LOSS_LOG_NAME).read_bytes()
    assert a == (tmp_path / "b" / LOSS_LOG_NAME).read_bytes()
    assert len(read_loss_csv(tmp_path / "a" / LOSS_LOG_NAME)) == config.training.iterations


def test_resumed_run_matches_uninterrupted(tmp_path, pair, settings, perceptual):
    real, style = pair
    run_adaptation(real, style, make_config(iterations=4), tmp_path / "full", settings=settings, perceptual=perceptual)

    resumed = tmp_path / "resumed"
    run_adaptation(real, style, make_config(iterations=2), resumed, settings=settings, perceptual=perceptual)
    run_adaptation(real, style, make_config(iterations=4), resumed, settings=settings, perceptual=perceptual)

    assert (resumed / LOSS_LOG_NAME).read_bytes() == (tmp_path / "full" / LOSS_LOG_NAME).read_bytes()


def test_mismatched_checkpoint_is_ignored(tmp_path, pair, settings, perceptual):
    real, style = pair
    run_adaptation(real, style, make_config(iterations=2, seed=1), tmp_path, settings=settings, perceptual=perceptual)
    run_adaptation(real, style, make_config(iterations=2, seed=2), tmp_path, settings=settings, perceptual=perceptual)

    payload = read_checkpoint(tmp_path / CHECKPOINT_NAME)
    assert payload["state"]["resume_key"] == resume_key(make_config(seed=2), reference_digest(real, style))


def test_resume_key_tracks_the_reference_pair(pair):
    real, style = pair
    config = make_config()
    key = resume_key(config, reference_digest(real, style))

    assert key == resume_key(config, reference_digest(real.clone(), style.clone()))
    assert key != resume_key(config, reference_digest(real, style.flip(-1)))
    assert key != resume_key(config, reference_digest(style, real))
    assert key != resume_key(config)


def test_checkpoint_of_another_pair_is_ignored(tmp_path, pair, settings, perceptual):
    real, style = pair
    other = style.flip(-1)
    config = make_config(iterations=2)
    run_adaptation(real, style, config, tmp_path, settings=settings, perceptual=perceptual)
    path = run_adaptation(real, other, config, tmp_path, settings=settings, perceptual=perceptual)

    bundle = load_bundle(path)
    assert torch.equal(bundle.refs.target_image, other)
    payload = read_checkpoint(tmp_path / CHECKPOINT_NAME)
    assert payload["state"]["resume_key"] == resume_key(config, reference_digest(real, other))
    assert payload["state"]["step"] == 2


def test_zero_iterations_reproduces_source(tmp_path, pair, settings, perceptual):
    real, style = pair
    path = run_adaptation(real, style, make_config(iterations=0), tmp_path, settings=settings, perceptual=perceptual)
    bundle = load_bundle(path)

    w = fixed_codes(bundle.source)
    with torch.no_grad():
        assert (bundle.target(w) - bundle.source(w, deform=False)).abs().max() < 1e-4
    assert bundle.refs.source_image.shape == (1, 3, MINI_SIZE, MINI_SIZE)

    log = (tmp_path / RUN_LOG_NAME).read_text()
    assert "Adaptation finished" in log
    assert "[bold" not in log


def test_loaded_checkpoint_state(tmp_path, config, source, encoder, pair):
    session = make_session(config, source, encoder, pair)
    session.train_step()
    session.train_step()
    path = session.save(tmp_path)

    other = make_session(config, source, encoder, pair)
    state = load_checkpoint(path, other.target, other.discriminator, other.optimizer_g, other.optimizer_d)
    assert state.step == 2
    assert state.best_loss == min(r.L_total for r in session.state.records)
    assert state.resume_key == resume_key(config, reference_digest(*pair))


@pytest.mark.slow
def test_directional_loss_falls_during_adaptation(source, encoder, pair):
    config = make_config(iterations=300, batch_size=4)
    session = make_session(config, source, encoder, pair)
    digest = state_digest(source)

    records = [session.train_step() for _ in range(config.training.iterations)]

    head = sum(r.L_direct for r in records[:10]) / 10
    tail = sum(r.L_direct for r in records[-10:]) / 10
    assert tail < 0.5 * head
    assert all(torch.isfinite(torch.tensor(r.L_total)) for r in records)
    assert state_digest(source) == digest
