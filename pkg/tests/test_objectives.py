import math
import warnings
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from src.config import AblationConfig, LossWeights
from src.errors import NonFiniteLossError, UndefinedDirectionError
from src.models import LossRecord
from src.objectives import (
    LOSS_COLUMNS,
    LossParts,
    SimilarityDistribution,
    adversarial_losses,
    build_similarity_distribution,
    consistency_loss,
    directional_loss,
    generator_adversarial_loss,
    read_loss_csv,
    regularization_loss,
    total_loss,
    write_loss_csv,
)
from src.semantics import DirectionalVector, StructureDescriptor
from src.warp import make_identity_field


def parts(adv=0.0, direct=0.0, cons=0.0, reg=0.0) -> LossParts:
    t = torch.tensor
    return LossParts(adv_g=t(adv), direct=t(direct), cons=t(cons), reg=t(reg))


def oracle_distribution(descriptors, ref):
    """Softmax groups by hand: pairwise cosines (i > j, row-major) and reference cosines, each softmaxed"""

    def cos(a, b):
        return float(a @ b) / (float(a.norm()) * float(b.norm()))

    n = len(descriptors)
    pair_logits = [cos(descriptors[i], descriptors[j]) for i in range(n) for j in range(i)]
    ref_logits = [cos(d, ref) for d in descriptors]

    def softmax(xs):
        exps = [math.exp(x) for x in xs]
        return [e / sum(exps) for e in exps]

    return softmax(pair_logits) + softmax(ref_logits)


def test_directional_loss_boundary_values():
    u = torch.tensor([1.0, 2.0, -0.5], dtype=torch.float64)
    v = torch.tensor([2.0, -1.0, 0.0], dtype=torch.float64)

    assert float(directional_loss(u, u)) == pytest.approx(0.0, abs=1e-7)
    assert float(directional_loss(-u, u)) == pytest.approx(2.0, abs=1e-7)
    assert float(directional_loss(u, v)) == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
def test_directional_loss_is_scale_invariant(scale):
    u = torch.randn(50, dtype=torch.float64)
    assert float(directional_loss(u, scale * u)) == pytest.approx(0.0, abs=1e-7)


def test_directional_loss_accepts_direction_vectors_and_batches():
    ref = DirectionalVector(values=torch.tensor([1.0, 0.0]), levels=("M",))
    batch = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    assert float(directional_loss(batch, ref)) == pytest.approx(0.5)


def test_directional_loss_rejects_zero_and_mismatched_vectors():
    with pytest.raises(UndefinedDirectionError):
        directional_loss(torch.zeros(3), torch.ones(3))
    with pytest.raises(ValueError):
        directional_loss(torch.ones(3), torch.ones(4))


@pytest.mark.parametrize("n", [2, 3, 4, 8])
def test_distribution_length_and_group_sums(n):
    descriptors = [StructureDescriptor(values=torch.randn(9)) for _ in range(n)]
    dist = build_similarity_distribution(descriptors, StructureDescriptor(values=torch.randn(9)))

    assert dist.probs.shape == (n * (n - 1) // 2 + n,)
    assert float(dist.pair_group.sum()) == pytest.approx(1.0, abs=1e-6)
    assert float(dist.reference_group.sum()) == pytest.approx(1.0, abs=1e-6)


def test_identical_descriptors_give_uniform_groups():
    d = torch.randn(9)
    dist = build_similarity_distribution(torch.stack([d] * 4), d)
    assert torch.allclose(dist.pair_group, torch.full((6,), 1 / 6))
    assert torch.allclose(dist.reference_group, torch.full((4,), 1 / 4))


def test_distribution_matches_oracle():
    rng = torch.Generator().manual_seed(0)
    for _ in range(100):
        n = int(torch.randint(2, 6, (1,), generator=rng))
        descriptors = torch.randn(n, 7, generator=rng, dtype=torch.float64)
        ref = torch.randn(7, generator=rng, dtype=torch.float64)

        dist = build_similarity_distribution(descriptors, ref)
        expected = torch.tensor(oracle_distribution(list(descriptors), ref), dtype=torch.float64)
        assert torch.allclose(dist.probs, expected, atol=1e-6)


def test_distribution_needs_two_samples():
    with pytest.raises(ValueError):
        build_similarity_distribution(torch.randn(1, 4), torch.randn(4))


def test_temperature_sharpens_distribution():
    descriptors = torch.randn(4, 6, dtype=torch.float64)
    ref = torch.randn(6, dtype=torch.float64)
    warm = build_similarity_distribution(descriptors, ref, temperature=1.0)
    cold = build_similarity_distribution(descriptors, ref, temperature=0.1)
    assert cold.reference_group.max() >= warm.reference_group.max()


def test_consistency_loss_values():
    dist = build_similarity_distribution(torch.randn(4, 6), torch.randn(6))
    assert float(consistency_loss(dist, dist)) == 0.0
    assert float(consistency_loss(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))) == 1.0


def test_consistency_loss_matches_loop():
    rng = torch.Generator().manual_seed(2)
    p = torch.softmax(torch.randn(10, generator=rng, dtype=torch.float64), 0)
    q = torch.softmax(torch.randn(10, generator=rng, dtype=torch.float64), 0)
    expected = sum((float(a) - float(b)) ** 2 for a, b in zip(p, q)) / 10
    assert float(consistency_loss(p, q)) == pytest.approx(expected, abs=1e-7)


def test_consistency_loss_rejects_mismatched_distributions():
    a = SimilarityDistribution(probs=torch.ones(3), n=2)
    b = SimilarityDistribution(probs=torch.ones(6), n=3)
    with pytest.raises(ValueError):
        consistency_loss(a, b)


def test_adversarial_losses_for_undecided_discriminator():
    logits = torch.zeros(2, 1, 4, 4)
    d_loss, g_loss = adversarial_losses(logits, logits)
    assert float(d_loss) == pytest.approx(2 * math.log(0.5))
    assert float(g_loss) == pytest.approx(-math.log(0.5))


def test_generator_loss_is_finite_when_fakes_are_rejected():
    g_loss = generator_adversarial_loss(torch.full((1, 1, 2, 2), -200.0))
    assert torch.isfinite(g_loss) and float(g_loss) > 100


def test_adversarial_gradcheck():
    logits = torch.randn(2, 1, 3, 3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(generator_adversarial_loss, (logits,), eps=1e-6, atol=1e-6)


def test_directional_and_consistency_gradcheck():
    d = torch.randn(2, 12, dtype=torch.float64, requires_grad=True)
    ref = torch.randn(12, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda x: directional_loss(x, ref), (d,), eps=1e-6, atol=1e-6)

    descriptors = torch.randn(4, 9, dtype=torch.float64, requires_grad=True)
    fixed = build_similarity_distribution(torch.randn(4, 9, dtype=torch.float64), ref[:9])

    def cons(x):
        return consistency_loss(fixed, build_similarity_distribution(x, ref[:9]))

    assert torch.autograd.gradcheck(cons, (descriptors,), eps=1e-6, atol=1e-6)


def test_regularization_without_fields_is_zero():
    like = torch.zeros(1)
    assert float(regularization_loss([], like)) == 0.0
    assert float(regularization_loss([make_identity_field(4, 4)], like)) == 0.0


def test_total_loss_weights():
    weights = LossWeights()
    assert float(total_loss(parts(), weights)) == 0.0
    assert float(total_loss(parts(1.0, 1.0, 1.0, 1.0), weights)) == pytest.approx(1 + 6 + 5e4 + 1e-6)

    base = float(total_loss(parts(direct=1.0), weights))
    doubled = float(total_loss(parts(direct=1.0), weights.model_copy(update={"lambda_direct": 12.0})))
    assert doubled == pytest.approx(2 * base)


def test_total_loss_honours_ablation():
    ablation = AblationConfig(use_cons=False, use_adv=False)
    value = float(total_loss(parts(1.0, 1.0, 1.0, 1.0), LossWeights(), ablation))
    assert value == pytest.approx(6 + 1e-6)


def test_total_loss_names_non_finite_term():
    with pytest.raises(NonFiniteLossError) as info:
        total_loss(parts(cons=float("nan")), LossWeights())
    assert info.value.term == "cons"


def test_record_reads_graph_tensors_silently():
    leaf = torch.tensor(0.5, requires_grad=True)
    loss_parts = LossParts(adv_g=leaf * 2, direct=leaf * 0.5, cons=leaf ** 2, reg=leaf * 0, adv_d=leaf + 1)
    total = total_loss(loss_parts, LossWeights())

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        record = loss_parts.record(3, total)

    assert record.step == 3
    assert record.L_adv_G == pytest.approx(1.0)
    assert record.L_adv_D == pytest.approx(1.5)
    assert record.L_cons == pytest.approx(0.25)
    assert record.L_total == pytest.approx(float(total.detach()))
    assert leaf.grad is None


@settings(max_examples=30, deadline=None)
@given(
    direct=st.floats(min_value=0, max_value=2),
    cons=st.floats(min_value=0, max_value=1e-3),
    lam=st.floats(min_value=0, max_value=100),
)
def test_total_loss_is_linear_in_weights(direct, cons, lam):
    weights = LossWeights(lambda_direct=lam, lambda_cons=1.0, lambda_reg=0.0)
    value = float(total_loss(parts(direct=direct, cons=cons), weights))
    assert value == pytest.approx(lam * direct + cons, rel=1e-5, abs=1e-6)


def test_loss_csv_round_trip(tmp_path):
    records = [LossRecord(step=i, L_direct=0.1 * i, L_total=1 / (i + 1)) for i in range(3)]
    path = write_loss_csv(tmp_path / "losses.csv", records)

    assert path.read_text().splitlines()[0] == ",".join(LOSS_COLUMNS)
    assert read_loss_csv(path) == records
