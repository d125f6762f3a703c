import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from src.config import SemanticsConfig
from src.semantics import (
    SemanticEncoder,
    StubBackbone,
    TokenMatrix,
    fit_joint_pca,
    pca_visualize,
    self_similarity,
)
from src.semantics.pca import to_rgb


def tokens_of(values: torch.Tensor) -> TokenMatrix:
    return TokenMatrix(tokens=values, level="M", source_resolution=32)


def test_token_count_follows_patch_arithmetic(encoder, pair):
    real, _ = pair
    tokens = encoder.extract_tokens(real[0], "M")

    assert tokens.n_patches == (32 // 8) ** 2 == encoder.config.n_patches
    assert tokens.tokens.shape == (16, 16)


def test_same_image_gives_identical_tokens(encoder, pair):
    real, _ = pair
    assert torch.equal(encoder.extract_tokens(real, "H").tokens, encoder.extract_tokens(real, "H").tokens)


def test_batched_extraction_matches_single(encoder, pair):
    real, style = pair
    batch = encoder.extract_levels(torch.cat([real, style]), ["M", "H"])
    single = encoder.extract_levels(style[0], ["M", "H"])
    assert torch.allclose(batch["H"].tokens[1], single["H"].tokens, atol=1e-6)


def test_stub_tokens_match_linear_map_on_two_patches():
    backbone = StubBackbone(patch_size=8, dim=5, seed=3)
    pixels = torch.randn(1, 3, 8, 16)

    states = backbone.hidden_states(pixels)
    left = pixels[0, :, :, :8].reshape(-1)
    right = pixels[0, :, :, 8:].reshape(-1)
    expected = torch.stack([left, right]) @ backbone.projections[6]

    assert torch.allclose(states[6][0, 1:], expected, atol=1e-5)
    assert torch.all(states[6][0, 0] == 6)


def test_unknown_level_is_rejected(encoder, pair):
    with pytest.raises(ValueError):
        encoder.extract_tokens(pair[0], "X")
    with pytest.raises(ValueError):
        encoder.extract_tokens(pair[0], 40)


def test_raw_layer_index(encoder, pair):
    by_name = encoder.extract_tokens(pair[0], "M").tokens
    by_index = encoder.extract_tokens(pair[0], 6).tokens
    assert torch.equal(by_name, by_index)


def test_self_similarity_of_constant_tokens_is_one():
    v = torch.tensor([0.3, -1.2, 2.0])
    descriptor = self_similarity(tokens_of(v.expand(4, 3)))
    assert torch.allclose(descriptor.values, torch.ones(16))


def test_self_similarity_of_orthonormal_tokens():
    descriptor = self_similarity(tokens_of(torch.eye(2)))
    assert descriptor.values.tolist() == [1.0, 0.0, 0.0, 1.0]


def test_self_similarity_matches_pairwise_loop():
    rng = torch.Generator().manual_seed(0)
    for n, d in [(5, 8), (16, 4), (64, 32)]:
        t = torch.randn(n, d, generator=rng, dtype=torch.float64)
        values = self_similarity(tokens_of(t)).values

        for i in range(n):
            for j in range(n):
                expected = float(t[i] @ t[j]) / (float(t[i].norm()) * float(t[j].norm()))
                assert float(values[i * n + j]) == pytest.approx(expected, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(min_value=2, max_value=12), d=st.integers(min_value=2, max_value=10), seed=st.integers(0, 10 ** 6))
def test_self_similarity_is_rotation_invariant(n, d, seed):
    rng = torch.Generator().manual_seed(seed)
    t = torch.randn(n, d, generator=rng, dtype=torch.float64) + 0.1
    rotation, _ = torch.linalg.qr(torch.randn(d, d, generator=rng, dtype=torch.float64))

    a = self_similarity(tokens_of(t)).values
    b = self_similarity(tokens_of(t @ rotation)).values
    assert torch.allclose(a, b, atol=1e-5)


def test_self_similarity_rejects_zero_rows():
    t = torch.randn(3, 4)
    t[1] = 0
    with pytest.raises(ValueError, match="zero norm"):
        self_similarity(tokens_of(t))


def test_direction_of_image_with_itself_is_zero(encoder, pair):
    real, _ = pair
    direction = encoder.deformation_direction(real, real)
    assert torch.count_nonzero(direction.values) == 0
    assert direction.levels == ("M", "H")


def test_direction_is_antisymmetric(encoder, pair):
    real, style = pair
    forward = encoder.deformation_direction(real, style)
    backward = encoder.deformation_direction(style, real)
    assert torch.allclose(forward.values, (-backward).values)


def test_direction_matches_stub_subtraction(encoder, pair):
    real, style = pair
    backbone = encoder.backbone
    direction = encoder.deformation_direction(real[0], style[0], ["M", "H"])

    parts = []
    for layer in (6, 12):
        a = backbone.patches(encoder.preprocess(real)) @ backbone.projections[layer]
        b = backbone.patches(encoder.preprocess(style)) @ backbone.projections[layer]
        parts.append((b - a)[0].flatten())
    assert torch.allclose(direction.values, torch.cat(parts), atol=1e-5)


def test_pca_of_duplicates_is_identical(encoder, pair):
    real, style = pair
    maps = pca_visualize(encoder, [real, style, real], "M")

    assert len(maps.maps) == 3
    assert maps.maps[0].shape == (4, 4, 3)
    assert np.array_equal(maps.maps[0], maps.maps[2])
    assert maps.maps[0].min() >= 0 and maps.maps[0].max() <= 1


def test_pca_on_rank_one_tokens():
    rng = torch.Generator().manual_seed(0)
    direction = torch.randn(6, generator=rng, dtype=torch.float64)
    t = torch.randn(16, 1, generator=rng, dtype=torch.float64) * direction

    maps = fit_joint_pca([tokens_of(t)], components=1)
    assert maps.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-9)


def test_pca_falls_back_when_rank_deficient():
    t = torch.randn(16, 1, dtype=torch.float64) * torch.ones(6, dtype=torch.float64)
    maps = fit_joint_pca([tokens_of(t)], components=3)
    assert maps.components == 1
    assert to_rgb(maps.maps[0]).shape == (4, 4, 3)


def test_pca_variance_matches_eigendecomposition():
    rng = torch.Generator().manual_seed(4)
    matrices = [torch.randn(16, 8, generator=rng, dtype=torch.float64) for _ in range(2)]
    maps = fit_joint_pca([tokens_of(m) for m in matrices], components=3)

    stacked = torch.cat(matrices).numpy()
    eigenvalues = np.linalg.eigvalsh(np.cov(stacked, rowvar=False))[::-1]
    expected = eigenvalues[:3] / eigenvalues.sum()
    assert np.allclose(maps.explained_variance_ratio, expected, atol=1e-6)


def test_pca_rejects_too_many_components():
    with pytest.raises(ValueError):
        fit_joint_pca([tokens_of(torch.randn(16, 2))], components=3)


def test_levels_must_be_configured():
    with pytest.raises(ValueError):
        SemanticsConfig(backend="stub", direction_levels=["M", "Q"])
