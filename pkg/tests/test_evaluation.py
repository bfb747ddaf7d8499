import math

import numpy as np
import pytest
import scipy.linalg
import torch

from scenegrid.data import generate_dataset
from scenegrid.evaluation import (
    EmbeddingStats,
    RandomConvEmbedder,
    StatsAccumulator,
    embed_stats,
    fid_proxy,
    frechet_distance,
    interpolate_latents,
    l1,
    rotate_grid_continuous,
    rotation_sweep,
    ssim,
)
from scenegrid.generator import GeneratorConfig, SceneGenerator
from scenegrid.geometry import CameraPose, Intrinsics, rotate_grid


def rand_stats(rng, dim=3, n=200):
    x = rng.normal(size=(n, dim)) @ rng.normal(size=(dim, dim)) + rng.normal(size=dim)
    return EmbeddingStats(mean=x.mean(axis=0), cov=np.cov(x, rowvar=False), count=n)


# ----------------------------------------------------------------------------
# Frechet distance


def test_frechet_identical_stats_zero():
    rng = np.random.default_rng(0)
    s = rand_stats(rng)
    assert abs(frechet_distance(s, s)) < 1e-6


def test_frechet_mean_shift_identity_cov():
    v = np.array([0.3, -1.2, 2.0])
    a = EmbeddingStats(mean=np.zeros(3), cov=np.eye(3), count=100)
    b = EmbeddingStats(mean=v, cov=np.eye(3), count=100)
    assert frechet_distance(a, b) == pytest.approx(float(v @ v), abs=1e-10)


def test_frechet_matches_scipy_sqrtm_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        a, b = rand_stats(rng), rand_stats(rng)
        ours = frechet_distance(a, b)
        covmean = scipy.linalg.sqrtm(a.cov @ b.cov)
        if np.iscomplexobj(covmean):
            covmean = covmean.real
        oracle = float((a.mean - b.mean) @ (a.mean - b.mean)
                       + np.trace(a.cov) + np.trace(b.cov) - 2 * np.trace(covmean))
        assert ours == pytest.approx(oracle, abs=1e-6)


def test_frechet_symmetric():
    rng = np.random.default_rng(2)
    a, b = rand_stats(rng), rand_stats(rng)
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)


def test_frechet_rejects_non_psd():
    a = EmbeddingStats(mean=np.zeros(2), cov=np.array([[1.0, 0.0], [0.0, -0.5]]),
                       count=10)
    b = EmbeddingStats(mean=np.zeros(2), cov=np.eye(2), count=10)
    with pytest.raises(ValueError):
        frechet_distance(a, b)


def test_frechet_rejects_dim_mismatch():
    a = EmbeddingStats(mean=np.zeros(2), cov=np.eye(2), count=10)
    b = EmbeddingStats(mean=np.zeros(3), cov=np.eye(3), count=10)
    with pytest.raises(ValueError):
        frechet_distance(a, b)


def test_stats_accumulator_merge_associative():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(90, 4))
    whole = StatsAccumulator(4).add(x).finalize()
    parts = StatsAccumulator(4).add(x[:30]).merge(
        StatsAccumulator(4).add(x[30:50])).merge(
        StatsAccumulator(4).add(x[50:])).finalize()
    np.testing.assert_allclose(parts.mean, whole.mean, atol=1e-12)
    np.testing.assert_allclose(parts.cov, whole.cov, atol=1e-12)
    np.testing.assert_allclose(whole.mean, x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(whole.cov, np.cov(x, rowvar=False), atol=1e-12)


def test_embedder_deterministic_and_sized():
    emb = RandomConvEmbedder(seed=7)
    x = torch.rand(3, 3, 32, 32)
    a, b = emb(x), emb(x)
    torch.testing.assert_close(a, b)
    assert a.shape == (3, emb.dim)
    emb2 = RandomConvEmbedder(seed=7)
    torch.testing.assert_close(emb2(x), a)


# ----------------------------------------------------------------------------
# SSIM / L1


def test_ssim_identity_and_l1_zero():
    x = torch.rand(3, 16, 16)
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)
    assert l1(x, x) == 0.0


def test_l1_binary_complement():
    x = (torch.rand(1, 16, 16) > 0.5).double()
    assert l1(x, 1 - x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_range_and_sensitivity():
    torch.manual_seed(4)
    x = torch.rand(1, 16, 16)
    y = torch.rand(1, 16, 16)
    v = ssim(x, y)
    assert -1.0 <= v <= 1.0
    assert v < 1.0


def test_ssim_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(torch.rand(3, 16, 16), torch.rand(3, 16, 17))


def ssim_loop_oracle(x: np.ndarray, y: np.ndarray) -> float:
    """Direct sliding-window implementation, one window at a time."""
    size, sigma = 11, 1.5
    coords = np.arange(size) - (size - 1) / 2
    g = np.exp(-coords ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    w = np.outer(g, g)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for c in range(x.shape[0]):
        for i in range(x.shape[1] - size + 1):
            for j in range(x.shape[2] - size + 1):
                px = x[c, i:i + size, j:j + size]
                py = y[c, i:i + size, j:j + size]
                mx, my = (w * px).sum(), (w * py).sum()
                vx = (w * px * px).sum() - mx ** 2
                vy = (w * py * py).sum() - my ** 2
                vxy = (w * px * py).sum() - mx * my
                vals.append(((2 * mx * my + c1) * (2 * vxy + c2))
                            / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_matches_sliding_window_oracle():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, size=(2, 14, 14))
    y = np.clip(x + rng.normal(scale=0.1, size=x.shape), 0, 1)
    ours = ssim(torch.from_numpy(x), torch.from_numpy(y))
    assert ours == pytest.approx(ssim_loop_oracle(x, y), abs=1e-5)


# ----------------------------------------------------------------------------
# Sweeps and interpolation


def tiny_generator():
    torch.manual_seed(6)
    cfg = GeneratorConfig(latent_dim=8, grid_channels=4, grid_size=8,
                          base_channels=8, field_width=8, field_depth=2,
                          feature_dim=3, refinement_blocks=0, samples_per_ray=4,
                          pos_freqs=2, dir_freqs=1, output_res=8, extent=4.0)
    return SceneGenerator(cfg)


def tiny_ds():
    intr = Intrinsics(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8,
                      near=0.2, far=12.0)
    return generate_dataset(1, 1, 6, seed=8, intr=intr, n_cells=8)


def test_rotate_grid_continuous_matches_exact_at_quarter_turns():
    torch.manual_seed(7)
    codes = torch.randn(3, 8, 8, dtype=torch.float64)
    for k in range(4):
        cont = rotate_grid_continuous(codes, math.radians(90 * k))
        exact = rotate_grid(codes, k)
        torch.testing.assert_close(cont, exact, atol=1e-6, rtol=0)


def test_rotation_sweep_zero_angle_is_zero():
    gen = tiny_generator()
    ds = tiny_ds()
    rows = rotation_sweep(gen, ds, [0.0, 90.0, 360.0], n_scenes=4, seed=9)
    by_angle = {r["angle"]: r for r in rows}
    assert by_angle[0.0]["fid_proxy"] == pytest.approx(0.0, abs=1e-6)
    assert by_angle[360.0]["fid_proxy"] == pytest.approx(0.0, abs=1e-6)
    assert by_angle[0.0]["sampling_consistency_err"] < 1e-6
    assert by_angle[90.0]["sampling_consistency_err"] < 1e-6


def test_interpolation_endpoints_and_midpoint():
    gen = tiny_generator()
    intr = Intrinsics(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8,
                      near=0.2, far=12.0)
    torch.manual_seed(10)
    z_a, z_b = torch.randn(8), torch.randn(8)
    pose = CameraPose.identity()
    frames = interpolate_latents(gen, z_a, z_b, 5, pose, intr)
    assert len(frames) == 5
    ref_a, _, _ = gen.generate_frame(z_a, pose, intr)
    ref_b, _, _ = gen.generate_frame(z_b, pose, intr)
    torch.testing.assert_close(frames[0], ref_a)
    torch.testing.assert_close(frames[-1], ref_b)
    single = interpolate_latents(gen, z_a, z_b, 1, pose, intr)
    ref_mid, _, _ = gen.generate_frame((z_a + z_b) / 2, pose, intr)
    torch.testing.assert_close(single[0], ref_mid)


def test_fid_proxy_runs_small():
    gen = tiny_generator()
    ds = tiny_ds()
    v = fid_proxy(gen, ds, n=8, seed=11)
    assert np.isfinite(v) and v >= 0


def test_interpolation_continuity_proxy():
    gen = tiny_generator()
    intr = Intrinsics(fx=8.0, fy=8.0, cx=4.0, cy=4.0, width=8, height=8,
                      near=0.2, far=12.0)
    torch.manual_seed(12)
    pose = CameraPose.identity()
    hits = total = 0
    for _ in range(10):
        z_a, z_b = torch.randn(8), torch.randn(8)
        frames = interpolate_latents(gen, z_a, z_b, 6, pose, intr)
        endpoint = (frames[0] - frames[-1]).abs().mean().item()
        for a, b in zip(frames, frames[1:]):
            hits += int((a - b).abs().mean().item() < endpoint + 1e-9)
            total += 1
    assert hits / total >= 0.9
