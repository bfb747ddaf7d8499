import math

import numpy as np
import pytest
import torch

from scenegrid.geometry import CameraPose, Intrinsics, Ray, upright_pose
from scenegrid.renderer import (
    RadianceSample,
    integrate,
    make_ray_samples,
    render_map,
    sample_depths,
    sample_ray,
)

from .helpers import assert_grad_matches

INTR = Intrinsics(fx=16.0, fy=16.0, cx=8.0, cy=8.0, width=16, height=16,
                  near=0.5, far=4.5)


def ray_along_z() -> Ray:
    return Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]))


# ----------------------------------------------------------------------------
# Sampling


def test_single_sample_at_bin_center():
    s = sample_ray(ray_along_z(), Intrinsics(1, 1, 0, 0, 1, 1, 0.0001, 4.0), 1)
    assert s.depths.shape == (1,)
    assert abs(s.depths.item() - (0.0001 + 4.0) / 2) < 1e-6


def test_four_uniform_bin_centers():
    intr = Intrinsics(1, 1, 0, 0, 1, 1, 1e-9, 4.0)
    s = sample_ray(ray_along_z(), intr, 4, dtype=torch.float64)
    torch.testing.assert_close(s.depths, torch.tensor([0.5, 1.5, 2.5, 3.5],
                                                      dtype=torch.float64), atol=1e-8,
                               rtol=0)


def test_jitter_stays_within_bins():
    gen = torch.Generator().manual_seed(0)
    n = 8
    near, far = 1.0, 3.0
    width = (far - near) / n
    depths = sample_depths(near, far, n, jitter=True, batch_shape=(10_000,),
                           generator=gen)
    lo = near + width * torch.arange(n)
    assert (depths >= lo).all() and (depths <= lo + width).all()
    # stratification: each bin is actually explored
    spread = (depths - lo).amax(dim=0) - (depths - lo).amin(dim=0)
    assert (spread > 0.9 * width).all()


def test_deltas_definition():
    depths = torch.tensor([1.0, 1.5, 2.5])
    s = make_ray_samples(torch.zeros(3), torch.tensor([0.0, 0.0, 1.0]), depths, far=4.0)
    torch.testing.assert_close(s.deltas, torch.tensor([0.5, 1.0, 1.5]))
    torch.testing.assert_close(s.positions[:, 2], depths)


# ----------------------------------------------------------------------------
# Integration


def make_const_samples(near, far, n, dtype=torch.float64):
    """Left-edge samples: segments exactly tile [near, far]."""
    depths = near + (far - near) / n * torch.arange(n, dtype=dtype)
    return make_ray_samples(torch.zeros(3, dtype=dtype),
                            torch.tensor([0.0, 0.0, 1.0], dtype=dtype), depths, far)


def test_integrate_empty_space():
    s = make_const_samples(1.0, 5.0, 16)
    out = integrate(s, RadianceSample(sigma=torch.zeros(16, dtype=torch.float64),
                                      appearance=torch.ones(16, 3, dtype=torch.float64)))
    torch.testing.assert_close(out.color, torch.zeros(3, dtype=torch.float64))
    assert out.opacity.item() == pytest.approx(0.0, abs=1e-12)
    assert out.depth.item() == pytest.approx(5.0)


def test_integrate_opaque_front_surface():
    s = make_const_samples(1.0, 5.0, 16)
    sigma = torch.zeros(16, dtype=torch.float64)
    sigma[0] = 1e6
    a = torch.randn(16, 3, dtype=torch.float64)
    out = integrate(s, RadianceSample(sigma=sigma, appearance=a))
    torch.testing.assert_close(out.color, a[0], atol=1e-4, rtol=0)
    assert abs(out.depth.item() - s.depths[0].item()) < 1e-4


def test_integrate_constant_sigma_closed_form():
    near, far, n = 0.5, 4.5, 64
    s = make_const_samples(near, far, n)
    sigma0 = 0.7
    a0 = torch.tensor([0.2, 0.5, 0.9], dtype=torch.float64)
    out = integrate(s, RadianceSample(sigma=torch.full((n,), sigma0, dtype=torch.float64),
                                      appearance=a0.expand(n, 3)))
    expected = a0 * (1 - math.exp(-sigma0 * (far - near)))
    torch.testing.assert_close(out.color, expected, atol=1e-6, rtol=0)


def test_integrate_piecewise_constant_closed_form():
    # sigma constant within each segment: the compositing telescopes exactly
    near, far, n = 1.0, 3.0, 32
    s = make_const_samples(near, far, n)
    rng = np.random.default_rng(1)
    sigma = torch.from_numpy(rng.uniform(0, 2, size=n))
    a0 = torch.tensor([0.8, 0.1, 0.4], dtype=torch.float64)
    out = integrate(s, RadianceSample(sigma=sigma, appearance=a0.expand(n, 3)))
    # analytic: transmittance after all segments
    total = (sigma * s.deltas).sum()
    expected = a0 * (1 - torch.exp(-total))
    torch.testing.assert_close(out.color, expected, atol=1e-6, rtol=0)


def test_integrate_weights_subprobability_and_opaque_completion():
    rng = np.random.default_rng(2)
    n = 24
    s = make_const_samples(0.5, 3.5, n)
    sigma = torch.from_numpy(rng.uniform(0, 3, size=n))
    a = torch.from_numpy(rng.uniform(0, 1, size=(n, 3)))
    out = integrate(s, RadianceSample(sigma=sigma, appearance=a))
    assert (out.weights >= 0).all()
    assert out.weights.sum().item() <= 1 + 1e-5
    torch.testing.assert_close(out.opacity, out.weights.sum(), atol=1e-9, rtol=0)
    # appending a fully opaque far plane makes the weights sum to one
    sigma2 = torch.cat([sigma, torch.tensor([1e9], dtype=torch.float64)])
    depths2 = torch.cat([s.depths, torch.tensor([3.49], dtype=torch.float64)])
    s2 = make_ray_samples(torch.zeros(3, dtype=torch.float64),
                          torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64),
                          depths2, far=3.5)
    out2 = integrate(s2, RadianceSample(sigma=sigma2,
                                        appearance=torch.ones(n + 1, 1,
                                                              dtype=torch.float64)))
    assert abs(out2.weights.sum().item() - 1.0) < 1e-5


def test_integrate_monotone_opacity_in_sigma():
    rng = np.random.default_rng(3)
    n = 16
    s = make_const_samples(1.0, 2.0, n)
    sigma = torch.from_numpy(rng.uniform(0, 1, size=n))
    a = torch.ones(n, 1, dtype=torch.float64)
    base = integrate(s, RadianceSample(sigma=sigma, appearance=a)).opacity.item()
    for i in range(n):
        bumped = sigma.clone()
        bumped[i] += 0.5
        o = integrate(s, RadianceSample(sigma=bumped, appearance=a)).opacity.item()
        assert o >= base - 1e-12


def test_integrate_rejects_bad_sigma():
    s = make_const_samples(1.0, 2.0, 4)
    with pytest.raises(ValueError):
        integrate(s, RadianceSample(sigma=torch.tensor([0.1, -0.2, 0.3, 0.4],
                                                       dtype=torch.float64),
                                    appearance=torch.ones(4, 1, dtype=torch.float64)))
    with pytest.raises(ValueError):
        integrate(s, RadianceSample(sigma=torch.tensor([0.1, float("nan"), 0.3, 0.4],
                                                       dtype=torch.float64),
                                    appearance=torch.ones(4, 1, dtype=torch.float64)))


def test_integrate_gradients_match_finite_differences():
    n = 6
    s = make_const_samples(1.0, 3.0, n)
    rng = np.random.default_rng(4)
    sigma0 = torch.from_numpy(rng.uniform(0.1, 1.5, size=n))
    a0 = torch.from_numpy(rng.uniform(0, 1, size=(n, 2)))
    probe = torch.from_numpy(rng.normal(size=2))

    def color_of_sigma(sig):
        out = integrate(s, RadianceSample(sigma=sig, appearance=a0))
        return (out.color * probe).sum()

    def color_of_app(a):
        out = integrate(s, RadianceSample(sigma=sigma0, appearance=a))
        return (out.color * probe).sum()

    assert_grad_matches(color_of_sigma, sigma0)
    assert_grad_matches(color_of_app, a0)


# ----------------------------------------------------------------------------
# Full map rendering against analytic fields


class SlabField:
    """sigma = sigma0 inside z in [z0, z1], constant appearance; ignores codes."""

    def __init__(self, z0, z1, sigma0, color):
        self.z0, self.z1, self.sigma0 = z0, z1, sigma0
        self.color = color

    def __call__(self, positions, directions, codes):
        inside = (positions[..., 2] >= self.z0) & (positions[..., 2] <= self.z1)
        sigma = torch.where(inside, self.sigma0, 0.0).to(positions.dtype)
        app = torch.as_tensor(self.color, dtype=positions.dtype)
        app = app.expand(*sigma.shape, len(self.color))
        return RadianceSample(sigma=sigma, appearance=app)


def slab_oracle_image(pose, intr, res, n, field):
    """Independent numpy evaluation: per-ray telescoped closed form."""
    from scenegrid.geometry import generate_rays
    rays = generate_rays(pose, intr, res, res, dtype=torch.float64)
    dirs = rays.directions.numpy().reshape(-1, 3)
    origins = rays.origins.numpy().reshape(-1, 3)
    width = (intr.far - intr.near) / n
    depths = intr.near + width * (np.arange(n) + 0.5)
    img = np.zeros((res * res, len(field.color)))
    dep = np.zeros(res * res)
    for i in range(len(dirs)):
        p = origins[i][None, :] + depths[:, None] * dirs[i][None, :]
        inside = (p[:, 2] >= field.z0) & (p[:, 2] <= field.z1)
        sigma = np.where(inside, field.sigma0, 0.0)
        deltas = np.concatenate([np.diff(depths), [intr.far - depths[-1]]])
        alpha = 1 - np.exp(-sigma * deltas)
        trans = np.concatenate([[1.0], np.cumprod(1 - alpha)[:-1]])
        w = trans * alpha
        img[i] = w.sum() * np.asarray(field.color)
        dep[i] = (w * depths).sum() / max(w.sum(), 1e-6) if w.sum() > 1e-3 else intr.far
    return img.reshape(res, res, -1), dep.reshape(res, res)


def test_render_map_constant_field_constant_image():
    class ConstField:
        def __call__(self, positions, directions, codes):
            sigma = torch.full(positions.shape[:-1], 0.5, dtype=positions.dtype)
            app = torch.tensor([0.3, 0.6], dtype=positions.dtype)
            return RadianceSample(sigma=sigma, appearance=app.expand(*sigma.shape, 2))

    codes = torch.zeros(1, 4, 4, dtype=torch.float64)
    color, depth, opacity = render_map(codes, CameraPose.identity(), INTR, 8,
                                       ConstField(), 16)
    for ch in range(2):
        img = color[ch]
        assert (img.max() - img.min()).item() < 1e-9


def test_render_map_slab_matches_analytic_oracle():
    field = SlabField(z0=1.0, z1=2.0, sigma0=1.3, color=(0.9, 0.2, 0.1))
    pose = CameraPose.identity()
    codes = torch.zeros(1, 4, 4, dtype=torch.float64)
    color, depth, opacity = render_map(codes, pose, INTR, 8, field, 32)
    oracle_img, oracle_dep = slab_oracle_image(pose, INTR, 8, 32, field)
    np.testing.assert_allclose(color.permute(1, 2, 0).numpy(), oracle_img, atol=1e-4)
    np.testing.assert_allclose(depth.numpy(), oracle_dep, atol=1e-4)


def test_render_map_chunking_invariance():
    field = SlabField(z0=1.2, z1=2.4, sigma0=0.8, color=(0.5,))
    codes = torch.zeros(1, 4, 4, dtype=torch.float64)
    a = render_map(codes, CameraPose.identity(), INTR, 8, field, 16, chunk=7)
    b = render_map(codes, CameraPose.identity(), INTR, 8, field, 16, chunk=4096)
    torch.testing.assert_close(a[0], b[0], atol=1e-6, rtol=0)
    torch.testing.assert_close(a[1], b[1], atol=1e-6, rtol=0)


def test_render_map_convergence_in_sample_count():
    """Doubling samples shrinks quadrature error roughly first order."""

    class SmoothField:
        def __call__(self, positions, directions, codes):
            sigma = 0.4 * (1 + torch.sin(positions[..., 2]))
            return RadianceSample(sigma=sigma,
                                  appearance=torch.ones(*sigma.shape, 1,
                                                        dtype=positions.dtype))

    codes = torch.zeros(1, 4, 4, dtype=torch.float64)
    pose = CameraPose.identity()
    fine = render_map(codes, pose, INTR, 4, SmoothField(), 512)[0]
    err = []
    for n in (16, 32, 64):
        img = render_map(codes, pose, INTR, 4, SmoothField(), n)[0]
        err.append((img - fine).abs().max().item())
    assert err[1] < err[0] and err[2] < err[1]
    assert err[2] < 2 * err[0] * (16 / 64)  # first-order O(1/n) with slack


def test_render_map_jitter_deterministic_given_generator():
    field = SlabField(z0=1.0, z1=2.0, sigma0=1.0, color=(1.0,))
    codes = torch.zeros(1, 4, 4, dtype=torch.float64)
    a = render_map(codes, CameraPose.identity(), INTR, 4, field, 8, jitter=True,
                   generator=torch.Generator().manual_seed(5))
    b = render_map(codes, CameraPose.identity(), INTR, 4, field, 8, jitter=True,
                   generator=torch.Generator().manual_seed(5))
    torch.testing.assert_close(a[0], b[0])
