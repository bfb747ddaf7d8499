"""Shared test utilities: finite-difference gradient oracle and small builders."""

import numpy as np
import torch


def finite_diff_grad(fn, x: torch.Tensor, h: float = 1e-4) -> torch.Tensor:
    """Central-difference gradient of a scalar function wrt x (float64)."""
    assert x.dtype == torch.float64, "finite differences need float64"
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        fp = fn(x).item()
        flat[i] = orig - h
        fm = fn(x).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def assert_grad_matches(fn, x: torch.Tensor, h: float = 1e-4, rel_tol: float = 1e-4):
    """Autograd gradient of scalar fn must match central differences.

    Coordinates where halving the step changes the estimate (a LeakyReLU kink
    inside the probed interval) are excluded; at least 90% must be smooth.
    """
    x = x.detach().clone().requires_grad_(True)
    out = fn(x)
    assert out.dim() == 0, "fn must return a scalar"
    (auto,) = torch.autograd.grad(out, x)
    fd = finite_diff_grad(fn, x.detach().clone(), h)
    fd_half = finite_diff_grad(fn, x.detach().clone(), h / 2)
    floor = 1e-6 * max(fd_half.abs().max().item(), 1e-6)
    stable = (fd - fd_half).abs() <= 1e-3 * (fd.abs() + fd_half.abs() + floor)
    frac = stable.double().mean().item()
    assert frac >= 0.9, f"too many kink crossings: only {frac:.0%} coords smooth"
    denom = max((fd * stable).norm().item(), 1e-8)
    rel = ((auto - fd) * stable).norm().item() / denom
    assert rel < rel_tol, f"gradient mismatch: rel err {rel:.3e}"


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR with positive diagonal fix."""
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
