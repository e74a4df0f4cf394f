"""Shared test helpers: finite-difference oracles and tolerance checks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from tgshape.autodiff import Tensor


def finite_diff_grad(f: Callable[[], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. x, perturbing x.data in place."""
    base = x.data.copy()
    g = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        x.data = flat.reshape(base.shape)
        hi = float(f().data)
        flat[i] = orig - step
        x.data = flat.reshape(base.shape)
        lo = float(f().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    x.data = base
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.abs(analytic - numeric)
    # floor the denominator at a fraction of the gradient's scale so near-zero
    # entries are not judged by finite-difference round-off alone
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    den = np.maximum(np.abs(analytic) + np.abs(numeric), max(1e-3 * scale, 1e-8))
    return float((num / den).max())


def check_grads(f: Callable[[], Tensor], wrt: dict[str, Tensor],
                tol: float = 1e-4, step: float = 1e-5) -> None:
    """Assert analytic gradients of scalar f() match central differences for each tensor."""
    for p in wrt.values():
        p.zero_grad()
    loss = f()
    loss.backward()
    for name, p in wrt.items():
        assert p.grad is not None, f"no gradient reached {name}"
        fd = finite_diff_grad(f, p, step=step)
        err = relative_error(p.grad, fd)
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e} >= {tol}"


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def check_grads_sparse(f: Callable[[], Tensor], wrt: dict[str, Tensor],
                       k: int = 16, tol: float = 1e-4, step: float = 1e-5,
                       seed: int = 0) -> None:
    """check_grads but finite differences probe only k random positions per tensor."""
    for p in wrt.values():
        p.zero_grad()
    loss = f()
    loss.backward()
    r = np.random.default_rng(seed)
    for name, p in wrt.items():
        assert p.grad is not None, f"no gradient reached {name}"
        scale = float(np.abs(p.grad).max(initial=0.0))
        flat_idx = r.choice(p.data.size, size=min(k, p.data.size), replace=False)
        base = p.data.copy()
        flat = base.reshape(-1)
        for i in flat_idx:
            orig = flat[i]
            flat[i] = orig + step
            p.data = flat.reshape(base.shape)
            hi = float(f().data)
            flat[i] = orig - step
            p.data = flat.reshape(base.shape)
            lo = float(f().data)
            flat[i] = orig
            p.data = base
            fd = (hi - lo) / (2.0 * step)
            an = p.grad.reshape(-1)[i]
            err = abs(an - fd) / max(abs(an) + abs(fd), 1e-3 * scale, 1e-8)
            assert err < tol, f"{name}[{i}]: analytic {an} vs fd {fd} (rel {err:.2e})"
