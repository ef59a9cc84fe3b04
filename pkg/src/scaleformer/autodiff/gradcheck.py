"""Central finite-difference checks against the analytic backward pass."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from scaleformer.autodiff.tensor import Tensor, no_grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``.

    When both norms are below ``floor`` the gradient is zero up to
    finite-difference noise (e.g. a key bias under softmax) and 0 is returned.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def _analytic(fn: Callable[[], Tensor], tensors: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    for t in tensors.values():
        t.grad = None
    fn().backward()
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for k, t in tensors.items()}


def _value(fn) -> float:
    with no_grad():
        return float(fn().data)


def check_coordinates(
    fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Per-coordinate check; ``max_coords`` samples a random subset per tensor."""
    grads = _analytic(fn, tensors)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = _value(fn)
            flat[i] = orig - eps
            down = _value(fn)
            flat[i] = orig
            numeric[n] = (up - down) / (2 * eps)
        errors[name] = rel_error(grads[name].reshape(-1)[idx], numeric)
    return errors


def check_directional(
    fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    eps: float = 1e-5,
    directions: int = 1,
    seed: int = 0,
) -> dict[str, float]:
    """Compare ``<grad, v>`` with a central difference along random unit ``v``."""
    grads = _analytic(fn, tensors)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, t in tensors.items():
        worst = 0.0
        for _ in range(directions):
            v = rng.standard_normal(t.shape)
            v /= np.linalg.norm(v)
            orig = t.data.copy()
            t.data[...] = orig + eps * v
            up = _value(fn)
            t.data[...] = orig - eps * v
            down = _value(fn)
            t.data[...] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, rel_error(np.array([float(np.sum(grads[name] * v))]), np.array([numeric])))
        errors[name] = worst
    return errors
