"""Shared test helpers: finite-difference oracles and small fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from contrastive_mi.bank import MemoryBank
from contrastive_mi.nets import MLPEncoder


def central_difference_grads(loss_fn, params, h: float = 1e-5):
    """Gradient of a scalar loss by central finite differences.

    ``loss_fn`` re-evaluates the loss from the current parameter data;
    ``params`` are the leaf tensors to differentiate.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        g_flat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn()
            flat[i] = orig - h
            f_minus = loss_fn()
            flat[i] = orig
            g_flat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Worst-case elementwise relative disagreement between gradient sets."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def small_encoder(rng):
    return MLPEncoder(3, 6, 4, 2, rng)


@pytest.fixture
def unit_bank(rng):
    entries = unit_rows(rng, 40, 4)
    return MemoryBank(entries, alpha=0.5, renormalize=True)
