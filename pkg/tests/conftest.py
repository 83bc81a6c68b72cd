"""Shared fixtures and numeric oracles for the test suite."""
from __future__ import annotations

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from semicount.model import PerturbationConfig, forward, init_params, tiny_config


def central_difference(fn, x: float, step: float = 1e-6) -> float:
    """Symmetric finite-difference derivative of a scalar function."""
    return (fn(x + step) - fn(x - step)) / (2.0 * step)


def grad_check_scalar(fn, array: np.ndarray, analytic: np.ndarray, step: float = 1e-6):
    """Compare an analytic gradient against central differences, elementwise.

    `fn` maps the array to a scalar; the array is perturbed in place and
    restored.  Returns the worst relative error.
    """
    worst = 0.0
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + step
        hi = fn(array)
        array[idx] = orig - step
        lo = fn(array)
        array[idx] = orig
        numeric = (hi - lo) / (2.0 * step)
        denom = max(1e-6, abs(numeric), abs(analytic[idx]))
        worst = max(worst, abs(numeric - analytic[idx]) / denom)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_net(rng):
    """A two-stage network plus parameters, small enough for FD checks."""
    cfg = tiny_config()
    params = init_params(cfg, rng)
    return cfg, params


@pytest.fixture
def simplex_scores(rng):
    """Random (B, h, w, 2) class scores on the probability simplex."""
    raw = rng.random((2, 3, 4, 2)) + 0.05
    return raw / raw.sum(axis=-1, keepdims=True)


def deterministic_output(params, cfg, images):
    return forward(params, cfg, images, perturb=PerturbationConfig())
