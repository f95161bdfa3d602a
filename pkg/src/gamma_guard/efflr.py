"""Effective learning rate of normalization scales.

The intermediate block ``N[W relu(diag(gamma) x)]`` is invariant to the
overall scale of ``gamma``, so its gradient scales like ``1/||gamma||`` and a
plain gradient step moves the direction ``gamma/||gamma||`` by an amount
proportional to ``eta/||gamma||**2``. This module measures that numerically.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._jsonio import dumps
from .simkernel import batchnorm, he_init, max_workers, relu

__all__ = [
    "RegressionFit",
    "UpdateNormResult",
    "split_norm",
    "intermediate_forward",
    "loss",
    "grad_gamma",
    "sgd_step",
    "fit_loglog",
    "make_problem",
    "update_norm_experiment",
]

DEFAULT_SCALES = (0.5, 1.0, 2.0, 4.0, 8.0)
DEFAULT_ETA = 1e-4


def split_norm(gamma):
    """Return ``(||gamma||, gamma/||gamma||)``."""
    gamma = np.asarray(gamma, dtype=np.float64)
    norm = float(np.linalg.norm(gamma))
    if norm == 0.0:
        raise ValueError("gamma has zero norm")
    return norm, gamma / norm


def intermediate_forward(x, gamma, w):
    """``N[relu(x * gamma) @ w]`` with exact per-column normalization."""
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or w.shape[0] != x.shape[1]:
        raise ValueError(f"shape mismatch: x {x.shape}, gamma {gamma.shape}, w {w.shape}")
    return batchnorm(relu(x * gamma) @ w, 1.0)


def loss(gamma, x, w, target):
    """Half mean squared error of the block output against a fixed target."""
    y = intermediate_forward(x, gamma, w)
    if y.shape != target.shape:
        raise ValueError("target shape mismatch")
    d = y - target
    return 0.5 * float(np.mean(d * d))


def grad_gamma(gamma, x, w, target, h=None):
    """Central-difference gradient of :func:`loss` with respect to ``gamma``.

    The default step for coordinate i is ``1e-5 * max(1, |gamma_i|)``; a scalar
    ``h`` overrides it for every coordinate.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if h is None:
        steps = 1e-5 * np.maximum(1.0, np.abs(gamma))
    else:
        if not h > 0:
            raise ValueError("h must be positive")
        steps = np.full_like(gamma, float(h))
    grad = np.empty_like(gamma)
    probe = gamma.copy()
    for i, hi in enumerate(steps):
        probe[i] = gamma[i] + hi
        up = loss(probe, x, w, target)
        probe[i] = gamma[i] - hi
        down = loss(probe, x, w, target)
        probe[i] = gamma[i]
        if not (math.isfinite(up) and math.isfinite(down)):
            raise FloatingPointError(f"non-finite loss while differentiating coordinate {i}")
        grad[i] = (up - down) / (2.0 * hi)
    return grad


def sgd_step(gamma, grad, eta):
    if eta < 0:
        raise ValueError("eta must be >= 0")
    return np.asarray(gamma, dtype=np.float64) - eta * np.asarray(grad, dtype=np.float64)


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r2: float

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2}


def fit_loglog(points):
    """Ordinary least squares of ``ln y`` on ``ln x``."""
    pts = [(float(a), float(b)) for a, b in points]
    if any(not (a > 0 and b > 0) for a, b in pts):
        raise ValueError("log-log fit needs strictly positive coordinates")
    lx = np.log([a for a, _ in pts])
    ly = np.log([b for _, b in pts])
    if len(set(lx.tolist())) < 2:
        raise ValueError("log-log fit needs at least two distinct x values")
    mx, my = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - mx) ** 2))
    sxy = float(np.sum((lx - mx) * (ly - my)))
    slope = sxy / sxx
    intercept = float(my - slope * mx)
    ss_tot = float(np.sum((ly - my) ** 2))
    ss_res = float(np.sum((ly - (intercept + slope * lx)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return RegressionFit(slope, intercept, r2)


def make_problem(width, batch, seed):
    """Inputs, weights, target and a unit-norm gamma direction from one seed."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, width))
    w = he_init(width, width, rng)
    target = rng.standard_normal((batch, width))
    direction = np.abs(rng.standard_normal(width)) + 0.1
    return x, w, target, direction / np.linalg.norm(direction)


@dataclass(frozen=True)
class UpdateNormResult:
    points: tuple  # ((scale, update_norm), ...)
    fit: RegressionFit
    seed: int
    eta: float

    def to_dict(self):
        return {
            "seed": self.seed,
            "eta": self.eta,
            "points": [{"scale": c, "update_norm": n} for c, n in self.points],
            "fit": self.fit.to_dict(),
        }

    def to_json(self):
        return dumps(self.to_dict())


def _first_update(scale, direction, x, w, target, eta):
    gamma0 = scale * direction
    gamma1 = sgd_step(gamma0, grad_gamma(gamma0, x, w, target), eta)
    _, dir1 = split_norm(gamma1)
    return float(np.linalg.norm(dir1 - direction))


def update_norm_experiment(scales=DEFAULT_SCALES, width=64, batch=1024, eta=DEFAULT_ETA, seed=0):
    """Size of the first direction update as a function of the initial gamma scale.

    The same inputs, weights, target, direction and ``eta`` are shared across
    scales; gamma is updated by one gradient step and then renormalized.
    """
    scales = [float(c) for c in scales]
    if len(set(scales)) < 3:
        raise ValueError("need at least three distinct scales")
    if any(c <= 0 for c in scales):
        raise ValueError("scales must be positive")
    if not eta > 0:
        raise ValueError("eta must be positive")
    x, w, target, direction = make_problem(width, batch, seed)

    def one(c):
        return _first_update(c, direction, x, w, target, eta)

    workers = max_workers(len(scales))
    if workers == 1:
        norms = [one(c) for c in scales]
    else:
        with ThreadPoolExecutor(workers) as pool:
            norms = list(pool.map(one, scales))
    for c, n in zip(scales, norms):
        if n == 0.0:
            raise ValueError(f"zero update at scale {c}; cannot fit")
    points = tuple(zip(scales, norms))
    return UpdateNormResult(points, fit_loglog(points), seed, float(eta))

