"""Monte Carlo forward passes at initialization.

A dense stand-in for the convolutional networks: every weight layer is a
fully connected ``width x width`` matrix with He initialization, every norm
is an exact batch (or layer) normalization with zero shift and no epsilon.
Activations are ``batch x width`` float64 arrays.

The measured "variance" of an activation is its raw second moment averaged
over columns, which is the quantity the closed-form recurrences track (they
ignore the mean).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .archspec import BlockKind, Style
from .varprop import EMPIRICAL, VarianceProfile

__all__ = [
    "DegenerateActivation",
    "McConfig",
    "ProfileComparison",
    "he_init",
    "batchnorm",
    "layernorm",
    "relu",
    "second_moment",
    "forward_block",
    "forward_block_parts",
    "run_trial",
    "mc_variance_profile",
    "compare_profiles",
    "max_workers",
]

MIN_BATCH = 64


class DegenerateActivation(ValueError):
    """A column (or row) with zero variance reached a normalization layer."""

    def __init__(self, index, axis="column", where=None):
        self.index = index
        self.where = where
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}zero-variance {axis} {index} cannot be normalized")


@dataclass(frozen=True)
class McConfig:
    batch: int = 8192
    width: int | None = None  # None: use the architecture's width
    trials: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.batch < MIN_BATCH:
            raise ValueError(f"batch must be >= {MIN_BATCH}, got {self.batch}")
        if self.width is not None and self.width < 1:
            raise ValueError(f"width must be positive, got {self.width}")
        if self.trials < 1:
            raise ValueError(f"trials must be positive, got {self.trials}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def he_init(fan_in, fan_out, rng):
    """``fan_in x fan_out`` matrix with i.i.d. N(0, 2/fan_in) entries."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("matrix dimensions must be positive")
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def _check_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {x.shape}")
    return x


def batchnorm(x, gamma):
    """Normalize each column to mean 0, biased variance 1, then scale by ``gamma``."""
    x = _check_matrix(x)
    if x.shape[0] < 2:
        raise ValueError("batchnorm needs at least two rows")
    if gamma == 0:
        return np.zeros_like(x)
    mean = x.mean(axis=0)
    centered = x - mean
    var = np.einsum("ij,ij->j", centered, centered) / x.shape[0]
    scale = np.einsum("ij,ij->j", x, x) / x.shape[0]
    bad = np.flatnonzero(~(var > 1e-20 * scale))
    if bad.size:
        raise DegenerateActivation(int(bad[0]))
    centered *= gamma / np.sqrt(var)
    return centered


def layernorm(x, gamma):
    """Row-wise normalization (per sample, across features), scaled by ``gamma``."""
    x = _check_matrix(x)
    if gamma == 0:
        return np.zeros_like(x)
    centered = x - x.mean(axis=1, keepdims=True)
    var = np.einsum("ij,ij->i", centered, centered) / x.shape[1]
    scale = np.einsum("ij,ij->i", x, x) / x.shape[1]
    bad = np.flatnonzero(~(var > 1e-20 * scale))
    if bad.size:
        raise DegenerateActivation(int(bad[0]), axis="row")
    centered *= (gamma / np.sqrt(var))[:, None]
    return centered


def relu(x):
    return np.maximum(x, 0.0)


def second_moment(x):
    """Mean over columns of the per-column mean of ``x**2``."""
    flat = np.ascontiguousarray(x).ravel()
    return float(np.dot(flat, flat) / flat.size)


def _v1_block(block, x, rng):
    n = x.shape[1]
    h = x
    gammas = block.branch_gammas
    for g in gammas[:-1]:
        h = relu(batchnorm(h @ he_init(n, n, rng), g))
    f = batchnorm(h @ he_init(n, n, rng), gammas[-1])
    if block.downsample:
        skip = batchnorm(x @ he_init(n, n, rng), block.gamma_down)
    else:
        skip = x
    return relu(skip + f), f


def _preact_block(block, x, rng):
    n = x.shape[1]
    gammas = block.branch_gammas
    a = relu(batchnorm(x, gammas[0]))
    h = a @ he_init(n, n, rng)
    for g in gammas[1:]:
        h = relu(batchnorm(h, g)) @ he_init(n, n, rng)
    skip = a @ he_init(n, n, rng) if block.downsample else x
    return skip + h, h


def _tx_block(block, x, rng):
    n = x.shape[1]
    total = np.zeros_like(x)
    for g in block.branch_gammas:
        f = relu(layernorm(x, g)) @ he_init(n, n, rng)
        x = x + f
        total += f
    return x, total


def forward_block_parts(block, style, x, rng):
    """Run one block on ``x``; return ``(output, residual_branch_output)``.

    Wiring per style:
      v1:          [W-BN-ReLU]*(k-1), W-BN, add skip, ReLU; downsampling skip is W-BN
      preact:      [BN-ReLU-W]*k, add skip; downsampling skip is W applied to the
                   first BN-ReLU output
      transformer: two sequential branches x += W ReLU(LN(x)), no final activation
    Fresh weights are drawn from ``rng`` on every call.
    """
    x = _check_matrix(x)
    style = Style(style)
    if style is Style.TRANSFORMER:
        if block.kind is not BlockKind.TXBLOCK:
            raise ValueError("transformer style needs txblock blocks")
        return _tx_block(block, x, rng)
    if block.kind is BlockKind.TXBLOCK:
        raise ValueError(f"txblock not valid in {style.value} network")
    if style is Style.V1:
        return _v1_block(block, x, rng)
    return _preact_block(block, x, rng)


def forward_block(block, style, x, rng):
    return forward_block_parts(block, style, x, rng)[0]


def _stem(spec, batch, width, rng, input_var):
    if spec.style is Style.V1 and not spec.stem.has_norm and input_var is None:
        raise ValueError("v1 network without a stem norm needs an explicit input_var")
    sd = 1.0 if input_var is None else math.sqrt(input_var)
    x = rng.normal(0.0, sd, size=(batch, width))
    if not spec.stem.has_norm:
        return x
    if spec.style is Style.TRANSFORMER:
        return layernorm(x, spec.stem.gamma0)
    return relu(batchnorm(x @ he_init(width, width, rng), spec.stem.gamma0))


def run_trial(spec, batch, width, rng, input_var=None):
    """One forward pass; returns an array of shape ``(n_blocks, 3)`` holding
    skip, branch and output second moments per block."""
    x = _stem(spec, batch, width, rng, input_var)
    rows = []
    for s, b, block in spec.blocks():
        skip_m = second_moment(x)
        try:
            x, f = forward_block_parts(block, spec.style, x, rng)
        except DegenerateActivation as exc:
            raise DegenerateActivation(exc.index, where=f"stage{s}.block{b}") from None
        rows.append((skip_m, second_moment(f), second_moment(x)))
    return np.array(rows)


def max_workers(tasks):
    """Thread count for ``tasks`` independent jobs, capped by ``GAMMA_GUARD_THREADS``."""
    cap = os.environ.get("GAMMA_GUARD_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(tasks, limit))


def mc_variance_profile(spec, cfg=McConfig(), input_var=None):
    """Empirical profile averaged over ``cfg.trials`` independent forward passes.

    Trial ``t`` draws from the ``t``-th child of ``SeedSequence(cfg.seed)``,
    so results do not depend on scheduling or on the total trial count.
    """
    width = cfg.width or spec.width
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)

    def one(ss):
        return run_trial(spec, cfg.batch, width, np.random.default_rng(ss), input_var)

    workers = max_workers(cfg.trials)
    if workers == 1:
        results = [one(ss) for ss in seeds]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, seeds))
    stacked = np.stack(results)  # trials x blocks x 3
    mean = stacked.mean(axis=0)
    if cfg.trials > 1:
        stderr = stacked[:, :, 2].std(axis=0, ddof=1) / math.sqrt(cfg.trials)
    else:
        stderr = np.zeros(stacked.shape[1])
    positions = tuple((s, b) for s, b, _ in spec.blocks())
    return VarianceProfile(positions, tuple(mean[:, 0]), tuple(mean[:, 1]), tuple(mean[:, 2]),
                           EMPIRICAL, tuple(stderr))


@dataclass(frozen=True)
class ProfileComparison:
    positions: tuple
    rel_err: tuple
    max_rel_err: float
    mean_rel_err: float

    def to_dict(self):
        return {
            "rows": [
                {"stage": s, "block": b, "rel_err": e}
                for (s, b), e in zip(self.positions, self.rel_err)
            ],
            "max_rel_err": self.max_rel_err,
            "mean_rel_err": self.mean_rel_err,
        }


def compare_profiles(analytic, empirical, floor=1e-6):
    """Per-block relative error of ``empirical.out_var`` against ``analytic.out_var``."""
    if analytic.positions != empirical.positions:
        raise ValueError("profiles cover different block positions")
    if not analytic.positions:
        raise ValueError("cannot compare empty profiles")
    errs = tuple(
        abs(e - a) / max(a, floor) for a, e in zip(analytic.out_var, empirical.out_var)
    )
    return ProfileComparison(analytic.positions, errs, max(errs), sum(errs) / len(errs))
