"""Closed-form variance propagation through residual networks at initialization.

All quantities are per-element second moments with the mean ignored, i.e.
``E[x^2]`` of a zero-bias, zero-shift network with He-initialized weights and
ideal batch statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from ._jsonio import dumps
from .archspec import BlockKind, Style

log = logging.getLogger(__name__)

__all__ = [
    "VarianceProfile",
    "branch_variance",
    "propagate_preact",
    "propagate_v1",
    "propagate_v1_closed",
    "reset_downsample_v1",
    "reset_downsample_preact",
    "early_stage_variance",
    "propagate_transformer",
    "stem_variance",
    "full_profile",
    "dominance_check",
]

ANALYTIC = "analytic"
EMPIRICAL = "empirical"


@dataclass(frozen=True)
class VarianceProfile:
    positions: tuple
    skip_var: tuple
    branch_var: tuple
    out_var: tuple
    source: str = ANALYTIC
    stderr: tuple | None = None
    degenerate: bool = False

    def __post_init__(self):
        n = len(self.positions)
        for name in ("skip_var", "branch_var", "out_var"):
            values = tuple(float(v) for v in getattr(self, name))
            if len(values) != n:
                raise ValueError(f"{name} has {len(values)} entries, expected {n}")
            if any(v < 0 for v in values):
                raise ValueError(f"{name} contains a negative variance")
            object.__setattr__(self, name, values)
        object.__setattr__(self, "positions", tuple(tuple(p) for p in self.positions))
        if self.source not in (ANALYTIC, EMPIRICAL):
            raise ValueError(f"unknown profile source {self.source!r}")
        if self.source == ANALYTIC and self.stderr is not None:
            raise ValueError("analytic profiles carry no stderr")
        if self.stderr is not None:
            stderr = tuple(float(v) for v in self.stderr)
            if len(stderr) != n:
                raise ValueError("stderr length mismatch")
            object.__setattr__(self, "stderr", stderr)

    def __len__(self):
        return len(self.positions)

    def to_dict(self, dominance=False):
        rows = []
        dom = dominance_check(self) if dominance else None
        for i, (s, b) in enumerate(self.positions):
            row = {
                "stage": s,
                "block": b,
                "skip_var": self.skip_var[i],
                "branch_var": self.branch_var[i],
                "out_var": self.out_var[i],
            }
            if self.stderr is not None:
                row["stderr"] = self.stderr[i]
            if dom is not None:
                row["dominant"] = dom[i]
            rows.append(row)
        return {"source": self.source, "rows": rows}

    def to_json(self, dominance=False):
        return dumps(self.to_dict(dominance))

    def to_table(self, dominance=False):
        head = f"{'stage':>5} {'block':>5} {'skip_var':>12} {'branch_var':>12} {'out_var':>12}"
        if self.stderr is not None:
            head += f" {'stderr':>10}"
        if dominance:
            head += "  dominant"
        dom = dominance_check(self) if dominance else None
        lines = [head]
        for i, (s, b) in enumerate(self.positions):
            line = (f"{s:>5} {b:>5} {self.skip_var[i]:>12.6f} "
                    f"{self.branch_var[i]:>12.6f} {self.out_var[i]:>12.6f}")
            if self.stderr is not None:
                line += f" {self.stderr[i]:>10.2e}"
            if dom is not None:
                line += f"  {'yes' if dom[i] else 'no'}"
            lines.append(line)
        return "\n".join(lines) + "\n"


def branch_variance(block, style=Style.V1):
    """Variance of a residual branch: the square of its last gamma.

    Earlier gammas are normalized away by the following norm layer.
    """
    if block.kind is BlockKind.TXBLOCK or Style(style) is Style.TRANSFORMER:
        raise ValueError("branch_variance is defined for convolutional blocks only")
    return float(block.branch_gammas[-1]) ** 2


def propagate_preact(var_s, gamma_lasts):
    """Additive accumulation: each block adds its ``gamma_last**2``."""
    if var_s < 0:
        raise ValueError("var_s must be >= 0")
    out = []
    v = float(var_s)
    for g in gamma_lasts:
        v += float(g) ** 2
        out.append(v)
    return out


def propagate_v1(var_s, gamma_lasts):
    """Half accumulation from the post-addition ReLU: ``v <- (v + g**2) / 2``."""
    if var_s < 0:
        raise ValueError("var_s must be >= 0")
    out = []
    v = float(var_s)
    for g in gamma_lasts:
        v = 0.5 * (v + float(g) ** 2)
        out.append(v)
    return out


def propagate_v1_closed(var_s, gamma_lasts):
    """Closed form of :func:`propagate_v1`.

    ``v_n = 2**-n * var_s + sum_m 2**-(n-m) * g_m**2`` with m running over the
    n blocks already traversed (0-based, so the last block contributes 1/2).
    """
    if var_s < 0:
        raise ValueError("var_s must be >= 0")
    sq = [float(g) ** 2 for g in gamma_lasts]
    out = []
    for n in range(1, len(sq) + 1):
        acc = 2.0 ** -n * float(var_s)
        for m in range(n):
            acc += 2.0 ** -(n - m) * sq[m]
        out.append(acc)
    return out


def reset_downsample_v1(gamma_down, gamma_last):
    """Output variance of a V1 downsampling block; the input variance drops out."""
    return 0.5 * (float(gamma_down) ** 2 + float(gamma_last) ** 2)


def reset_downsample_preact(gamma1, gamma2):
    """Output variance of a PreAct downsampling block (shared first norm + last norm)."""
    return float(gamma1) ** 2 + float(gamma2) ** 2


def early_stage_variance(gamma0):
    return 0.5 * float(gamma0) ** 2


def propagate_transformer(var_s, blocks):
    """Each transformer block adds both of its LN scales squared, no halving."""
    if var_s < 0:
        raise ValueError("var_s must be >= 0")
    out = []
    v = float(var_s)
    for block in blocks:
        if block.kind is not BlockKind.TXBLOCK:
            raise ValueError(f"expected txblock, got {block.kind.value}")
        g1, g2 = block.branch_gammas
        v += float(g1) ** 2 + float(g2) ** 2
        out.append(v)
    return out


def stem_variance(spec, input_var=None):
    """Variance entering the first block.

    V1: ReLU after the stem norm halves gamma0**2. Transformers with a stem LN
    start at gamma0**2 (no activation). Otherwise the raw input variance,
    1.0 unless overridden.
    """
    if input_var is not None and input_var < 0:
        raise ValueError("input_var must be >= 0")
    if spec.stem.has_norm:
        if spec.style is Style.TRANSFORMER:
            return float(spec.stem.gamma0) ** 2
        return early_stage_variance(spec.stem.gamma0)
    if spec.style is Style.V1 and input_var is None:
        raise ValueError("v1 network without a stem norm needs an explicit input_var")
    return 1.0 if input_var is None else float(input_var)


def full_profile(spec, input_var=None):
    """Analytic variance at every block of ``spec``."""
    v = stem_variance(spec, input_var)
    positions, skip, branch, out = [], [], [], []
    stage_entries = [v]
    for s, b, block in spec.blocks():
        positions.append((s, b))
        skip.append(v)
        if spec.style is Style.TRANSFORMER:
            g1, g2 = block.branch_gammas
            branch.append(g1 ** 2 + g2 ** 2)
            v = propagate_transformer(v, [block])[0]
        elif spec.style is Style.V1:
            branch.append(branch_variance(block, spec.style))
            if block.downsample:
                v = reset_downsample_v1(block.gamma_down, block.gamma_last)
            else:
                v = propagate_v1(v, [block.gamma_last])[0]
        else:
            branch.append(branch_variance(block, spec.style))
            if block.downsample:
                v = reset_downsample_preact(block.branch_gammas[0], block.gamma_last)
            else:
                v = propagate_preact(v, [block.gamma_last])[0]
        out.append(v)
        if block.downsample:
            stage_entries.append(v)
    degenerate = all(e == 0.0 for e in stage_entries)
    if degenerate:
        log.warning("%s: every stage-entry variance is zero", spec.name)
    return VarianceProfile(tuple(positions), tuple(skip), tuple(branch), tuple(out),
                           ANALYTIC, None, degenerate)


def dominance_check(profile):
    """Per block: does the skip path strictly dominate the residual branch?"""
    return [s > f for s, f in zip(profile.skip_var, profile.branch_var)]
