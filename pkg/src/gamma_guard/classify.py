"""Gamma role inference and selective L2 decay plans."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, replace

from ._jsonio import dumps
from .archspec import ArchSpec, BlockKind, ParamPath, StageSpec, StemSpec, Style, enumerate_gammas

__all__ = [
    "GammaRole",
    "DecayPolicy",
    "DecayPlan",
    "PlanEntry",
    "classify_gammas",
    "role_counts",
    "make_plan",
    "assign_role_gammas",
]


class GammaRole(enum.Enum):
    GAMMA0 = "gamma0"
    GAMMA_LAST = "gamma_last"
    GAMMA_DOWN = "gamma_down"
    GAMMA_OTHERS = "gamma_others"


class DecayPolicy(enum.Enum):
    GUIDELINES = "guidelines"
    ALL_PARAMS = "all"
    WEIGHTS_ONLY = "weights-only"
    CUSTOM = "custom"


_POLICY_TABLE = {
    DecayPolicy.GUIDELINES: {
        GammaRole.GAMMA0: False,
        GammaRole.GAMMA_LAST: True,
        GammaRole.GAMMA_DOWN: False,
        GammaRole.GAMMA_OTHERS: True,
    },
    DecayPolicy.ALL_PARAMS: dict.fromkeys(GammaRole, True),
    DecayPolicy.WEIGHTS_ONLY: dict.fromkeys(GammaRole, False),
}


def _block_role(spec, block, scope, k):
    if scope == "down":
        return GammaRole.GAMMA_DOWN
    if block.kind is BlockKind.TXBLOCK:
        # both LN scales feed an accumulating residual branch
        return GammaRole.GAMMA_LAST
    if k == block.kind.n_norms - 1:
        return GammaRole.GAMMA_LAST
    if k == 0 and block.downsample and spec.style is Style.PREACT:
        # shared pre-activation norm sets the skip path variance
        return GammaRole.GAMMA_DOWN
    return GammaRole.GAMMA_OTHERS


def classify_gammas(spec: ArchSpec) -> dict:
    """Map every :class:`ParamPath` of ``spec`` to its :class:`GammaRole`.

    Depends only on topology, never on gamma values.
    """
    roles = {}
    for path, _ in enumerate_gammas(spec):
        if path.scope == "stem":
            roles[path] = GammaRole.GAMMA0
        elif path.scope == "final":
            roles[path] = GammaRole.GAMMA_OTHERS
        else:
            block = spec.stages[path.stage].blocks[path.block]
            roles[path] = _block_role(spec, block, path.scope, path.norm)
    return roles


def role_counts(spec):
    counts = Counter(classify_gammas(spec).values())
    return {role: counts.get(role, 0) for role in GammaRole}


@dataclass(frozen=True)
class PlanEntry:
    path: ParamPath
    role: GammaRole
    decay: bool


@dataclass(frozen=True)
class DecayPlan:
    lam: float
    entries: tuple

    @property
    def n_decayed(self):
        return sum(e.decay for e in self.entries)

    def to_records(self):
        return [
            {"path": str(e.path), "role": e.role.value, "decay": e.decay, "lambda": self.lam}
            for e in sorted(self.entries, key=lambda e: str(e.path))
        ]

    def to_json(self):
        return dumps(self.to_records())

    def to_table(self):
        rows = self.to_records()
        width = max(len(r["path"]) for r in rows)
        lines = [f"{'path':<{width}}  {'role':<12}  decay"]
        for r in rows:
            lines.append(f"{r['path']:<{width}}  {r['role']:<12}  {'yes' if r['decay'] else 'no'}")
        lines.append(f"# lambda={self.lam!r}  decayed={self.n_decayed}/{len(rows)}")
        return "\n".join(lines) + "\n"


def make_plan(spec, lam, policy=DecayPolicy.GUIDELINES, custom=None):
    """Build a per-gamma decay plan.

    ``policy`` is a :class:`DecayPolicy` or its string value. ``custom`` maps
    every :class:`GammaRole` (or role string) to a bool and is required for
    ``DecayPolicy.CUSTOM``. Weight matrices are always decayed and are not
    listed.
    """
    lam = float(lam)
    if not lam >= 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam!r}")
    policy = DecayPolicy(policy)
    if policy is DecayPolicy.CUSTOM:
        if custom is None:
            raise ValueError("custom policy requires a role -> bool mapping")
        table = {GammaRole(k): bool(v) for k, v in custom.items()}
        missing = [r.value for r in GammaRole if r not in table]
        if missing:
            raise ValueError(f"custom policy missing roles: {', '.join(missing)}")
    else:
        table = _POLICY_TABLE[policy]
    entries = tuple(
        PlanEntry(path, role, table[role]) for path, role in classify_gammas(spec).items()
    )
    return DecayPlan(lam, entries)


def assign_role_gammas(spec, gamma0=None, gamma_last=None, gamma_down=None, gamma_others=None):
    """Return a copy of ``spec`` with every gamma of a role set to one value.

    Roles given as ``None`` keep their current values.
    """
    by_role = {
        GammaRole.GAMMA0: gamma0,
        GammaRole.GAMMA_LAST: gamma_last,
        GammaRole.GAMMA_DOWN: gamma_down,
        GammaRole.GAMMA_OTHERS: gamma_others,
    }
    roles = classify_gammas(spec)

    def pick(path, current):
        value = by_role[roles[path]]
        return current if value is None else value

    stem = spec.stem
    if stem.has_norm:
        stem = StemSpec(True, pick(ParamPath("stem"), stem.gamma0))
    stages = []
    for s, stage in enumerate(spec.stages):
        blocks = []
        for b, block in enumerate(stage.blocks):
            gammas = tuple(
                pick(ParamPath("branch", s, b, k), g) for k, g in enumerate(block.branch_gammas)
            )
            down = block.gamma_down
            if down is not None:
                down = pick(ParamPath("down", s, b), down)
            blocks.append(replace(block, branch_gammas=gammas, gamma_down=down))
        stages.append(StageSpec(tuple(blocks)))
    final = spec.final_norm
    if final is not None:
        final = pick(ParamPath("final"), final)
    return replace(spec, stem=stem, stages=tuple(stages), final_norm=final)
