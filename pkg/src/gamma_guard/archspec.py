"""Block-structured architecture descriptions.

An :class:`ArchSpec` lists the stem, the stages and the residual blocks of a
ResNet-like or transformer-like network, together with the scalar scale
(gamma) of every normalization layer.  Everything downstream (role
classification, variance propagation, Monte Carlo simulation) reads this
structure rather than a framework model.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field

from ._jsonio import dumps

__all__ = [
    "ArchError",
    "ArchSyntaxError",
    "Style",
    "BlockKind",
    "StemSpec",
    "BlockSpec",
    "StageSpec",
    "ArchSpec",
    "ParamPath",
    "parse_arch",
    "serialize",
    "build_canonical",
    "enumerate_gammas",
    "CANONICAL_NAMES",
]


class ArchError(ValueError):
    """Semantic problem with an architecture description.

    ``where`` names the offending location (a dotted path such as
    ``stage1.block0``) when one is known.
    """

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class ArchSyntaxError(ArchError):
    def __init__(self, message, lineno, colno):
        self.lineno = lineno
        self.colno = colno
        super().__init__(f"invalid JSON at line {lineno} column {colno}: {message}")


class Style(enum.Enum):
    V1 = "v1"
    PREACT = "preact"
    TRANSFORMER = "transformer"


class BlockKind(enum.Enum):
    BASIC = "basic"
    BOTTLENECK = "bottleneck"
    TXBLOCK = "txblock"

    @property
    def n_norms(self):
        return 3 if self is BlockKind.BOTTLENECK else 2


def _check_gamma(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ArchError(f"gamma must be a number, got {value!r}", where)
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise ArchError(f"gamma must be finite and >= 0, got {value!r}", where)
    return value


@dataclass(frozen=True)
class StemSpec:
    has_norm: bool = True
    gamma0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gamma0", _check_gamma(self.gamma0, "stem"))


@dataclass(frozen=True)
class BlockSpec:
    kind: BlockKind
    branch_gammas: tuple
    downsample: bool = False
    gamma_down: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BlockKind(self.kind))
        gammas = tuple(_check_gamma(g, "block") for g in self.branch_gammas)
        object.__setattr__(self, "branch_gammas", gammas)
        if len(gammas) != self.kind.n_norms:
            raise ArchError(
                f"{self.kind.value} block needs {self.kind.n_norms} branch gammas, got {len(gammas)}"
            )
        if self.gamma_down is not None:
            object.__setattr__(self, "gamma_down", _check_gamma(self.gamma_down, "block"))

    @property
    def gamma_last(self):
        return self.branch_gammas[-1]


@dataclass(frozen=True)
class StageSpec:
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))


@dataclass(frozen=True)
class ArchSpec:
    """A validated, immutable network description.

    ``final_norm`` is the gamma of an optional normalization between the last
    block and the head (transformers only); ``None`` means absent.
    """

    name: str
    style: Style
    stem: StemSpec
    stages: tuple
    width: int = 256
    final_norm: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "style", Style(self.style))
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.final_norm is not None:
            object.__setattr__(self, "final_norm", _check_gamma(self.final_norm, "final"))
        _validate(self)

    def blocks(self):
        """Yield ``(stage_index, block_index, block)`` in network order."""
        for s, stage in enumerate(self.stages):
            for b, block in enumerate(stage.blocks):
                yield s, b, block


def _validate(spec):
    if not isinstance(spec.name, str) or not spec.name:
        raise ArchError("name must be a non-empty string", "name")
    if isinstance(spec.width, bool) or not isinstance(spec.width, int) or spec.width <= 0:
        raise ArchError(f"width must be a positive integer, got {spec.width!r}", "width")
    if not spec.stages:
        raise ArchError("at least one stage is required", "stages")
    if spec.style is Style.PREACT and spec.stem.has_norm:
        raise ArchError("preact networks have no normalization in the stem", "stem")
    if spec.final_norm is not None and spec.style is not Style.TRANSFORMER:
        raise ArchError("final_norm is only supported for transformer style", "final_norm")
    for s, stage in enumerate(spec.stages):
        if not stage.blocks:
            raise ArchError("stage has no blocks", f"stage{s}")
        for b, block in enumerate(stage.blocks):
            where = f"stage{s}.block{b}"
            is_tx = block.kind is BlockKind.TXBLOCK
            if is_tx != (spec.style is Style.TRANSFORMER):
                raise ArchError(f"{block.kind.value} block not allowed in {spec.style.value} network", where)
            if is_tx and block.downsample:
                raise ArchError("transformer blocks cannot downsample", where)
            needs_down = block.downsample and spec.style is Style.V1
            if needs_down and block.gamma_down is None:
                raise ArchError("downsampling v1 block requires gamma_down", where)
            if not needs_down and block.gamma_down is not None:
                raise ArchError("gamma_down is only allowed on downsampling v1 blocks", where)


# -- parameter paths ---------------------------------------------------------

_PATH_RE = re.compile(
    r"^(?:(?P<stem>stem\.norm\.gamma)"
    r"|(?P<final>final\.norm\.gamma)"
    r"|stage(?P<s>\d+)\.block(?P<b>\d+)\.(?:norm(?P<k>\d+)|(?P<down>down\.norm))\.gamma)$"
)


@dataclass(frozen=True, order=True)
class ParamPath:
    """Location of one gamma: ``scope`` is stem, branch, down or final."""

    scope: str
    stage: int = -1
    block: int = -1
    norm: int = -1

    def __str__(self):
        if self.scope == "stem":
            return "stem.norm.gamma"
        if self.scope == "final":
            return "final.norm.gamma"
        if self.scope == "down":
            return f"stage{self.stage}.block{self.block}.down.norm.gamma"
        return f"stage{self.stage}.block{self.block}.norm{self.norm}.gamma"

    @classmethod
    def parse(cls, text):
        m = _PATH_RE.match(text)
        if m is None:
            raise ValueError(f"not a gamma path: {text!r}")
        if m["stem"]:
            return cls("stem")
        if m["final"]:
            return cls("final")
        s, b = int(m["s"]), int(m["b"])
        if m["down"]:
            return cls("down", s, b)
        return cls("branch", s, b, int(m["k"]))


def enumerate_gammas(spec):
    """Return ``[(ParamPath, value), ...]``: stem, then blocks in order, then final."""
    out = []
    if spec.stem.has_norm:
        out.append((ParamPath("stem"), spec.stem.gamma0))
    for s, b, block in spec.blocks():
        for k, g in enumerate(block.branch_gammas):
            out.append((ParamPath("branch", s, b, k), g))
        if block.gamma_down is not None:
            out.append((ParamPath("down", s, b), block.gamma_down))
    if spec.final_norm is not None:
        out.append((ParamPath("final"), spec.final_norm))
    return out


# -- JSON format -------------------------------------------------------------

_TOP_KEYS = {"name", "style", "width", "stem", "stages"}
_TOP_OPTIONAL = {"final_norm"}
_BLOCK_KEYS = {"kind", "downsample", "branch_gammas"}


def _expect_keys(obj, required, optional, where):
    if not isinstance(obj, dict):
        raise ArchError(f"expected an object, got {type(obj).__name__}", where)
    unknown = set(obj) - required - optional
    if unknown:
        raise ArchError(f"unknown keys {sorted(unknown)}", where)
    missing = required - set(obj)
    if missing:
        raise ArchError(f"missing keys {sorted(missing)}", where)


def _expect_bool(value, where):
    if not isinstance(value, bool):
        raise ArchError(f"expected a boolean, got {value!r}", where)
    return value


def _enum_value(cls, value, where):
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(repr(m.value) for m in cls)
        raise ArchError(f"expected one of {allowed}, got {value!r}", where) from None


def parse_arch(text):
    """Parse and validate an architecture file (JSON text)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    _expect_keys(raw, _TOP_KEYS, _TOP_OPTIONAL, "<root>")

    style = _enum_value(Style, raw["style"], "style")
    _expect_keys(raw["stem"], {"has_norm"}, {"gamma0"}, "stem")
    stem = StemSpec(
        has_norm=_expect_bool(raw["stem"]["has_norm"], "stem.has_norm"),
        gamma0=_check_gamma(raw["stem"].get("gamma0", 1.0), "stem.gamma0"),
    )
    if not isinstance(raw["stages"], list):
        raise ArchError("expected an array", "stages")
    stages = []
    for s, rs in enumerate(raw["stages"]):
        _expect_keys(rs, {"blocks"}, set(), f"stage{s}")
        if not isinstance(rs["blocks"], list):
            raise ArchError("expected an array", f"stage{s}.blocks")
        blocks = []
        for b, rb in enumerate(rs["blocks"]):
            where = f"stage{s}.block{b}"
            _expect_keys(rb, _BLOCK_KEYS, {"gamma_down"}, where)
            if not isinstance(rb["branch_gammas"], list):
                raise ArchError("branch_gammas must be an array", where)
            gammas = [_check_gamma(g, f"{where}.branch_gammas") for g in rb["branch_gammas"]]
            down = rb.get("gamma_down")
            try:
                blocks.append(BlockSpec(
                    kind=_enum_value(BlockKind, rb["kind"], f"{where}.kind"),
                    branch_gammas=tuple(gammas),
                    downsample=_expect_bool(rb["downsample"], f"{where}.downsample"),
                    gamma_down=None if down is None else _check_gamma(down, f"{where}.gamma_down"),
                ))
            except ArchError as exc:
                if exc.where is None or exc.where == "block":
                    raise ArchError(str(exc).removeprefix("block: "), where) from None
                raise
        stages.append(StageSpec(tuple(blocks)))
    final = raw.get("final_norm")
    return ArchSpec(
        name=raw["name"],
        style=style,
        stem=stem,
        stages=tuple(stages),
        width=raw["width"],
        final_norm=None if final is None else _check_gamma(final, "final_norm"),
    )


def to_dict(spec):
    out = {
        "name": spec.name,
        "style": spec.style.value,
        "width": spec.width,
        "stem": {"has_norm": spec.stem.has_norm, "gamma0": spec.stem.gamma0},
        "stages": [
            {"blocks": [_block_dict(b) for b in stage.blocks]} for stage in spec.stages
        ],
    }
    if spec.final_norm is not None:
        out["final_norm"] = spec.final_norm
    return out


def _block_dict(block):
    d = {
        "kind": block.kind.value,
        "downsample": block.downsample,
        "branch_gammas": list(block.branch_gammas),
    }
    if block.gamma_down is not None:
        d["gamma_down"] = block.gamma_down
    return d


def serialize(spec):
    """Canonical JSON text; ``parse_arch(serialize(s)) == s``."""
    return dumps(to_dict(spec))


# -- canonical topologies ----------------------------------------------------

_RESNETS = {
    # name: (style, kind, blocks per stage)
    "resnet18": (Style.V1, BlockKind.BASIC, (2, 2, 2, 2)),
    "resnet34": (Style.V1, BlockKind.BASIC, (3, 4, 6, 3)),
    "resnet50": (Style.V1, BlockKind.BOTTLENECK, (3, 4, 6, 3)),
    "resnet101": (Style.V1, BlockKind.BOTTLENECK, (3, 4, 23, 3)),
    "resnet152": (Style.V1, BlockKind.BOTTLENECK, (3, 8, 36, 3)),
    "preact18": (Style.PREACT, BlockKind.BASIC, (2, 2, 2, 2)),
    "preact50": (Style.PREACT, BlockKind.BOTTLENECK, (3, 4, 6, 3)),
}
CANONICAL_NAMES = tuple(_RESNETS) + ("txstack(n)",)
_TX_RE = re.compile(r"^txstack\(?(\d+)\)?$")


def build_canonical(name, gamma_init=1.0, width=256):
    """Build a standard topology with every gamma set to ``gamma_init``.

    Bottleneck networks downsample (project) at the first block of every
    stage, basic-block networks at the first block of stages 1..3.
    ``txstack(n)``/``txstackN`` is a single stage of ``n`` transformer blocks
    with no stem normalization.
    """
    gamma_init = float(gamma_init)
    if not math.isfinite(gamma_init) or gamma_init <= 0:
        raise ValueError(f"gamma_init must be > 0, got {gamma_init!r}")
    m = _TX_RE.match(name)
    if m:
        n = int(m[1])
        if n < 1:
            raise ValueError("txstack needs at least one block")
        block = BlockSpec(BlockKind.TXBLOCK, (gamma_init,) * 2)
        return ArchSpec(f"txstack{n}", Style.TRANSFORMER, StemSpec(False, gamma_init),
                        (StageSpec((block,) * n),), width)
    if name not in _RESNETS:
        raise ValueError(f"unknown architecture {name!r}; choose from {', '.join(CANONICAL_NAMES)}")
    style, kind, counts = _RESNETS[name]
    first_down = 0 if kind is BlockKind.BOTTLENECK else 1
    stages = []
    for s, count in enumerate(counts):
        blocks = []
        for b in range(count):
            down = b == 0 and s >= first_down
            blocks.append(BlockSpec(
                kind,
                (gamma_init,) * kind.n_norms,
                downsample=down,
                gamma_down=gamma_init if down and style is Style.V1 else None,
            ))
        stages.append(StageSpec(tuple(blocks)))
    stem = StemSpec(style is Style.V1, gamma_init)
    return ArchSpec(name, style, stem, tuple(stages), width)
