import hypothesis.strategies as st
import pytest

from gamma_guard.archspec import ArchSpec, BlockKind, BlockSpec, StageSpec, StemSpec, Style

# Independent description of the canonical topologies used as an oracle:
# (style, norms per block, blocks per stage, index of the first stage that downsamples)
TOPOLOGY = {
    "resnet18": ("v1", 2, [2, 2, 2, 2], 1),
    "resnet34": ("v1", 2, [3, 4, 6, 3], 1),
    "resnet50": ("v1", 3, [3, 4, 6, 3], 0),
    "resnet101": ("v1", 3, [3, 4, 23, 3], 0),
    "resnet152": ("v1", 3, [3, 8, 36, 3], 0),
    "preact18": ("preact", 2, [2, 2, 2, 2], 1),
    "preact50": ("preact", 3, [3, 4, 6, 3], 0),
}


def expected_gamma_count(name):
    style, norms, counts, first_down = TOPOLOGY[name]
    downs = sum(1 for s in range(len(counts)) if s >= first_down)
    stem = 1 if style == "v1" else 0
    return stem + norms * sum(counts) + (downs if style == "v1" else 0)


gamma_values = st.floats(min_value=0.0, max_value=4.0, allow_nan=False)
pos_gamma = st.floats(min_value=0.05, max_value=4.0, allow_nan=False)


@st.composite
def arch_specs(draw, styles=("v1", "preact", "transformer"), gammas=gamma_values):
    style = Style(draw(st.sampled_from(styles)))
    n_stages = draw(st.integers(1, 3))
    stages = []
    for _ in range(n_stages):
        blocks = []
        for _ in range(draw(st.integers(1, 3))):
            if style is Style.TRANSFORMER:
                kind, down = BlockKind.TXBLOCK, False
            else:
                kind = draw(st.sampled_from([BlockKind.BASIC, BlockKind.BOTTLENECK]))
                down = draw(st.booleans())
            branch = tuple(draw(gammas) for _ in range(kind.n_norms))
            gd = draw(gammas) if down and style is Style.V1 else None
            blocks.append(BlockSpec(kind, branch, down, gd))
        stages.append(StageSpec(tuple(blocks)))
    has_norm = style is Style.V1 or (style is Style.TRANSFORMER and draw(st.booleans()))
    final = draw(st.none() | gammas) if style is Style.TRANSFORMER else None
    return ArchSpec(
        name=draw(st.text("abcxyz0123_", min_size=1, max_size=8)),
        style=style,
        stem=StemSpec(has_norm, draw(gammas)),
        stages=tuple(stages),
        width=draw(st.integers(1, 512)),
        final_norm=final,
    )


@pytest.fixture
def minimal_preact_text():
    return """{
      "name": "tiny", "style": "preact", "width": 8,
      "stem": {"has_norm": false},
      "stages": [{"blocks": [{"kind": "basic", "downsample": false, "branch_gammas": [1.0, 1.0]}]}]
    }"""
