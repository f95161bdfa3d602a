import json

import pytest
from hypothesis import given, settings

from conftest import TOPOLOGY, arch_specs, expected_gamma_count
from gamma_guard.archspec import (
    ArchError,
    ArchSpec,
    ArchSyntaxError,
    BlockKind,
    BlockSpec,
    ParamPath,
    StageSpec,
    StemSpec,
    Style,
    build_canonical,
    enumerate_gammas,
    parse_arch,
    serialize,
)


def test_parse_minimal_preact(minimal_preact_text):
    spec = parse_arch(minimal_preact_text)
    assert spec.style is Style.PREACT
    assert len(spec.stages) == 1
    assert spec.stages[0].blocks[0].branch_gammas == (1.0, 1.0)
    assert not spec.stem.has_norm


def test_missing_gamma_down_names_block():
    doc = json.loads(serialize(build_canonical("resnet18")))
    del doc["stages"][2]["blocks"][0]["gamma_down"]
    with pytest.raises(ArchError) as err:
        parse_arch(json.dumps(doc))
    assert err.value.where == "stage2.block0"
    assert "gamma_down" in str(err.value)


def test_syntax_error_reports_position():
    with pytest.raises(ArchSyntaxError) as err:
        parse_arch('{\n  "name": "x",\n  "style": }')
    assert (err.value.lineno, err.value.colno) == (3, 12)


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d.update(extra=1), "<root>"),
        (lambda d: d["stem"].update(bogus=True), "stem"),
        (lambda d: d["stages"][0]["blocks"][0].update(stride=2), "stage0.block0"),
        (lambda d: d.update(style="v3"), "style"),
        (lambda d: d.update(width=0), "width"),
        (lambda d: d.update(stages=[]), "stages"),
        (lambda d: d["stages"][1].update(blocks=[]), "stage1"),
        (lambda d: d["stages"][0]["blocks"][1].update(branch_gammas=[1.0]), "stage0.block1"),
        (lambda d: d["stages"][0]["blocks"][1].update(branch_gammas=[1.0, -2.0]), "stage0.block1.branch_gammas"),
        (lambda d: d["stages"][0]["blocks"][1].update(gamma_down=1.0), "stage0.block1"),
        (lambda d: d["stages"][0]["blocks"][0].update(kind="txblock"), "stage0.block0"),
    ],
)
def test_semantic_errors(mutate, where):
    doc = json.loads(serialize(build_canonical("resnet18")))
    mutate(doc)
    with pytest.raises(ArchError) as err:
        parse_arch(json.dumps(doc))
    assert err.value.where == where


def test_preact_stem_norm_rejected():
    doc = json.loads(serialize(build_canonical("preact18")))
    doc["stem"]["has_norm"] = True
    with pytest.raises(ArchError, match="stem"):
        parse_arch(json.dumps(doc))


def test_transformer_downsample_rejected():
    block = BlockSpec(BlockKind.TXBLOCK, (1.0, 1.0), downsample=True)
    with pytest.raises(ArchError, match="downsample"):
        ArchSpec("t", Style.TRANSFORMER, StemSpec(False), (StageSpec((block,)),))


def test_resnet18_round_trip_and_determinism():
    spec = build_canonical("resnet18", 1.0)
    text = serialize(spec)
    assert parse_arch(text) == spec
    assert serialize(parse_arch(text)) == text
    assert serialize(build_canonical("resnet18", 1.0)) == text
    assert [len(s.blocks) for s in parse_arch(text).stages] == [2, 2, 2, 2]


def test_serialized_value_lands_at_path():
    spec = build_canonical("resnet18")
    blocks = list(spec.stages[1].blocks)
    blocks[1] = BlockSpec(blocks[1].kind, (1.0, 0.5))
    spec = ArchSpec(spec.name, spec.style, spec.stem,
                    (spec.stages[0], StageSpec(tuple(blocks))) + spec.stages[2:], spec.width)
    doc = json.loads(serialize(spec))
    assert doc["stages"][1]["blocks"][1]["branch_gammas"] == [1.0, 0.5]
    assert dict((str(p), v) for p, v in enumerate_gammas(spec))["stage1.block1.norm1.gamma"] == 0.5


@pytest.mark.parametrize("name", sorted(TOPOLOGY))
def test_canonical_topology(name):
    style, norms, counts, first_down = TOPOLOGY[name]
    spec = build_canonical(name, 1.0)
    assert spec.style.value == style
    assert [len(s.blocks) for s in spec.stages] == counts
    for s, b, block in spec.blocks():
        assert block.kind.n_norms == norms
        assert block.downsample == (b == 0 and s >= first_down)
    assert len(enumerate_gammas(spec)) == expected_gamma_count(name)


def test_resnet18_and_resnet50_counts():
    r18 = build_canonical("resnet18")
    assert sum(1 for *_, b in r18.blocks() if b.kind is BlockKind.BASIC) == 8
    assert sum(1 for *_, b in r18.blocks() if b.downsample) == 3
    assert r18.stem.has_norm
    r50 = build_canonical("resnet50")
    assert sum(1 for *_, b in r50.blocks() if b.kind is BlockKind.BOTTLENECK) == 16
    assert sum(1 for *_, b in r50.blocks() if b.downsample) == 4
    assert len(enumerate_gammas(r50)) == 53


def test_preact18_has_no_stem_gamma():
    spec = build_canonical("preact18")
    assert not spec.stem.has_norm
    entries = enumerate_gammas(spec)
    assert len(entries) == 16
    assert all(p.scope == "branch" for p, _ in entries)


def test_enumeration_order():
    paths = [str(p) for p, _ in enumerate_gammas(build_canonical("resnet18"))]
    assert len(paths) == 20
    assert paths[:4] == [
        "stem.norm.gamma",
        "stage0.block0.norm0.gamma",
        "stage0.block0.norm1.gamma",
        "stage0.block1.norm0.gamma",
    ]
    assert paths[5:8] == [
        "stage1.block0.norm0.gamma",
        "stage1.block0.norm1.gamma",
        "stage1.block0.down.norm.gamma",
    ]
    assert paths == [str(p) for p, _ in enumerate_gammas(build_canonical("resnet18"))]


def test_txstack():
    spec = build_canonical("txstack(6)", 0.5)
    assert spec == build_canonical("txstack6", 0.5)
    assert spec.style is Style.TRANSFORMER
    assert len(spec.stages[0].blocks) == 6
    assert len(enumerate_gammas(spec)) == 12


@pytest.mark.parametrize("bad", [("resnet19", 1.0), ("resnet18", 0.0), ("resnet18", -1.0)])
def test_build_canonical_errors(bad):
    with pytest.raises(ValueError):
        build_canonical(*bad)


@pytest.mark.parametrize(
    "text",
    ["stem.norm.gamma", "final.norm.gamma", "stage0.block3.norm2.gamma", "stage12.block0.down.norm.gamma"],
)
def test_param_path_round_trip(text):
    assert str(ParamPath.parse(text)) == text


@pytest.mark.parametrize("text", ["stem.gamma", "stage0.block0.norm.gamma", "stage0.block0.down.gamma", ""])
def test_param_path_rejects(text):
    with pytest.raises(ValueError):
        ParamPath.parse(text)


@settings(max_examples=150, deadline=None)
@given(arch_specs())
def test_parse_serialize_identity(spec):
    text = serialize(spec)
    assert parse_arch(text) == spec
    assert serialize(parse_arch(text)) == text


@settings(max_examples=150, deadline=None)
@given(arch_specs())
def test_gamma_count_formula(spec):
    entries = enumerate_gammas(spec)
    expected = (
        int(spec.stem.has_norm)
        + sum(len(b.branch_gammas) for *_, b in spec.blocks())
        + sum(1 for *_, b in spec.blocks() if b.downsample and spec.style is Style.V1)
        + int(spec.final_norm is not None)
    )
    assert len(entries) == expected
    paths = [p for p, _ in entries]
    assert len(set(paths)) == len(paths)
    assert all(ParamPath.parse(str(p)) == p for p in paths)
