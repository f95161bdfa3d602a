from collections import Counter
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TOPOLOGY, arch_specs
from gamma_guard.archspec import (
    ArchSpec,
    BlockKind,
    BlockSpec,
    ParamPath,
    StageSpec,
    StemSpec,
    Style,
    build_canonical,
    enumerate_gammas,
)
from gamma_guard.classify import (
    DecayPolicy,
    GammaRole,
    assign_role_gammas,
    classify_gammas,
    make_plan,
    role_counts,
)

R = GammaRole
GOLDEN = Path(__file__).parent / "golden"


def _oracle_counts(name):
    """Role counts from the block table alone."""
    style, norms, counts, first_down = TOPOLOGY[name]
    blocks = sum(counts)
    downs = sum(1 for s in range(len(counts)) if s >= first_down)
    if style == "v1":
        return {R.GAMMA0: 1, R.GAMMA_LAST: blocks, R.GAMMA_DOWN: downs,
                R.GAMMA_OTHERS: blocks * (norms - 1)}
    return {R.GAMMA0: 0, R.GAMMA_LAST: blocks, R.GAMMA_DOWN: downs,
            R.GAMMA_OTHERS: blocks * (norms - 1) - downs}


def test_resnet50_counts():
    assert role_counts(build_canonical("resnet50")) == {
        R.GAMMA0: 1, R.GAMMA_LAST: 16, R.GAMMA_DOWN: 4, R.GAMMA_OTHERS: 32}


def test_resnet18_counts():
    assert role_counts(build_canonical("resnet18")) == {
        R.GAMMA0: 1, R.GAMMA_LAST: 8, R.GAMMA_DOWN: 3, R.GAMMA_OTHERS: 8}


@pytest.mark.parametrize("name", sorted(TOPOLOGY))
def test_counts_match_block_table(name):
    assert role_counts(build_canonical(name)) == _oracle_counts(name)


def test_preact_plain_block_roles():
    roles = classify_gammas(build_canonical("preact18"))
    assert roles[ParamPath("branch", 0, 1, 0)] is R.GAMMA_OTHERS
    assert roles[ParamPath("branch", 0, 1, 1)] is R.GAMMA_LAST


def test_preact_downsample_first_norm_is_down():
    roles = classify_gammas(build_canonical("preact50"))
    assert roles[ParamPath("branch", 1, 0, 0)] is R.GAMMA_DOWN
    assert roles[ParamPath("branch", 1, 0, 1)] is R.GAMMA_OTHERS
    assert roles[ParamPath("branch", 1, 0, 2)] is R.GAMMA_LAST


def test_transformer_roles():
    block = BlockSpec(BlockKind.TXBLOCK, (1.0, 1.0))
    spec = ArchSpec("bert", Style.TRANSFORMER, StemSpec(True, 1.0),
                    (StageSpec((block, block)),), 16, final_norm=1.0)
    roles = classify_gammas(spec)
    assert roles[ParamPath("stem")] is R.GAMMA0
    assert roles[ParamPath("final")] is R.GAMMA_OTHERS
    assert Counter(roles.values())[R.GAMMA_LAST] == 4


def test_plan_policies_resnet18():
    spec = build_canonical("resnet18")
    assert make_plan(spec, 1e-4, DecayPolicy.GUIDELINES).n_decayed == 16
    assert make_plan(spec, 1e-4, "weights-only").n_decayed == 0
    assert make_plan(spec, 1e-4, "all").n_decayed == 20
    assert len(make_plan(spec, 1e-4).entries) == 20


def test_guidelines_table():
    plan = make_plan(build_canonical("resnet50"), 5e-4)
    by_role = {}
    for e in plan.entries:
        by_role.setdefault(e.role, set()).add(e.decay)
    assert by_role == {R.GAMMA0: {False}, R.GAMMA_DOWN: {False},
                       R.GAMMA_LAST: {True}, R.GAMMA_OTHERS: {True}}


def test_custom_policy():
    spec = build_canonical("resnet18")
    plan = make_plan(spec, 0.0, "custom", {"gamma0": True, "gamma_last": False,
                                           "gamma_down": True, "gamma_others": False})
    assert plan.n_decayed == 4
    with pytest.raises(ValueError, match="gamma_others"):
        make_plan(spec, 0.0, DecayPolicy.CUSTOM, {R.GAMMA0: True, R.GAMMA_LAST: True, R.GAMMA_DOWN: True})
    with pytest.raises(ValueError):
        make_plan(spec, 0.0, DecayPolicy.CUSTOM)


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        make_plan(build_canonical("resnet18"), -1e-4)


@pytest.mark.parametrize("policy", ["guidelines", "all", "weights-only"])
def test_golden_plan_json(policy):
    text = make_plan(build_canonical("resnet18"), 1e-4, policy).to_json()
    assert text == (GOLDEN / f"plan_resnet18_{policy}.json").read_text(encoding="utf-8")


def test_plan_json_sorted_by_path():
    records = make_plan(build_canonical("resnet50"), 1e-4).to_records()
    paths = [r["path"] for r in records]
    assert paths == sorted(paths)


def test_assign_role_gammas():
    spec = assign_role_gammas(build_canonical("resnet18"), gamma0=2.0, gamma_down=3.0)
    values = dict(enumerate_gammas(spec))
    roles = classify_gammas(spec)
    for path, role in roles.items():
        want = {R.GAMMA0: 2.0, R.GAMMA_DOWN: 3.0}.get(role, 1.0)
        assert values[path] == want


@settings(max_examples=200, deadline=None)
@given(arch_specs())
def test_role_structure(spec):
    roles = classify_gammas(spec)
    assert set(roles) == {p for p, _ in enumerate_gammas(spec)}
    for s, b, block in spec.blocks():
        mine = Counter(r for p, r in roles.items() if (p.stage, p.block) == (s, b))
        assert mine[R.GAMMA_DOWN] == (1 if block.downsample else 0)
        assert mine[R.GAMMA_LAST] == (2 if block.kind is BlockKind.TXBLOCK else 1)


@settings(max_examples=200, deadline=None)
@given(arch_specs(), st.floats(0, 1))
def test_guidelines_subset_of_all(spec, lam):
    guided = {e.path: e.decay for e in make_plan(spec, lam, "guidelines").entries}
    everything = {e.path: e.decay for e in make_plan(spec, lam, "all").entries}
    assert all(everything[p] for p, d in guided.items() if d)


@settings(max_examples=100, deadline=None)
@given(arch_specs(), st.floats(0.1, 5.0))
def test_roles_ignore_gamma_values(spec, value):
    rescaled = assign_role_gammas(spec, value, value, value, value)
    assert classify_gammas(rescaled) == classify_gammas(spec)
    tweaked = replace(spec, stem=StemSpec(spec.stem.has_norm, value))
    assert classify_gammas(tweaked) == classify_gammas(spec)
