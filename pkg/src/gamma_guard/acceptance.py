"""Acceptance checks shared by ``gamma-guard verify`` and the test suite.

Each check returns a :class:`CheckResult`; tolerances are fixed here. Wall
clock timings go to the log (stderr) so that the report text is reproducible.
"""

from __future__ import annotations

import io
import logging
import math
import tempfile
import time
from contextlib import redirect_stdout
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import classify, efflr, simkernel, varprop
from .archspec import StageSpec, build_canonical

log = logging.getLogger(__name__)

MC_CFG = dict(batch=8192, width=256, trials=8)
MAX_REL_ERR = 0.15
MEAN_REL_ERR = 0.08
MC_TIME_LIMIT = 60.0
EFFLR_TIME_LIMIT = 30.0
ORACLE_ARCHS = ("resnet18", "resnet50", "preact18")
SETTINGS = {
    "all-ones": {},
    "mixed": dict(gamma0=2.0, gamma_down=2.0, gamma_last=1.0, gamma_others=1.0),
}


@dataclass(frozen=True)
class CheckResult:
    key: str
    title: str
    passed: bool
    detail: str = ""

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.key:<4} {self.title}  {self.detail}".rstrip()


class _McCache:
    """Memoizes (spec, config) -> (profile, seconds) within one verify run."""

    def __init__(self):
        self._store = {}

    def get(self, spec, cfg):
        key = (spec, cfg)
        if key not in self._store:
            t0 = time.perf_counter()
            prof = simkernel.mc_variance_profile(spec, cfg)
            self._store[key] = (prof, time.perf_counter() - t0)
        return self._store[key]


def _setting_spec(name, setting):
    spec = build_canonical(name, 1.0, width=MC_CFG["width"])
    return classify.assign_role_gammas(spec, **SETTINGS[setting]) if SETTINGS[setting] else spec


def check_variance_oracle(spec, seed, cache, label=None):
    """MC profile vs analytic profile for one architecture."""
    cfg = simkernel.McConfig(seed=seed, **MC_CFG)
    analytic = varprop.full_profile(spec)
    empirical, secs = cache.get(spec, cfg)
    cmp = simkernel.compare_profiles(analytic, empirical)
    fast = secs <= MC_TIME_LIMIT
    log.info("C1 %s: %.1fs", label or spec.name, secs)
    ok = cmp.max_rel_err <= MAX_REL_ERR and cmp.mean_rel_err <= MEAN_REL_ERR and fast
    detail = (f"max_rel_err={cmp.max_rel_err:.4f} (<= {MAX_REL_ERR}) "
              f"mean_rel_err={cmp.mean_rel_err:.4f} (<= {MEAN_REL_ERR}) "
              f"runtime<={MC_TIME_LIMIT:.0f}s:{'yes' if fast else 'no'}")
    return CheckResult("C1", f"variance-law oracle {label or spec.name}", ok, detail)


def check_c1(seed, cache):
    return [
        check_variance_oracle(_setting_spec(name, setting), seed, cache, f"{name}/{setting}")
        for name in ORACLE_ARCHS
        for setting in SETTINGS
    ]


def _perturb_stage0(spec):
    stage = spec.stages[0]
    blocks = tuple(
        replace(b, branch_gammas=tuple(0.5 + 1.5 * k for k in range(len(b.branch_gammas))))
        for b in stage.blocks
    )
    return replace(spec, stages=(StageSpec(blocks),) + spec.stages[1:])


def _zscore(diff, se):
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return abs(diff) / se


def check_c2(seed, cache):
    """Stage-1 downsampling erases everything upstream; its value is the reset formula."""
    a_spec = build_canonical("resnet18", 1.0, width=MC_CFG["width"])
    b_spec = _perturb_stage0(a_spec)
    pa, pb = varprop.full_profile(a_spec), varprop.full_profile(b_spec)
    first = pa.positions.index((1, 0))
    analytic_diff = max(
        max(abs(x - y) for x, y in zip(pa.out_var[first:], pb.out_var[first:])),
        max(abs(x - y) for x, y in zip(pa.skip_var[first + 1:], pb.skip_var[first + 1:])),
    )
    scale = max(pa.out_var[first:])
    analytic_ok = analytic_diff <= 1e-12 * scale and pa.out_var[first - 1] != pb.out_var[first - 1]

    cfg = simkernel.McConfig(seed=seed, **MC_CFG)
    ea, _ = cache.get(a_spec, cfg)
    eb, _ = cache.get(b_spec, cfg)
    z = max(
        _zscore(x - y, math.hypot(sx, sy))
        for x, y, sx, sy in zip(ea.out_var[first:], eb.out_var[first:], ea.stderr[first:], eb.stderr[first:])
    )
    block = a_spec.stages[1].blocks[0]
    reset = varprop.reset_downsample_v1(block.gamma_down, block.gamma_last)
    reset_err = abs(ea.out_var[first] - reset) / reset
    ok = analytic_ok and z <= 2.0 and reset_err <= MAX_REL_ERR
    detail = (f"analytic_max_diff={analytic_diff:.1e} (<= 1e-12) "
              f"empirical_max_z={z:.3f} (<= 2) reset_rel_err={reset_err:.4f} (<= {MAX_REL_ERR})")
    return [CheckResult("C2", "reset independence resnet18", ok, detail)]


def _shape_ok(profile):
    """Strict rise into every stage entry with a predecessor, strict fall within stages."""
    v, pos = profile.out_var, profile.positions
    for i in range(1, len(pos)):
        same_stage = pos[i][0] == pos[i - 1][0]
        if same_stage and not v[i] < v[i - 1]:
            return False
        if not same_stage and not v[i] > v[i - 1]:
            return False
    return True


def check_c3(seed, cache):
    results = []
    cfg = simkernel.McConfig(seed=seed, **MC_CFG)
    for name in ("resnet18", "resnet50"):
        spec = _setting_spec(name, "mixed")
        analytic = varprop.full_profile(spec)
        empirical, _ = cache.get(spec, cfg)
        a_sign = np.sign(np.diff(analytic.out_var))
        e_sign = np.sign(np.diff(empirical.out_var))
        mismatched = int(np.sum(a_sign != e_sign))
        shape = _shape_ok(analytic)
        ok = shape and mismatched == 0
        detail = (f"analytic_reset_then_decay={'yes' if shape else 'no'} "
                  f"mc_order_mismatches={mismatched}/{len(a_sign)} (== 0)")
        results.append(CheckResult("C3", f"reset/decay shape {name}/mixed", ok, detail))
    return results


def check_c4(seed):
    x = np.random.default_rng(seed).standard_normal(1_000_000)
    m = float(np.mean(simkernel.relu(x) ** 2))
    return [CheckResult("C4", "relu half second moment", 0.48 <= m <= 0.52,
                        f"E[relu(X)^2]={m:.5f} in [0.48, 0.52]")]


def check_c5(seed):
    x, w, target, d = efflr.make_problem(64, 1024, seed)
    y = efflr.intermediate_forward(x, d, w)
    l0 = efflr.loss(d, x, w, target)
    out_diff = loss_diff = 0.0
    for c in (0.1, 10.0):
        out_diff = max(out_diff, float(np.max(np.abs(efflr.intermediate_forward(x, c * d, w) - y))))
        loss_diff = max(loss_diff, abs(efflr.loss(c * d, x, w, target) - l0))
    ok = out_diff <= 1e-8 and loss_diff <= 1e-10
    return [CheckResult("C5", "scale invariance", ok,
                        f"max_output_diff={out_diff:.1e} (<= 1e-8) loss_diff={loss_diff:.1e} (<= 1e-10)")]


def check_c6(seed):
    x, w, target, d = efflr.make_problem(64, 1024, seed)
    base = float(np.linalg.norm(efflr.grad_gamma(d, x, w, target)))
    worst = 0.0
    for c in (0.5, 2.0, 4.0):
        scaled = c * float(np.linalg.norm(efflr.grad_gamma(c * d, x, w, target)))
        worst = max(worst, abs(scaled - base) / base)
    return [CheckResult("C6", "gradient scales as 1/||gamma||", worst <= 0.01,
                        f"max_rel_dev={worst:.1e} (<= 0.01)")]


def check_c7(seed):
    t0 = time.perf_counter()
    fits = [efflr.update_norm_experiment(efflr.DEFAULT_SCALES, 64, 1024, efflr.DEFAULT_ETA, s).fit
            for s in (seed, seed + 1, seed + 2)]
    secs = time.perf_counter() - t0
    log.info("C7: %.1fs", secs)
    ok = all(-2.2 <= f.slope <= -1.8 and f.r2 >= 0.99 for f in fits) and secs <= EFFLR_TIME_LIMIT
    slopes = ",".join(f"{f.slope:.4f}" for f in fits)
    r2 = min(f.r2 for f in fits)
    return [CheckResult("C7", "effective-lr slope", ok,
                        f"slopes=[{slopes}] in [-2.2, -1.8] min_r2={r2:.5f} (>= 0.99) "
                        f"runtime<={EFFLR_TIME_LIMIT:.0f}s:{'yes' if secs <= EFFLR_TIME_LIMIT else 'no'}")]


def check_c8(seed):
    R = classify.GammaRole
    want = {
        "resnet50": (1, 16, 4, 32),
        "resnet18": (1, 8, 3, 8),
    }
    ok = True
    parts = []
    for name, expected in want.items():
        counts = classify.role_counts(build_canonical(name))
        got = (counts[R.GAMMA0], counts[R.GAMMA_LAST], counts[R.GAMMA_DOWN], counts[R.GAMMA_OTHERS])
        ok &= got == expected
        parts.append(f"{name}={got}")
    spec = build_canonical("resnet18")
    for policy in ("guidelines", "all", "weights-only"):
        a = classify.make_plan(spec, 1e-4, policy).to_json()
        b = classify.make_plan(build_canonical("resnet18"), 1e-4, policy).to_json()
        ok &= a == b
    parts.append("plans_byte_stable=" + ("yes" if ok else "no"))
    return [CheckResult("C8", "classification counts", ok, " ".join(parts))]


def check_c9(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(1000):
        var_s = float(rng.uniform(0.0, 10.0))
        gammas = rng.uniform(0.0, 3.0, size=int(rng.integers(0, 40))).tolist()
        rec = varprop.propagate_v1(var_s, gammas)
        closed = varprop.propagate_v1_closed(var_s, gammas)
        if len(rec) != len(closed):
            worst = math.inf
            break
        for r, c in zip(rec, closed):
            worst = max(worst, abs(r - c) / max(abs(c), 1e-300))
    return [CheckResult("C9", "closed form vs recurrence", worst <= 1e-12,
                        f"max_rel_diff={worst:.1e} (<= 1e-12) over 1000 instances")]


def _run_cli(argv):
    from .cli import main

    buf = io.StringIO()
    with redirect_stdout(buf):
        status = main(argv)
    return status, buf.getvalue()


def check_c10(seed):
    """Every CLI command twice with the same seed; stdout and files must match."""
    with tempfile.TemporaryDirectory() as tmp:
        arch = Path(tmp) / "r18.json"
        outputs = []
        for attempt in range(2):
            out = Path(tmp) / f"gen{attempt}.json"
            runs = [
                ["gen", "resnet18", "--gamma", "1.0", "-o", str(out)],
                ["plan", str(arch), "--lambda", "1e-4", "--policy", "guidelines"],
                ["plan", str(arch), "--lambda", "1e-4", "--policy", "all", "--format", "table"],
                ["varprop", str(arch)],
                ["simulate", str(arch), "--batch", "256", "--trials", "2", "--width", "32",
                 "--seed", str(seed)],
                ["efflr", "--seed", str(seed), "--width", "16", "--batch", "128"],
            ]
            if attempt == 0:
                _run_cli(["gen", "resnet18", "--gamma", "1.0", "-o", str(arch)])
            result = []
            for argv in runs:
                status, text = _run_cli(argv)
                result.append((status, text.replace(str(out), "<out>")))
            result.append(out.read_bytes())
            outputs.append(result)
    same = outputs[0] == outputs[1]
    n = len(outputs[0])
    return [CheckResult("C10", "cli determinism", same, f"{n} outputs byte-identical={'yes' if same else 'no'}")]


CHECKS = {
    1: check_c1,
    2: check_c2,
    3: check_c3,
    4: check_c4,
    5: check_c5,
    6: check_c6,
    7: check_c7,
    8: check_c8,
    9: check_c9,
    10: check_c10,
}
_NEEDS_CACHE = {1, 2, 3}


def run_checks(seed=0, only=None, extra_specs=(), cache=None):
    """Run the selected criteria (all by default); returns a list of results."""
    cache = cache or _McCache()
    results = []
    for key, fn in CHECKS.items():
        if only is not None and key not in only:
            continue
        results.extend(fn(seed, cache) if key in _NEEDS_CACHE else fn(seed))
    for label, spec in extra_specs:
        results.append(check_variance_oracle(spec, seed, cache, label))
    return results
