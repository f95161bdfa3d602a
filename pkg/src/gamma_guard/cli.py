"""Command-line interface: ``gamma-guard <command> ...``.

Exit status: 0 success, 1 bad input, 2 a numerical check failed, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import acceptance, classify, efflr, simkernel, varprop
from ._jsonio import dumps
from .archspec import ArchError, CANONICAL_NAMES, build_canonical, parse_arch, serialize

log = logging.getLogger("gamma_guard")

OK, INPUT_ERROR, CHECK_FAILED, INTERNAL_ERROR = 0, 1, 2, 3
SLOPE_RANGE = (-2.2, -1.8)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _scales(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None


def _criteria(text):
    try:
        return {int(s) for s in text.split(",") if s.strip()}
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad criteria list {text!r}") from None


def _load(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    return parse_arch(text)


def _emit(text, out_path=None):
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
        print(out_path)
    else:
        sys.stdout.write(text)


def cmd_gen(args):
    try:
        spec = build_canonical(args.name, args.gamma, width=args.width)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(serialize(spec), args.output)
    return OK


def cmd_plan(args):
    plan = classify.make_plan(_load(args.arch), args.lam, args.policy)
    _emit(plan.to_table() if args.format == "table" else plan.to_json(), args.output)
    return OK


def cmd_varprop(args):
    profile = varprop.full_profile(_load(args.arch), args.input_var)
    if args.format == "table":
        text = profile.to_table(dominance=True)
    else:
        text = profile.to_json(dominance=True)
    _emit(text, args.output)
    return OK


def cmd_simulate(args):
    spec = _load(args.arch)
    cfg = simkernel.McConfig(batch=args.batch, width=args.width, trials=args.trials, seed=args.seed)
    analytic = varprop.full_profile(spec, args.input_var)
    empirical = simkernel.mc_variance_profile(spec, cfg, args.input_var)
    cmp = simkernel.compare_profiles(analytic, empirical)
    passed = cmp.max_rel_err <= args.threshold
    if args.format == "table":
        text = (f"# seed={cfg.seed} batch={cfg.batch} trials={cfg.trials} "
                f"width={cfg.width or spec.width}\n"
                + "# analytic\n" + analytic.to_table()
                + "# empirical\n" + empirical.to_table()
                + f"# max_rel_err={cmp.max_rel_err:.6f} mean_rel_err={cmp.mean_rel_err:.6f} "
                  f"threshold={args.threshold} {'PASS' if passed else 'FAIL'}\n")
    else:
        text = dumps({
            "seed": cfg.seed,
            "config": {"batch": cfg.batch, "width": cfg.width or spec.width, "trials": cfg.trials},
            "analytic": analytic.to_dict(),
            "empirical": empirical.to_dict(),
            "comparison": cmp.to_dict(),
            "threshold": args.threshold,
            "passed": passed,
        })
    _emit(text, args.output)
    return OK if passed else CHECK_FAILED


def cmd_efflr(args):
    result = efflr.update_norm_experiment(args.scales, args.width, args.batch, args.eta, args.seed)
    lo, hi = SLOPE_RANGE
    passed = lo <= result.fit.slope <= hi
    if args.format == "table":
        lines = [f"# seed={result.seed} eta={result.eta!r}", f"{'scale':>10} {'update_norm':>14}"]
        lines += [f"{c:>10.4g} {n:>14.6e}" for c, n in result.points]
        f = result.fit
        lines.append(f"# slope={f.slope:.6f} intercept={f.intercept:.6f} r2={f.r2:.6f} "
                     f"{'PASS' if passed else 'FAIL'}")
        text = "\n".join(lines) + "\n"
    else:
        text = result.to_json()
    _emit(text, args.output)
    return OK if passed else CHECK_FAILED


def cmd_verify(args):
    extra = []
    if args.arch:
        spec = _load(args.arch)
        extra.append((f"{spec.name} ({Path(args.arch).name})", spec))
    unknown = (args.only or set()) - set(acceptance.CHECKS)
    if unknown:
        raise UsageError(f"unknown criteria: {sorted(unknown)}")
    print(f"seed: {args.seed}")
    sys.stdout.flush()
    results = []
    for r in acceptance.run_checks(args.seed, args.only, extra):
        print(r.line())
        results.append(r)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return OK if failed == 0 else CHECK_FAILED


def build_parser():
    p = _Parser(prog="gamma-guard", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt=True):
        if fmt:
            sp.add_argument("--format", choices=("json", "table"), default="json")
        sp.add_argument("-o", "--output", metavar="PATH", help="write to PATH instead of stdout")

    g = sub.add_parser("gen", help="write a canonical architecture file")
    g.add_argument("name", help=f"one of {', '.join(CANONICAL_NAMES)}")
    g.add_argument("--gamma", type=float, default=1.0, help="initial value of every gamma")
    g.add_argument("--width", type=_positive_int, default=256)
    common(g, fmt=False)
    g.set_defaults(func=cmd_gen)

    pl = sub.add_parser("plan", help="per-gamma L2 decay plan")
    pl.add_argument("arch")
    pl.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    pl.add_argument("--policy", choices=("guidelines", "all", "weights-only"), default="guidelines")
    common(pl)
    pl.set_defaults(func=cmd_plan)

    vp = sub.add_parser("varprop", help="analytic variance profile")
    vp.add_argument("arch")
    vp.add_argument("--input-var", type=float, default=None)
    common(vp)
    vp.set_defaults(func=cmd_varprop)

    sm = sub.add_parser("simulate", help="Monte Carlo profile compared with the analytic one")
    sm.add_argument("arch")
    sm.add_argument("--batch", type=_positive_int, default=8192)
    sm.add_argument("--trials", type=_positive_int, default=8)
    sm.add_argument("--width", type=_positive_int, default=None)
    sm.add_argument("--seed", type=_seed, default=0)
    sm.add_argument("--threshold", type=float, default=0.15)
    sm.add_argument("--input-var", type=float, default=None)
    common(sm)
    sm.set_defaults(func=cmd_simulate)

    ef = sub.add_parser("efflr", help="first-update norm vs gamma scale")
    ef.add_argument("--scales", type=_scales, default=list(efflr.DEFAULT_SCALES))
    ef.add_argument("--width", type=_positive_int, default=64)
    ef.add_argument("--batch", type=_positive_int, default=1024)
    ef.add_argument("--eta", type=float, default=efflr.DEFAULT_ETA)
    ef.add_argument("--seed", type=_seed, default=0)
    common(ef)
    ef.set_defaults(func=cmd_efflr)

    vf = sub.add_parser("verify", help="run the acceptance checks")
    vf.add_argument("arch", nargs="?", help="also check this architecture against the MC oracle")
    vf.add_argument("--seed", type=_seed, default=0)
    vf.add_argument("--only", type=_criteria, default=None, metavar="N,M", help="run only these criteria")
    vf.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"gamma-guard: error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ArchError, ValueError) as exc:
        print(f"gamma-guard: error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    except Exception as exc:  # noqa: BLE001
        print(f"gamma-guard: internal error: {exc!r}", file=sys.stderr)
        return INTERNAL_ERROR


def run():
    sys.exit(main())
