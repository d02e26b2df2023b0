"""Command-line front end: classify problem files, run the Monte Carlo
cross-check, and exercise the built-in corpus.

Exit codes: 0 verdict produced; 1 validation/IO/flag problems; 2 a
required integrability decision was inconclusive; 3 Monte Carlo evidence
contradicts the classifier (with --check); 4 self-test failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import classify as cls
from . import mc, quad
from .expr import DomainFault

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_UNDECIDABLE = 2
EXIT_CONTRADICTION = 3
EXIT_SELFTEST = 4

# verdict expectations for the bundled corpus: (name, problem, level,
# expected MC outcome at t = 1)
BUILTIN_CORPUS = [
    ("free_reciprocal", {
        "interval": {"left": "-inf", "right": "+inf"}, "x0": 1.0,
        "mu": "0", "sigma": "1", "b": "1/x"},
     "martingale", mc.OUTCOME_CONSISTENT),
    ("capped_reciprocal", {
        "interval": {"left": "-inf", "right": 2.0}, "x0": 1.0,
        "mu": "0", "sigma": "1", "b": "1/x"},
     "uniformly_integrable_martingale", mc.OUTCOME_CONSISTENT),
    ("bessel3_reciprocal", {
        "interval": {"left": 0.0, "right": "+inf"}, "x0": 1.0,
        "mu": "1/x", "sigma": "1", "b": "-1/x"},
     "strict_local_martingale", mc.OUTCOME_DEFICIT),
    ("jump_to_zero", {
        "interval": {"left": "-inf", "right": "+inf"}, "x0": 1.0,
        "mu": "0", "sigma": "1", "b": "abs(x)^(-3/4)"},
     "not_local_martingale", mc.OUTCOME_DEFICIT),
    ("zero_exponent", {
        "interval": {"left": "-inf", "right": "+inf"}, "x0": 0.0,
        "mu": "0", "sigma": "1", "b": "0"},
     "uniformly_integrable_martingale", mc.OUTCOME_CONSISTENT),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _add_globals(p, root: bool) -> None:
    # registered on the root parser and every subparser so the flags work
    # in either position; subparser defaults are suppressed so they never
    # clobber values given before the subcommand
    d = (lambda v: v) if root else (lambda v: argparse.SUPPRESS)
    p.add_argument("--tol", type=float, default=d(1e-8),
                   help="quadrature tolerance (default 1e-8)")
    p.add_argument("--eps-cls", type=float, default=d(quad.EPS_CLS_DEFAULT),
                   help="integrability classification margin (default 0.05)")
    p.add_argument("--report", type=Path, default=d(None),
                   help="write a JSON run report to this path")
    p.add_argument("--quiet", action="store_true",
                   default=d(False) if root else argparse.SUPPRESS,
                   help="suppress the human-readable summary")


def _build_parser() -> _Parser:
    p = _Parser(prog="diffmart", description=__doc__)
    _add_globals(p, root=True)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pc = sub.add_parser("classify",
                        help="deterministic verdict for a problem file")
    _add_globals(pc, root=False)
    pc.add_argument("file", type=Path)

    ps = sub.add_parser("simulate",
                        help="Monte Carlo estimates of E[Z_t]")
    _add_globals(ps, root=False)
    ps.add_argument("file", type=Path)
    ps.add_argument("--paths", type=int, default=10000)
    ps.add_argument("--dt", type=float, default=1e-3)
    ps.add_argument("--horizon", type=float, default=1.0)
    ps.add_argument("--seed", type=int, default=42)
    ps.add_argument("--times", type=str, default=None,
                    help="comma-separated evaluation times (default: horizon)")
    ps.add_argument("--truncation-radius", type=float, default=100.0)
    ps.add_argument("--check", action="store_true",
                    help="compare the Monte Carlo outcome with the verdict")

    pt = sub.add_parser("selftest",
                        help="run the built-in corpus")
    _add_globals(pt, root=False)
    pt.add_argument("--corpus", type=Path, default=None,
                    help="directory of problem+expectation JSON files")
    pt.add_argument("--paths", type=int, default=10000)
    return p


def _load_problem(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise _CliError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise _CliError(f"{path} is not valid JSON: {exc}")


class _CliError(Exception):
    pass


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=1)


def _write_report(path: Path | None, report: dict) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical_json(report) + "\n")


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def cmd_classify(args) -> int:
    raw = _load_problem(args.file)
    t0 = time.time()
    try:
        spec = cls.build_problem(raw)
        verdict = cls.classify(spec, eps_cls=args.eps_cls)
    except cls.SingularStartError as exc:
        verdict = exc.verdict
        spec = None
        _say(args, f"note: {exc}")
    report = {
        "tool": {"name": "diffmart", "version": __version__},
        "config": {"problem": raw, "tol": args.tol, "eps_cls": args.eps_cls},
        "certificate": cls.certificate_dict(verdict),
        "wall_time_s": time.time() - t0,
    }
    _say(args, f"verdict: {verdict.level}")
    if not args.quiet:
        for c in verdict.conditions:
            print(f"  [{'x' if c.holds else ' '}] {c.id}")
    _write_report(args.report, report)
    return EXIT_OK


def _sim_config(args) -> mc.SimConfig:
    return mc.SimConfig(horizon=args.horizon, dt=args.dt,
                        n_paths=args.paths, seed=args.seed,
                        truncation_radius=args.truncation_radius)


def cmd_simulate(args) -> int:
    raw = _load_problem(args.file)
    t0 = time.time()
    spec = cls.build_problem(raw)
    cfg = _sim_config(args)
    if args.times:
        try:
            times = [float(s) for s in args.times.split(",") if s.strip()]
        except ValueError:
            raise _CliError(f"--times: cannot parse {args.times!r}")
        if not times:
            raise _CliError("--times: no values given")
    else:
        times = [args.horizon]
    A = cls.singular_set(spec, eps_cls=args.eps_cls)
    bundle = mc.simulate_Z(spec, A, cfg, times)
    text = mc.format_sample_report(bundle)
    if not args.quiet:
        sys.stdout.write(text)
    t_last = float(bundle.times[-1])
    est = mc.estimate_mean(bundle, t_last)
    if est.std_error == 0.0:
        z = 0.0 if est.mean >= 1.0 else math.inf
    else:
        z = (1.0 - est.mean) / est.std_error
    outcome = mc.OUTCOME_DEFICIT if z > mc.Z_CRITICAL else mc.OUTCOME_CONSISTENT
    report = {
        "tool": {"name": "diffmart", "version": __version__},
        "config": {"problem": raw, "tol": args.tol, "eps_cls": args.eps_cls,
                   "paths": args.paths, "dt": args.dt,
                   "horizon": args.horizon, "seed": args.seed,
                   "times": times,
                   "truncation_radius": args.truncation_radius},
        "mc": {
            "backend": bundle.backend,
            "estimates": [
                {"t": float(t),
                 "mean": mc.estimate_mean(bundle, float(t)).mean,
                 "std_error": mc.estimate_mean(bundle, float(t)).std_error,
                 "n_truncated": bundle.n_truncated(float(t)),
                 "n_hit_singular": bundle.n_hit_singular(float(t)),
                 "n_exited": bundle.n_exited(float(t))}
                for t in bundle.times],
            "test": {"t": t_last, "z_score": z, "outcome": outcome,
                     "significance": 0.001, "caveat": mc.HEAVY_TAIL_CAVEAT},
            "notes": bundle.notes,
        },
        "wall_time_s": time.time() - t0,
    }
    code = EXIT_OK
    if args.check:
        verdict = cls.classify(spec, eps_cls=args.eps_cls)
        report["certificate"] = cls.certificate_dict(verdict)
        contradiction = (cls.level_at_least(verdict.level, cls.LEVEL_MARTINGALE)
                         and outcome == mc.OUTCOME_DEFICIT)
        report["mc"]["check"] = {
            "verdict": verdict.level,
            "contradiction": contradiction,
        }
        _say(args, f"verdict: {verdict.level}; mc outcome: {outcome}"
                   f" (z={z:.2f})")
        if contradiction:
            _say(args, "CONTRADICTION: mean deficit under a martingale verdict")
            code = EXIT_CONTRADICTION
    _write_report(args.report, report)
    return code


def _load_corpus(path: Path):
    files = sorted(path.glob("*.json"))
    if not files:
        raise _CliError(f"corpus directory {path} contains no *.json files")
    corpus = []
    for f in files:
        doc = _load_problem(f)
        try:
            corpus.append((doc.get("name", f.stem), doc["problem"],
                           doc["expected_level"], doc.get("mc_expect")))
        except KeyError as exc:
            raise _CliError(f"{f}: missing corpus field {exc}")
    return corpus


def cmd_selftest(args) -> int:
    corpus = _load_corpus(args.corpus) if args.corpus else BUILTIN_CORPUS
    rows = []
    all_ok = True
    for name, raw, expected_level, mc_expect in corpus:
        try:
            spec = cls.build_problem(raw)
            verdict = cls.classify(spec, eps_cls=args.eps_cls)
            level = verdict.level
        except cls.SingularStartError as exc:
            level = exc.verdict.level
            spec = None
        ok = level == expected_level
        outcome = "-"
        if mc_expect and spec is not None:
            cfg = mc.SimConfig(horizon=1.0, dt=1e-3, n_paths=args.paths,
                               seed=42)
            res = mc.martingale_test(spec, cfg, 1.0)
            outcome = res.outcome
            ok = ok and (outcome == mc_expect)
        rows.append((name, expected_level, level, mc_expect or "-", outcome,
                     "pass" if ok else "FAIL"))
        all_ok = all_ok and ok
    if not args.quiet:
        widths = [max(len(str(r[i])) for r in rows + [
            ("case", "expected", "got", "mc expected", "mc got", "result")])
            for i in range(6)]
        header = ("case", "expected", "got", "mc expected", "mc got", "result")
        for row in [header] + rows:
            print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    return EXIT_OK if all_ok else EXIT_SELFTEST


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "classify":
            return cmd_classify(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_selftest(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (cls.ValidationError, cls.EngelbertSchmidtError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except cls.UndecidableError as exc:
        print(f"undecidable: {exc}", file=sys.stderr)
        return EXIT_UNDECIDABLE
    except (cls.ConsistencyError, quad.QuadratureBudgetError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_UNDECIDABLE
    except DomainFault as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
