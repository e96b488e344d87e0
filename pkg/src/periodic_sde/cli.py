"""Command line front end.

    periodic-sde simulate|classify|verify|sweep --config run.json [--out DIR]
                 [--which TAG] [--seed U64]

Exit codes: 0 success, 1 config error, 2 I/O error, 3 inconclusive or failed
checks, 4 tag not applicable to the config, 5 budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    classify_regime,
    empirical_lp_norm,
    limit_tracking_error,
    martingale_variance,
    periodicity_defect,
    quadratic_variation,
    required_horizon,
    run_ensemble,
    tracking_truncation,
)
from .config import ConfigError, RunConfig, dumps_canonical, load_config, spec_hash
from .errors import BudgetError, HorizonError
from .generators import TAGS, validate
from .recurrence import simulate

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_INCONCLUSIVE = 3
EXIT_INAPPLICABLE = 4
EXIT_BUDGET = 5


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _write_csv(path: Path, header, rows, preamble=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if preamble:
            fh.write(preamble + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def _write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(obj))


def _prepare(out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    spec = cfg.model_spec()
    seed, paths, horizon = cfg.mc["seed"], cfg.mc["paths"], cfg.mc["horizon"]
    digest = spec_hash(spec)
    d = spec.dim
    header = ["n", *[f"x_{c}" for c in range(d)], "sigma", *[f"xi_{c}" for c in range(d)]]
    _prepare(out)
    for j in range(paths):
        traj = simulate(spec, seed, j, horizon)
        rows = []
        for n in range(traj.horizon + 1):
            xi = traj.noise[n - 1] if n >= 1 else [None] * d
            rows.append([n, *traj.states[n], traj.sigma[n], *xi])
        pre = f"# spec_sha256={digest} seed={seed} path={j}"
        if traj.diverged:
            pre += f" diverged_at={traj.diverged_at}"
        _write_csv(out / f"path_{j:05d}.csv", header, rows, pre)
    print(f"wrote {paths} trajectory file(s) to {out}")
    return EXIT_OK


def _report_json(report, spec, seed):
    return {
        "L": report.L,
        "predicted": report.predicted,
        "verdict": report.verdict,
        "diagnostics": [
            {"name": d.name, "horizon": d.horizon, "value": d.value, "stderr": d.stderr, "theoremTag": d.theorem_tag}
            for d in report.diagnostics
        ],
        "checks": report.checks,
        "notes": report.notes,
        "seed": seed,
        "spec_sha256": spec_hash(spec),
    }


def cmd_classify(cfg: RunConfig, out: Path) -> int:
    spec = cfg.model_spec()
    try:
        report = classify_regime(spec, cfg.mc["seed"], cfg.budget(), cfg.thresholds())
    except (BudgetError, HorizonError) as exc:
        raise CommandError(EXIT_BUDGET, str(exc)) from None
    doc = _report_json(report, spec, cfg.mc["seed"])
    _prepare(out)
    _write_json(out / "classify.json", doc)
    if "csv" in cfg.output["formats"]:
        _write_csv(
            out / "classify.csv",
            ["name", "horizon", "value", "stderr", "theoremTag"],
            [[d.name, d.horizon, d.value, d.stderr, d.theorem_tag] for d in report.diagnostics],
        )
    print(f"verdict: {report.verdict} (L = {_fmt(report.L)})")
    if report.verdict == "inconclusive" or not report.matches_prediction:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


# ---------------------------------------------------------------- verify


def _row(check, n, statistic, observed, threshold=None, passed=None):
    return {
        "check": check,
        "n": n,
        "statistic": statistic,
        "threshold": threshold,
        "observed": observed,
        "pass": passed,
    }


def _vanish_rows(name, early, late, v0, v1, th):
    ratio = v1 / v0 if v0 > 0 else (0.0 if v1 == 0 else math.inf)
    return [
        _row("trace", early, name, v0),
        _row("trace", late, name, v1),
        _row(f"{name}_below_epsilon", late, name, v1, th.epsilon, v1 < th.epsilon),
        _row(f"{name}_ratio", late, f"{name}({late})/{name}({early})", ratio, th.rho, v1 < th.rho * v0),
    ]


def _suite(cfg: RunConfig, tag: str):
    spec = cfg.model_spec()
    th = cfg.thresholds()
    seed, M, N = cfg.mc["seed"], cfg.mc["paths"], cfg.mc["horizon"]
    K, p, early = spec.period, th.p, N // 10
    cps = cfg.analysis["checkpoints"]
    if tag == "P1":
        est = martingale_variance(spec.sigma, spec.noise, seed, M, N)
        qv = quadratic_variation(spec.sigma, spec.noise, N)
        return [
            _row("trace", N, "quadratic_variation", qv),
            _row("trace", N, "variance_stderr", est.stderr),
            _row("variance_within_3se", N, "var_M_n", est.value, qv, abs(est.value - qv) <= 3 * est.stderr),
        ]
    if N // 10 < 1 or N < 10 * K:
        raise BudgetError(f"horizon {N} too short: need at least {10 * K}")
    if tag == "T1i":
        ens = run_ensemble(spec, seed, M, N, [early, N, *[c for c in cps if c <= N]])
        rows = [_row("trace", c, "lp_norm", empirical_lp_norm(ens, c, p).value) for c in cps if c <= N]
        v0, v1 = empirical_lp_norm(ens, early, p).value, empirical_lp_norm(ens, N, p).value
        return rows + _vanish_rows("lp_norm", early, N, v0, v1, th)
    if tag == "T1ii":
        grid = np.unique(np.r_[np.linspace(0, N, 41).astype(np.int64), [c for c in cps if c <= N]])
        ens = run_ensemble(spec, seed, M, N, grid)
        norms = {int(n): empirical_lp_norm(ens, int(n), p).value for n in grid}
        cut = max(n for n in norms if n <= N // 5)
        run0 = max(v for n, v in norms.items() if n <= cut)
        run1 = max(norms.values())
        ratio = math.inf if math.isinf(run1) else (run1 / run0 if run0 > 0 else math.inf)
        rows = [_row("trace", c, "lp_norm", norms[c]) for c in cps if c <= N]
        return rows + [
            _row("trace", cut, "running_max_lp_norm", run0),
            _row("trace", N, "running_max_lp_norm", run1),
            _row("running_max_growth", N, f"runmax({N})/runmax({cut})", ratio, th.growth, ratio >= th.growth),
        ]
    late = N - K
    defect_cps = [c for c in cps if c + K <= N]
    if tag in ("T1iii", "T1iv"):
        rec = [early, early + K, late, N, *defect_cps, *[c + K for c in defect_cps]]
        ens = run_ensemble(spec, seed, M, N, rec)
        d0, d1 = periodicity_defect(ens, early, K, p), periodicity_defect(ens, late, K, p)
        if tag == "T1iii":
            rows = [_row("trace", c, "defect", periodicity_defect(ens, c, K, p).value) for c in defect_cps]
            return rows + _vanish_rows("defect", early, late, d0.value, d1.value, th)
        rows = [_row("trace", c, "max_defect", periodicity_defect(ens, c, K, p).maximum) for c in defect_cps]
        return rows + _vanish_rows("max_defect", early, late, d0.maximum, d1.maximum, th)
    # T2 / T3 need the truncated limit of every path
    n_star = required_horizon(spec, seed, M, th.tolerance)
    cap = cfg.analysis["max_horizon"] or 50 * N
    if n_star > cap:
        raise BudgetError(f"limit truncation at tolerance {th.tolerance:g} needs horizon {n_star} > cap {cap}")
    n_trunc = tracking_truncation(n_star, N, K, cap)
    H = max(N, n_trunc)
    track_cps = [c for c in cps if c <= N]
    rec = [early, early + K, late, N, n_trunc, *track_cps, *defect_cps, *[c + K for c in defect_cps]]
    ens = run_ensemble(spec, seed, M, H, rec)

    def track(n):
        return limit_tracking_error(ens, n, p, th.tolerance, n_trunc)

    t0, t1 = track(early), track(late)
    rows = [_row("trace", n_trunc, "truncation_budget", t1.budget)]
    if tag == "T2":
        rows += [_row("trace", c, "lp_tracking_error", track(c).value) for c in track_cps]
        return rows + _vanish_rows("tracking", early, late, t0.value, t1.value, th)
    rows += [_row("trace", c, "max_tracking_error", track(c).maximum) for c in track_cps]
    d0, d1 = periodicity_defect(ens, early, K, p), periodicity_defect(ens, late, K, p)
    return (
        rows
        + _vanish_rows("max_tracking", early, late, t0.maximum, t1.maximum, th)
        + _vanish_rows("max_defect", early, late, d0.maximum, d1.maximum, th)
    )


def cmd_verify(cfg: RunConfig, out: Path, which: str) -> int:
    if which not in TAGS:
        raise ConfigError(f"--which must be one of {', '.join(TAGS)}")
    spec = cfg.model_spec()
    report = validate(spec)
    if not report.applies(which):
        raise CommandError(EXIT_INAPPLICABLE, f"{which} not applicable: {report.reason(which)}")
    try:
        rows = _suite(cfg, which)
    except (BudgetError, HorizonError) as exc:
        raise CommandError(EXIT_BUDGET, str(exc)) from None
    decisions = [r for r in rows if r["pass"] is not None]
    ok = all(r["pass"] for r in decisions)
    _prepare(out)
    cols = ["check", "n", "statistic", "threshold", "observed", "pass"]
    if "csv" in cfg.output["formats"]:
        _write_csv(out / f"verify_{which}.csv", cols, [[r[c] for c in cols] for r in rows])
    if "json" in cfg.output["formats"]:
        _write_json(
            out / f"verify_{which}.json",
            {"which": which, "passed": ok, "rows": rows, "seed": cfg.mc["seed"], "spec_sha256": spec_hash(spec)},
        )
    for r in decisions:
        print(
            f"{'PASS' if r['pass'] else 'FAIL'} {which} {r['check']}: observed {_fmt(r['observed'])}"
            f" threshold {_fmt(r['threshold'])}"
        )
    return EXIT_OK if ok else EXIT_INCONCLUSIVE


# ---------------------------------------------------------------- sweep

SWEEP_HEADER = [
    "grid_index",
    "target_L",
    "sigma_exponent",
    "n",
    "statistic",
    "value",
    "stderr",
    "theorem_tag",
    "verdict",
]


def _grid(cfg: RunConfig):
    sw = cfg.sweep
    if not sw or ("target_L" not in sw and "sigma_exponent" not in sw):
        return []
    grid = list(itertools.product(sw.get("target_L", [None]), sw.get("sigma_exponent", [None])))
    if grid and "target_L" in sw and cfg.model["coefficients"]["kind"] == "explicit":
        raise ConfigError("sweep.target_L needs random coefficients (kind target_L or unit_multiplier)")
    if grid and "sigma_exponent" in sw and cfg.sigma["kind"] != "power":
        raise ConfigError("sweep.sigma_exponent needs sigma kind power")
    return grid


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    grid = _grid(cfg)
    M = cfg.mc["paths"]
    budget = cfg.sweep["path_budget"] if cfg.sweep else 0
    if len(grid) * M > budget:
        raise CommandError(EXIT_BUDGET, f"sweep needs {len(grid)} x {M} paths, budget is {budget}")
    rows = []
    for i, (L, q) in enumerate(grid):
        model, sigma = cfg.model, cfg.sigma
        if L is not None:
            model = {**model, "coefficients": {"kind": "target_L", "target_L": L}}
        if q is not None:
            sigma = {**sigma, "exponent": q}
        point = cfg.replace(model=model, sigma=sigma)
        spec = point.model_spec()
        try:
            report = classify_regime(spec, point.mc["seed"], point.budget(), point.thresholds())
        except (BudgetError, HorizonError) as exc:
            raise CommandError(EXIT_BUDGET, f"grid point {i}: {exc}") from None
        eff_L = spec.expected_multiplier()
        eff_q = spec.sigma.exponent if spec.sigma.kind == "power" else None
        block = [
            [i, eff_L, eff_q, d.horizon, d.name, d.value, d.stderr, d.theorem_tag, report.verdict]
            for d in report.diagnostics
        ]
        block.append([i, eff_L, eff_q, point.mc["horizon"], "verdict", report.L, None, "", report.verdict])
        block.sort(key=lambda r: (r[3], r[4]))
        rows.extend(block)
    _prepare(out)
    _write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    print(f"wrote {len(grid)} grid point(s) to {out / 'sweep.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="periodic-sde", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=["simulate", "classify", "verify", "sweep"])
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    parser.add_argument("--which", help=f"statement tag for verify: {', '.join(TAGS)}")
    parser.add_argument("--seed", type=_u64, help="override mc.seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(mc={**cfg.mc, "seed": args.seed})
        out = Path(args.out if args.out is not None else cfg.output["directory"])
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "classify":
            return cmd_classify(cfg, out)
        if args.command == "verify":
            if args.which is None:
                raise ConfigError("verify needs --which")
            return cmd_verify(cfg, out, args.which)
        return cmd_sweep(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
