"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or under pytest; the
pytest run also repeats the lines in the terminal summary.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import base_config, random_spec, scalar_spec  # noqa: E402

from periodic_sde import (  # noqa: E402
    Budget,
    NoiseSpec,
    SigmaSequence,
    Thresholds,
    classify_regime,
    closed_form,
    empirical_lp_norm,
    fundamental_product,
    limit_tracking_error,
    make_unit_multiplier_path,
    martingale_variance,
    multiplier,
    periodicity_defect,
    run_ensemble,
    simulate,
)
from periodic_sde.analysis import required_horizon  # noqa: E402
from periodic_sde.cli import main  # noqa: E402

RESULTS = {}


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} | {detail}"
    RESULTS[number] = line
    print(line, flush=True)
    assert ok, line


def rel_within(a, b, rel, floor):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    diff = np.abs(a - b)
    return bool(np.all((diff <= rel * np.abs(b)) | (diff <= floor)))


def scaled_err(a, b):
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# ---------------------------------------------------------------- 1


def test_exactness_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20261014)
    laws = ["rademacher", "uniform", "gaussian"]
    worst_cf = worst_cocycle = worst_shift = 0.0
    failures = 0
    for i in range(100):
        d = int(rng.integers(1, 4))
        K = int(rng.integers(1, 6))
        horizon = int(rng.integers(1, 2001))
        target = float(rng.choice([0.8, 0.95, 1.0, 1.02]))
        spec = random_spec(
            target,
            K=K,
            d=d,
            sigma=SigmaSequence.power(float(rng.uniform(0.5, 2.5))),
            noise=NoiseSpec(laws[i % 3]),
            x0=float(rng.uniform(-2, 2)),
        )
        traj = simulate(spec, seed=i, path_index=0, horizon=horizon)
        path = traj.coefficients
        ns = np.unique(np.r_[np.arange(min(horizon, 5) + 1), rng.integers(0, horizon + 1, 10), horizon])
        for n in ns:
            cf = closed_form(spec, path, traj.noise, int(n))
            x = traj.states[n]
            if not rel_within(cf, x, 1e-9, 1e-12):
                failures += 1
            nz = np.abs(x) > 1e-12
            if nz.any():
                worst_cf = max(worst_cf, float(np.max(np.abs(cf - x)[nz] / np.abs(x)[nz])))
        L = multiplier(path)
        for _ in range(5):
            k, m, n = sorted(int(v) for v in rng.integers(0, 501, 3))
            prod = np.atleast_2d(fundamental_product(path, m, n)) @ np.atleast_2d(fundamental_product(path, k, m))
            worst_cocycle = max(worst_cocycle, scaled_err(prod, fundamental_product(path, k, n)))
            worst_shift = max(
                worst_shift,
                scaled_err(fundamental_product(path, k, n + K), L * np.atleast_2d(fundamental_product(path, k, n))),
            )
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and worst_cocycle <= 1e-10 and worst_shift <= 1e-10 and elapsed < 10.0
    record(
        1,
        "closed form vs recursion, cocycle, period shift",
        ok,
        f"closed-form misses={failures} max rel={worst_cf:.2e}; cocycle={worst_cocycle:.2e}; "
        f"shift={worst_shift:.2e}; {elapsed:.2f}s",
    )


# ---------------------------------------------------------------- 2


def test_decay_below_unit_multiplier():
    t0 = time.perf_counter()
    spec = random_spec(0.9, K=2, sigma=SigmaSequence.power(1.0), noise=NoiseSpec("rademacher"), x0=1.0)
    ens = run_ensemble(spec, 0, 10_000, 2000, record=[200, 2000])
    early, late = empirical_lp_norm(ens, 200), empirical_lp_norm(ens, 2000)
    elapsed = time.perf_counter() - t0
    ok = late.value < 0.05 and late.value < 0.5 * early.value and elapsed < 30.0
    record(
        2,
        "L2 norm decays for L = 0.9",
        ok,
        f"||X_2000||={late.value:.4g}±{late.stderr:.1g}, ||X_200||={early.value:.4g}; {elapsed:.2f}s",
    )


# ---------------------------------------------------------------- 3


def test_growth_above_unit_multiplier():
    spec = random_spec(1.1, K=2, sigma=SigmaSequence.power(1.0), noise=NoiseSpec("gaussian"), x0=0.0)
    ens = run_ensemble(spec, 0, 1000, 500, record=[250, 500])
    a, b = empirical_lp_norm(ens, 250), empirical_lp_norm(ens, 500)
    ok = b.value > 5 * a.value
    record(
        3,
        "L2 norm grows for L = 1.1",
        ok,
        f"||X_500||={b.value:.4g} (diverged {b.diverged}), ||X_250||={a.value:.4g}, ratio={b.value / a.value:.3g}",
    )


# ---------------------------------------------------------------- 4


def defect_suite(spec, paths=1000):
    K = spec.period
    ens = run_ensemble(spec, 0, paths, 1000 + K, record=[100, 100 + K, 1000, 1000 + K])
    d0, d1 = periodicity_defect(ens, 100), periodicity_defect(ens, 1000)
    ok = all(late < 1e-2 and late < 0.5 * early for early, late in ((d0.value, d1.value), (d0.maximum, d1.maximum)))
    detail = f"L2 defect {d1.value:.3g} vs {d0.value:.3g}; max defect {d1.maximum:.3g} vs {d0.maximum:.3g}"
    return ok, detail


def test_periodicity_defect_vanishes():
    spec = scalar_spec([1.0, -0.5], SigmaSequence.power(2.0), NoiseSpec("rademacher"), x0=1.0)
    ok, detail = defect_suite(spec)
    record(4, "periodicity defect vanishes for a = (1, -0.5)", ok, detail)


# ---------------------------------------------------------------- 5


def test_limit_tracking():
    spec = scalar_spec([1.0, -0.5], SigmaSequence.power(2.0), NoiseSpec("rademacher"), x0=1.0)
    tol = 1e-4
    H = required_horizon(spec, 0, 1000, tol)
    ens = run_ensemble(spec, 0, 1000, H, record=[1000, H])
    est = limit_tracking_error(ens, 1000, 2.0, tol)
    mc_ok = est.value < 1e-2 and est.maximum < 1e-2
    flat = scalar_spec([0.0], SigmaSequence.geometric(0.5), NoiseSpec("explicit", values=(1.0,)), x0=1.0)
    det = run_ensemble(flat, 0, 4, 60)
    rows = [limit_tracking_error(det, n, 2.0, 1e-17) for n in range(51)]
    exact = all(r.value == 2.0**-n and r.maximum == 2.0**-n for n, r in enumerate(rows))
    record(
        5,
        "tracking of the periodic limit",
        mc_ok and exact,
        f"truncation at n*={H}, budget={est.budget:.2g}; L2 error {est.value:.3g}, max {est.maximum:.3g}; "
        f"a=0 rows exactly 2^-n for n<=50: {exact}",
    )


# ---------------------------------------------------------------- 6


@pytest.mark.parametrize("law", ["rademacher", "gaussian"])
def test_martingale_variance(law):
    sigma = SigmaSequence.geometric(0.5)
    est = martingale_variance(sigma, NoiseSpec(law), 0, 100_000, 40)
    gap = abs(est.value - 1 / 3)
    ok = gap <= 3 * est.stderr
    key = "6a" if law == "rademacher" else "6b"
    record(key, f"Var(M_40) matches 1/3 ({law})", ok, f"Var={est.value:.6f}, |gap|={gap:.2e}, 3se={3 * est.stderr:.2e}")


# ---------------------------------------------------------------- 7


def test_matrix_unit_multiplier():
    worst = 0.0
    for seed in range(50):
        path = make_unit_multiplier_path(2, 3, seed, 1.0)
        prod = fundamental_product(path, 0, 3)
        worst = max(
            worst, float(np.max(np.abs(prod - multiplier(path) * np.eye(2)))), float(np.max(np.abs(prod - np.eye(2))))
        )
    spec = random_spec(1.0, K=2, d=2, sigma=SigmaSequence.power(2.0), noise=NoiseSpec("rademacher"), x0=1.0)
    ok_defect, detail = defect_suite(spec)
    record(
        7,
        "matrix period product is L*I, defect suite at d = 2",
        worst <= 1e-12 and ok_defect,
        f"max |prod - I| over 50 seeds={worst:.2e}; {detail}",
    )


# ---------------------------------------------------------------- 8


def test_classifier_soundness():
    expected = {0.5: "decay", 1.0: "periodic-limit", 1.5: "divergence"}
    correct = inconclusive = 0
    wrong = []
    for target, verdict in expected.items():
        spec = random_spec(target, K=2, sigma=SigmaSequence.power(2.0), noise=NoiseSpec("rademacher"), x0=1.0)
        for seed in range(20):
            rep = classify_regime(spec, seed, Budget(200, 2000), Thresholds(tolerance=1e-3))
            if rep.verdict == verdict:
                correct += 1
            else:
                wrong.append((target, seed, rep.verdict))
                inconclusive += rep.verdict == "inconclusive"
    record(
        8,
        "classifier verdicts for L in {0.5, 1, 1.5}",
        correct == 60,
        f"{correct}/60 correct, {inconclusive} inconclusive" + (f", misses {wrong[:3]}" if wrong else ""),
    )


# ---------------------------------------------------------------- 9


def test_cli_reruns_are_byte_identical(tmp_path):
    explicit = base_config(
        mc={"paths": 100, "horizon": 500, "seed": 11}, analysis={"tolerance": 1e-3, "checkpoints": [50, 250]}
    )
    randomized = json.loads(json.dumps(explicit))
    randomized["model"]["coefficients"] = {"kind": "target_L", "target_L": 1.0}
    randomized["sweep"] = {"target_L": [0.9, 1.0, 1.1], "sigma_exponent": [2.0]}
    decay = json.loads(json.dumps(randomized))
    decay["model"]["coefficients"]["target_L"] = 0.9
    grow = json.loads(json.dumps(randomized))
    grow["model"]["coefficients"]["target_L"] = 1.1
    runs = [
        (explicit, ["simulate"]),
        (explicit, ["classify"]),
        (decay, ["verify", "--which", "T1i"]),
        (grow, ["verify", "--which", "T1ii"]),
        (explicit, ["verify", "--which", "T1iii"]),
        (explicit, ["verify", "--which", "T1iv"]),
        (explicit, ["verify", "--which", "T2"]),
        (explicit, ["verify", "--which", "T3"]),
        (explicit, ["verify", "--which", "P1"]),
        (randomized, ["sweep"]),
        (randomized, ["classify", "--seed", "18446744073709551615"]),
    ]
    compared, mismatched = 0, []
    for i, (cfg, argv) in enumerate(runs):
        path = tmp_path / f"cfg{i}.json"
        path.write_text(json.dumps(cfg, indent=2) + "\n")
        outs = [tmp_path / f"run{i}_{r}" for r in (0, 1)]
        codes = [main([*argv, "--config", str(path), "--out", str(o)]) for o in outs]
        files = sorted(p.name for p in outs[0].iterdir()) if outs[0].exists() else []
        if codes[0] != codes[1] or not files or files != sorted(p.name for p in outs[1].iterdir()):
            mismatched.append(" ".join(argv))
            continue
        for name in files:
            compared += 1
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                mismatched.append(f"{' '.join(argv)}:{name}")
    record(
        9,
        "byte-identical reruns of every command",
        not mismatched,
        f"{compared} files compared across {len(runs)} commands" + (f", mismatches {mismatched}" if mismatched else ""),
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
