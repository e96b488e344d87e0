"""Monte Carlo ensembles, norm estimators and the regime classifier.

Expectations over the probability space are replaced by averages over ``M``
seeded paths. All ensemble-level sums go through ``math.fsum``, which is
correctly rounded and therefore independent of the order in which paths are
visited or how they were split across workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import zeta

from .coefficients import CoefficientPath, multiplier
from .errors import BudgetError, HorizonError, LimitUndefinedError, NoiseLawError, NonScalarProductError
from .generators import UNIT_TOL, ModelSpec, NoiseSpec, SigmaSequence, coefficient_path, noise_block, validate
from .recurrence import simulate_paths, tail_bound, truncation_horizon

__all__ = [
    "Ensemble",
    "Estimate",
    "Budget",
    "Thresholds",
    "Diagnostic",
    "RegimeReport",
    "worker_count",
    "run_ensemble",
    "empirical_lp_norm",
    "periodicity_defect",
    "limit_tracking_error",
    "required_horizon",
    "quadratic_variation",
    "martingale_variance",
    "predict_regime",
    "classify_regime",
]

CHUNK = 256


def worker_count() -> int:
    """Worker cap from ``PRL_THREADS``, defaulting to the machine's CPU count."""
    env = os.environ.get("PRL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"PRL_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError("PRL_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class Ensemble:
    """``M`` paths of one model; path ``j`` is ``simulate(spec, master_seed, j, horizon)``.

    Only the time indices in ``record`` are kept.
    """

    spec: ModelSpec
    master_seed: int
    horizon: int
    record: np.ndarray
    states: np.ndarray
    diverged_at: np.ndarray
    blocks: np.ndarray

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    def _slot(self, n: int) -> int:
        if n < 0 or n > self.horizon:
            raise HorizonError(f"index {n} outside ensemble horizon {self.horizon}", required=n)
        pos = int(np.searchsorted(self.record, n))
        if pos >= self.record.size or self.record[pos] != n:
            raise HorizonError(f"index {n} was not recorded")
        return pos

    def states_at(self, n: int) -> np.ndarray:
        return self.states[:, self._slot(n)]

    def diverged_by(self, n: int) -> np.ndarray:
        return (self.diverged_at >= 0) & (self.diverged_at <= n)

    def coefficient_path(self, j: int) -> CoefficientPath:
        return CoefficientPath(self.blocks[j])


def run_ensemble(
    spec: ModelSpec, master_seed: int, paths: int, horizon: int, record=None, workers: int | None = None
) -> Ensemble:
    """Simulate ``paths`` paths, fanning chunks out over a thread pool.

    Chunks are reassembled in path order, so the result is identical for any
    worker count.
    """
    if paths < 1:
        raise ValueError("an ensemble needs at least one path")
    workers = worker_count() if workers is None else workers
    record = np.arange(horizon + 1) if record is None else np.unique(np.asarray(record, dtype=np.int64))
    chunks = [range(s, min(s + CHUNK, paths)) for s in range(0, paths, CHUNK)]

    def run(chunk):
        return simulate_paths(spec, master_seed, chunk, horizon, record)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    states = np.concatenate([p[0] for p in parts])
    diverged = np.concatenate([p[1] for p in parts])
    blocks = np.concatenate([np.asarray(p[2]) for p in parts])
    return Ensemble(spec, int(master_seed), horizon, record, states, diverged, blocks)


@dataclass(frozen=True)
class Estimate:
    """An ensemble statistic.

    For finite ``p``, ``value`` is the empirical L_p norm with a jackknife
    standard error; for ``p = inf`` it is the ensemble maximum, a lower bound
    of the essential supremum, and ``stderr`` is NaN. ``maximum`` is always
    the ensemble maximum. ``budget`` is an additive error allowance carried
    over from truncated limits.
    """

    value: float
    stderr: float
    maximum: float
    n: int
    p: float
    diverged: int = 0
    budget: float = 0.0

    @property
    def lower_bound(self) -> bool:
        return math.isinf(self.p)


def _lp(values: np.ndarray, p: float, n: int, diverged: int, budget: float = 0.0) -> Estimate:
    if diverged:
        return Estimate(math.inf, math.nan, math.inf, n, p, diverged, budget)
    mx = float(values.max())
    if math.isinf(p):
        return Estimate(mx, math.nan, mx, n, p, 0, budget)
    M = values.size
    if mx == 0.0:
        return Estimate(0.0, 0.0 if M > 1 else math.nan, 0.0, n, p, 0, budget)
    # scale by the maximum so |X|^p cannot overflow on growing ensembles
    powered = (values / mx) ** p
    total = math.fsum(powered)
    value = mx * (total / M) ** (1.0 / p)
    if M < 2:
        return Estimate(value, math.nan, mx, n, p, 0, budget)
    loo = (np.maximum(total - powered, 0.0) / (M - 1)) ** (1.0 / p)
    centre = math.fsum(loo) / M
    se = mx * math.sqrt((M - 1) / M * math.fsum((loo - centre) ** 2))
    return Estimate(value, se, mx, n, p, 0, budget)


def _norms(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] == 1:
        return np.abs(x[..., 0])
    return np.sqrt(np.sum(x * x, axis=-1))


def empirical_lp_norm(ens: Ensemble, n: int, p: float = 2.0) -> Estimate:
    """``((1/M) sum_j |X_n^(j)|^p)^(1/p)``; ``+inf`` if any path diverged by ``n``."""
    _check_p(p)
    x = ens.states_at(n)
    div = int(ens.diverged_by(n).sum())
    return _lp(_norms(x) if not div else np.zeros(0), p, n, div)


def periodicity_defect(ens: Ensemble, n: int, K: int | None = None, p: float = 2.0) -> Estimate:
    """Empirical L_p norm and ensemble maximum of ``X_n - X_{n+K}``."""
    _check_p(p)
    K = ens.spec.period if K is None else K
    if n + K > ens.horizon:
        raise HorizonError(f"defect at {n} needs horizon {n + K}", required=n + K)
    div = int(ens.diverged_by(n + K).sum())
    if div:
        return _lp(np.zeros(0), p, n, div)
    return _lp(_norms(ens.states_at(n) - ens.states_at(n + K)), p, n, 0)


def _unit_paths(ens: Ensemble):
    if ens.spec.coefficients.is_random:
        paths = [ens.coefficient_path(j) for j in range(ens.paths)]
    else:
        paths = [coefficient_path(ens.spec)] * ens.paths
    for path in set(paths):
        L = multiplier(path)
        if abs(L - 1.0) > UNIT_TOL:
            raise LimitUndefinedError(f"limit process undefined: L = {L:.17g} != 1")
    return paths


def required_horizon(spec: ModelSpec, master_seed: int, paths: int, tolerance: float) -> int:
    """Horizon at which every path's truncated limit meets ``tolerance``."""
    if spec.coefficients.is_random:
        cps = {coefficient_path(spec, master_seed, j) for j in range(paths)}
    else:
        cps = {coefficient_path(spec)}
    return max(truncation_horizon(spec, cp, tolerance)[0] for cp in cps)


def limit_tracking_error(
    ens: Ensemble, n: int, p: float = 2.0, tolerance: float = 1e-4, truncate_at: int | None = None
) -> Estimate:
    """Empirical L_p norm and maximum of ``X_n - Q_n`` with per-path limits.

    Each path's ``Ybar`` is its own state at a common truncation horizon, the
    first multiple of K at which every path's tail bound is within
    ``tolerance``. ``truncate_at`` pushes that horizon later (rounded up to a
    multiple of K), which only tightens the tail. ``budget`` bounds the
    resulting error in ``Q_n``.
    """
    _check_p(p)
    paths = _unit_paths(ens)
    bounds = {}
    for cp in set(paths):
        n_star, _, _, cb = truncation_horizon(ens.spec, cp, tolerance)
        bounds[cp] = (n_star, cb)
    common = max(v[0] for v in bounds.values())
    if truncate_at is not None:
        K = ens.spec.period
        common = max(common, -(-int(truncate_at) // K) * K)
    if common > ens.horizon:
        raise HorizonError(
            f"limit truncation at tolerance {tolerance:g} needs horizon {common}, ensemble has {ens.horizon}",
            required=common,
        )
    # recompute the tail at the common horizon, which may exceed some paths' own n*
    budget = 0.0
    for cp, (_, cb) in bounds.items():
        tail = tail_bound(ens.spec, cp, common)
        budget = max(budget, cb * tail)
    div = int(ens.diverged_by(max(n, common)).sum())
    if div:
        return _lp(np.zeros(0), p, n, div, budget)
    ybar = ens.states_at(common)
    m = n % ens.spec.period
    b0m = _batched_product(ens.blocks, m)
    q = np.einsum("mij,mj->mi", b0m, ybar)
    return _lp(_norms(ens.states_at(n) - q), p, n, 0, budget)


def tracking_truncation(n_star: int, horizon: int, period: int, cap: int) -> int:
    """Truncation index for tracking diagnostics evaluated up to ``horizon``.

    A limit truncated before the evaluation index only measures the noise
    between the two, so the truncation is moved to the first multiple of the
    period at or beyond ``2 * horizon`` when that fits under ``cap``.
    """
    target = -(-2 * horizon // period) * period
    return max(n_star, target) if target <= cap else n_star


def _batched_product(blocks: np.ndarray, m: int) -> np.ndarray:
    # b(0, m) for every path, sequential order as in fundamental_product
    M, K, d, _ = blocks.shape
    eye = np.eye(d)
    b = np.broadcast_to(eye, (M, d, d)).copy()
    for i in range(m):
        b = (eye + blocks[:, i % K]) @ b
    return b


def _check_p(p):
    if not p >= 1.0:
        raise ValueError("p must lie in [1, inf]")


def quadratic_variation(sigma: SigmaSequence, noise: NoiseSpec, n: int | None = None) -> float:
    """``<M_n> = sum_{i=1..n} sigma_i^2 Var(xi)``; ``n=None`` gives the limit.

    Only defined for iid centered noise.
    """
    if not (noise.random and noise.iid and noise.mean_zero):
        raise NoiseLawError("quadratic variation needs iid, centered (non-degenerate) noise")
    var = noise.variance
    if n is not None:
        if n < 0:
            raise ValueError("n must be non-negative")
        return math.fsum(sigma.values_range(1, n + 1) ** 2) * var
    if sigma.kind in ("explicit", "constant_then_zero"):
        return math.fsum(sigma.values_range(1, max(len(sigma.values), sigma.cutoff + 1)) ** 2) * var
    if not sigma.square_summable:
        return math.inf
    c2 = sigma.scale**2
    if sigma.kind == "geometric":
        r2 = sigma.ratio**2
        return c2 * r2 / (1.0 - r2) * var
    return c2 * float(zeta(2.0 * sigma.exponent, 1)) * var


def martingale_variance(sigma: SigmaSequence, noise: NoiseSpec, master_seed: int, paths: int, n: int) -> Estimate:
    """Sample variance of ``M_n = sum_{i=1..n} sigma_i xi_i`` over ``paths`` paths.

    Path ``j`` uses the first noise component of ``(master_seed, j)``.
    ``stderr`` is the large-sample standard error of the sample variance.
    """
    if paths < 4:
        raise ValueError("need at least 4 paths for a variance standard error")
    sig = sigma.values_range(1, n + 1)
    totals = np.empty(paths)
    for j in range(paths):
        xi = noise_block(noise, master_seed, j, 1, n, 1)[:, 0] if n else np.zeros(0)
        totals[j] = math.fsum(sig * xi)
    mean = math.fsum(totals) / paths
    dev = totals - mean
    m2 = math.fsum(dev**2)
    var = m2 / (paths - 1)
    m4 = math.fsum(dev**4) / paths
    s2 = m2 / paths
    se = math.sqrt(max(m4 - s2 * s2 * (paths - 3) / (paths - 1), 0.0) / paths)
    return Estimate(var, se, float(np.abs(totals).max()), n, 2.0)


@dataclass(frozen=True)
class Budget:
    """Monte Carlo effort for one classification.

    ``max_horizon`` caps how far the simulation may be extended to truncate
    limits; ``None`` means ``50 * horizon``.
    """

    paths: int = 200
    horizon: int = 2000
    max_horizon: int | None = None


@dataclass(frozen=True)
class Thresholds:
    """Finite-horizon certificates for asymptotic claims.

    A statistic is certified to vanish when its value at the final checkpoint
    is below ``epsilon`` and below ``rho`` times its value at a tenth of the
    horizon. Growth is certified when the running maximum grows by ``growth``
    between a fifth of the horizon and the horizon.
    """

    p: float = 2.0
    epsilon: float = 1e-2
    rho: float = 0.5
    growth: float = 5.0
    tolerance: float = 1e-4


@dataclass(frozen=True)
class Diagnostic:
    name: str
    horizon: int
    value: float
    stderr: float
    theorem_tag: str


@dataclass
class RegimeReport:
    L: float | None
    predicted: str | None
    verdict: str
    diagnostics: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def matches_prediction(self) -> bool:
        return self.predicted is not None and self.verdict == self.predicted

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "predicted": self.predicted,
            "verdict": self.verdict,
            "diagnostics": [asdict(d) for d in self.diagnostics],
            "checks": list(self.checks),
            "notes": list(self.notes),
        }


def predict_regime(L: float | None, singular: bool = False) -> str | None:
    """Regime implied by the multiplier alone, or None if none applies."""
    if L is None:
        return None
    if abs(L) < 1.0 - UNIT_TOL:
        return "decay"
    if abs(L - 1.0) <= UNIT_TOL:
        return "periodic-limit"
    if abs(L) > 1.0 + UNIT_TOL:
        return None if singular else "divergence"
    return None


def _vanishes(early: float, late: float, th: Thresholds) -> bool:
    return late < th.epsilon and late < th.rho * early


def classify_regime(
    spec: ModelSpec,
    master_seed: int = 0,
    budget: Budget | None = None,
    thresholds: Thresholds | None = None,
    workers: int | None = None,
) -> RegimeReport:
    """Predict the regime from ``L`` and check it against Monte Carlo diagnostics.

    The verdict is the predicted regime when its diagnostics pass and
    ``inconclusive`` otherwise.
    """
    budget = Budget() if budget is None else budget
    thresholds = Thresholds() if thresholds is None else thresholds
    N, K = budget.horizon, spec.period
    if budget.paths < 2 or N < 10 * K or N // 10 < 1:
        raise BudgetError(f"budget too small: need at least 2 paths and horizon >= {10 * K}")
    path0 = coefficient_path(spec, master_seed, 0)
    notes = []
    try:
        L = multiplier(path0)
    except NonScalarProductError as exc:
        return RegimeReport(None, None, "inconclusive", notes=[str(exc)])
    singular = path0.is_singular()
    predicted = predict_regime(L, singular)
    if predicted is None:
        if singular and abs(L) > 1.0:
            notes.append("a one-step factor is singular; the blow-up argument needs all factors invertible")
        else:
            notes.append("|L| = 1 with L != 1: no regime statement applies")
        return RegimeReport(L, None, "inconclusive", notes=notes)

    p, early = thresholds.p, N // 10
    diags, checks = [], []

    def add(name, n, est, tag):
        diags.append(Diagnostic(name, n, est.value, est.stderr, tag))

    def check(name, ok, detail):
        checks.append({"name": name, "passed": bool(ok), "detail": detail})
        return bool(ok)

    if predicted == "decay":
        ens = run_ensemble(spec, master_seed, budget.paths, N, [early, N], workers)
        e0, e1 = empirical_lp_norm(ens, early, p), empirical_lp_norm(ens, N, p)
        add("lp_norm", early, e0, "T1i")
        add("lp_norm", N, e1, "T1i")
        ok = check(
            "norm_vanishes",
            _vanishes(e0.value, e1.value, thresholds),
            f"{e1.value:.6g} < {thresholds.epsilon:g} and < {thresholds.rho:g}*{e0.value:.6g}",
        )
    elif predicted == "divergence":
        grid = np.unique(np.linspace(0, N, 41).astype(np.int64))
        ens = run_ensemble(spec, master_seed, budget.paths, N, grid, workers)
        norms = [empirical_lp_norm(ens, int(n), p) for n in grid]
        cut = int(grid[grid <= N // 5][-1])
        run_early = max(e.value for e, n in zip(norms, grid, strict=True) if n <= cut)
        run_late = max(e.value for e in norms)
        add("lp_norm", cut, norms[int(np.searchsorted(grid, cut))], "T1ii")
        add("lp_norm", N, norms[-1], "T1ii")
        diags.append(Diagnostic("running_max_lp_norm", cut, run_early, math.nan, "T1ii"))
        diags.append(Diagnostic("running_max_lp_norm", N, run_late, math.nan, "T1ii"))
        ok = check(
            "norm_grows",
            math.isinf(run_late) or run_late >= thresholds.growth * run_early,
            f"{run_late:.6g} >= {thresholds.growth:g}*{run_early:.6g}",
        )
    else:
        late = N - K
        cap = budget.max_horizon if budget.max_horizon is not None else 50 * N
        report = validate(spec)
        n_star = None
        if report.branch is not None:
            n_star = required_horizon(spec, master_seed, budget.paths, thresholds.tolerance)
            if n_star > cap:
                notes.append(f"limit tracking skipped: truncation needs horizon {n_star} > cap {cap}")
                n_star = None
        else:
            notes.append("limit tracking skipped: neither summability branch holds")
        n_trunc = tracking_truncation(n_star, N, K, cap) if n_star is not None else None
        H = max(N, n_trunc or 0)
        rec = [early, early + K, late, late + K] + ([n_trunc] if n_trunc is not None else [])
        ens = run_ensemble(spec, master_seed, budget.paths, H, rec, workers)
        d0, d1 = periodicity_defect(ens, early, K, p), periodicity_defect(ens, late, K, p)
        add("periodicity_defect", early, d0, "T1iii")
        add("periodicity_defect", late, d1, "T1iii")
        diags.append(Diagnostic("max_periodicity_defect", early, d0.maximum, math.nan, "T1iv"))
        diags.append(Diagnostic("max_periodicity_defect", late, d1.maximum, math.nan, "T1iv"))
        ok = check(
            "defect_vanishes",
            _vanishes(d0.value, d1.value, thresholds),
            f"{d1.value:.6g} < {thresholds.epsilon:g} and < {thresholds.rho:g}*{d0.value:.6g}",
        )
        if n_star is None:
            ok = check("tracking_available", False, "limit tracking could not be computed")
        else:
            t0 = limit_tracking_error(ens, early, p, thresholds.tolerance, n_trunc)
            t1 = limit_tracking_error(ens, late, p, thresholds.tolerance, n_trunc)
            add("limit_tracking_error", early, t0, "T2")
            add("limit_tracking_error", late, t1, "T2")
            diags.append(Diagnostic("max_limit_tracking_error", early, t0.maximum, math.nan, "T3"))
            diags.append(Diagnostic("max_limit_tracking_error", late, t1.maximum, math.nan, "T3"))
            ok = (
                check(
                    "tracking_vanishes",
                    _vanishes(t0.value, t1.value, thresholds),
                    f"{t1.value:.6g} < {thresholds.epsilon:g} and < {thresholds.rho:g}*{t0.value:.6g}",
                )
                and ok
            )
    verdict = predicted if ok else "inconclusive"
    return RegimeReport(L, predicted, verdict, diags, checks, notes)
