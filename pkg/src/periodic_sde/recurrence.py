"""Exact arithmetic of the periodic recursion.

The state evolves as::

    X_{n+1} = X_n + a_n X_n + sigma_{n+1} xi_{n+1}

with ``a_n`` read modulo the period ``K``. Unrolling it gives the closed form
``X_n = b(0, n) X_0 + sum_{k=1..n} b(k, n) sigma_k xi_k`` and, over a window
of ``m`` steps, ``X_{n+m} = b(n, n+m) X_n + psi(n, m)``. When the multiplier
``L`` equals 1 the subsampled process ``Y_i = X_{iK}`` converges and
``Q_n = b(0, n mod K) Ybar`` is the periodic process the solution settles onto.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientPath, _product, multiplier, window_bound
from .errors import ConditionError, DimensionError, HorizonError, LimitUndefinedError
from .generators import UNIT_TOL, ModelSpec, SigmaSequence, coefficient_path, noise_block, validate

__all__ = [
    "DIVERGENCE_THRESHOLD",
    "step",
    "simulate",
    "simulate_paths",
    "Trajectory",
    "closed_form",
    "tail_sum_psi",
    "subsample_Y",
    "LimitObjects",
    "tail_bound",
    "truncation_horizon",
    "limit_Ybar",
    "unweighted_noise_sum",
]

DIVERGENCE_THRESHOLD = 1e300
NOISE_BLOCK = 2048


def _matvec(a, x):
    # fixed column order so batched and single-path results agree bit for bit
    out = a[..., :, 0] * x[..., 0, None]
    for j in range(1, x.shape[-1]):
        out = out + a[..., :, j] * x[..., j, None]
    return out


def _step(x, a, sigma, xi):
    if np.ndim(sigma) >= 2:
        return x + _matvec(a, x) + _matvec(sigma, xi)
    return x + _matvec(a, x) + sigma * xi


def step(x, a, sigma, xi):
    """One update ``x + a x + sigma xi``.

    Scalars give a float. Arrays need ``x`` and ``xi`` of shape ``(d,)``, ``a``
    of shape ``(d, d)`` and ``sigma`` either scalar or ``(d, d)``.
    """
    if all(np.ndim(v) == 0 for v in (x, a, sigma, xi)):
        x, a, sigma, xi = float(x), float(a), float(sigma), float(xi)
        return x + a * x + sigma * xi
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    d = x.shape[-1]
    if x.ndim != 1 or xi.shape != (d,) or a.shape != (d, d):
        raise DimensionError(f"dimension mismatch: x {x.shape}, a {a.shape}, xi {xi.shape}")
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim not in (0, 2) or (sigma.ndim == 2 and sigma.shape != (d, d)):
        raise DimensionError(f"sigma must be scalar or ({d}, {d}), got {sigma.shape}")
    return _step(x, a, sigma[()] if sigma.ndim == 0 else sigma, xi)


def simulate_paths(spec: ModelSpec, seed, path_indices, horizon: int, record=None):
    """Vectorized simulation of several paths of one model.

    Returns ``(states, diverged_at, blocks)``: ``states[j, r]`` is ``X_{record[r]}``
    of the j-th path, ``diverged_at[j]`` is the first index whose state left
    ``[-1e300, 1e300]`` (``-1`` if none) and ``blocks`` holds the per-path
    coefficient periods, shape ``(M, K, d, d)``. States recorded after a
    path's divergence index are NaN.

    Every path is computed with elementwise operations only, so the result for
    a path does not depend on which other paths share the batch.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    paths = [int(j) for j in path_indices]
    M, d, K = len(paths), spec.dim, spec.period
    record = np.arange(horizon + 1) if record is None else np.unique(np.asarray(record, dtype=np.int64))
    if record.size and (record[0] < 0 or record[-1] > horizon):
        raise HorizonError(f"record indices must lie in [0, {horizon}]", required=int(record[-1]))
    slot = np.full(horizon + 1, -1, dtype=np.int64)
    slot[record] = np.arange(record.size)

    if spec.coefficients.is_random:
        blocks = np.stack([coefficient_path(spec, seed, j).blocks for j in paths]) if M else np.zeros((0, K, d, d))
        per_residue = [np.ascontiguousarray(blocks[:, r]) for r in range(K)]
    else:
        shared = coefficient_path(spec).blocks
        blocks = np.broadcast_to(shared, (M, K, d, d))
        per_residue = [shared[r] for r in range(K)]

    sig = spec.sigma.values_range(0, horizon + 1)
    states = np.full((M, record.size, d), np.nan)
    diverged_at = np.full(M, -1, dtype=np.int64)
    x = np.tile(spec.x0_array, (M, 1))
    if slot[0] >= 0:
        states[:, slot[0]] = x

    with np.errstate(over="ignore", invalid="ignore"):
        for t0 in range(1, horizon + 1, NOISE_BLOCK):
            cnt = min(NOISE_BLOCK, horizon + 1 - t0)
            if spec.noise.random:
                xi = (
                    np.stack([noise_block(spec.noise, seed, j, t0, cnt, d) for j in paths])
                    if M
                    else np.zeros((0, cnt, d))
                )
            else:
                xi = np.broadcast_to(noise_block(spec.noise, seed, 0, t0, cnt, d), (M, cnt, d))
            for off in range(cnt):
                n = t0 + off  # index of the new state
                x = _step(x, per_residue[(n - 1) % K], sig[n], xi[:, off])
                bad = ~np.all(np.abs(x) <= DIVERGENCE_THRESHOLD, axis=-1)
                if slot[n] >= 0:
                    row = x.copy()
                    row[(diverged_at >= 0) & (diverged_at < n)] = np.nan
                    states[:, slot[n]] = row
                if bad.any():
                    fresh = bad & (diverged_at < 0)
                    diverged_at[fresh] = n
                    x[bad] = 0.0
    return states, diverged_at, blocks


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One simulated path.

    ``states[n]`` is ``X_n``; ``noise[n - 1]`` is ``xi_n``; ``sigma[n]`` is
    ``sigma_n``. A diverged path stops at ``diverged_at``, whose state is kept.
    """

    spec: ModelSpec
    seed: int
    path_index: int
    coefficients: CoefficientPath
    states: np.ndarray
    noise: np.ndarray
    sigma: np.ndarray
    diverged_at: int | None = None

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def x(self, n: int) -> np.ndarray:
        return self.states[n]

    def xi(self, n: int) -> np.ndarray:
        if n < 1:
            raise IndexError("innovations are indexed from 1")
        return self.noise[n - 1]

    def same_as(self, other: Trajectory) -> bool:
        """Bit-level equality of all numeric content."""
        return (
            self.diverged_at == other.diverged_at
            and self.states.tobytes() == other.states.tobytes()
            and self.noise.tobytes() == other.noise.tobytes()
            and self.sigma.tobytes() == other.sigma.tobytes()
            and self.coefficients == other.coefficients
        )


def simulate(spec: ModelSpec, seed=0, path_index=0, horizon: int = 100) -> Trajectory:
    """Simulate path ``path_index`` of ``spec`` up to ``X_horizon``.

    Deterministic in ``(spec, seed, path_index)``. If a state overflows the
    divergence threshold the trajectory ends at that index.
    """
    states, div, _ = simulate_paths(spec, seed, [path_index], horizon)
    div = int(div[0])
    stop = horizon if div < 0 else div
    states = states[0, : stop + 1].copy()
    noise = noise_block(spec.noise, seed, path_index, 1, stop, spec.dim)
    sigma = spec.sigma.values_range(0, stop + 1)
    for arr in (states, noise, sigma):
        arr.setflags(write=False)
    return Trajectory(
        spec=spec,
        seed=int(seed),
        path_index=int(path_index),
        coefficients=coefficient_path(spec, seed, path_index),
        states=states,
        noise=noise,
        sigma=sigma,
        diverged_at=None if div < 0 else div,
    )


def _sigma_array(sigma, stop):
    if isinstance(sigma, SigmaSequence):
        return sigma.values_range(0, stop)
    arr = np.asarray(sigma, dtype=np.float64)
    if arr.shape[0] < stop:
        raise HorizonError(f"need sigma values through index {stop - 1}", required=stop - 1)
    return arr


def _suffix_products(path: CoefficientPath, lo: int, hi: int) -> np.ndarray:
    """``out[i] = b(lo + i, hi)`` for ``0 <= i <= hi - lo`` by a doubling scan."""
    d = path.dim
    span = hi - lo
    out = np.empty((span + 1, d, d))
    out[span] = np.eye(d)
    if span == 0:
        return out
    s = path.factors[np.arange(lo, hi) % path.period].copy()
    shift = 1
    while shift < span:
        s[:-shift] = s[shift:] @ s[:-shift]
        shift *= 2
    out[:span] = s
    return out


def _fsum_rows(terms: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(terms[:, c]) for c in range(terms.shape[1])])


def _weighted_noise(path, sig, noise, lo, hi):
    # returns (b(lo, hi), sum_{k=lo+1..hi} b(k, hi) sigma_k xi_k)
    if noise.shape[0] < hi:
        raise HorizonError(f"need innovations through index {hi}, have {noise.shape[0]}", required=hi)
    prods = _suffix_products(path, lo, hi)
    k = np.arange(lo + 1, hi + 1)
    inc = sig[k, None] * noise[k - 1]
    terms = np.einsum("kij,kj->ki", prods[1:], inc)
    if terms.shape[0] == 0:
        return prods[0], np.zeros(path.dim)
    return prods[0], _fsum_rows(terms)


def closed_form(spec: ModelSpec, path: CoefficientPath, noise, n: int, x0=None) -> np.ndarray:
    """``X_n`` from the unrolled solution, without stepping the recursion.

    ``noise[k - 1]`` must hold ``xi_k`` for ``1 <= k <= n``. All terms are
    summed with ``math.fsum``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    noise = np.asarray(noise, dtype=np.float64).reshape(-1, path.dim)
    x0 = spec.x0_array if x0 is None else np.atleast_1d(np.asarray(x0, dtype=np.float64))
    sig = _sigma_array(spec.sigma, n + 1)
    b0, acc = _weighted_noise(path, sig, noise, 0, n)
    head = b0 @ x0
    return np.array([math.fsum((head[c], acc[c])) for c in range(path.dim)])


def tail_sum_psi(path: CoefficientPath, sigma, noise, n: int, m: int) -> np.ndarray:
    """``psi(n, m) = sum_{s=1..m} b(n+s, n+m) sigma_{n+s} xi_{n+s}``.

    ``sigma`` is a :class:`SigmaSequence` or an array indexed from 0.
    """
    if m < 1:
        raise ValueError("psi needs m >= 1")
    if n < 0:
        raise ValueError("n must be non-negative")
    noise = np.asarray(noise, dtype=np.float64).reshape(-1, path.dim)
    sig = _sigma_array(sigma, n + m + 1)
    return _weighted_noise(path, sig, noise, n, n + m)[1]


def subsample_Y(traj: Trajectory, K: int | None = None, count: int | None = None) -> np.ndarray:
    """``Y_i = X_{iK}`` for ``i = 0, ..., count - 1`` (default: as many as fit)."""
    K = traj.spec.period if K is None else K
    if K < 1:
        raise ValueError("K must be positive")
    available = traj.horizon // K + 1
    if count is None:
        count = available
    if count > available:
        raise HorizonError(
            f"Y_{count - 1} needs horizon {(count - 1) * K}, trajectory has {traj.horizon}",
            required=(count - 1) * K,
        )
    return traj.states[: (count - 1) * K + 1 : K].copy()


@dataclass(frozen=True, eq=False)
class LimitObjects:
    """Truncated ``Ybar`` of one path and one period of its limit process.

    ``tail_bound`` bounds ``|Ybar - ybar|``; it is deterministic under the
    summable branch with bounded noise and a 3-standard-deviation bound under
    the square-summable branch. ``qbar_error_bound`` bounds ``|Q_n - q(n)|``.
    """

    ybar: np.ndarray
    horizon: int
    tail_bound: float
    qbar_error_bound: float
    branch: str
    qbar: np.ndarray

    def q(self, n: int) -> np.ndarray:
        return self.qbar[n % self.qbar.shape[0]]


def _tail_bound_fn(spec: ModelSpec, path: CoefficientPath, branch: str):
    cb = window_bound(path)
    root_d = math.sqrt(spec.dim)
    if branch == "i":
        c_xi = root_d * spec.noise.bound
        return cb, lambda n: cb * c_xi * spec.sigma.abs_tail(n)
    c_xi = root_d * math.sqrt(spec.noise.variance)
    return cb, lambda n: 3.0 * cb * c_xi * math.sqrt(spec.sigma.square_tail(n))


def tail_bound(spec: ModelSpec, path: CoefficientPath, n: int) -> float:
    """Bound on ``|Ybar - Y|`` when ``Ybar`` is truncated at time ``n``."""
    branch = validate(spec).branch
    if branch is None:
        raise ConditionError("neither summability branch holds; Ybar has no tail bound")
    return _tail_bound_fn(spec, path, branch)[1](n)


def truncation_horizon(spec: ModelSpec, path: CoefficientPath, tolerance: float):
    """Smallest multiple of K where the tail bound drops to ``tolerance``.

    Returns ``(n_star, tail_bound, branch, C_b)``.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    branch = validate(spec).branch
    if branch is None:
        raise ConditionError("neither summability branch holds; Ybar has no tail bound")
    cb, bound = _tail_bound_fn(spec, path, branch)
    K = spec.period
    if bound(0) <= tolerance:
        return 0, bound(0), branch, cb
    hi = 1
    while bound(hi * K) > tolerance:
        hi *= 2
        if hi * K > 2**53:
            raise ConditionError(f"tail bound never reaches {tolerance:g}")
    lo = hi // 2  # bound(lo*K) > tolerance
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if bound(mid * K) <= tolerance:
            hi = mid
        else:
            lo = mid
    return hi * K, bound(hi * K), branch, cb


def limit_Ybar(traj: Trajectory, tolerance: float, path: CoefficientPath | None = None) -> LimitObjects:
    """Truncated ``Ybar = lim Y_i`` and the periodic limit ``Q`` of one path."""
    path = traj.coefficients if path is None else path
    L = multiplier(path)
    if abs(L - 1.0) > UNIT_TOL:
        raise LimitUndefinedError(f"limit process undefined: L = {L:.17g} != 1")
    if traj.diverged:
        raise HorizonError("trajectory diverged; no limit")
    n_star, tail, branch, cb = truncation_horizon(traj.spec, path, tolerance)
    if n_star > traj.horizon:
        raise HorizonError(
            f"tail bound {tolerance:g} needs horizon {n_star}, trajectory has {traj.horizon}",
            required=n_star,
        )
    ybar = traj.states[n_star].copy()
    qbar = np.stack([_product(path, 0, m) @ ybar for m in range(path.period)])
    for arr in (ybar, qbar):
        arr.setflags(write=False)
    return LimitObjects(ybar, n_star, tail, cb * tail, branch, qbar)


def unweighted_noise_sum(traj: Trajectory, n: int | None = None) -> np.ndarray:
    """``sum_{k=1..n} sigma_k xi_k`` with no fundamental-product weights and no ``X_0``.

    This is the alternative candidate for ``Ybar``; it coincides with the
    limit of ``Y_i`` only when ``a = 0`` and ``X_0 = 0``.
    """
    n = traj.horizon if n is None else n
    if n > traj.noise.shape[0]:
        raise HorizonError(f"need innovations through {n}", required=n)
    terms = traj.sigma[1 : n + 1, None] * traj.noise[:n]
    if n == 0:
        return np.zeros(traj.spec.dim)
    return _fsum_rows(terms)
