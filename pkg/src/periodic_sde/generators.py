"""Model ingredients: amplitude sequences, noise laws, coefficient paths.

Indexing convention: the innovation ``xi_n`` exists for ``n >= 1`` and is
always paired with the amplitude of the same index, so the one-step update
from time ``n`` to ``n + 1`` adds ``sigma_{n+1} * xi_{n+1}``. ``sigma_0`` is
defined for every kind but never multiplies a draw.

Random numbers come from Philox, a counter-based generator. The key is
``(seed, path_index)`` and a draw is addressed by its counter position, so a
single innovation can be regenerated without replaying the stream before it.
Noise and coefficient draws live in disjoint counter ranges of the same key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import ndtri
from scipy.stats import ortho_group

from .coefficients import CoefficientPath, multiplier
from .errors import CoefficientDrawError, DimensionError, NoiseLawError

__all__ = [
    "SigmaSequence",
    "NoiseSpec",
    "CoefficientSource",
    "ModelSpec",
    "ApplicabilityReport",
    "draw_noise",
    "noise_block",
    "coefficient_rng",
    "make_unit_multiplier_path",
    "coefficient_path",
    "validate",
    "UNIT_TOL",
]

UNIT_TOL = 1e-9
_U64 = 2**64
_TWO_M53 = 2.0**-53
# counter offset separating the coefficient stream from the noise stream
_COEFF_COUNTER = np.array([0, 0, 1, 0], dtype=np.uint64)

SigmaKind = Literal["explicit", "power", "geometric", "constant_then_zero"]
NoiseLaw = Literal["rademacher", "uniform", "gaussian", "explicit"]


@dataclass(frozen=True)
class SigmaSequence:
    """Deterministic noise amplitudes ``sigma_n``.

    kinds:
      * ``power``: ``scale * n**(-exponent)``, with ``n`` clamped to 1 at n = 0
      * ``geometric``: ``scale * ratio**n``
      * ``constant_then_zero``: ``scale`` for ``n <= cutoff``, then 0
      * ``explicit``: ``values[n]`` for ``n < len(values)``, then 0
    """

    kind: SigmaKind
    scale: float = 1.0
    exponent: float = 1.0
    ratio: float = 0.5
    cutoff: int = 0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("explicit", "power", "geometric", "constant_then_zero"):
            raise ValueError(f"unknown sigma kind {self.kind!r}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not all(math.isfinite(v) for v in (self.scale, self.exponent, self.ratio, *self.values)):
            raise ValueError("sigma parameters must be finite")
        if self.kind == "constant_then_zero" and self.cutoff < 0:
            raise ValueError("cutoff must be non-negative")

    @classmethod
    def power(cls, exponent, scale=1.0):
        return cls("power", scale=scale, exponent=exponent)

    @classmethod
    def geometric(cls, ratio, scale=1.0):
        return cls("geometric", scale=scale, ratio=ratio)

    @classmethod
    def constant_then_zero(cls, cutoff, scale=1.0):
        return cls("constant_then_zero", scale=scale, cutoff=cutoff)

    @classmethod
    def explicit(cls, values):
        return cls("explicit", values=tuple(values))

    @classmethod
    def zero(cls):
        return cls("explicit", values=())

    def value(self, n: int) -> float:
        return float(self.values_range(n, n + 1)[0])

    def values_range(self, start: int, stop: int) -> np.ndarray:
        """``sigma_n`` for ``start <= n < stop`` as a float64 array."""
        if start < 0 or stop < start:
            raise ValueError("need 0 <= start <= stop")
        n = np.arange(start, stop)
        if self.kind == "power":
            return self.scale * np.power(np.maximum(n, 1).astype(np.float64), -self.exponent)
        if self.kind == "geometric":
            return self.scale * np.power(self.ratio, n.astype(np.float64))
        if self.kind == "constant_then_zero":
            return np.where(n <= self.cutoff, float(self.scale), 0.0)
        out = np.zeros(stop - start)
        vals = np.asarray(self.values, dtype=np.float64)
        hi = min(stop, len(vals))
        if hi > start:
            out[: hi - start] = vals[start:hi]
        return out

    def _finite_support(self) -> bool:
        return (
            self.kind in ("explicit", "constant_then_zero")
            or self.scale == 0.0
            or (self.kind == "geometric" and self.ratio == 0.0)
        )

    @property
    def summable(self) -> bool:
        if self._finite_support():
            return True
        if self.kind == "power":
            return self.exponent > 1.0
        return abs(self.ratio) < 1.0

    @property
    def square_summable(self) -> bool:
        if self._finite_support():
            return True
        if self.kind == "power":
            return self.exponent > 0.5
        return abs(self.ratio) < 1.0

    @property
    def vanishing(self) -> bool:
        if self._finite_support():
            return True
        if self.kind == "power":
            return self.exponent > 0.0
        return abs(self.ratio) < 1.0

    def nonzero_after(self, n: int = 0) -> bool:
        """True if some ``sigma_k`` with ``k > n`` is nonzero."""
        if self.scale == 0.0 and self.kind != "explicit":
            return False
        if self.kind == "constant_then_zero":
            return self.cutoff > n
        if self.kind == "explicit":
            return any(v != 0.0 for v in self.values[n + 1 :])
        if self.kind == "geometric":
            return self.ratio != 0.0
        return True

    def _tail(self, n: int, power: int) -> float:
        # rigorous upper bound on sum_{k > n} |sigma_k|**power
        if n < 0:
            raise ValueError("n must be non-negative")
        c = abs(self.scale) ** power
        if self.kind == "explicit":
            return math.fsum(abs(v) ** power for v in self.values[n + 1 :])
        if self.kind == "constant_then_zero":
            return c * max(self.cutoff - n, 0)
        if c == 0.0:
            return 0.0
        if self.kind == "geometric":
            r = abs(self.ratio) ** power
            if r >= 1.0:
                return math.inf
            return c * r ** (n + 1) / (1.0 - r)
        q = self.exponent * power
        if q <= 1.0:
            return math.inf
        # sum_{k>n} k^-q <= integral_n^inf x^-q dx, and the k = 1 term separately at n = 0
        if n == 0:
            return c * (1.0 + 1.0 / (q - 1.0))
        return c * n ** (1.0 - q) / (q - 1.0)

    def abs_tail(self, n: int) -> float:
        """Upper bound on ``sum_{k > n} |sigma_k|`` (``inf`` if divergent)."""
        return self._tail(n, 1)

    def square_tail(self, n: int) -> float:
        """Upper bound on ``sum_{k > n} sigma_k**2`` (``inf`` if divergent)."""
        return self._tail(n, 2)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("power", "geometric", "constant_then_zero"):
            d["scale"] = self.scale
        if self.kind == "power":
            d["exponent"] = self.exponent
        elif self.kind == "geometric":
            d["ratio"] = self.ratio
        elif self.kind == "constant_then_zero":
            d["cutoff"] = self.cutoff
        else:
            d["values"] = list(self.values)
        return d


@dataclass(frozen=True)
class NoiseSpec:
    """Law of the innovations ``xi_n``; every component is drawn independently.

    Built-in laws are normalized so that ``||xi||_p <= 1``: rademacher and
    uniform are bounded by 1, gaussian has unit variance and is admitted only
    with ``p = 2``. ``explicit`` is a deterministic bounded sequence,
    ``xi_n = values[(n - 1) % len(values)]``.
    """

    law: NoiseLaw
    p: float = 2.0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.law not in ("rademacher", "uniform", "gaussian", "explicit"):
            raise NoiseLawError(f"unknown noise law {self.law!r}")
        p = float(self.p)
        if not (p >= 1.0):
            raise NoiseLawError("p must lie in [1, inf]")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.law == "gaussian" and p != 2.0:
            raise NoiseLawError("gaussian noise only satisfies the normalization for p = 2")
        if self.law == "explicit":
            if not self.values:
                raise NoiseLawError("explicit noise needs at least one value")
            if max(abs(v) for v in self.values) > 1.0:
                raise NoiseLawError("explicit noise values must lie in [-1, 1]")

    @property
    def iid(self) -> bool:
        return self.law != "explicit" or len(set(self.values)) == 1

    @property
    def random(self) -> bool:
        return self.law != "explicit"

    @property
    def mean_zero(self) -> bool:
        if self.law == "explicit":
            return all(v == 0.0 for v in self.values)
        return True

    @property
    def variance(self) -> float:
        return {"rademacher": 1.0, "uniform": 1.0 / 3.0, "gaussian": 1.0, "explicit": 0.0}[self.law]

    @property
    def bound(self) -> float:
        """``sup |xi_n|`` per component."""
        if self.law == "gaussian":
            return math.inf
        if self.law == "explicit":
            return max(abs(v) for v in self.values)
        return 1.0

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.bound)

    def to_dict(self) -> dict:
        d = {"law": self.law, "p": self.p if math.isfinite(self.p) else "inf"}
        if self.law == "explicit":
            d["values"] = list(self.values)
        return d


def _check_u64(value, name):
    if not isinstance(value, (int, np.integer)) or not 0 <= int(value) < _U64:
        raise ValueError(f"{name} must be an integer in [0, 2**64)")
    return int(value)


def _key(seed, path_index):
    return np.array([_check_u64(seed, "seed"), _check_u64(path_index, "path_index")], dtype=np.uint64)


def _raw_words(seed, path_index, start, count) -> np.ndarray:
    # Philox emits 4 words per counter step; advance() moves whole steps
    bg = np.random.Philox(key=_key(seed, path_index))
    q, r = divmod(start, 4)
    if q:
        bg.advance(q)
    return bg.random_raw(r + count)[r:]


def noise_block(noise: NoiseSpec, seed, path_index, start: int, count: int, dim: int = 1) -> np.ndarray:
    """Innovations ``xi_start, ..., xi_{start+count-1}`` as an array ``(count, dim)``.

    Component ``c`` of ``xi_n`` is always derived from word ``(n-1)*dim + c``
    of the ``(seed, path_index)`` stream.
    """
    if start < 1:
        raise ValueError("innovations are indexed from 1")
    if count < 0 or dim < 1:
        raise ValueError("count must be >= 0 and dim >= 1")
    if noise.law == "explicit":
        vals = np.asarray(noise.values, dtype=np.float64)
        idx = (np.arange(start, start + count) - 1) % len(vals)
        return np.repeat(vals[idx][:, None], dim, axis=1)
    _key(seed, path_index)
    words = _raw_words(seed, path_index, (start - 1) * dim, count * dim).reshape(count, dim)
    if noise.law == "rademacher":
        return np.where((words >> np.uint64(63)) == 1, -1.0, 1.0)
    mant = (words >> np.uint64(11)).astype(np.float64)
    if noise.law == "uniform":
        return 2.0 * (mant * _TWO_M53) - 1.0
    return ndtri((mant + 0.5) * _TWO_M53)


def draw_noise(noise: NoiseSpec, seed, path_index, n: int, dim: int = 1) -> np.ndarray:
    """The single innovation ``xi_n`` of path ``path_index`` (shape ``(dim,)``)."""
    return noise_block(noise, seed, path_index, n, 1, dim)[0]


def coefficient_rng(seed, path_index=0) -> np.random.Generator:
    """Generator for the coefficient draws of one path, disjoint from its noise."""
    return np.random.Generator(np.random.Philox(key=_key(seed, path_index), counter=_COEFF_COUNTER))


def _left_product(factors):
    prod = 1.0
    for f in factors:
        prod = prod * f
    return prod


def make_unit_multiplier_path(
    d: int, K: int, seed, target_L: float = 1.0, path_index=0, max_tries: int = 100
) -> CoefficientPath:
    """Random K-periodic blocks whose period product is ``target_L * I``.

    The first ``K - 1`` blocks are drawn freely and the last one is solved for.
    Scalar draws take ``a_i`` uniform on ``[-0.5, 1]``; matrix draws take
    ``I + a_i = U diag(s) V^T`` with Haar-orthogonal ``U, V`` and singular values
    uniform on ``[0.5, 2]``, so each free block has condition number at most 4.
    """
    if target_L == 0 or not math.isfinite(target_L):
        raise ValueError("target_L must be finite and nonzero")
    if d < 1 or K < 1:
        raise DimensionError("need d >= 1 and K >= 1")
    rng = coefficient_rng(seed, path_index)
    for _ in range(max_tries):
        if d == 1:
            free = rng.uniform(-0.5, 1.0, size=K - 1)
            prod = _left_product(1.0 + free)
            if abs(prod) < 1e-8:
                continue
            last = target_L / prod - 1.0
            path = CoefficientPath.from_scalars(np.append(free, last))
        else:
            factors = []
            for _ in range(K - 1):
                u = ortho_group.rvs(d, random_state=rng)
                v = ortho_group.rvs(d, random_state=rng)
                s = rng.uniform(0.5, 2.0, size=d)
                factors.append((u * s) @ v.T)
            prod = np.eye(d)
            for f in factors:
                prod = f @ prod
            if np.linalg.svd(prod, compute_uv=False)[-1] < 1e-8:
                continue
            factors.append(target_L * np.linalg.inv(prod))
            path = CoefficientPath(np.stack(factors) - np.eye(d))
        return path
    raise CoefficientDrawError(f"could not draw a non-singular coefficient path in {max_tries} tries")


@dataclass(frozen=True)
class CoefficientSource:
    """Where coefficient blocks come from.

    ``explicit`` uses ``blocks`` for every path; ``unit_multiplier`` and
    ``target_L`` draw a fresh path per ``(seed, path_index)`` with
    :func:`make_unit_multiplier_path` (``unit_multiplier`` fixes the target to 1).
    """

    kind: Literal["explicit", "unit_multiplier", "target_L"]
    blocks: tuple = ()
    target_L: float = 1.0

    def __post_init__(self):
        if self.kind not in ("explicit", "unit_multiplier", "target_L"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        if self.kind == "unit_multiplier" and self.target_L != 1.0:
            raise ValueError("unit_multiplier fixes target_L = 1")
        if self.kind == "explicit":
            if len(self.blocks) == 0:
                raise ValueError("explicit coefficients need at least one block")
            object.__setattr__(self, "blocks", _freeze_blocks(self.blocks))

    @classmethod
    def explicit(cls, blocks):
        return cls("explicit", blocks=blocks)

    @classmethod
    def random(cls, target_L=1.0):
        return cls("target_L", target_L=float(target_L))

    @property
    def is_random(self) -> bool:
        return self.kind != "explicit"

    def to_dict(self) -> dict:
        if self.kind == "explicit":
            return {"kind": "explicit", "blocks": [_thaw(b) for b in self.blocks]}
        if self.kind == "unit_multiplier":
            return {"kind": "unit_multiplier"}
        return {"kind": "target_L", "target_L": self.target_L}


def _freeze_blocks(blocks):
    out = []
    for b in blocks:
        arr = np.asarray(b, dtype=np.float64)
        out.append(float(arr) if arr.ndim == 0 else tuple(tuple(float(x) for x in row) for row in np.atleast_2d(arr)))
    return tuple(out)


def _thaw(block):
    if isinstance(block, float):
        return block
    return [list(row) for row in block]


@dataclass(frozen=True)
class ModelSpec:
    """A complete system instance: dynamics, amplitudes, noise, initial state."""

    dim: int
    period: int
    coefficients: CoefficientSource
    sigma: SigmaSequence
    noise: NoiseSpec
    x0: tuple[float, ...] = (0.0,)
    noise_independent: bool = True
    _explicit_path: CoefficientPath | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1 or self.period < 1:
            raise DimensionError("dimension and period must be positive")
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64))
        if x0.shape != (self.dim,):
            raise DimensionError(f"x0 must have {self.dim} components, got {x0.shape}")
        if not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be finite")
        object.__setattr__(self, "x0", tuple(float(v) for v in x0))
        if self.coefficients.kind == "explicit":
            blocks = np.array([np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in self.coefficients.blocks])
            if blocks.shape != (self.period, self.dim, self.dim):
                raise DimensionError(
                    f"explicit coefficients must have shape ({self.period}, {self.dim}, {self.dim}), got {blocks.shape}"
                )
            object.__setattr__(self, "_explicit_path", CoefficientPath(blocks))

    @property
    def x0_array(self) -> np.ndarray:
        return np.array(self.x0, dtype=np.float64)

    def expected_multiplier(self) -> float | None:
        """``L`` if it is determined by the model alone, else None."""
        if self._explicit_path is not None:
            try:
                return multiplier(self._explicit_path)
            except ValueError:
                return None
        return self.coefficients.target_L

    def to_dict(self) -> dict:
        return {
            "dimension": self.dim,
            "period": self.period,
            "x0": list(self.x0),
            "coefficients": self.coefficients.to_dict(),
            "noise_independent": self.noise_independent,
            "sigma": self.sigma.to_dict(),
            "noise": self.noise.to_dict(),
        }


def coefficient_path(spec: ModelSpec, seed=0, path_index=0) -> CoefficientPath:
    """The realized coefficient path of one ensemble member."""
    if spec._explicit_path is not None:
        return spec._explicit_path
    return make_unit_multiplier_path(spec.dim, spec.period, seed, spec.coefficients.target_L, path_index)


TAGS = ("T1i", "T1ii", "T1iii", "T1iv", "T2", "T3", "P1")


@dataclass(frozen=True)
class ApplicabilityReport:
    L: float | None
    condition_i: bool
    condition_ii: bool
    bounded_noise: bool
    pathwise_bounded_noise: bool
    pathwise_square_summable: bool
    verdicts: dict = field(default_factory=dict)

    @property
    def branch(self) -> str | None:
        """Active summability branch used for tail bounds: ``"i"``, ``"ii"`` or None."""
        if self.condition_i and self.bounded_noise:
            return "i"
        if self.condition_ii:
            return "ii"
        if self.condition_i:
            return "i"
        return None

    def applies(self, tag: str) -> bool:
        return self.verdicts[tag][0]

    def reason(self, tag: str) -> str:
        return self.verdicts[tag][1]

    def applicable_tags(self) -> list[str]:
        return [t for t in TAGS if self.applies(t)]


def validate(spec: ModelSpec) -> ApplicabilityReport:
    """Work out which convergence statements can be tested on ``spec``.

    Never raises: statements that do not apply carry the reason why.
    """
    sigma, noise = spec.sigma, spec.noise
    L = spec.expected_multiplier()
    cond_i = sigma.summable
    cond_ii = (
        noise.p == 2.0
        and sigma.square_summable
        and noise.random
        and noise.iid
        and noise.mean_zero
        and spec.noise_independent
    )
    bounded = noise.bounded
    pathwise_bd = bounded and cond_i
    pathwise_sq = cond_ii
    v = {}

    if L is None:
        for tag in TAGS[:-1]:
            v[tag] = (False, "multiplier undefined: period product is not a scalar multiple of I")
    else:
        unit = abs(L - 1.0) <= UNIT_TOL
        v["T1i"] = (abs(L) < 1.0 - UNIT_TOL, f"|L| = {abs(L):.17g}, needs |L| < 1")
        if not abs(L) > 1.0 + UNIT_TOL:
            v["T1ii"] = (False, f"|L| = {abs(L):.17g}, needs |L| > 1")
        elif noise.p < 2.0:
            v["T1ii"] = (False, "needs p >= 2")
        elif not spec.noise_independent:
            v["T1ii"] = (False, "needs noise independent of the coefficients")
        elif all(x == 0.0 for x in spec.x0) and not (noise.variance > 0 and sigma.nonzero_after(0)):
            v["T1ii"] = (False, "needs X_0 != 0 or non-degenerate noise")
        elif spec._explicit_path is not None and spec._explicit_path.is_singular():
            v["T1ii"] = (False, "a one-step factor I + a_i is singular")
        else:
            v["T1ii"] = (True, "|L| > 1 with independent noise")
        if not unit:
            for tag in ("T1iii", "T1iv", "T2", "T3"):
                v[tag] = (False, f"L = {L:.17g}, L≠1, needs L = 1")
        else:
            v["T1iii"] = (sigma.vanishing, "L = 1" if sigma.vanishing else "sigma_n does not vanish")
            # for the built-in kinds a vanishing sigma also drives sigma_n * xi_n to 0 a.s.:
            # bounded laws trivially, gaussian because max|xi_n| grows like sqrt(log n)
            v["T1iv"] = (sigma.vanishing, "L = 1" if sigma.vanishing else "sigma_n does not vanish")
            v["T2"] = (cond_i or cond_ii, "L = 1" if (cond_i or cond_ii) else "neither summability branch holds")
            v["T3"] = (
                pathwise_bd or pathwise_sq,
                "L = 1" if (pathwise_bd or pathwise_sq) else "needs bounded noise or the square-summable branch",
            )
    p1 = noise.random and noise.iid and noise.mean_zero and sigma.square_summable
    v["P1"] = (
        p1,
        "iid centered noise, square-summable sigma" if p1 else "needs iid centered noise and square-summable sigma",
    )
    return ApplicabilityReport(L, cond_i, cond_ii, bounded, pathwise_bd, pathwise_sq, v)
