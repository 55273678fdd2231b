"""Discrete growth rates and the elementary estimates attached to them.

A discrete growth rate is a strictly increasing unbounded positive sequence
``mu_1, mu_2, ...``. Everything downstream works with ``log mu_n`` and the
log of the increment ``mu'_n = mu_{n+1} - mu_n`` so that the exponential
rate can be pushed far past the double-precision overflow of ``e**n``.

The three built-in rates have closed forms for both quantities:

============  ===============  =====================  ========================
kind          mu_n             mu'_n                  phi_n = mu_n / mu'_n
============  ===============  =====================  ========================
exponential   e**n             e**n (e - 1)           1 / (e - 1)
polynomial    n                1                      n
logarithmic   log(n + 1)       log1p(1 / (n + 1))     log(n+1)/log1p(1/(n+1))
============  ===============  =====================  ========================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, HorizonTooSmallError, InvalidWitnessError

__all__ = [
    "GrowthRate",
    "GrowthConditionWitness",
    "GrowthReport",
    "SumBoundReport",
    "exponential",
    "polynomial",
    "logarithmic",
    "from_table",
    "from_function",
    "rate_from_name",
    "read_rate_table",
    "mu",
    "phi",
    "verify_growth_condition",
    "standard_witness",
    "discover_growth_constants",
    "sum_bound_report",
    "sum_bound_table",
]

# relative slack used when comparing ratios against witness constants
RATIO_RTOL = 1e-12

_LOG_E_MINUS_1 = math.log(math.e - 1.0)


def _as_index(n):
    arr = np.asarray(n)
    if arr.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise DomainError(f"time index must be an integer, got {n!r}")
        arr = arr.astype(np.int64)
    if np.any(arr < 1):
        raise DomainError(f"time index must be >= 1, got {n!r}")
    return arr


@dataclass(frozen=True)
class GrowthRate:
    """A discrete growth rate, stored through ``log mu_n`` and ``log mu'_n``.

    Parameters
    ----------
    kind : {'exponential', 'polynomial', 'logarithmic', 'custom'}
    log_mu_fn : callable
        Vectorized map ``n -> log mu_n`` for integer arrays ``n >= 1``.
    log_increment_fn : callable
        Vectorized map ``n -> log(mu_{n+1} - mu_n)``.
    label : str
    limit : int or None
        Largest ``n`` for which ``mu_n`` is known (custom tables), or None.

    Instances are immutable; build them with :func:`exponential`,
    :func:`polynomial`, :func:`logarithmic`, :func:`from_table` or
    :func:`from_function`.
    """

    kind: str
    log_mu_fn: Callable = field(repr=False, compare=False)
    log_increment_fn: Callable = field(repr=False, compare=False)
    label: str = ""
    limit: int | None = None

    def _check(self, n, need_next=False):
        arr = _as_index(n)
        if self.limit is not None:
            top = self.limit - 1 if need_next else self.limit
            if np.any(arr > top):
                raise DomainError(
                    f"rate {self.label!r} is only known up to n={self.limit}"
                )
        return arr

    def log_mu(self, n):
        """``log mu_n`` (vectorized)."""
        return self.log_mu_fn(self._check(n))

    def mu(self, n):
        """``mu_n`` (vectorized). Overflows to ``inf`` for huge exponential n."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_mu(n))

    def log_increment(self, n):
        """``log(mu_{n+1} - mu_n)`` (vectorized)."""
        return self.log_increment_fn(self._check(n, need_next=True))

    def increment(self, n):
        with np.errstate(over="ignore"):
            return np.exp(self.log_increment(n))

    def log_phi(self, n):
        """``log phi_n`` with ``phi_n = mu_n / (mu_{n+1} - mu_n)``."""
        return self.log_mu(n) - self.log_increment(n)

    def phi(self, n):
        return np.exp(self.log_phi(n))

    def log_ratio(self, m, n):
        """``log(mu_m / mu_n)``."""
        return self.log_mu(m) - self.log_mu(n)


def exponential() -> GrowthRate:
    return GrowthRate(
        "exponential",
        lambda n: np.asarray(n, dtype=float),
        lambda n: np.asarray(n, dtype=float) + _LOG_E_MINUS_1,
        label="exp",
    )


def polynomial() -> GrowthRate:
    return GrowthRate(
        "polynomial",
        lambda n: np.log(np.asarray(n, dtype=float)),
        lambda n: np.zeros(np.shape(n)),
        label="poly",
    )


def logarithmic() -> GrowthRate:
    def log_mu(n):
        return np.log(np.log1p(np.asarray(n, dtype=float)))

    def log_inc(n):
        return np.log(np.log1p(1.0 / (np.asarray(n, dtype=float) + 1.0)))

    return GrowthRate("logarithmic", log_mu, log_inc, label="log")


def from_table(values, label="custom") -> GrowthRate:
    """Custom rate from the values ``mu_1, ..., mu_L``.

    Raises
    ------
    DomainError
        If the values are not positive and strictly increasing.
    """
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or vals.size < 2:
        raise DomainError("a rate table needs at least two values")
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise DomainError("rate values must be finite and positive")
    diffs = np.diff(vals)
    if np.any(diffs <= 0):
        bad = int(np.argmax(diffs <= 0)) + 1
        raise DomainError(f"rate table is not strictly increasing at n={bad}")
    logs = np.log(vals)
    log_diffs = np.log(diffs)
    return GrowthRate(
        "custom",
        lambda n: logs[np.asarray(n) - 1],
        lambda n: log_diffs[np.asarray(n) - 1],
        label=label,
        limit=int(vals.size),
    )


def from_function(func, horizon, label="custom") -> GrowthRate:
    """Custom rate ``n -> func(n)`` validated eagerly on ``[1, horizon + 1]``.

    The values are tabulated, so the resulting rate is defined up to
    ``horizon + 1`` only.
    """
    if horizon < 2:
        raise DomainError("horizon must be >= 2")
    ns = np.arange(1, horizon + 2)
    return from_table([float(func(int(k))) for k in ns], label=label)


def read_rate_table(path) -> GrowthRate:
    """Read a two-column ``n value`` text table (``#`` starts a comment)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DomainError(f"{path}:{lineno}: expected 'n value'")
            rows.append((int(parts[0]), float(parts[1])))
    rows.sort()
    ns = [r[0] for r in rows]
    if ns != list(range(1, len(ns) + 1)):
        raise DomainError(f"{path}: indices must be 1, 2, ..., L")
    return from_table([r[1] for r in rows], label=str(path))


_BUILTIN = {
    "exp": exponential,
    "exponential": exponential,
    "poly": polynomial,
    "polynomial": polynomial,
    "log": logarithmic,
    "logarithmic": logarithmic,
}


def rate_from_name(name: str) -> GrowthRate:
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise DomainError(f"unknown rate kind {name!r}") from None


def mu(rate: GrowthRate, n):
    """Value ``mu_n`` of the rate; ``n`` must be a positive integer."""
    return rate.mu(n)


def phi(rate: GrowthRate, n):
    """Weight ``phi_n = mu_n / (mu_{n+1} - mu_n)``."""
    return rate.phi(n)


@dataclass(frozen=True)
class GrowthConditionWitness:
    """Witness ``(q_n, L1, L2)`` of ``L1 <= mu_{q_n} / mu_n <= L2``.

    ``q`` holds ``q_1, ..., q_horizon`` (so ``q[n - 1]`` is ``q_n``).
    """

    q: np.ndarray
    L1: float
    L2: float
    horizon: int

    @classmethod
    def from_rule(cls, rule, L1, L2, horizon):
        ns = np.arange(1, horizon + 1)
        q = np.array([int(rule(int(k))) for k in ns], dtype=np.int64)
        return cls(q, float(L1), float(L2), int(horizon))

    def q_at(self, n):
        return self.q[n - 1]


@dataclass(frozen=True)
class GrowthReport:
    holds: bool
    worst_low: tuple
    worst_high: tuple


def _ratios(rate, q, ns):
    return np.exp(rate.log_mu(q) - rate.log_mu(ns))


def verify_growth_condition(rate: GrowthRate, witness: GrowthConditionWitness) -> GrowthReport:
    """Check ``L1 <= mu_{q_n}/mu_n <= L2`` for ``1 <= n <= horizon``.

    ``worst_low`` is the ``(n, ratio)`` pair with the smallest ratio and
    ``worst_high`` the one with the largest; both are reported whether or
    not the condition holds. Comparisons carry a relative slack of
    ``RATIO_RTOL`` so that bounds attained with equality are accepted.
    """
    if witness.horizon < 2:
        raise DomainError("witness horizon must be >= 2")
    ns = np.arange(1, witness.horizon + 1)
    q = np.asarray(witness.q, dtype=np.int64)
    if q.shape != ns.shape:
        raise InvalidWitnessError("witness q has wrong length")
    if np.any(q < ns + 1):
        bad = int(ns[np.argmax(q < ns + 1)])
        raise InvalidWitnessError(f"q_n < n + 1 at n={bad}")
    if np.any(np.diff(q) < 0):
        bad = int(ns[np.argmax(np.diff(q) < 0)]) + 1
        raise InvalidWitnessError(f"q is not increasing at n={bad}")
    if witness.L1 <= 1 or witness.L2 < witness.L1:
        raise InvalidWitnessError("need 1 < L1 <= L2")
    ratios = _ratios(rate, q, ns)
    lo = int(np.argmin(ratios))
    hi = int(np.argmax(ratios))
    holds = bool(
        np.all(ratios >= witness.L1 * (1 - RATIO_RTOL))
        and np.all(ratios <= witness.L2 * (1 + RATIO_RTOL))
    )
    return GrowthReport(holds, (lo + 1, float(ratios[lo])), (hi + 1, float(ratios[hi])))


_STANDARD_WITNESS = {
    "exponential": (lambda n: n + 1, math.e, math.e),
    "polynomial": (lambda n: 2 * n + 1, 2.0, 3.0),
    "logarithmic": (lambda n: (n + 1) ** 2, 2.0, 2.0 + math.log(1.25) / math.log(2.0)),
}


def standard_witness(rate: GrowthRate, horizon: int) -> GrowthConditionWitness:
    """Closed-form witness for a built-in rate.

    ============  ==============  ====  =========================
    kind          q_n             L1    L2
    ============  ==============  ====  =========================
    exponential   n + 1           e     e
    polynomial    2n + 1          2     3
    logarithmic   (n + 1)**2      2     2 + log(5/4) / log 2
    ============  ==============  ====  =========================
    """
    try:
        rule, L1, L2 = _STANDARD_WITNESS[rate.kind]
    except KeyError:
        raise DomainError(f"no closed-form witness for rate kind {rate.kind!r}") from None
    return GrowthConditionWitness.from_rule(rule, L1, L2, horizon)


def _first_crossing(rate, n, log_target, search_limit):
    base = float(rate.log_mu(n))
    # accept ratios within RATIO_RTOL of the target so exact hits count
    thresh = log_target - RATIO_RTOL

    def reaches(q):
        return float(rate.log_mu(q)) - base >= thresh

    lo, hi = n, n + 1
    step = 1
    while not reaches(hi):
        if hi >= search_limit:
            raise HorizonTooSmallError(
                f"no q <= {search_limit} reaches the target ratio for n={n}"
            )
        lo = hi
        hi = min(hi + step, search_limit)
        step *= 2
    # reaches(hi) and not reaches(lo); bisect the monotone ratio
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if reaches(mid):
            hi = mid
        else:
            lo = mid
    return hi


def discover_growth_constants(rate: GrowthRate, target_L1: float, horizon: int,
                              search_limit: int | None = None) -> GrowthConditionWitness:
    """Greedy witness: ``q_n`` is the first index with ``mu_q/mu_n >= target_L1``.

    ``L1`` and ``L2`` are then the extreme ratios over ``[1, horizon]``.
    Candidate indices ``q`` are searched up to ``search_limit`` (defaults to
    the table length for custom rates, otherwise ``2**53``).

    Raises
    ------
    HorizonTooSmallError
        If some ``n`` has no admissible ``q`` within the search range.
    """
    if horizon < 2:
        raise DomainError("horizon must be >= 2")
    if target_L1 <= 1:
        raise DomainError("target_L1 must exceed 1")
    if search_limit is None:
        search_limit = rate.limit if rate.limit is not None else 2 ** 53
    log_target = math.log(target_L1)
    q = np.empty(horizon, dtype=np.int64)
    for n in range(1, horizon + 1):
        q[n - 1] = _first_crossing(rate, n, log_target, search_limit)
    ratios = _ratios(rate, q, np.arange(1, horizon + 1))
    return GrowthConditionWitness(q, float(ratios.min()), float(ratios.max()), horizon)


@dataclass(frozen=True)
class SumBoundReport:
    lower: float
    sum: float
    upper: float
    lower_holds: bool
    upper_holds: bool


def _power_diff(log_a, log_b, alpha):
    """``(a**(1-alpha) - b**(1-alpha)) / (1 - alpha)``, or ``log(a/b)`` at alpha=1."""
    if alpha == 1:
        return log_a - log_b
    e = 1.0 - alpha
    return (np.exp(e * log_a) - np.exp(e * log_b)) / e


def _leq(a, b):
    return a <= b + RATIO_RTOL * max(abs(a), abs(b), 1e-300)


def sum_bound_report(rate: GrowthRate, alpha: float, s: int, r: int,
                     remark: bool = False) -> SumBoundReport:
    """Compare ``sum_{k=s}^r mu_k**(-alpha) mu'_k`` with its integral bounds.

    For ``alpha != 1`` the bounds are ``(mu_{r+1}**(1-a) - mu_s**(1-a))/(1-a)``
    and ``(mu_r**(1-a) - mu_{s-1}**(1-a))/(1-a)``; for ``alpha == 1`` they
    are ``log(mu_{r+1}/mu_s)`` and ``log(mu_r/mu_{s-1})``.

    The ``alpha == 1`` bounds are usually written through smoothed
    envelopes of ``mu``; the values used here are their limits as the
    smoothing parameter goes to zero.

    With ``remark=True`` and ``s == 1`` the first term is split off and the
    bounds become ``phi_1 mu_1**(1-a) + (mu_{r+1}**(1-a) - mu_2**(1-a))/(1-a)``
    and ``phi_1 mu_1**(1-a) + (mu_r**(1-a) - mu_1**(1-a))/(1-a)`` (with the
    logarithmic analogue at ``alpha == 1``). Note that the exact first term is
    ``mu_1**(1-a) / phi_1``; the two agree when ``phi_1 == 1``.

    The upper bound is reported, not guaranteed: it fails for rates whose
    increments grow, e.g. the exponential rate.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if r < s:
        raise DomainError("need r >= s")
    if s < 1 or (s == 1 and not remark):
        raise DomainError("need s >= 2 (or s == 1 with remark=True)")
    ks = np.arange(s, r + 1)
    total = float(np.sum(np.exp(-alpha * rate.log_mu(ks) + rate.log_increment(ks))))
    lm = lambda k: float(rate.log_mu(k))  # noqa: E731
    if s >= 2:
        lower = float(_power_diff(lm(r + 1), lm(s), alpha))
        upper = float(_power_diff(lm(r), lm(s - 1), alpha))
    else:
        head = float(rate.phi(1)) * (1.0 if alpha == 1 else math.exp((1 - alpha) * lm(1)))
        lower = head + float(_power_diff(lm(r + 1), lm(2), alpha))
        upper = head + float(_power_diff(lm(r), lm(1), alpha))
    return SumBoundReport(lower, total, upper, _leq(lower, total), _leq(total, upper))


def sum_bound_table(rate: GrowthRate, alpha: float, r_max: int):
    """All ``2 <= s <= r <= r_max`` at once.

    Returns
    -------
    lower, sums, upper : ndarray, shape (r_max + 1, r_max + 1)
        Indexed ``[s, r]``; entries with ``r < s`` or ``s < 2`` are NaN.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if r_max < 2:
        raise DomainError("r_max must be >= 2")
    ks = np.arange(1, r_max + 2)
    lmu = rate.log_mu(ks)  # lmu[k-1] = log mu_k
    terms = np.exp(-alpha * lmu[:-1] + rate.log_increment(ks[:-1]))
    shape = (r_max + 1, r_max + 1)
    lower = np.full(shape, np.nan)
    sums = np.full(shape, np.nan)
    upper = np.full(shape, np.nan)
    for s in range(2, r_max + 1):
        rs = np.arange(s, r_max + 1)
        sums[s, s:] = np.cumsum(terms[s - 1:r_max])
        lower[s, s:] = _power_diff(lmu[rs], lmu[s - 1], alpha)
        upper[s, s:] = _power_diff(lmu[rs - 1], lmu[s - 2], alpha)
    return lower, sums, upper
