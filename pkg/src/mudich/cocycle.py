"""Operator sequences, evolution families and growth-bound fitting.

Products ``A_{m-1} ... A_n`` are accumulated as :class:`ScaledMatrix`
values (mantissa times ``exp(log_scale)``) so that exponential rates can be
followed far beyond the double-precision range.

Besides single evaluations the module offers *sweeps*: iterators that step
the target time ``m`` and update the whole stack ``{A_{m,n} : n <= m}`` at
once. Grid verifications and fits are built on them.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy import optimize, spatial

from .errors import DomainError, EvaluationError, NonInvertibleError, OrderingError

__all__ = [
    "OperatorSequence",
    "ScaledMatrix",
    "EvolutionFamily",
    "read_operator_table",
    "normalize_stack",
    "evolution",
    "unstable_inverse",
    "forward_sweep",
    "backward_sweep",
    "restricted_inverses",
    "growth_bound_fit",
    "GrowthBound",
    "fit_log_bound",
]

# relative singular-value floor for restricted invertibility
INVERTIBILITY_RTOL = 1e-12

_LOG2 = math.log(2.0)


class OperatorSequence:
    """The generator ``n -> A_n`` of a linear difference equation.

    Parameters
    ----------
    dim : int
    gen : callable
        ``gen(n)`` returns the ``d x d`` matrix ``A_n`` for ``n >= 1``.
    label : str
    batch : callable, optional
        Vectorized ``batch(ns) -> (len(ns), d, d)``; used for speed when given.
    """

    def __init__(self, dim, gen, label="", batch=None):
        if dim < 1:
            raise DomainError("dimension must be >= 1")
        self.dim = int(dim)
        self._gen = gen
        self._batch = batch
        self.label = label

    def _checked(self, A, n):
        A = np.asarray(A, dtype=float)
        if A.shape != (self.dim, self.dim):
            raise DomainError(f"A_{n} has shape {A.shape}, expected {(self.dim, self.dim)}")
        if not np.all(np.isfinite(A)):
            raise DomainError(f"A_{n} has non-finite entries")
        return A

    def at(self, n):
        if n < 1:
            raise DomainError("time index must be >= 1")
        return self._checked(self._gen(int(n)), n)

    def stack(self, ns):
        """Matrices ``A_n`` for the given times, shape ``(len(ns), d, d)``."""
        ns = np.asarray(ns, dtype=np.int64)
        if ns.size and ns.min() < 1:
            raise DomainError("time index must be >= 1")
        if self._batch is not None:
            out = np.asarray(self._batch(ns), dtype=float).reshape(ns.size, self.dim, self.dim)
            if not np.all(np.isfinite(out)):
                raise DomainError("operator sequence has non-finite entries")
            return out
        if ns.size == 0:
            return np.zeros((0, self.dim, self.dim))
        return np.stack([self.at(int(k)) for k in ns])

    def __repr__(self):
        return f"OperatorSequence(dim={self.dim}, label={self.label!r})"


def read_operator_table(path, label=None) -> OperatorSequence:
    """Operator sequence from rows ``n a11 a12 ... add`` (``#`` comments).

    Times must be ``1, 2, ..., L`` in order; the sequence is only defined
    up to ``L``.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(t) for t in line.split()])
    if not rows:
        raise DomainError(f"{path}: empty operator table")
    width = len(rows[0]) - 1
    d = int(round(math.sqrt(width)))
    if d * d != width or any(len(r) != width + 1 for r in rows):
        raise DomainError(f"{path}: rows must hold n followed by d*d entries")
    ns = [int(r[0]) for r in rows]
    if ns != list(range(1, len(rows) + 1)):
        raise DomainError(f"{path}: times must be 1, 2, ..., L")
    mats = np.array([r[1:] for r in rows]).reshape(-1, d, d)

    def gen(n):
        if n > len(mats):
            raise DomainError(f"operator table ends at n={len(mats)}")
        return mats[n - 1]

    def batch(ns_):
        if ns_.size and ns_.max() > len(mats):
            raise DomainError(f"operator table ends at n={len(mats)}")
        return mats[ns_ - 1]

    return OperatorSequence(d, gen, label or str(path), batch=batch)


def normalize_stack(M, log_scale):
    """Rescale each matrix of a stack so its max entry lies in ``[1/2, 1)``.

    Scaling is by powers of two, hence exact. Zero matrices get scale 0.
    """
    M = np.asarray(M, dtype=float)
    amax = np.max(np.abs(M), axis=(-2, -1))
    _, e = np.frexp(amax)
    e = np.where(amax > 0, e, 0)
    M = np.ldexp(M, -e[..., None, None])
    ls = np.where(amax > 0, log_scale + e * _LOG2, 0.0)
    return M, ls


@dataclass(frozen=True)
class ScaledMatrix:
    """Matrix stored as ``mantissa * exp(log_scale)``."""

    mantissa: np.ndarray
    log_scale: float = 0.0

    @classmethod
    def of(cls, M, log_scale=0.0):
        m, ls = normalize_stack(np.asarray(M, dtype=float), log_scale)
        return cls(m, float(ls))

    def value(self):
        """Dense value; may overflow to ``inf``."""
        with np.errstate(over="ignore"):
            return self.mantissa * math.exp(self.log_scale) if self.log_scale < 709 \
                else self.mantissa * np.exp(self.log_scale)

    def __matmul__(self, other):
        if isinstance(other, ScaledMatrix):
            return ScaledMatrix.of(self.mantissa @ other.mantissa,
                                   self.log_scale + other.log_scale)
        return ScaledMatrix.of(self.mantissa @ np.asarray(other, dtype=float), self.log_scale)

    def apply(self, x):
        """``(mantissa @ x, log_scale)`` without forming the dense product."""
        return self.mantissa @ np.asarray(x, dtype=float), self.log_scale

    def log_norm(self, ord=2):
        with np.errstate(divide="ignore"):
            return float(np.log(np.linalg.norm(self.mantissa, ord=ord))) + self.log_scale \
                if np.any(self.mantissa) else -math.inf


class EvolutionFamily:
    """Evolution family ``A_{m,n} = A_{m-1} ... A_n`` of an operator sequence.

    Values are memoized per ``(m, n)``; a new request extends the nearest
    cached product with the same source time. Cache access is guarded by a
    lock so one family can be shared between threads.
    """

    def __init__(self, seq: OperatorSequence):
        self.seq = seq
        self.dim = seq.dim
        self._cache = {}
        self._latest = {}
        self._lock = threading.Lock()

    def evolution(self, m, n) -> ScaledMatrix:
        if n < 1:
            raise DomainError("time index must be >= 1")
        if m < n:
            raise OrderingError(f"evolution needs m >= n, got m={m}, n={n}")
        key = (int(m), int(n))
        with self._lock:
            hit = self._cache.get(key)
            start = self._latest.get(n, n)
            if start > m:
                start = n
            base = self._cache.get((start, n)) if start > n else None
        if hit is not None:
            return hit
        if base is None:
            start = n
            mant, ls = np.eye(self.dim), 0.0
        else:
            mant, ls = base.mantissa, base.log_scale
        if m > start:
            mats = self.seq.stack(np.arange(start, m))
            for A in mats:
                mant, ls = normalize_stack(A @ mant, ls)
        out = ScaledMatrix(mant, float(ls))
        with self._lock:
            self._cache[key] = out
            if m > self._latest.get(n, n):
                self._latest[n] = m
        return out

    def forward_sweep(self, horizon, right=None):
        return forward_sweep(self, horizon, right)


def evolution(fam: EvolutionFamily, m, n) -> ScaledMatrix:
    """``A_{m,n}`` as a :class:`ScaledMatrix` (identity when ``m == n``)."""
    return fam.evolution(m, n)


def _restricted_inverse(A, Qk, Qk1, k):
    """``U (A U)^+ Q_{k+1}`` with ``U`` an orthonormal basis of ``range Q_k``."""
    d = A.shape[0]
    U, s, _ = np.linalg.svd(Qk)
    r = int(np.sum(s > 1e-10 * max(1.0, s.max() if s.size else 0.0)))
    if r == 0:
        return np.zeros((d, d))
    U = U[:, :r]
    AU = A @ U
    sv = np.linalg.svd(AU, compute_uv=False)
    if sv.max() == 0 or sv.min() < INVERTIBILITY_RTOL * sv.max():
        raise NonInvertibleError(
            f"A_{k} restricted to ker P_{k} is numerically singular", k=k
        )
    return U @ np.linalg.pinv(AU) @ Qk1


def restricted_inverses(seq: OperatorSequence, split, start, stop):
    """Stack of ``R_k`` for ``start <= k < stop``; ``R_k`` inverts ``A_k`` on ``ker P``.

    ``R_k`` maps ``ker P_{k+1}`` onto ``ker P_k`` and vanishes on
    ``range P_{k+1}``.
    """
    d = seq.dim
    if stop <= start:
        return np.zeros((0, d, d))
    ks = np.arange(start, stop)
    A = seq.stack(ks)
    Q = split.Q_stack(np.arange(start, stop + 1))
    return np.stack([_restricted_inverse(A[i], Q[i], Q[i + 1], int(k)) for i, k in enumerate(ks)])


def unstable_inverse(fam: EvolutionFamily, m, n, split) -> ScaledMatrix:
    """Inverse of ``A_{n,m}`` on ``ker P_m``, as a map ``ker P_n -> ker P_m``.

    The returned matrix is ``R_m R_{m+1} ... R_{n-1} Q_n`` and vanishes on
    ``range P_n``.

    Raises
    ------
    NonInvertibleError
        If some ``A_k`` restricted to ``ker P_k`` is numerically singular.
    """
    if m > n:
        raise OrderingError(f"unstable_inverse needs m <= n, got m={m}, n={n}")
    mant, ls = normalize_stack(split.Q(n), 0.0)
    if n > m:
        R = restricted_inverses(fam.seq, split, m, n)
        for Rk in R[::-1]:
            mant, ls = normalize_stack(Rk @ mant, ls)
    return ScaledMatrix(mant, float(ls))


def forward_sweep(fam: EvolutionFamily, horizon, right=None, start=1):
    """Iterate ``m = start, ..., horizon`` yielding ``(m, mantissas, log_scales)``.

    ``mantissas[j]`` represents ``A_{m, start + j} @ right[start + j]``
    for ``j = 0, ..., m - start`` (``right`` defaults to the identity). The
    right factor is applied once at the source time, so the sweep costs one
    batched product per step.

    Parameters
    ----------
    right : callable, optional
        ``right(ns) -> (len(ns), d, d)`` stack, e.g. projections ``P_n``.
    """
    d = fam.dim
    ml = np.zeros((0, d, d))
    ll = np.zeros(0)
    for m in range(start, horizon + 1):
        if m > start:
            A = fam.seq.at(m - 1)
            ml = np.einsum("ij,pjk->pik", A, ml)
            ml, ll = normalize_stack(ml, ll)
        R = np.eye(d)[None] if right is None else np.asarray(right(np.array([m])))
        new, nl = normalize_stack(R.reshape(1, d, d), np.zeros(1))
        ml = np.concatenate([ml, new])
        ll = np.concatenate([ll, nl])
        yield m, ml, ll


def backward_sweep(fam: EvolutionFamily, split, horizon, start=1):
    """Iterate ``m = horizon, ..., start`` yielding ``(m, mantissas, log_scales)``.

    ``mantissas[j]`` represents ``A_{m, m + j} Q_{m + j}`` (the inverse of
    ``A_{m+j, m}`` on the unstable fibres) for ``j = 0, ..., horizon - m``.
    """
    d = fam.dim
    R = restricted_inverses(fam.seq, split, start, horizon)
    Q = split.Q_stack(np.arange(start, horizon + 1))
    ml = np.zeros((0, d, d))
    ll = np.zeros(0)
    for m in range(horizon, start - 1, -1):
        if m < horizon:
            ml = np.einsum("ij,pjk->pik", R[m - start], ml)
            ml, ll = normalize_stack(ml, ll)
        new, nl = normalize_stack(Q[m - start][None], np.zeros(1))
        ml = np.concatenate([new, ml])
        ll = np.concatenate([nl, ll])
        yield m, ml, ll


# ---------------------------------------------------------------------------
# log-linear bound fitting


def _hull_filter(P):
    """Rows of ``P`` that can be active in an upper-envelope LP.

    The last column is the response; a point strictly inside the convex hull
    can never be the unique maximiser of a linear functional, so only hull
    vertices are kept. Degenerate clouds fall back to unique rows.
    """
    P = np.unique(P, axis=0)
    if P.shape[0] <= P.shape[1] + 1:
        return P
    try:
        hull = spatial.ConvexHull(P)
        return P[hull.vertices]
    except (spatial.QhullError, ValueError):
        return P


def _solve_envelope_lp(G, w, cost, lower, upper):
    A_ub = -np.column_stack([np.ones(len(w)), G])
    bounds = [(None, None)] + list(zip(lower, upper))
    res = optimize.linprog(cost, A_ub=A_ub, b_ub=-w, bounds=bounds, method="highs")
    if res.status != 0:
        raise EvaluationError(f"bound fit failed: {res.message}")
    return res.x[0], np.clip(res.x[1:], lower, upper)


def fit_log_bound(w, features, signs, lower=None, upper=None, max_rounds=60):
    """Fit ``w_i <= c + sum_j s_j theta_j F_ij`` minimizing the mean bound.

    The objective is ``c + sum_j s_j theta_j mean(F_j)``, i.e. the average
    of the log-bound over the cloud, subject to ``theta_j`` in
    ``[lower_j, upper_j]``. After the solve, ``c`` is recomputed as the exact
    maximum residual so the returned bound is feasible on every point.

    Large clouds are handled by constraint generation: the program is solved
    on the convex-hull vertices of a strided subsample, the most violated
    points of the full cloud are added, and the loop repeats until no point
    is violated.

    Parameters
    ----------
    w : ndarray, shape (p,)
        Log-norm cloud (``-inf`` entries are ignored).
    features : ndarray, shape (p, k)
    signs : sequence of +1 / -1, length k

    Returns
    -------
    c : float
    theta : ndarray, shape (k,)
    """
    w = np.asarray(w, dtype=float)
    F = np.asarray(features, dtype=float).reshape(w.size, -1)
    keep = np.isfinite(w)
    if not np.any(keep):
        return -math.inf, np.zeros(F.shape[1])
    w, F = w[keep], F[keep]
    G = F * np.asarray(signs, dtype=float)
    k = G.shape[1]
    lower = np.zeros(k) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(k, 1e6) if upper is None else np.asarray(upper, dtype=float)
    cost = np.concatenate([[1.0], G.mean(axis=0)])
    stride = max(1, w.size // 20000)
    active = np.unique(np.concatenate([np.arange(0, w.size, stride), [int(np.argmax(w))]]))
    pts = _hull_filter(np.column_stack([G[active], w[active]]))
    Ga, wa = pts[:, :-1], pts[:, -1]
    for _ in range(max_rounds):
        c, theta = _solve_envelope_lp(Ga, wa, cost, lower, upper)
        r = w - G @ theta - c
        tol = 1e-12 * max(1.0, float(np.max(np.abs(w))))
        bad = np.flatnonzero(r > tol)
        if bad.size == 0:
            break
        top = bad[np.argsort(r[bad])[-200:]]
        Ga = np.vstack([Ga, G[top]])
        wa = np.concatenate([wa, w[top]])
    c = float(np.max(w - G @ theta))
    return c, theta


@dataclass(frozen=True)
class GrowthBound:
    M: float
    lam: float
    worst_pair: tuple
    horizon: int

    def __iter__(self):
        return iter((self.M, self.lam, self.worst_pair))


def _log_norm_grid(fam, norms, horizon, right=None):
    """Arrays ``(m, n, u, w)`` over all pairs ``1 <= n <= m <= horizon``."""
    ms, ns, ws = [], [], []
    for m, ml, ll in forward_sweep(fam, horizon, right):
        nn = np.arange(1, m + 1)
        w = norms.log_operator_norms(np.full(m, m), nn, ml, ll)
        ms.append(np.full(m, m))
        ns.append(nn)
        ws.append(w)
    return np.concatenate(ms), np.concatenate(ns), np.concatenate(ws)


def growth_bound_fit(fam: EvolutionFamily, rate, norms, horizon) -> GrowthBound:
    """Fit ``||A_{m,n}||_{m<-n} <= M (mu_m/mu_n)**lambda`` on ``n <= m <= horizon``.

    Among all feasible ``(M, lambda)`` with ``lambda >= 0`` the fit minimizes
    the mean of ``log M + lambda log(mu_m/mu_n)`` over the grid, a linear
    program in ``(log M, lambda)``. ``M`` is then the exact worst residual,
    so the bound holds on every pair; ``worst_pair`` is where it is attained.
    """
    if horizon < 2:
        raise DomainError("horizon must be >= 2")
    m, n, w = _log_norm_grid(fam, norms, horizon)
    if not np.all(np.isfinite(w) | (w == -np.inf)):
        raise EvaluationError("non-finite operator norm in growth fit")
    u = rate.log_mu(m) - rate.log_mu(n)
    c, theta = fit_log_bound(w, u[:, None], [1.0])
    lam = float(theta[0])
    resid = w - lam * u
    i = int(np.argmax(resid))
    return GrowthBound(float(math.exp(c)), lam, (int(m[i]), int(n[i])), int(horizon))
