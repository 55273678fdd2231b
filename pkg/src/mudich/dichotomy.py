"""Splittings, dichotomy certificates, their verification and fitting.

Every inequality is checked in log space. For a pair ``(m, n)`` the margin
is the log-norm minus the log-bound, so a certificate holds on a grid
exactly when all margins are ``<= 0``.

For ``m >= n`` with ``u = log(mu_m/mu_n)`` and ``v = log mu_n``:

* stable:   ``log ||A_{m,n} P_n|| <= log D - lambda u + eps v``
* unstable: ``log ||A_{n,m} Q_m|| <= log D - lambda u + eps log mu_m``
  (the inverse of ``A_{m,n}`` on the unstable fibres, source time ``m``)
* strong:   ``log ||A_{m,n}||     <= log K + b u + gamma v``

``eps`` is zero for certificates with respect to per-time norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .cocycle import (EvolutionFamily, OperatorSequence, backward_sweep, fit_log_bound,
                      forward_sweep, restricted_inverses)
from .errors import DomainError, SplittingError

__all__ = [
    "Splitting",
    "DichotomyCertificate",
    "CertificateReport",
    "DerivedConstants",
    "verify_certificate",
    "fit_constants",
    "projection_norm_bound",
    "derived_constants",
    "margin_grid",
    "NO_DICHOTOMY_RATE",
]

FLAVORS = ("with_norms", "nonuniform", "strong")

# fitted decay rates at or below this value are reported as "no dichotomy"
NO_DICHOTOMY_RATE = 1e-3


class Splitting:
    """A family of projections ``P_n`` with complements ``Q_n = Id - P_n``.

    Parameters
    ----------
    proj : callable
        ``proj(n) -> (d, d)`` projection at time ``n``.
    dim : int
    batch : callable, optional
        Vectorized ``batch(ns) -> (len(ns), d, d)``.
    times : tuple of int, optional
        Domain of definition for tabulated splittings (None means all n).
    """

    def __init__(self, proj, dim, batch=None, label="", times=None):
        self._proj = proj
        self._batch = batch
        self.dim = int(dim)
        self.label = label
        self.times = None if times is None else tuple(int(t) for t in times)

    @classmethod
    def constant(cls, P, label="constant"):
        P = np.array(P, dtype=float, ndmin=2)
        d = P.shape[0]
        return cls(lambda n: P, d, batch=lambda ns: np.broadcast_to(P, (len(ns), d, d)),
                   label=label)

    @classmethod
    def from_table(cls, table, label="table"):
        """Splitting defined only on the keys of ``{n: P_n}``."""
        table = {int(k): np.asarray(v, dtype=float) for k, v in table.items()}
        d = next(iter(table.values())).shape[0]

        def proj(n):
            try:
                return table[int(n)]
            except KeyError:
                raise DomainError(f"splitting {label!r} is not defined at n={n}") from None

        return cls(proj, d, label=label, times=sorted(table))

    def P(self, n):
        return np.asarray(self._proj(int(n)), dtype=float)

    def Q(self, n):
        return np.eye(self.dim) - self.P(n)

    def P_stack(self, ns):
        ns = np.asarray(ns, dtype=np.int64)
        if self._batch is not None:
            return np.asarray(self._batch(ns), dtype=float).reshape(ns.size, self.dim, self.dim)
        if ns.size == 0:
            return np.zeros((0, self.dim, self.dim))
        return np.stack([self.P(int(k)) for k in ns])

    def Q_stack(self, ns):
        return np.eye(self.dim)[None] - self.P_stack(ns)

    def check(self, fam, horizon, idem_tol=1e-10, comm_tol=1e-8, pairs=None):
        """Verify the splitting invariants on ``[1, horizon]``.

        Returns a dict with the worst idempotence defect, the worst relative
        commutation defect and the smallest relative restricted singular
        value. Raises :class:`SplittingError` when a tolerance is exceeded
        and :class:`NonInvertibleError` for singular unstable restrictions.
        """
        ns = np.arange(1, horizon + 1)
        P = self.P_stack(ns)
        idem = float(np.max(np.abs(P @ P - P)))
        if idem > idem_tol:
            raise SplittingError(f"P_n is not idempotent (defect {idem:.3g})")
        comm = 0.0
        for m, ml, _ in forward_sweep(fam, horizon):
            lhs = P[m - 1] @ ml
            rhs = ml @ P[:m]
            scale = np.maximum(np.linalg.norm(ml, axis=(1, 2)), 1e-300)
            comm = max(comm, float(np.max(np.linalg.norm(lhs - rhs, axis=(1, 2)) / scale)))
        if comm > comm_tol:
            raise SplittingError(f"P_m A_(m,n) != A_(m,n) P_n (relative defect {comm:.3g})")
        restricted_inverses(fam.seq, self, 1, horizon)
        return {"idempotence": idem, "commutation": comm}


@dataclass(frozen=True)
class DichotomyCertificate:
    """Constants of a dichotomy.

    ``flavor='with_norms'`` uses ``(D, lam)`` with per-time norms,
    ``'nonuniform'`` adds the exponent ``eps``, ``'strong'`` also carries the
    growth bound ``||A_{m,n}|| <= K (mu_m/mu_n)**b mu_n**gamma`` for
    ``m >= n``.

    Fitted certificates with ``lam <= NO_DICHOTOMY_RATE`` describe the
    absence of a dichotomy; see :attr:`is_dichotomy`.
    """

    flavor: str
    D: float
    lam: float
    eps: float = 0.0
    K: float | None = None
    b: float | None = None
    gamma: float | None = None
    horizon: int | None = None

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise DomainError(f"unknown certificate flavor {self.flavor!r}")
        if not self.D > 0 or self.lam < 0 or self.eps < 0:
            raise DomainError("need D > 0, lambda >= 0, eps >= 0")
        if self.flavor == "with_norms" and self.eps != 0:
            raise DomainError("with_norms certificates have eps = 0")
        if self.flavor == "strong":
            if self.K is None or self.b is None or self.gamma is None:
                raise DomainError("strong certificates need the growth constants (K, b, gamma)")
            if not (self.K > 0 and self.gamma >= 0 and self.b >= self.lam):
                raise DomainError("strong certificates need K > 0, gamma >= 0, b >= lambda")

    @property
    def is_dichotomy(self):
        return self.lam > NO_DICHOTOMY_RATE

    def as_row(self):
        nan = float("nan")
        return {
            "flavor": self.flavor, "D": self.D, "lambda": self.lam, "eps": self.eps,
            "K": nan if self.K is None else self.K,
            "b": nan if self.b is None else self.b,
            "gamma": nan if self.gamma is None else self.gamma,
        }


@dataclass(frozen=True)
class CertificateReport:
    holds: bool
    worst_stable: tuple
    worst_unstable: tuple
    worst_strong: tuple | None
    horizon: int
    grids: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def worst_margin(self):
        vals = [self.worst_stable[2], self.worst_unstable[2]]
        if self.worst_strong is not None:
            vals.append(self.worst_strong[2])
        return max(vals)


def projected_family(fam, split):
    """Evolution family of the stable steps ``P_{k+1} A_k``.

    For an invariant splitting its products equal ``A_{m,n} P_n``. Applying
    the projection at every step keeps rounding errors in ``P_n`` from being
    amplified along the unstable directions.
    """
    seq = fam.seq

    def batch(ns):
        ns = np.asarray(ns, dtype=np.int64)
        return split.P_stack(ns + 1) @ seq.stack(ns)

    return EvolutionFamily(OperatorSequence(seq.dim, lambda n: batch(np.array([n]))[0],
                                            f"P{seq.label}", batch=batch))


def margin_grid(fam, split, norms, horizon, which):
    """Log operator norms on all pairs, as flat arrays ``(m, n, w)``.

    Stable norms are propagated with :func:`projected_family`.

    ``which='stable'`` gives ``log ||A_{m,n} P_n||_{m<-n}`` for ``m >= n``;
    ``'unstable'`` gives ``log ||A_{n,m} Q_m||_{n<-m}`` (``m >= n``, i.e.
    the target time is the smaller index ``n``); ``'full'`` gives
    ``log ||A_{m,n}||_{m<-n}``.
    """
    ms, ns, ws = [], [], []
    if which in ("stable", "full"):
        right = split.P_stack if which == "stable" else None
        sweep_fam = projected_family(fam, split) if which == "stable" else fam
        for m, ml, ll in forward_sweep(sweep_fam, horizon, right):
            nn = np.arange(1, m + 1)
            ws.append(norms.log_operator_norms(np.full(m, m), nn, ml, ll))
            ms.append(np.full(m, m))
            ns.append(nn)
    elif which == "unstable":
        for n, ml, ll in backward_sweep(fam, split, horizon):
            mm = np.arange(n, horizon + 1)
            ws.append(norms.log_operator_norms(np.full(mm.size, n), mm, ml, ll))
            ms.append(mm)
            ns.append(np.full(mm.size, n))
    else:
        raise DomainError(f"unknown grid {which!r}")
    return np.concatenate(ms), np.concatenate(ns), np.concatenate(ws)


def _worst(m, n, r):
    if r.size == 0 or not np.any(np.isfinite(r)):
        return (0, 0, -math.inf)
    i = int(np.nanargmax(np.where(np.isfinite(r), r, -np.inf)))
    return (int(m[i]), int(n[i]), float(r[i]))


def verify_certificate(fam, split, rate, norms, cert: DichotomyCertificate, horizon,
                       tol=1e-9, grids=None) -> CertificateReport:
    """Check a certificate on every pair ``1 <= n <= m <= horizon``.

    Margins are log-residuals; the report holds when every margin is at most
    ``tol``. ``worst_unstable`` is reported as ``(n, m, margin)`` with the
    target time first, matching the ``m <= n`` convention for inverses.

    Parameters
    ----------
    grids : dict, optional
        Precomputed output of :func:`margin_grid`, keyed by ``'stable'``,
        ``'unstable'``, ``'full'``; reused instead of recomputing.
    """
    if horizon < 2:
        raise DomainError("horizon must be >= 2")
    grids = dict(grids or {})
    needed = ["stable", "unstable"] + (["full"] if cert.flavor == "strong" else [])
    for key in needed:
        if key not in grids:
            grids[key] = margin_grid(fam, split, norms, horizon, key)
    logD = math.log(cert.D)
    m, n, w = grids["stable"]
    u = rate.log_mu(m) - rate.log_mu(n)
    r_s = w - (logD - cert.lam * u + cert.eps * rate.log_mu(n))
    m2, n2, w2 = grids["unstable"]
    u2 = rate.log_mu(m2) - rate.log_mu(n2)
    r_u = w2 - (logD - cert.lam * u2 + cert.eps * rate.log_mu(m2))
    ws = _worst(m, n, r_s)
    wu = _worst(n2, m2, r_u)
    wst = None
    worst = max(ws[2], wu[2])
    if cert.flavor == "strong":
        m3, n3, w3 = grids["full"]
        u3 = rate.log_mu(m3) - rate.log_mu(n3)
        r_f = w3 - (math.log(cert.K) + cert.b * u3 + cert.gamma * rate.log_mu(n3))
        wst = _worst(m3, n3, r_f)
        worst = max(worst, wst[2])
    return CertificateReport(bool(worst <= tol), ws, wu, wst, int(horizon), grids)


def fit_constants(fam, split, rate, norms, flavor, horizon, grids=None) -> DichotomyCertificate:
    """Fit certificate constants to the log-norm cloud of a splitting.

    The stable and unstable clouds are fitted jointly by the linear program
    of :func:`mudich.cocycle.fit_log_bound`: minimize the mean log-bound over
    the grid subject to feasibility on every pair, with ``lambda, eps >= 0``.
    ``D`` is then the exact worst residual, so the returned certificate
    passes :func:`verify_certificate`. For the strong flavor, ``(K, b,
    gamma)`` is fitted afterwards on the full propagator with ``b >= lambda``.

    A decay rate ``lambda`` that comes out at or below ``NO_DICHOTOMY_RATE``
    signals that the grid admits no dichotomy; the certificate is returned
    anyway and :attr:`DichotomyCertificate.is_dichotomy` is False.
    """
    if flavor not in FLAVORS:
        raise DomainError(f"unknown certificate flavor {flavor!r}")
    grids = dict(grids or {})
    for key in ["stable", "unstable"] + (["full"] if flavor == "strong" else []):
        if key not in grids:
            grids[key] = margin_grid(fam, split, norms, horizon, key)
    m, n, w = grids["stable"]
    m2, n2, w2 = grids["unstable"]
    u = np.concatenate([rate.log_mu(m) - rate.log_mu(n), rate.log_mu(m2) - rate.log_mu(n2)])
    v = np.concatenate([rate.log_mu(n), rate.log_mu(m2)])
    ww = np.concatenate([w, w2])
    if flavor == "with_norms":
        c, th = fit_log_bound(ww, u[:, None], [-1.0])
        lam, eps = float(th[0]), 0.0
    else:
        c, th = fit_log_bound(ww, np.column_stack([u, v]), [-1.0, 1.0])
        lam, eps = float(th[0]), float(th[1])
    D = math.exp(c) if np.isfinite(c) else 1.0
    if flavor != "strong":
        return DichotomyCertificate(flavor, D, lam, eps, horizon=int(horizon))
    m3, n3, w3 = grids["full"]
    u3 = rate.log_mu(m3) - rate.log_mu(n3)
    v3 = rate.log_mu(n3)
    c3, th3 = fit_log_bound(w3, np.column_stack([u3, v3]), [1.0, 1.0], lower=[lam, 0.0])
    return DichotomyCertificate(flavor, D, lam, eps, K=math.exp(c3), b=max(float(th3[0]), lam),
                                gamma=float(th3[1]), horizon=int(horizon))


# ---------------------------------------------------------------------------
# projection norm bound


def _range_basis(M, tol=1e-10):
    U, s, _ = np.linalg.svd(M)
    r = int(np.sum(s > tol * max(1.0, s.max())))
    return U[:, :r]


def _sphere_points(basis, norms, n, count, seed):
    """Points of ``range(basis)`` with unit reference norm ``||.||``."""
    k = basis.shape[1]
    if k == 1:
        coeffs = np.array([[1.0], [-1.0]])
    elif k == 2:
        th = 2 * np.pi * np.arange(count) / count
        coeffs = np.column_stack([np.cos(th), np.sin(th)])
    else:
        rng = np.random.default_rng(seed)
        coeffs = rng.standard_normal((count, k))
    pts = coeffs @ basis.T
    return pts, coeffs


@dataclass(frozen=True)
class ProjectionBound:
    p_norm: float
    gamma_n: float
    bound_ok: bool


def projection_norm_bound(split, norms, n, sample_budget=720, ref_norms=None,
                          tol=1e-9, seed=0) -> ProjectionBound:
    """Estimate ``||P_n||`` and the fibre separation ``gamma_n``.

    ``gamma_n = inf ||u + v||_n`` over ``u`` in ``range P_n`` and ``v`` in
    ``range Q_n`` with ``||u|| = ||v|| = 1`` in the reference norm
    (``ref_norms``, defaulting to ``norms``). One-dimensional fibres are
    enumerated exactly (``u = +-u0``); a two-dimensional fibre is sampled on
    ``sample_budget`` angles and refined by a bounded scalar search; larger
    fibres use seeded multistart Nelder-Mead. When one fibre is trivial,
    ``gamma_n = inf`` and the bound is vacuous.

    Raises
    ------
    SplittingError
        If ``range P_n`` and ``range Q_n`` are not complementary.
    """
    ref = norms if ref_norms is None else ref_norms
    P = split.P(n)
    d = P.shape[0]
    if np.max(np.abs(P @ P - P)) > 1e-8:
        raise SplittingError(f"P_{n} is not a projection")
    X = _range_basis(P)
    Z = _range_basis(np.eye(d) - P)
    if X.shape[1] + Z.shape[1] != d:
        raise SplittingError(f"range and kernel of P_{n} are not complementary")
    lp = norms.log_operator_norms([n], [n], P[None], budget=sample_budget)[0]
    p_norm = float(math.exp(lp)) if np.isfinite(lp) else 0.0
    if X.shape[1] == 0 or Z.shape[1] == 0:
        return ProjectionBound(p_norm, math.inf, True)

    def unit(pts):
        return pts / ref.norm(n, pts)[:, None]

    U, cu = _sphere_points(X, ref, n, sample_budget, seed)
    V, cv = _sphere_points(Z, ref, n, sample_budget, seed + 1)
    U, V = unit(U), unit(V)
    sums = U[:, None, :] + V[None, :, :]
    vals = norms.norm(n, sums.reshape(-1, d)).reshape(len(U), len(V))
    i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
    gamma = float(vals[i, j])

    def pair_value(a, b):
        ua = a @ X.T
        vb = b @ Z.T
        ua = ua / ref.norm(n, ua[None])[0]
        vb = vb / ref.norm(n, vb[None])[0]
        return float(norms.norm(n, (ua + vb)[None])[0])

    # local refinement of the best grid pair
    if X.shape[1] == 1 and Z.shape[1] == 2:
        h = 2 * np.pi / sample_budget
        th0 = math.atan2(cv[j, 1], cv[j, 0])
        res = optimize.minimize_scalar(
            lambda t: pair_value(cu[i], np.array([math.cos(t), math.sin(t)])),
            bounds=(th0 - h, th0 + h), method="bounded", options={"xatol": 1e-12})
        gamma = min(gamma, float(res.fun))
    elif X.shape[1] == 2 and Z.shape[1] == 1:
        h = 2 * np.pi / sample_budget
        th0 = math.atan2(cu[i, 1], cu[i, 0])
        res = optimize.minimize_scalar(
            lambda t: pair_value(np.array([math.cos(t), math.sin(t)]), cv[j]),
            bounds=(th0 - h, th0 + h), method="bounded", options={"xatol": 1e-12})
        gamma = min(gamma, float(res.fun))
    elif X.shape[1] > 1 or Z.shape[1] > 1:
        kx = X.shape[1]
        x0 = np.concatenate([cu[i], cv[j]])
        res = optimize.minimize(lambda z: pair_value(z[:kx], z[kx:]), x0, method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000})
        gamma = min(gamma, float(res.fun))
    if gamma <= 0:
        raise SplittingError(f"fibres of P_{n} intersect")
    return ProjectionBound(p_norm, gamma, bool(p_norm <= 2.0 / gamma + tol))


# ---------------------------------------------------------------------------
# constants of the converse construction


@dataclass(frozen=True)
class DerivedConstants:
    """Constants produced by the proof chain of the converse theorem.

    ``log_N0`` and ``log_N0_u`` are kept because ``N0`` overflows quickly.
    """

    M2: float
    N0: float
    K0: int
    D1: float
    a: float
    L: float
    N0_u: float
    K0_u: int
    D2: float
    b: float
    log_N0: float
    log_N0_u: float

    def gamma_iterate(self, q, n, k):
        """``gamma(n, k)``: ``k``-fold iterate of the witness map ``n -> q_n``."""
        out = int(n)
        for _ in range(int(k)):
            out = int(q(out))
        return out


def derived_constants(M, lam, L1, L2, T_inv_norm) -> DerivedConstants:
    """Evaluate the converse-construction constants.

    * ``M2 = M L2**lam max(lam L1**lam (L1**lam - 1)**-1 T, L2**lam)``
    * ``N0 = L2 exp(e M2 T)`` and ``K0 = ceil(log N0 / log L1)``
    * ``D1 = e M L2**lam``, ``a = 1 / (K0 log L2)``
    * ``L = (1 - L1**-lam) / (M lam T)``, ``N0_u = exp(e T / L)``,
      ``K0_u = ceil(log N0_u / log L1)``, ``D2 = e / L``,
      ``b = 1 / (K0_u log L2)``

    where ``T`` is (an estimate of) the norm of the inverse admissibility
    operator. ``K0`` is the least integer with ``L1**K0 >= N0``.
    """
    if not (M > 0 and lam > 0 and T_inv_norm > 0):
        raise DomainError("need M, lambda, T_inv_norm > 0")
    if not (L2 >= L1 > 1):
        raise DomainError("need L2 >= L1 > 1")
    e = math.e
    L1l = L1 ** lam
    if L1l == 1.0:
        raise DomainError("degenerate constants: L1**lambda == 1")
    T = T_inv_norm
    M2 = M * L2 ** lam * max(lam * L1l / (L1l - 1.0) * T, L2 ** lam)
    log_N0 = math.log(L2) + e * M2 * T
    K0 = max(1, math.ceil(log_N0 / math.log(L1) - 1e-12))
    D1 = e * M * L2 ** lam
    a = 1.0 / (K0 * math.log(L2))
    L = (1.0 - L1 ** (-lam)) / (M * lam * T)
    log_N0_u = e * T / L
    K0_u = max(1, math.ceil(log_N0_u / math.log(L1) - 1e-12))
    D2 = e / L
    b = 1.0 / (K0_u * math.log(L2))

    def _exp(x):
        return math.exp(x) if x < 709 else math.inf

    return DerivedConstants(M2, _exp(log_N0), K0, D1, a, L, _exp(log_N0_u), K0_u, D2, b,
                            log_N0, log_N0_u)


__all__ += ["ProjectionBound"]
