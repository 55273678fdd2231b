"""Robustness of dichotomies under parameterized perturbations ``B_m(lam)``.

The perturbed system is ``x_{m+1} = (A_m + B_m(lam)) x_m``. Smallness is
measured in the ``phi``-weighted sense, ``||phi_{m+1} B_m(lam) x||_{m+1} <=
c ||x||_m``; for the strong variant the weight is ``mu_{m+1}**eps phi_{m+1}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .admissibility import AdmissibilityOperator, inverse_norm_estimate, recover_splitting
from .cocycle import EvolutionFamily, OperatorSequence, _log_norm_grid, growth_bound_fit
from .dichotomy import Splitting, fit_constants
from .errors import DomainError, MudichError
from .norms import NormFamily, probe_log_operator_norm, sup_norms

__all__ = [
    "SmallnessReport",
    "measure_smallness",
    "perturbed_cocycle",
    "PerturbedGrowthReport",
    "verify_perturbed_growth",
    "perturbed_operator",
    "perturbed_projections",
    "DetectionReport",
    "detect_dichotomy",
    "smallness_proxies",
    "LipschitzReport",
    "lipschitz_sweep",
]


@dataclass
class SmallnessReport:
    """Measured smallness constants.

    ``c`` bounds ``||phi_{m+1} B_m(lam) x||_{m+1} / ||x||_m``; ``d_lip`` the
    same ratio for ``B_m(l1) - B_m(l2)`` divided by ``|l1 - l2|``.
    ``strong_c`` and ``strong_d`` include the extra ``mu_{m+1}**eps`` weight.
    """

    c: float
    d_lip: float
    strong_c: float | None = None
    strong_d: float | None = None
    worst_c: tuple = ()
    worst_d: tuple = ()
    exact: bool = True


def _as_params(grid):
    out = [np.atleast_1d(np.asarray(g, dtype=float)) for g in grid]
    if not out:
        raise DomainError("parameter grid is empty")
    return out


def _log_step_norms(norms: NormFamily, ms, M, log_scale=None):
    """``log ||M_i||_{m_i + 1 <- m_i}`` for a stack ``M`` (len(ms), d, d)."""
    ms = np.asarray(ms)
    ls = np.zeros(ms.size) if log_scale is None else np.asarray(log_scale, dtype=float)
    if norms.exact:
        return norms.log_operator_norms(ms + 1, ms, M, ls)
    return np.array([probe_log_operator_norm(norms, int(m) + 1, norms, int(m), M[i]) + ls[i]
                     for i, m in enumerate(ms)])


def measure_smallness(fam, rate, norms=None, lambda_grid=(0.0,), horizon=200, eps=None
                      ) -> SmallnessReport:
    """Sup of the weighted perturbation norms over ``1 <= m <= horizon`` and the grid.

    Operator norms are exact for sup and Euclidean families and probed
    otherwise. ``d_lip`` is taken over all pairs of distinct grid points.
    """
    norms = norms or sup_norms(fam.dim)
    params = _as_params(lambda_grid)
    ms = np.arange(1, int(horizon) + 1)
    log_w = rate.log_phi(ms + 1)
    log_s = log_w + (eps * rate.log_mu(ms + 1) if eps is not None else 0.0)
    stacks = [fam.stack(ms, lam) for lam in params]

    def sup_log(M, logw):
        with np.errstate(divide="ignore"):
            w = _log_step_norms(norms, ms, M, logw)
        i = int(np.argmax(w))
        return float(w[i]), int(ms[i])

    c, worst_c = -math.inf, ()
    sc = -math.inf
    for k, B in enumerate(stacks):
        v, m = sup_log(B, log_w)
        if v > c:
            c, worst_c = v, (m, float(params[k][0]) if params[k].size == 1 else tuple(params[k]))
        if eps is not None:
            sc = max(sc, sup_log(B, log_s)[0])
    d, worst_d = -math.inf, ()
    sd = -math.inf
    for i, j in itertools.combinations(range(len(params)), 2):
        gap = float(np.linalg.norm(params[i] - params[j]))
        if gap == 0:
            continue
        diff = stacks[i] - stacks[j]
        v, m = sup_log(diff, log_w)
        v -= math.log(gap)
        if v > d:
            d, worst_d = v, (m, i, j)
        if eps is not None:
            sd = max(sd, sup_log(diff, log_s)[0] - math.log(gap))
    ex = lambda v: math.exp(v) if v > -math.inf else 0.0  # noqa: E731
    return SmallnessReport(ex(c), ex(d), ex(sc) if eps is not None else None,
                           ex(sd) if eps is not None else None, worst_c, worst_d, norms.exact)


def perturbed_cocycle(seq: OperatorSequence, fam, lam) -> OperatorSequence:
    """Operator sequence ``m -> A_m + B_m(lam)``."""
    if seq.dim != fam.dim:
        raise DomainError(f"dimension mismatch: operators {seq.dim}, perturbation {fam.dim}")
    lam = np.asarray(lam, dtype=float)

    def batch(ns):
        ns = np.asarray(ns, dtype=np.int64)
        return seq.stack(ns) + fam.stack(ns, lam)

    return OperatorSequence(seq.dim, lambda n: batch(np.array([n]))[0],
                            f"{seq.label}+{fam.label}", batch=batch)


@dataclass
class PerturbedGrowthReport:
    """Check of ``||C_{k,n}|| <= N (mu_k/mu_n)**(lam_growth + delta)``.

    ``applicable`` is False when ``c M / delta >= 1``; the grid is then not
    checked and ``holds`` is None.
    """

    applicable: bool
    N: float | None
    M: float
    lam_growth: float
    c: float
    delta: float
    holds: bool | None = None
    worst_margin: float | None = None
    worst_pair: tuple | None = None


def verify_perturbed_growth(seq, fam, rate, norms=None, lam=0.0, delta=0.5, horizon=200,
                            growth=None, c=None, tol=1e-9) -> PerturbedGrowthReport:
    """Grid check of the perturbed growth bound with ``N = M / (1 - c M / delta)``.

    Parameters
    ----------
    growth : (M, lam_growth), optional
        Growth constants of the unperturbed family (fitted when omitted).
    c : float, optional
        Smallness constant at ``lam`` (measured when omitted).
    """
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    norms = norms or sup_norms(seq.dim)
    if growth is None:
        g = growth_bound_fit(EvolutionFamily(seq), rate, norms, horizon)
        growth = (g.M, g.lam)
    M, lg = float(growth[0]), float(growth[1])
    if c is None:
        c = measure_smallness(fam, rate, norms, [lam], horizon).c
    q = c * M / delta
    if q >= 1:
        return PerturbedGrowthReport(False, None, M, lg, float(c), float(delta))
    N = M / (1.0 - q)
    pert = EvolutionFamily(perturbed_cocycle(seq, fam, lam))
    m, n, w = _log_norm_grid(pert, norms, horizon)
    u = rate.log_mu(m) - rate.log_mu(n)
    r = w - (math.log(N) + (lg + delta) * u)
    i = int(np.argmax(r))
    worst = float(r[i])
    return PerturbedGrowthReport(True, N, M, lg, float(c), float(delta), bool(worst <= tol), worst,
                                 (int(m[i]), int(n[i])))


def perturbed_operator(op_base: AdmissibilityOperator, fam, lam) -> AdmissibilityOperator:
    """Admissibility operator of ``A + B(lam)`` with the data of ``op_base``."""
    return AdmissibilityOperator(op_base.rate, perturbed_cocycle(op_base.seq, fam, lam),
                                 op_base.Z, op_base.horizon, norms=op_base.norms)


def perturbed_projections(op_base: AdmissibilityOperator, fam, lam, probe_times,
                          tol=1e-7) -> Splitting:
    """Projections of the perturbed system recovered from its admissibility operator."""
    return recover_splitting(perturbed_operator(op_base, fam, lam), probe_times, tol=tol)


def smallness_proxies(op: AdmissibilityOperator, c, T_inv=None, floor=1e-8, dense_limit=4000):
    """Operational reading of "c sufficiently small".

    Returns ``(ok, info)``: the truncated system's smallest singular value
    must exceed ``floor`` times the largest, and ``c * ||T^{-1}|| < 1/2``.
    """
    M, _ = op.matrix()
    if M.shape[0] <= dense_limit:
        sv = np.linalg.svd(M.toarray(), compute_uv=False)
        ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    else:
        from scipy.sparse.linalg import svds

        smax = svds(M, k=1, return_singular_vectors=False)[0]
        smin = svds(M, k=1, which="SM", return_singular_vectors=False)[0]
        ratio = float(smin / smax)
    if T_inv is None:
        T_inv = inverse_norm_estimate(op)
    neumann = float(c) * float(T_inv)
    ok = ratio > floor and neumann < 0.5
    return ok, {"sv_ratio": ratio, "c_T_inv": neumann, "T_inv": float(T_inv)}


@dataclass
class DetectionReport:
    """Outcome of :func:`detect_dichotomy` at one parameter value."""

    lam: object
    is_dichotomy: bool
    cert: object = None
    cert_with_norms: object = None
    split: Splitting | None = None
    reason: str = ""
    meta: dict = field(default_factory=dict)


def detect_dichotomy(op_base: AdmissibilityOperator, fam, lam, fit_horizon, norms=None,
                     probe_times=None) -> DetectionReport:
    """Recover the perturbed splitting and fit certificates on ``[1, fit_horizon]``.

    A failed recovery (boundary contamination, singular system) or a fitted
    decay rate at or below the no-dichotomy threshold yields
    ``is_dichotomy = False``. Both the nonuniform and the with-norms flavor
    are fitted; the nonuniform one decides.
    """
    H = int(fit_horizon)
    if H >= op_base.horizon:
        raise DomainError("fit_horizon must be below the operator horizon")
    norms = norms or sup_norms(op_base.dim)
    op = perturbed_operator(op_base, fam, lam)
    times = list(range(1, H + 1)) if probe_times is None else list(probe_times)
    try:
        split = recover_splitting(op, times)
    except MudichError as exc:
        return DetectionReport(lam, False, reason=f"recovery failed: {exc}")
    pfam = EvolutionFamily(op.seq)
    try:
        cert = fit_constants(pfam, split, op.rate, norms, "nonuniform", H)
        cert_w = fit_constants(pfam, split, op.rate, norms, "with_norms", H)
    except MudichError as exc:
        return DetectionReport(lam, False, split=split, reason=f"fit failed: {exc}")
    ok = bool(cert.is_dichotomy)
    return DetectionReport(lam, ok, cert, cert_w, split,
                           "" if ok else "fitted decay rate below threshold", dict(split.meta))


@dataclass
class LipschitzReport:
    """Result of :func:`lipschitz_sweep`.

    ``emp_lip`` is the largest difference quotient of ``lam -> P_{m,lam}``;
    ``bound`` the chain estimate ``d ||T^{-1}||**2 / (1 - ||T^{-1}|| ||dT||)``
    on the worst adjacent pair. ``heuristic`` is True when ``||T^{-1}||``
    comes from random trials only (a lower estimate).
    """

    emp_lip: float
    bound: float
    ok: bool
    heuristic: bool
    per_pair: list = field(default_factory=list)
    failed: list = field(default_factory=list)


def lipschitz_sweep(op_base: AdmissibilityOperator, fam, lambda_grid, probe_times, eps=None,
                    trials=16) -> LipschitzReport:
    """Empirical Lipschitz constant of ``lam -> P_{m,lam}`` against the chain bound.

    For every adjacent pair of grid points the difference quotient
    ``max_m ||P_{m,l1} - P_{m,l2}||_m / |l1 - l2|`` is measured (operator
    norms over the probe times, exact for sup norms). The bound uses the
    measured ``d`` of the pair (``mu**eps``-weighted when ``eps`` is given),
    ``||T_{l1} - T_{l2}|| <= d |l1 - l2|`` and the larger ``||T^{-1}||``
    estimate of the two endpoints.

    Pairs whose perturbed operator cannot be inverted are listed in
    ``failed`` and skipped.
    """
    params = _as_params(lambda_grid)
    if len(params) < 3:
        raise DomainError("lipschitz_sweep needs at least three grid points")
    norms = op_base.norms
    if not norms.exact:
        raise DomainError("lipschitz_sweep needs sup or Euclidean norms")
    times = np.asarray(list(probe_times), dtype=np.int64)
    H = op_base.horizon
    splits, tinv, failed = [], [], []
    for lam in params:
        op = perturbed_operator(op_base, fam, lam)
        try:
            sp = recover_splitting(op, times)
            tinv.append(inverse_norm_estimate(op, trials=trials))
            splits.append(sp.P_stack(times))
        except MudichError as exc:
            splits.append(None)
            tinv.append(math.inf)
            failed.append((tuple(lam), str(exc)))
    heuristic = norms.base != "uniform_sup" or H * op_base.dim > 4096
    emp, bnd, per_pair = 0.0, 0.0, []
    for i in range(len(params) - 1):
        if splits[i] is None or splits[i + 1] is None:
            continue
        gap = float(np.linalg.norm(params[i + 1] - params[i]))
        if gap == 0:
            continue
        q = float(np.max(np.exp(norms.log_operator_norms(
            times, times, splits[i + 1] - splits[i], np.zeros(times.size))))) / gap
        sm = measure_smallness(fam, op_base.rate, norms, [params[i], params[i + 1]], H, eps=eps)
        d = sm.strong_d if eps is not None else sm.d_lip
        t = max(tinv[i], tinv[i + 1])
        denom = 1.0 - t * d * gap
        b = d * t * t / denom if denom > 0 else math.inf
        per_pair.append({"lam1": params[i], "lam2": params[i + 1], "quotient": q, "d": d,
                         "T_inv": t, "bound": b})
        if q > emp:
            emp, bnd = q, b
        elif not per_pair[:-1]:
            bnd = b
    if per_pair and emp == 0.0:
        bnd = max(p["bound"] for p in per_pair)
    ok = bool(emp <= bnd * (1 + 1e-6))
    return LipschitzReport(emp, bnd, ok, heuristic, per_pair, failed)
