"""Adapted (Lyapunov) norms and checks of the two equivalence theorems.

Given a splitting with a nonuniform dichotomy, the adapted norm

    ||x||_m = sup_{k >= m} ||A_{k,m} P_m x|| (mu_k/mu_m)**lam
            + sup_{k <= m} ||A_{k,m} Q_m x|| (mu_m/mu_k)**lam

turns it into a dichotomy with respect to the family ``||.||_m``. The
strong variant adds ``sup_{k > m} ||A_{k,m} Q_m x|| (mu_k/mu_m)**-b``.

Backward sups range over the finite set ``1 <= k <= m`` and are exact.
Forward sups are cut at a common index ``k_end = horizon + tail`` for every
``m``. Because the windows are nested, the dichotomy inequalities for the
adapted family hold exactly on the grid; the price of the cut is reported
as a truncation bound derived from the source certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cocycle import backward_sweep, forward_sweep
from .dichotomy import DichotomyCertificate, verify_certificate
from .errors import DivergenceError, DomainError, EvaluationError
from .norms import NormFamily, sup_norms

__all__ = [
    "Propagators",
    "AdaptedNorms",
    "build_adapted",
    "build_strong_adapted",
    "check_equivalence",
    "EquivalenceReport",
]


class Propagators:
    """Dense triangles of ``A_{k,n} P_n``, ``A_{k,n} Q_n`` and unstable inverses.

    ``fwd_P[k-1, n-1]`` holds ``A_{k,n} P_n`` for ``n <= k <= k_end``,
    ``n <= horizon``; ``fwd_Q`` likewise with ``Q_n``; ``bwd_Q[m-1, n-1]``
    holds ``A_{m,n} Q_n`` (the inverse on the unstable fibres) for
    ``m <= n <= horizon``. Each triangle is stored as mantissas with a
    log-scale array, ``-inf`` marking unused slots.
    """

    def __init__(self, fam, split, horizon, k_end, with_Q=False):
        d = fam.dim
        H, K = int(horizon), int(k_end)
        self.horizon, self.k_end, self.dim = H, K, d
        self.fwd_P = np.zeros((K, H, d, d))
        self.fwd_P_log = np.full((K, H), -np.inf)
        if with_Q:
            self.fwd_Q = np.zeros((K, H, d, d))
            self.fwd_Q_log = np.full((K, H), -np.inf)
        else:
            self.fwd_Q = self.fwd_Q_log = None

        def proj_P(ns):
            ns = np.asarray(ns)
            out = split.P_stack(np.minimum(ns, H))
            return np.where((ns <= H)[:, None, None], out, 0.0)

        def proj_Q(ns):
            ns = np.asarray(ns)
            out = split.Q_stack(np.minimum(ns, H))
            return np.where((ns <= H)[:, None, None], out, 0.0)

        for k, ml, ll in forward_sweep(fam, K, proj_P):
            c = min(k, H)
            self.fwd_P[k - 1, :c] = ml[:c]
            self.fwd_P_log[k - 1, :c] = np.where(np.any(ml[:c], axis=(1, 2)), ll[:c], -np.inf)
        if with_Q:
            for k, ml, ll in forward_sweep(fam, K, proj_Q):
                c = min(k, H)
                self.fwd_Q[k - 1, :c] = ml[:c]
                self.fwd_Q_log[k - 1, :c] = np.where(np.any(ml[:c], axis=(1, 2)), ll[:c], -np.inf)
        self.bwd_Q = np.zeros((H, H, d, d))
        self.bwd_Q_log = np.full((H, H), -np.inf)
        for m, ml, ll in backward_sweep(fam, split, H):
            self.bwd_Q[m - 1, m - 1:] = ml
            self.bwd_Q_log[m - 1, m - 1:] = np.where(np.any(ml, axis=(1, 2)), ll, -np.inf)


def _log_ref_norms(ref, V):
    """log of reference norms along the second-to-last axis ``(..., d, p)``."""
    if ref.base == "euclidean":
        v = np.sqrt(np.sum(V * V, axis=-2))
    else:
        v = np.max(np.abs(V), axis=-2)
    with np.errstate(divide="ignore"):
        return np.log(v)


class AdaptedNorms(NormFamily):
    """Adapted norm family on times ``1..horizon``.

    Use :func:`build_adapted` or :func:`build_strong_adapted`.
    """

    def __init__(self, props, rate, lam, ref, b=None, cert=None, kind="adapted"):
        self.props = props
        self.rate = rate
        self.lam = float(lam)
        self.b = None if b is None else float(b)
        self.ref = ref
        self.cert = cert
        H, K = props.horizon, props.k_end
        lm = rate.log_mu(np.arange(1, K + 1))
        self._lm = lm
        # forward weights lam * log(mu_k/mu_m) for k >= m
        kk = np.arange(1, K + 1)[:, None]
        mm = np.arange(1, H + 1)[None, :]
        fw = self.lam * (lm[:, None] - lm[None, :H])
        self._fwd_w = np.where(kk >= mm, props.fwd_P_log + fw, -np.inf)
        bw = self.lam * (lm[None, :H] - lm[:H, None])  # [k, m]: lam log(mu_m/mu_k)
        self._bwd_w = np.where(np.arange(1, H + 1)[:, None] <= mm, props.bwd_Q_log + bw, -np.inf)
        if self.b is not None:
            sw = -self.b * (lm[:, None] - lm[None, :H])
            self._str_w = np.where(kk > mm, props.fwd_Q_log + sw, -np.inf)
        else:
            self._str_w = None
        super().__init__(props.dim, kind, evaluator=self._evaluate,
                         meta={"lambda": self.lam, "b": self.b, "horizon": H, "k_end": K})

    @property
    def horizon(self):
        return self.props.horizon

    def _parts(self, ms, Z, log_scales):
        """log of (stable sup, backward unstable sup, forward unstable sup).

        ``Z[i]`` (shape (d, p)) is evaluated at time ``ms[i]`` and scaled by
        ``exp(log_scales[i])``.
        """
        p = self.props
        ms = np.asarray(ms, dtype=np.int64)
        if ms.size and (ms.min() < 1 or ms.max() > p.horizon):
            raise DomainError(f"adapted norms are defined on [1, {p.horizon}]")
        js = ms - 1
        ls = np.asarray(log_scales, dtype=float)[:, None]
        if ms.size == 0:
            empty = np.zeros((0, Z.shape[-1]))
            return empty, empty, empty
        # only k >= min(ms) can enter a forward sup, only k <= max(ms) a backward one
        lo, hi = int(ms.min()) - 1, int(ms.max())
        with np.errstate(invalid="ignore"):
            fs = np.einsum("kmij,mjp->kmip", p.fwd_P[lo:, js], Z)
            s = np.max(_log_ref_norms(self.ref, fs) + self._fwd_w[lo:, js][:, :, None], axis=0)
            bs = np.einsum("kmij,mjp->kmip", p.bwd_Q[:hi, js], Z)
            u = np.max(_log_ref_norms(self.ref, bs) + self._bwd_w[:hi, js][:, :, None], axis=0)
            if self._str_w is not None:
                gs = np.einsum("kmij,mjp->kmip", p.fwd_Q[lo:, js], Z)
                g = np.max(_log_ref_norms(self.ref, gs) + self._str_w[lo:, js][:, :, None], axis=0)
            else:
                g = np.full(s.shape, -np.inf)
        return s + ls, u + ls, g + ls

    def log_norm_many(self, ms, Z, log_scales=None):
        """``log ||Z[i] exp(log_scales[i])||_{ms[i]}`` for columns; returns (len(ms), p)."""
        Z = np.asarray(Z, dtype=float)
        if log_scales is None:
            log_scales = np.zeros(len(ms))
        parts = np.stack(self._parts(ms, Z, log_scales))
        top = np.max(parts, axis=0)
        with np.errstate(invalid="ignore"):
            out = top + np.log(np.sum(np.exp(parts - top), axis=0))
        return np.where(np.isfinite(top), out, -np.inf)

    def log_norm_stack(self, m, V, log_scale=0.0):
        """``log ||v||_m`` for the columns of ``V`` (shape (d, p)) times ``exp(log_scale)``."""
        V = np.asarray(V, dtype=float)
        return self.log_norm_many([m], V[None], [log_scale])[0]

    def log_norm(self, n, x, log_scale=0.0):
        X = np.asarray(x, dtype=float)
        out = self.log_norm_stack(int(n), X.reshape(-1, self.dim).T, log_scale)
        return float(out[0]) if X.ndim == 1 else out

    def _evaluate(self, m, X):
        out = np.exp(self.log_norm_stack(m, X.T))
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"adapted norm overflow at m={m}")
        return out

    def truncation_bound(self, m, x):
        """Upper bound on the forward terms omitted beyond ``k_end``.

        With a source certificate ``(D, lam_c, eps)`` the omitted stable terms
        are at most ``D mu_m**eps (mu_{k_end+1}/mu_m)**(lam - lam_c) ||x||``;
        for the strong family the omitted unstable terms add
        ``K D mu_m**(eps + gamma) (mu_{k_end+1}/mu_m)**0``-type slack, reported
        through the same formula with ``b`` in place of ``lam``. Returns
        ``inf`` when no certificate is attached.
        """
        if self.cert is None:
            return math.inf
        c = self.cert
        x = np.asarray(x, dtype=float)
        nx = float(self.ref.norm(1, x))
        lm_m = float(self.rate.log_mu(m))
        lm_end = float(self.rate.log_mu(self.props.k_end + 1))
        bound = c.D * math.exp(c.eps * lm_m + (self.lam - c.lam) * (lm_end - lm_m)) * nx
        if self.b is not None and c.K is not None:
            # ||A_{k,m} Q_m|| <= K (mu_k/mu_m)**b mu_m**gamma * D mu_m**eps
            bound += c.K * c.D * math.exp((c.gamma + c.eps) * lm_m) * nx
        return bound


def _source_k_end(horizon, tail):
    if tail < 0:
        raise DomainError("tail must be >= 0")
    return int(horizon) + int(tail)


def _divergence_check(norms, probes=None):
    """Raise if some forward sup peaks at the window end for a basis vector."""
    p = norms.props
    d = p.dim
    V = np.eye(d)
    for m in range(1, p.horizon + 1, max(1, p.horizon // 20)):
        j = m - 1
        fs = np.einsum("kij,jp->kip", p.fwd_P[j:, j], V)
        vals = _log_ref_norms(norms.ref, fs) + norms._fwd_w[j:, j][:, None]
        finite = np.isfinite(vals).any(axis=0)
        if vals.shape[0] < 3:
            continue
        last = vals[-1]
        head = np.max(vals[:-1], axis=0)
        slack = 1e-9 * np.maximum(1.0, np.abs(np.where(np.isfinite(head), head, 0.0)))
        grows = finite & (last > head + slack)
        if np.any(grows):
            raise DivergenceError(
                f"forward sup at m={m} is still increasing at k={p.k_end}; "
                "supply a certificate or a smaller lambda")


def build_adapted(fam, split, rate, lam, horizon, tail=20, ref_norms=None, cert=None,
                  props=None) -> AdaptedNorms:
    """Adapted norms ``||.||_m`` for ``1 <= m <= horizon``.

    Parameters
    ----------
    lam : float
        Exponent of the weights, normally the certificate's ``lambda``.
    tail : int
        Forward sups run up to ``k_end = horizon + tail``.
    ref_norms : NormFamily, optional
        Reference norm ``||.||`` (sup norm by default).
    cert : DichotomyCertificate, optional
        Source certificate, used for the truncation bound. Without it the
        forward sups are checked for growth at the window end.

    Raises
    ------
    DivergenceError
        If no certificate is supplied and a forward sup is still increasing
        at the end of the window.
    """
    ref = ref_norms or sup_norms(fam.dim)
    if not ref.exact:
        raise DomainError("the reference norm must be a sup or Euclidean norm")
    props = props or Propagators(fam, split, horizon, _source_k_end(horizon, tail))
    out = AdaptedNorms(props, rate, lam, ref, cert=cert, kind="adapted")
    if cert is None:
        _divergence_check(out)
    return out


def build_strong_adapted(fam, split, rate, lam, b, horizon, tail=20, ref_norms=None, cert=None,
                         props=None) -> AdaptedNorms:
    """Strong adapted norms ``||x||_n = ||x||^s_n + ||x||^u_n``.

    ``||x||^u_n`` has the extra forward term
    ``sup_{m > n} ||A_{m,n} Q_n x|| (mu_m/mu_n)**-b``. Requires ``lam <= b``.
    """
    if lam > b:
        raise DomainError("strong adapted norms need lambda <= b")
    ref = ref_norms or sup_norms(fam.dim)
    if not ref.exact:
        raise DomainError("the reference norm must be a sup or Euclidean norm")
    if props is None or props.fwd_Q is None:
        props = Propagators(fam, split, horizon, _source_k_end(horizon, tail), with_Q=True)
    out = AdaptedNorms(props, rate, lam, ref, b=b, cert=cert, kind="strong_adapted")
    if cert is None:
        _divergence_check(out)
    return out


# ---------------------------------------------------------------------------
# equivalence checks


@dataclass
class EquivalenceReport:
    """Outcome of :func:`check_equivalence`; margins are log-residuals."""

    flavor: str
    forward_ok: bool
    backward_ok: bool
    sandwich_C: float
    sandwich_eps: float
    worst_sandwich_low: tuple
    worst_sandwich_high: tuple
    worst_stable: tuple
    worst_unstable: tuple
    worst_growth: tuple | None
    backward_report: object = None
    details: dict = field(default_factory=dict, repr=False)

    @property
    def passes(self):
        return self.forward_ok and self.backward_ok

    @property
    def worst_margin(self):
        vals = [self.worst_sandwich_low[-1], self.worst_sandwich_high[-1],
                self.worst_stable[-1], self.worst_unstable[-1]]
        if self.worst_growth is not None:
            vals.append(self.worst_growth[-1])
        if self.backward_report is not None:
            vals.append(self.backward_report.worst_margin)
        return max(vals)


def _scaled_apply(mant, logs, x):
    """Apply a stack of scaled matrices to a vector: ``(mant @ x, logs)``."""
    return np.einsum("kij,j->ki", mant, x), logs


def _argmax_pair(R, rows, cols):
    """``(rows[i], cols[j], R[i, j])`` at the largest finite entry of ``R``."""
    R = np.where(np.isfinite(R), R, -np.inf)
    if R.size == 0 or not np.isfinite(R).any():
        return (0, 0, -math.inf)
    i, j = np.unravel_index(int(np.argmax(R)), R.shape)
    return (int(rows[i]), int(cols[j]), float(R[i, j]))


def check_equivalence(fam, split, rate, cert: DichotomyCertificate, horizon, tail=20,
                      ref_norms=None, n_vectors=100, pair_vectors=8, pair_stride=None, seed=0,
                      tol=1e-9) -> EquivalenceReport:
    """Check both directions of the equivalence theorem for ``cert``.

    Direction 1 -> 2 builds the adapted family (strong-adapted for
    ``cert.flavor == 'strong'``) and checks, with margins in log scale:

    * the sandwich ``||x|| <= ||x||_m <= C mu_m**e ||x||`` on ``n_vectors``
      random vectors, with ``C = 2D, e = eps`` (or ``C = (2+K)D``,
      ``e = eps + gamma`` for the strong flavor);
    * ``||A_{m,n} P_n x||_m <= D (mu_m/mu_n)**-lam ||x||_n`` for ``m >= n``
      and ``||A_{m,n} Q_n x||_m <= D (mu_n/mu_m)**-lam ||x||_n`` for
      ``m <= n``, on ``pair_vectors`` random vectors per source time;
    * strong flavor: ``||A_{m,n} x||_m <= 3 (mu_m/mu_n)**b ||x||_n``.

    Every target time is evaluated directly, so the pair check costs
    ``O(horizon**2)`` per source time; ``pair_stride`` (default
    ``max(1, horizon // 50)``) thins the source times.

    Direction 2 -> 1 takes the with-norms constants ``(D, lam)`` together with
    the sandwich ``(C, e)`` and verifies the nonuniform inequalities with
    constant ``C D`` in the reference norm (strong flavor: also
    ``||A_{m,n}|| <= 3 C (mu_m/mu_n)**b mu_n**e``).
    """
    if cert.flavor not in ("nonuniform", "strong"):
        raise DomainError("check_equivalence needs a nonuniform or strong certificate")
    ref = ref_norms or sup_norms(fam.dim)
    H = int(horizon)
    strong = cert.flavor == "strong"
    if strong:
        norms = build_strong_adapted(fam, split, rate, cert.lam, cert.b, H, tail, ref, cert)
        C = (2.0 + cert.K) * cert.D
        e = cert.eps + cert.gamma
    else:
        norms = build_adapted(fam, split, rate, cert.lam, H, tail, ref, cert)
        C = 2.0 * cert.D
        e = cert.eps
    props = norms.props
    d = fam.dim
    lm = rate.log_mu(np.arange(1, props.k_end + 1))
    rng = np.random.default_rng(seed)

    # sandwich
    ms = np.arange(1, H + 1)
    X = rng.standard_normal((d, n_vectors))
    log_ref = _log_ref_norms(ref, X)[None]
    ln = norms.log_norm_many(ms, np.broadcast_to(X, (H, d, n_vectors)))
    lo = _argmax_pair(log_ref - ln, ms, np.arange(n_vectors))
    hi = _argmax_pair(ln - (math.log(C) + e * lm[:H, None] + log_ref), ms, np.arange(n_vectors))

    # dichotomy inequalities for the adapted family, one source time at a time
    ws = (0, 0, -math.inf)
    wu = (0, 0, -math.inf)
    wg = (0, 0, -math.inf) if strong else None
    logD = math.log(cert.D)
    V = rng.standard_normal((d, pair_vectors))
    stride = pair_stride or max(1, H // 50)
    for n in sorted(set(range(1, H + 1, stride)) | {H}):
        jn = n - 1
        lnx = norms.log_norm_stack(n, V)
        fm = np.arange(n, H + 1)
        zP = np.einsum("mij,jp->mip", props.fwd_P[fm - 1, jn], V)
        lP = props.fwd_P_log[fm - 1, jn]
        lz = norms.log_norm_many(fm, zP, np.where(np.isfinite(lP), lP, 0.0))
        lz = np.where(np.isfinite(lP)[:, None], lz, -np.inf)
        r = lz - (logD - cert.lam * (lm[fm - 1, None] - lm[jn]) + lnx)
        ws = max(ws, _argmax_pair(r, fm, [n] * pair_vectors), key=lambda t: t[-1])
        if strong:
            zQ = np.einsum("mij,jp->mip", props.fwd_Q[fm - 1, jn], V)
            lQ = props.fwd_Q_log[fm - 1, jn].copy()
            zQ[0] = split.Q(n) @ V
            lQ[0] = 0.0
            top = np.maximum(np.where(np.isfinite(lP), lP, -np.inf), lQ)
            top = np.where(np.isfinite(top), top, 0.0)
            with np.errstate(invalid="ignore"):
                wP = np.where(np.isfinite(lP), np.exp(lP - top), 0.0)
                wQ = np.where(np.isfinite(lQ), np.exp(lQ - top), 0.0)
            zz = zP * wP[:, None, None] + zQ * wQ[:, None, None]
            lg = norms.log_norm_many(fm, zz, top)
            rg = lg - (math.log(3.0) + cert.b * (lm[fm - 1, None] - lm[jn]) + lnx)
            wg = max(wg, _argmax_pair(rg, fm, [n] * pair_vectors), key=lambda t: t[-1])
        bm = np.arange(1, n + 1)
        zB = np.einsum("mij,jp->mip", props.bwd_Q[bm - 1, jn], V)
        lB = props.bwd_Q_log[bm - 1, jn]
        lb = norms.log_norm_many(bm, zB, np.where(np.isfinite(lB), lB, 0.0))
        lb = np.where(np.isfinite(lB)[:, None], lb, -np.inf)
        r = lb - (logD - cert.lam * (lm[jn] - lm[bm - 1, None]) + lnx)
        wu = max(wu, _argmax_pair(r, bm, [n] * pair_vectors), key=lambda t: t[-1])
    fwd_margins = [lo[-1], hi[-1], ws[-1], wu[-1]] + ([wg[-1]] if strong else [])
    forward_ok = bool(max(fwd_margins) <= tol)

    # direction 2 -> 1 in the reference norm
    if strong:
        back = DichotomyCertificate("strong", C * cert.D, cert.lam, e, K=3.0 * C, b=cert.b,
                                    gamma=e)
    else:
        back = DichotomyCertificate("nonuniform", C * cert.D, cert.lam, e)
    rep = verify_certificate(fam, split, rate, ref, back, H, tol=tol)
    return EquivalenceReport(cert.flavor, forward_ok, bool(rep.holds), C, e, lo, hi, ws, wu, wg,
                             rep, {"norms": norms, "back_cert": back})
