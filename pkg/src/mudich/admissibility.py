"""The weighted difference operator ``T`` on truncated sequence spaces.

For a subspace ``Z`` and a horizon ``N`` the operator acts on sequences
``x_1, ..., x_N`` with ``x_1`` in ``Z`` by

    (T x)_1 = 0,    (T x)_m = phi_m (x_m - A_{m-1} x_{m-1}),  2 <= m <= N.

Two independent inverses are provided. :func:`green_solve` uses a known
splitting and evaluates the Green formula through a forward recursion for
the stable part and a backward recursion for the unstable part.
:func:`truncated_solve` needs no splitting: it closes the block-bidiagonal
system with the terminal condition ``x_N`` orthogonal to ``A_{N,1} Z`` and
factors it once with a sparse LU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .cocycle import restricted_inverses
from .dichotomy import Splitting
from .errors import (
    BoundaryContaminationError,
    DomainError,
    MembershipError,
    SingularSystemError,
)
from .norms import NormFamily, sup_norms

__all__ = [
    "TruncatedSequence",
    "AdmissibilityOperator",
    "GreenSolution",
    "apply_T",
    "green_solve",
    "green_sum_constant",
    "truncated_solve",
    "inverse_norm_estimate",
    "recover_splitting",
    "DEFAULT_TAIL_MARGIN",
]

DEFAULT_TAIL_MARGIN = 20
MEMBERSHIP_TOL = 1e-10


@dataclass
class TruncatedSequence:
    """Finite sequence ``x_1, ..., x_N`` measured by per-time norms.

    ``entries[m - 1]`` holds ``x_m``.
    """

    entries: np.ndarray
    norms: NormFamily | None = None

    def __post_init__(self):
        self.entries = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if self.norms is None:
            self.norms = sup_norms(self.entries.shape[1])

    @property
    def horizon(self):
        return self.entries.shape[0]

    @property
    def dim(self):
        return self.entries.shape[1]

    def pointwise_norms(self):
        """``||x_m||_m`` for ``m = 1, ..., N``."""
        nr = self.norms
        if nr.exact:
            base = np.max(np.abs(self.entries), axis=1) if nr.base == "uniform_sup" \
                else np.linalg.norm(self.entries, axis=1)
            return base * np.exp(nr.log_weight(np.arange(1, self.horizon + 1)))
        return np.array([nr.norm(m, self.entries[m - 1]) for m in range(1, self.horizon + 1)])

    def sup_norm(self, upto=None):
        vals = self.pointwise_norms()
        return float(np.max(vals[:upto])) if vals.size else 0.0

    def __sub__(self, other):
        return TruncatedSequence(self.entries - other.entries, self.norms)


def _orthonormal(basis, dim):
    B = np.asarray(basis, dtype=float).reshape(dim, -1)
    if B.shape[1] == 0:
        return np.zeros((dim, 0))
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    r = int(np.sum(s > 1e-12 * max(1.0, s.max())))
    return U[:, :r]


class AdmissibilityOperator:
    """``T`` for a rate, an operator sequence, a subspace ``Z`` and a horizon.

    Parameters
    ----------
    Z : array_like, shape (d, r)
        Basis of ``Z`` (orthonormalized internally); ``r = 0`` is allowed.
    norms : NormFamily, optional
        Per-time norms used for sup norms of sequences (default: sup norm).
    """

    def __init__(self, rate, seq, Z, horizon, norms=None):
        if horizon < 2:
            raise DomainError("horizon must be >= 2")
        self.rate = rate
        self.seq = seq
        self.dim = seq.dim
        self.Z = _orthonormal(Z, self.dim)
        self.horizon = int(horizon)
        self.norms = norms or sup_norms(self.dim)
        ns = np.arange(1, self.horizon + 1)
        self.phi = rate.phi(ns)
        self.A = seq.stack(np.arange(1, self.horizon))  # A[k-1] = A_k
        self._lu = None
        self._W_end = None

    # -- structure -------------------------------------------------------

    def membership_residual(self, x1):
        x1 = np.asarray(x1, dtype=float)
        return float(np.linalg.norm(x1 - self.Z @ (self.Z.T @ x1)))

    def terminal_basis(self):
        """Orthonormal basis of ``A_{N,1} Z``, propagated with QR steps."""
        if self._W_end is None:
            W = self.Z
            if W.shape[1]:
                for A in self.A:
                    W, _ = np.linalg.qr(A @ W)
            self._W_end = W
        return self._W_end

    def matrix(self):
        """Square sparse system for :func:`truncated_solve` (rows scaled by 1/phi)."""
        d, N = self.dim, self.horizon
        r = self.Z.shape[1]
        ortho = linalg.null_space(self.Z.T) if r else np.eye(d)
        if r == d:
            ortho = np.zeros((d, 0))
        blocks_r, blocks_c, blocks_v = [], [], []

        def put(r0, c0, M):
            M = np.atleast_2d(M)
            rr, cc = np.nonzero(np.ones_like(M, dtype=bool))
            blocks_r.append(rr + r0)
            blocks_c.append(cc + c0)
            blocks_v.append(M[rr, cc])

        row = 0
        if ortho.shape[1]:
            put(row, 0, ortho.T)
            row += ortho.shape[1]
        eye = np.eye(d)
        for m in range(2, N + 1):
            put(row, (m - 1) * d, eye)
            put(row, (m - 2) * d, -self.A[m - 2])
            row += d
        W = self.terminal_basis()
        if W.shape[1]:
            put(row, (N - 1) * d, W.T)
            row += W.shape[1]
        rows = np.concatenate(blocks_r)
        cols = np.concatenate(blocks_c)
        vals = np.concatenate(blocks_v)
        return sparse.csc_matrix((vals, (rows, cols)), shape=(row, N * d)), ortho.shape[1]

    def factor(self):
        if self._lu is None:
            M, n_head = self.matrix()
            if M.shape[0] != M.shape[1]:
                raise SingularSystemError(
                    f"truncated system is {M.shape[0]} x {M.shape[1]}, not square")
            try:
                self._lu = (splinalg.splu(M), M, n_head)
            except RuntimeError as exc:
                raise SingularSystemError(f"truncated system is singular: {exc}") from None
        return self._lu

    def rhs(self, Y):
        """Right-hand sides of the scaled system for sequences ``Y`` of shape (N, d, k)."""
        _, _, n_head = self.factor()
        N, d = self.horizon, self.dim
        k = Y.shape[2]
        scaled = Y[1:] / self.phi[1:, None, None]
        r = self.Z.shape[1]
        return np.concatenate([np.zeros((n_head, k)), scaled.reshape((N - 1) * d, k),
                               np.zeros((r, k))])

    def solve_many(self, Y, check=True):
        """Solve ``T x = y`` for a stack ``Y`` of shape (N, d, k); returns (N, d, k)."""
        lu, M, _ = self.factor()
        b = self.rhs(Y)
        X = lu.solve(b)
        if not np.all(np.isfinite(X)):
            raise SingularSystemError("truncated solve produced non-finite values")
        if check:
            res = M @ X - b
            scale = np.maximum(np.max(np.abs(b), axis=0), np.max(np.abs(M @ np.abs(X)), axis=0))
            rel = float(np.max(np.abs(res) / np.maximum(scale, 1e-300)))
            if rel > 1e-9:
                raise SingularSystemError(f"truncated solve residual {rel:.3g} exceeds 1e-9")
        return X.reshape(self.horizon, self.dim, -1)

    def solve_transposed(self, G):
        """``M^{-T} G`` for the scaled system matrix ``M``."""
        lu, _, _ = self.factor()
        return lu.solve(G, trans="T")


def _as_sequence(op, x, norms=None):
    if isinstance(x, TruncatedSequence):
        seq = x
    else:
        arr = np.asarray(x, dtype=float)
        if arr.size != op.horizon * op.dim:
            raise DomainError(f"sequence shape {arr.shape} does not match the operator")
        seq = TruncatedSequence(arr.reshape(op.horizon, op.dim), norms or op.norms)
    if seq.horizon != op.horizon or seq.dim != op.dim:
        raise DomainError(f"sequence shape {seq.entries.shape} does not match the operator")
    return seq


def apply_T(op: AdmissibilityOperator, x, check_membership=True) -> TruncatedSequence:
    """``(T x)_1 = 0`` and ``(T x)_m = phi_m (x_m - A_{m-1} x_{m-1})``.

    Raises
    ------
    MembershipError
        If ``x_1`` is not in ``Z`` (projection residual above 1e-10,
        relative to ``max(1, |x_1|)``).
    """
    seq = _as_sequence(op, x)
    X = seq.entries
    if check_membership:
        res = op.membership_residual(X[0])
        if res > MEMBERSHIP_TOL * max(1.0, float(np.linalg.norm(X[0]))):
            raise MembershipError(f"x_1 is not in Z (residual {res:.3g})", residual=res)
    Y = np.zeros_like(X)
    Y[1:] = op.phi[1:, None] * (X[1:] - np.einsum("kij,kj->ki", op.A, X[:-1]))
    return TruncatedSequence(Y, seq.norms)


@dataclass
class GreenSolution:
    """Result of :func:`green_solve`.

    ``residual`` is ``max ||(T x)_m - y_m||_m`` over ``2 <= m <= N - margin``;
    ``boundary_residual`` is the same over the last ``margin`` indices.
    ``sup_x`` is ``sup ||x_m||_m`` and ``bound`` the a-priori bound
    ``D (phi_1 + 2 / lambda) ||y||_inf`` when a certificate is given.
    ``sum_bound`` replaces the closed-form sum estimates in that bound by
    the exact weighted sums of the rate (see :func:`green_sum_constant`);
    unlike ``bound`` it also holds for rates with increasing increments.
    """

    x: TruncatedSequence
    residual: float
    boundary_residual: float
    sup_x: float
    sup_y: float
    bound: float | None = None
    bound_ok: bool | None = None
    sum_bound: float | None = None
    sum_bound_ok: bool | None = None
    parts: dict = field(default_factory=dict, repr=False)


def green_sum_constant(rate, lam, horizon):
    """``max_n S_n + max_n U_n`` for the Green sums of a decay rate ``lam``.

    ``S_n = sum_{2 <= k <= n} (mu_k/mu_n)**lam / phi_k`` and
    ``U_n = sum_{n < k <= N} (mu_n/mu_k)**lam / phi_k``, evaluated with
    the stable recursions ``S_n = S_{n-1} (mu_{n-1}/mu_n)**lam + 1/phi_n``
    and ``U_n = (U_{n+1} + 1/phi_{n+1}) (mu_n/mu_{n+1})**lam``.
    """
    ns = np.arange(1, horizon + 1)
    inv_phi = np.exp(-rate.log_phi(ns))
    step = np.exp(-lam * (rate.log_mu(ns[1:]) - rate.log_mu(ns[:-1])))  # (mu_n/mu_{n+1})**lam
    S = np.zeros(horizon)
    for j in range(1, horizon):
        S[j] = S[j - 1] * step[j - 1] + inv_phi[j]
    U = np.zeros(horizon)
    for j in range(horizon - 2, -1, -1):
        U[j] = (U[j + 1] + inv_phi[j + 1]) * step[j]
    return float(S.max() + U.max())


def green_solve(op: AdmissibilityOperator, y, split: Splitting, cert=None,
                margin=DEFAULT_TAIL_MARGIN) -> GreenSolution:
    """Green-formula inverse truncated at the horizon.

    ``x_n = sum_{k <= n} A_{n,k} P_k y_k / phi_k - sum_{n < k <= N} A_{n,k} Q_k y_k / phi_k``,
    computed by the recursions ``s_n = A_{n-1} s_{n-1} + P_n y_n / phi_n`` and
    ``u_N = 0``, ``u_n = R_n (Q_{n+1} y_{n+1} / phi_{n+1} + u_{n+1})`` with
    ``R_n`` the inverse of ``A_n`` on the unstable fibres; ``x = s - u``.

    Parameters
    ----------
    cert : DichotomyCertificate, optional
        When given, the a-priori bound ``D (phi_1 + 2/lambda) ||y||_inf``
        is evaluated (norms are those of ``y``).

    Raises
    ------
    NonInvertibleError
        If some ``A_n`` is singular on the unstable fibre.
    """
    yseq = _as_sequence(op, y)
    Y = yseq.entries
    if np.any(Y[0] != 0):
        raise DomainError("green_solve needs y_1 = 0")
    N, d = op.horizon, op.dim
    ns = np.arange(1, N + 1)
    P = split.P_stack(ns)
    Q = np.eye(d)[None] - P
    R = restricted_inverses(op.seq, split, 1, N)  # R[n-1] = R_n
    scaled = Y / op.phi[:, None]
    s = np.zeros((N, d))
    s[0] = P[0] @ scaled[0]
    for n in range(2, N + 1):
        s[n - 1] = op.A[n - 2] @ s[n - 2] + P[n - 1] @ scaled[n - 1]
    u = np.zeros((N, d))
    for n in range(N - 1, 0, -1):
        u[n - 1] = R[n - 1] @ (Q[n] @ scaled[n] + u[n])
    x = TruncatedSequence(s - u, yseq.norms)
    Tx = apply_T(op, x, check_membership=False)
    diff = (Tx - yseq).pointwise_norms()
    cut = max(1, N - margin)
    residual = float(np.max(diff[1:cut])) if cut > 1 else 0.0
    boundary = float(np.max(diff[cut:])) if cut < N else 0.0
    sup_x = x.sup_norm()
    sup_y = yseq.sup_norm()
    bound = ok = sbound = sok = None
    if cert is not None:
        bound = cert.D * (float(op.phi[0]) + 2.0 / cert.lam) * sup_y
        ok = bool(sup_x <= bound * (1 + 1e-12))
        sbound = cert.D * green_sum_constant(op.rate, cert.lam, N) * sup_y
        sok = bool(sup_x <= sbound * (1 + 1e-12))
    return GreenSolution(x, residual, boundary, sup_x, sup_y, bound, ok, sbound, sok,
                         {"stable": s, "unstable": u})


def truncated_solve(op: AdmissibilityOperator, y) -> TruncatedSequence:
    """Solve ``T x = y`` on ``[1, N]`` without knowledge of the splitting.

    The equations ``x_1 in Z`` and ``phi_m (x_m - A_{m-1} x_{m-1}) = y_m``
    leave ``dim Z`` directions free; they are fixed by requiring ``x_N`` to
    be orthogonal to ``A_{N,1} Z``, the finite-horizon image of ``Z``. The
    resulting square block-bidiagonal system is factored once (sparse LU)
    and reused for later right-hand sides.

    Raises
    ------
    SingularSystemError
        If the system is singular or the relative residual exceeds 1e-9.
    """
    yseq = _as_sequence(op, y)
    if np.any(yseq.entries[0] != 0):
        raise DomainError("truncated_solve needs y_1 = 0")
    X = op.solve_many(yseq.entries[:, :, None])[:, :, 0]
    return TruncatedSequence(X, yseq.norms)


def _sup_norms_of(op, X):
    """``||x||_inf`` for each column of a stack (N, d, k)."""
    nr = op.norms
    N, d, k = X.shape
    if nr.exact:
        base = np.max(np.abs(X), axis=1) if nr.base == "uniform_sup" \
            else np.linalg.norm(X, axis=1)
        w = np.exp(nr.log_weight(np.arange(1, N + 1)))[:, None]
        return np.max(base * w, axis=0)
    out = np.zeros(k)
    for m in range(1, N + 1):
        out = np.maximum(out, nr.norm(m, X[m - 1].T))
    return out


def inverse_norm_estimate(op: AdmissibilityOperator, trials=64, seed=0, candidates=True,
                          max_candidates=4096):
    """Lower estimate of ``||T^{-1}||`` from ``Y_0`` (sup norm) to the graph norm.

    For each trial ``y`` the ratio ``||x||_T / ||y||_inf`` with ``x = T^{-1} y``
    and ``||x||_T = ||x||_inf + ||T x||_inf`` is ``||x||_inf / ||y||_inf + 1``.
    Trials are drawn one after another from ``default_rng(seed)``, so a
    larger budget only adds trials. With ``candidates=True`` deterministic
    candidates are added: for a coordinate functional ``e_i`` at time ``m``
    the sign pattern of the corresponding row of ``T^{-1}`` maximizes that
    coordinate, which for sup norms recovers the exact operator norm.
    """
    N, d = op.horizon, op.dim
    rng = np.random.default_rng(seed)
    Ys = rng.standard_normal((trials, N, d))
    Ys[:, 0] = 0.0
    Y = np.moveaxis(Ys, 0, 2)
    if candidates:
        rows = np.arange(d, N * d)  # coordinates of x_2..x_N plus x_1 below
        rows = np.concatenate([np.arange(d), rows])
        if rows.size > max_candidates:
            rows = rows[np.linspace(0, rows.size - 1, max_candidates).astype(int)]
        _, _, n_head = op.factor()
        G = np.zeros((N * d, rows.size))
        G[rows, np.arange(rows.size)] = 1.0
        H = op.solve_transposed(G)  # rows of M^{-1}
        # x = M^{-1} b with b = [0; y_m / phi_m; 0] for m >= 2
        body = H[n_head:n_head + (N - 1) * d].reshape(N - 1, d, -1) / op.phi[1:, None, None]
        S = np.zeros((N, d, rows.size))
        S[1:] = np.sign(body)
        Y = np.concatenate([Y, S], axis=2)
    X = op.solve_many(Y, check=False)
    ynorm = _sup_norms_of(op, Y)
    xnorm = _sup_norms_of(op, X)
    ok = ynorm > 0
    ratios = xnorm[ok] / ynorm[ok] + 1.0
    return float(np.max(ratios)) if ratios.size else 1.0


def recover_splitting(op: AdmissibilityOperator, probe_times, tol=1e-7) -> Splitting:
    """Recover the projections ``P_m`` from invertibility of ``T``.

    For a probe time ``m`` and a vector ``v`` the sequence ``w`` with the
    single nonzero entry ``w_{m+1} = -phi_{m+1} A_m v`` is solved,
    ``z = T^{-1} w``. Then ``z_m`` lies in ``Z_m = A_{m,1} Z`` and
    ``v - z_m`` in the stable space, so ``P_m v = v - z_m``. All probes are
    solved with one factorization.

    Probe times must satisfy ``m < N``; times near ``N`` are affected by the
    truncation boundary.

    Raises
    ------
    BoundaryContaminationError
        If an assembled ``P_m`` is not idempotent within ``tol``.
    """
    N, d = op.horizon, op.dim
    times = [int(t) for t in probe_times]
    if any(t < 1 or t >= N for t in times):
        raise DomainError(f"probe times must lie in [1, {N - 1}]")
    k = len(times) * d
    W = np.zeros((N, d, k))
    for j, m in enumerate(times):
        # columns j*d .. j*d+d-1 probe the basis vectors e_0 .. e_{d-1}
        W[m, :, j * d:(j + 1) * d] = -op.phi[m] * op.A[m - 1]
    Z = op.solve_many(W)
    table = {}
    worst = 0.0
    for j, m in enumerate(times):
        Pm = np.eye(d) - Z[m - 1, :, j * d:(j + 1) * d]
        defect = float(np.max(np.abs(Pm @ Pm - Pm)))
        worst = max(worst, defect)
        if defect > tol:
            raise BoundaryContaminationError(
                f"recovered P_{m} is not a projection (defect {defect:.3g}); "
                f"increase the horizon beyond N={N}")
        table[m] = Pm
    split = Splitting.from_table(table, label=f"recovered(N={N})")
    split.meta = {"idempotence": worst, "commutation": _commutation_defect(op, table)}
    return split


def _commutation_defect(op, table):
    worst = 0.0
    for m, Pm in table.items():
        if m + 1 in table and m < op.horizon:
            A = op.A[m - 1]
            defect = np.linalg.norm(table[m + 1] @ A - A @ Pm) / max(np.linalg.norm(A), 1e-300)
            worst = max(worst, float(defect))
    return worst
