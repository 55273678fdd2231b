"""Per-time norm families and operator norms between them.

A :class:`NormFamily` is a sequence of norms ``||.||_n`` on ``R^d``. Families
built from the Euclidean or sup norm with a positive per-time weight have
closed-form operator norms; everything else (for instance adapted norms)
falls back to a probe search that returns a lower estimate.

All evaluations accept stacks of vectors with shape ``(p, d)`` and a matching
log-scale, so that vectors of size ``e**1000`` can be measured without
overflow.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize

from .errors import EvaluationError

__all__ = [
    "NormFamily",
    "sup_norms",
    "euclidean_norms",
    "custom_norms",
    "probe_operator_norm",
    "unit_directions",
]

_BASE_KINDS = ("uniform_sup", "euclidean")


def _base_norm(kind, X):
    if kind == "euclidean":
        return np.sqrt(np.einsum("...i,...i->...", X, X))
    return np.max(np.abs(X), axis=-1)


def _base_log_opnorm(kind, M):
    """log of the (base -> base) operator norm of a stack ``(..., d, d)``."""
    with np.errstate(divide="ignore"):
        if kind == "euclidean":
            if M.shape[-1] == 1:
                return np.log(np.abs(M[..., 0, 0]))
            return np.log(np.linalg.norm(M, ord=2, axis=(-2, -1)))
        return np.log(np.max(np.sum(np.abs(M), axis=-1), axis=-1))


class NormFamily:
    """A sequence of norms ``||.||_n`` on ``R^d``.

    Parameters
    ----------
    dim : int
    kind : str
        ``'uniform_sup'``, ``'euclidean'``, ``'adapted'``, ``'strong_adapted'``
        or ``'custom'``.
    evaluator : callable, optional
        ``evaluator(n, X) -> norms`` for a stack ``X`` of shape ``(p, d)``.
        Required unless ``kind`` is a base kind.
    log_weight : callable, optional
        For base kinds: ``||x||_n = exp(log_weight(n)) * |x|``.
    meta : dict, optional
        Free-form construction parameters.
    """

    def __init__(self, dim, kind, evaluator=None, log_weight=None, meta=None):
        self.dim = int(dim)
        self.kind = kind
        self._evaluator = evaluator
        self._log_weight = log_weight
        self.meta = dict(meta or {})
        if kind in _BASE_KINDS:
            self.base = kind
        else:
            self.base = None
            if evaluator is None:
                raise ValueError(f"norm kind {kind!r} needs an evaluator")

    @property
    def exact(self):
        """True when operator norms are available in closed form."""
        return self.base is not None

    def log_weight(self, n):
        if self._log_weight is None:
            return np.zeros(np.shape(n))
        return np.asarray(self._log_weight(n), dtype=float)

    def norm(self, n, x):
        """``||x||_n`` for a vector ``(d,)`` or a stack ``(p, d)``."""
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X2 = X.reshape(-1, self.dim)
        if self.base is not None:
            out = _base_norm(self.base, X2) * np.exp(self.log_weight(n))
        else:
            out = np.asarray(self._evaluator(int(n), X2), dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite norm value at n={n}")
        return float(out[0]) if single else out

    def log_norm(self, n, x, log_scale=0.0):
        """``log ||x * exp(log_scale)||_n`` (``-inf`` for zero vectors)."""
        v = self.norm(n, x)
        with np.errstate(divide="ignore"):
            return np.log(v) + log_scale

    def scaled(self, factor):
        """Family ``factor * ||.||_n``."""
        lf = math.log(factor)
        if self.base is not None:
            lw = self._log_weight
            new_lw = (lambda n: lf + (np.zeros(np.shape(n)) if lw is None else np.asarray(lw(n))))
            return NormFamily(self.dim, self.kind, log_weight=new_lw,
                              meta={**self.meta, "scale": factor})
        ev = self._evaluator
        return NormFamily(self.dim, self.kind, evaluator=lambda n, X: factor * ev(n, X),
                          meta={**self.meta, "scale": factor})

    def log_operator_norms(self, ms, ns, mantissas, log_scales=None, budget=None):
        """``log ||M||_{m <- n}`` for stacks of matrices.

        Parameters
        ----------
        ms, ns : array_like of int, shape (p,)
            Target and source times.
        mantissas : ndarray, shape (p, d, d)
        log_scales : array_like, shape (p,), optional
        budget : int, optional
            Probe budget for non-exact families.
        """
        M = np.asarray(mantissas, dtype=float)
        ms = np.atleast_1d(np.asarray(ms))
        ns = np.atleast_1d(np.asarray(ns))
        ls = np.zeros(M.shape[0]) if log_scales is None else np.asarray(log_scales, float)
        if self.base is not None:
            out = _base_log_opnorm(self.base, M)
            out = out + ls + self.log_weight(ms) - self.log_weight(ns)
        else:
            out = np.array([
                probe_log_operator_norm(self, int(m), self, int(n), M[i], budget) + ls[i]
                for i, (m, n) in enumerate(zip(ms, ns))
            ])
        if np.any(np.isnan(out)) or np.any(out == np.inf):
            raise EvaluationError("non-finite operator norm")
        return out

    def __repr__(self):
        return f"NormFamily(kind={self.kind!r}, dim={self.dim})"


def sup_norms(dim, log_weight=None) -> NormFamily:
    """Max-abs norm, optionally weighted per time."""
    return NormFamily(dim, "uniform_sup", log_weight=log_weight)


def euclidean_norms(dim, log_weight=None) -> NormFamily:
    return NormFamily(dim, "euclidean", log_weight=log_weight)


def custom_norms(dim, func, meta=None) -> NormFamily:
    """Family from ``func(n, X) -> norms`` acting on stacks ``X`` of shape ``(p, d)``."""
    return NormFamily(dim, "custom", evaluator=func, meta=meta)


def unit_directions(dim, count, seed=0):
    """Deterministic probe directions on the unit sphere.

    ``d = 2`` uses a uniform half-circle grid, ``d = 3`` a Fibonacci lattice
    on the upper hemisphere, higher ``d`` seeded Gaussian samples. The
    coordinate axes are included (on the 2-D grid when ``count`` is even).
    """
    if dim == 1:
        return np.ones((1, 1))
    if dim == 2:
        th = np.pi * np.arange(count) / count
        return np.column_stack([np.cos(th), np.sin(th)])
    if dim == 3:
        i = np.arange(count) + 0.5
        z = i / count
        r = np.sqrt(1 - z * z)
        ang = np.pi * (1 + 5 ** 0.5) * i
        dirs = np.column_stack([r * np.cos(ang), r * np.sin(ang), z])
    else:
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((count, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.vstack([np.eye(dim), dirs])


def _ratio_fn(norm_out, m, norm_in, n, M):
    def f(X):
        X = np.atleast_2d(X)
        num = norm_out.norm(m, X @ M.T)
        den = norm_in.norm(n, X)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, num / den, 0.0)
    return f


def probe_operator_norm(norm_out, m, norm_in, n, M, budget=None):
    """Lower estimate of ``sup ||M x||_m / ||x||_n`` by probing directions.

    ``d = 1`` is exact. In ``d = 2`` a 720-point angular grid is refined by a
    bounded scalar search around the best angle; above that, deterministic
    directions are refined by Nelder-Mead from the three best starts.
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    f = _ratio_fn(norm_out, m, norm_in, n, M)
    if d == 1:
        return float(f(np.ones((1, 1)))[0])
    count = budget or (720 if d == 2 else 200 * d)
    dirs = unit_directions(d, count)
    vals = f(dirs)
    best = float(vals.max())
    if d == 2:
        k = int(np.argmax(vals))
        th0 = np.pi * k / count
        h = np.pi / count

        def neg(th):
            return -float(f(np.array([[math.cos(th), math.sin(th)]]))[0])

        res = optimize.minimize_scalar(neg, bounds=(th0 - h, th0 + h), method="bounded",
                                       options={"xatol": 1e-12})
        return max(best, -res.fun)
    for i in np.argsort(vals)[-3:]:
        res = optimize.minimize(lambda z: -float(f(z)[0]), dirs[i], method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 400 * d})
        best = max(best, -res.fun)
    return best


def probe_log_operator_norm(norm_out, m, norm_in, n, M, budget=None):
    with np.errstate(divide="ignore"):
        return math.log(probe_operator_norm(norm_out, m, norm_in, n, M, budget)) \
            if np.any(M) else -math.inf
