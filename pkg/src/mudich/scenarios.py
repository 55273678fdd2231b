"""Scenario presets with closed-form ground truth.

========  ==================================================================
preset    system
========  ==================================================================
S1        scalar ``A_n = r_n**-lambda0`` with ``r_n = mu_{n+1}/mu_n``; P = 1
S2        ``diag(r_n**-lambda0, r_n**lambda0)``; P = diag(1, 0)
S3        nonuniform diagonal with parity-alternating factors ``mu_n**(+-eps0)``
S4        S2 together with a perturbation family ``B_m(lambda)``
========  ==================================================================

For S3 the evolution family is, for ``m >= n``,
``A_{m,n} = diag((mu_m/mu_n)**-lambda0 mu_m**(eps0 s_m) mu_n**(-eps0 s_n),
(mu_m/mu_n)**lambda0 mu_m**(-eps0 s_m) mu_n**(eps0 s_n))`` with
``s_n = (-1)**n``. Its stable part decays with rate ``lambda0 - eps0``
and nonuniformity ``mu_n**(2 eps0)``, attained on even ``m`` and odd ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rates as rates_mod
from .cocycle import EvolutionFamily, OperatorSequence
from .dichotomy import DichotomyCertificate, Splitting
from .errors import DomainError

__all__ = [
    "Scenario",
    "PerturbationFamily",
    "make_scenario",
    "make_perturbation",
    "PRESETS",
    "PERTURBATION_KINDS",
    "DEFAULT_HORIZON",
]

PRESETS = ("S1", "S2", "S3", "S4")
PERTURBATION_KINDS = ("weighted", "quadratic", "constant", "coupling", "zero")

DEFAULT_HORIZON = {"exponential": 400, "polynomial": 2000, "logarithmic": 2000, "custom": 2000}

_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


class PerturbationFamily:
    """Parameterized perturbations ``(m, lam) -> B_m(lam)``.

    Parameters
    ----------
    dim : int
    gen : callable
        ``gen(m, lam) -> (d, d)``; ``lam`` is a float or a 1-D array.
    param_dim : int
    kind, label : str
    batch : callable, optional
        Vectorized ``batch(ms, lam) -> (len(ms), d, d)``.
    """

    def __init__(self, dim, gen, param_dim=1, kind="custom", label="", batch=None, meta=None):
        self.dim = int(dim)
        self._gen = gen
        self._batch = batch
        self.param_dim = int(param_dim)
        self.kind = kind
        self.label = label
        self.meta = dict(meta or {})

    def at(self, m, lam):
        B = np.asarray(self._gen(int(m), lam), dtype=float)
        if B.shape != (self.dim, self.dim):
            raise DomainError(f"B_{m} has shape {B.shape}")
        return B

    def stack(self, ms, lam):
        ms = np.asarray(ms, dtype=np.int64)
        if self._batch is not None:
            return np.asarray(self._batch(ms, lam), dtype=float).reshape(ms.size, self.dim, self.dim)
        if ms.size == 0:
            return np.zeros((0, self.dim, self.dim))
        return np.stack([self.at(int(k), lam) for k in ms])

    def continuity_defect(self, ms, lam_grid, step=1e-7):
        """Largest ``||B_m(lam + h) - B_m(lam)||`` over the grid for a tiny ``h``."""
        worst = 0.0
        for lam in lam_grid:
            lam = np.asarray(lam, dtype=float)
            a = self.stack(ms, lam)
            b = self.stack(ms, lam + step)
            worst = max(worst, float(np.max(np.abs(a - b))))
        return worst


def _scalar_param(lam):
    arr = np.asarray(lam, dtype=float).ravel()
    return float(arr[0]) if arr.size else 0.0


def make_perturbation(kind, rate, dim=2, scale=1.0, matrix=None) -> PerturbationFamily:
    """Built-in perturbation families, all weighted by ``1 / phi_{m+1}``.

    * ``weighted``:  ``B_m(l) = scale * l * E / phi_{m+1}``
    * ``quadratic``: ``B_m(l) = scale * l**2 * E / phi_{m+1}``
    * ``constant``:  ``B_m(l) = scale * E / phi_{m+1}`` (independent of ``l``)
    * ``coupling``:  ``B_m(l) = scale * l * J / phi_{m+1}`` with the rotation
      generator ``J = [[0, 1], [-1, 0]]``
    * ``zero``:      ``B_m(l) = 0``

    ``E`` defaults to the coordinate swap, which has unit sup and Euclidean
    norm. The weight makes ``||phi_{m+1} B_m(l)||`` independent of ``m``.
    """
    if kind not in PERTURBATION_KINDS:
        raise DomainError(f"unknown perturbation kind {kind!r}")
    if kind == "coupling":
        E = _ROT if matrix is None else np.asarray(matrix, dtype=float)
    else:
        E = _SWAP if matrix is None else np.asarray(matrix, dtype=float)
    if dim != 2 and matrix is None:
        E = np.eye(dim)[::-1].copy()
    profile = {
        "weighted": lambda l: l,
        "quadratic": lambda l: l * l,
        "constant": lambda l: 1.0,
        "coupling": lambda l: l,
        "zero": lambda l: 0.0,
    }[kind]

    def batch(ms, lam):
        w = np.exp(-rate.log_phi(np.asarray(ms) + 1))
        return (scale * profile(_scalar_param(lam)) * w)[:, None, None] * E[None]

    def gen(m, lam):
        return batch(np.array([m]), lam)[0]

    return PerturbationFamily(dim, gen, 1, kind, label=f"{kind}(scale={scale:g})", batch=batch,
                              meta={"scale": float(scale), "matrix": E})


@dataclass
class Scenario:
    """Preset system with its known splitting and certificate."""

    id: str
    rate: object
    seq: OperatorSequence
    true_split: Splitting | None
    true_cert: DichotomyCertificate | None
    horizon: int
    Z: np.ndarray
    notes: str = ""
    params: dict = field(default_factory=dict)
    strong_cert: DichotomyCertificate | None = None
    perturbation: PerturbationFamily | None = None

    @property
    def dim(self):
        return self.seq.dim

    def family(self):
        return EvolutionFamily(self.seq)

    def self_check(self, norms=None, horizon=None):
        """Verify ``true_cert`` (and ``strong_cert``) on the scenario grid."""
        from .dichotomy import verify_certificate
        from .norms import sup_norms

        if self.true_split is None or self.true_cert is None:
            return True
        norms = norms or sup_norms(self.dim)
        H = horizon or self.horizon
        fam = self.family()
        ok = verify_certificate(fam, self.true_split, self.rate, norms, self.true_cert, H).holds
        if self.strong_cert is not None:
            ok = ok and verify_certificate(fam, self.true_split, self.rate, norms,
                                           self.strong_cert, H).holds
        return ok


def _log_ratio(rate, ns):
    ns = np.asarray(ns)
    return rate.log_mu(ns + 1) - rate.log_mu(ns)


def _parity_log(rate, ns):
    """``s_n log mu_n`` with ``s_n = (-1)**n``."""
    ns = np.asarray(ns)
    return np.where(ns % 2 == 0, 1.0, -1.0) * rate.log_mu(ns)


def make_scenario(preset, rate, lambda0=1.0, eps0=0.1, horizon=None, perturb_kind="weighted",
                  perturb_scale=0.01) -> Scenario:
    """Instantiate a preset on a growth rate.

    Parameters
    ----------
    preset : {'S1', 'S2', 'S3', 'S4'}
    rate : GrowthRate or str
    lambda0 : float
        Construction exponent.
    eps0 : float
        Nonuniformity exponent (S3 only); must satisfy ``0 <= eps0 < lambda0``.
    horizon : int, optional
        Defaults to 400 for exponential rates and 2000 otherwise.
    """
    if isinstance(rate, str):
        rate = rates_mod.rate_from_name(rate)
    if preset not in PRESETS:
        raise DomainError(f"unknown scenario preset {preset!r}")
    if not lambda0 > 0:
        raise DomainError("lambda0 must be positive")
    H = int(horizon or DEFAULT_HORIZON.get(rate.kind, 2000))
    params = {"lambda0": float(lambda0)}
    if preset == "S1":
        def batch(ns):
            return np.exp(-lambda0 * _log_ratio(rate, ns))[:, None, None]

        seq = OperatorSequence(1, lambda n: batch(np.array([n]))[0], "S1", batch=batch)
        split = Splitting.constant([[1.0]], label="P=1")
        cert = DichotomyCertificate("nonuniform", 1.0, lambda0, 0.0)
        strong = DichotomyCertificate("strong", 1.0, lambda0, 0.0, K=1.0, b=lambda0, gamma=0.0)
        return Scenario("S1", rate, seq, split, cert, H, np.zeros((1, 0)),
                        "scalar stable telescoping system", params, strong)

    if preset in ("S2", "S4"):
        def batch(ns):
            g = lambda0 * _log_ratio(rate, ns)
            out = np.zeros((len(ns), 2, 2))
            out[:, 0, 0] = np.exp(-g)
            out[:, 1, 1] = np.exp(g)
            return out

        seq = OperatorSequence(2, lambda n: batch(np.array([n]))[0], preset, batch=batch)
        split = Splitting.constant(np.diag([1.0, 0.0]), label="diag(1,0)")
        cert = DichotomyCertificate("nonuniform", 1.0, lambda0, 0.0)
        strong = DichotomyCertificate("strong", 1.0, lambda0, 0.0, K=1.0, b=lambda0, gamma=0.0)
        sc = Scenario(preset, rate, seq, split, cert, H, np.array([[0.0], [1.0]]),
                      "hyperbolic diagonal system", params, strong)
        if preset == "S4":
            sc.perturbation = make_perturbation(perturb_kind, rate, 2, perturb_scale)
            sc.params.update(perturb_kind=perturb_kind, perturb_scale=float(perturb_scale))
            sc.notes = "hyperbolic diagonal system with a parameterized perturbation"
        return sc

    # S3
    if not 0 <= eps0 < lambda0:
        raise DomainError("S3 needs 0 <= eps0 < lambda0")
    params["eps0"] = float(eps0)

    def batch(ns):
        ns = np.asarray(ns)
        g = lambda0 * _log_ratio(rate, ns)
        h = eps0 * (_parity_log(rate, ns + 1) - _parity_log(rate, ns))
        out = np.zeros((len(ns), 2, 2))
        out[:, 0, 0] = np.exp(-g + h)
        out[:, 1, 1] = np.exp(g - h)
        return out

    seq = OperatorSequence(2, lambda n: batch(np.array([n]))[0], "S3", batch=batch)
    split = Splitting.constant(np.diag([1.0, 0.0]), label="diag(1,0)")
    D = max(1.0, math.exp(-2 * eps0 * float(rate.log_mu(1))))
    cert = DichotomyCertificate("nonuniform", D, lambda0 - eps0, 2 * eps0)
    return Scenario("S3", rate, seq, split, cert, H, np.array([[0.0], [1.0]]),
                    "nonuniform diagonal system with parity-alternating factors", params)
