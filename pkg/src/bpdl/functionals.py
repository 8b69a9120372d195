"""Scalar convex functions, divergences and the mean-field EDP ingredients.

Extended reals: ``+inf`` is represented by IEEE ``math.inf`` (a distinguished
value, never a large finite float). Sums containing it saturate to ``inf``.
All scalar functions accept numpy arrays and act elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .core_space import (
    KernelPair,
    TraitSpace,
    all_nonneg,
    as_measure,
    c_field,
    kappas,
    theta,
)
from .errors import DimensionMismatchError, NegativeArgumentError

INF = math.inf


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _nonneg(x, name="argument"):
    a = np.asarray(x, dtype=float)
    if not all_nonneg(a, finite=False):
        raise NegativeArgumentError(f"{name} must be nonnegative")
    return a


def phi(s):
    """Entropy density s*log(s) - s + 1, with phi(0) = 1."""
    s = _nonneg(s, "s")
    return _scalar_or_array(xlogy(s, s) - s + 1.0)


def phi_star(z):
    """Legendre dual of phi: exp(z) - 1."""
    return _scalar_or_array(np.expm1(np.asarray(z, dtype=float)))


def psi_star(z):
    """2(cosh z - 1), written as 4 sinh(z/2)^2 for accuracy near 0."""
    z = np.asarray(z, dtype=float)
    return _scalar_or_array(4.0 * np.sinh(0.5 * z) ** 2)


def psi(s):
    """Legendre dual of psi_star.

    s*log((s + sqrt(s^2+4))/2) - sqrt(s^2+4) + 2, evaluated as
    s*asinh(s/2) - s^2/(sqrt(s^2+4) + 2) to avoid cancellation at both ends.
    """
    s = np.asarray(s, dtype=float)
    return _scalar_or_array(s * np.arcsinh(0.5 * s) - s * s / (np.hypot(s, 2.0) + 2.0))


def upsilon(w, u, v):
    """Perspective integrand for entropy relative to a geometric mean.

    sqrt(uv) if w == 0; phi(w/sqrt(uv))*sqrt(uv) if u, v > 0; +inf otherwise.
    """
    w = _nonneg(w, "w")
    u = _nonneg(u, "u")
    v = _nonneg(v, "v")
    w, u, v = np.broadcast_arrays(w, u, v)
    g = np.where((u > 0) & (v > 0), np.sqrt(u) * np.sqrt(v), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(g > 0, g, 1.0)
        val = xlogy(w, w / safe) - w + g
    out = np.where(w == 0, g, np.where(g > 0, val, INF))
    return _scalar_or_array(out)


def entropy_terms(nu, mu) -> np.ndarray:
    """Per-site terms phi(nu/mu)*mu with the absolute-continuity conventions."""
    nu = _nonneg(nu, "nu")
    mu = _nonneg(mu, "mu")
    if nu.shape != mu.shape:
        raise DimensionMismatchError(f"shapes differ: {nu.shape} vs {mu.shape}")
    return _entropy_terms(nu, mu)


def _entropy_terms(nu: np.ndarray, mu: np.ndarray) -> np.ndarray:
    if mu.all():
        return xlogy(nu, nu / mu) - nu + mu
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(mu > 0, mu, 1.0)
        val = xlogy(nu, nu / safe) - nu + mu
    return np.where(mu > 0, val, np.where(nu > 0, INF, 0.0))


def relative_entropy(nu, mu) -> float:
    """Ent(nu|mu) = sum phi(nu/mu)*mu for finite nonnegative measures."""
    return _sum_terms(entropy_terms(nu, mu))


def _relative_entropy(nu: np.ndarray, mu: np.ndarray) -> float:
    """relative_entropy for arrays already validated by the caller."""
    return _sum_terms(_entropy_terms(nu, mu))


def _sum_terms(t: np.ndarray) -> float:
    if np.isinf(t).any():
        return INF
    return float(t.sum())


def hellinger_sq(nu, mu) -> float:
    nu = _nonneg(nu, "nu")
    mu = _nonneg(mu, "mu")
    if nu.shape != mu.shape:
        raise DimensionMismatchError(f"shapes differ: {nu.shape} vs {mu.shape}")
    return float(0.5 * np.sum((np.sqrt(nu) - np.sqrt(mu)) ** 2))


def tv_norm(x) -> float:
    return float(np.sum(np.abs(np.asarray(x, dtype=float))))


def _fluxes(ts, lam_p, lam_m):
    return as_measure(lam_p, ts.K), as_measure(lam_m, ts.K)


def R_mf(ts: TraitSpace, k: KernelPair, nu, lam_p, lam_m) -> float:
    """Dissipation potential Ent(lam+|theta) + Ent(lam-|theta)."""
    lam_p, lam_m = _fluxes(ts, lam_p, lam_m)
    th = theta(ts, k, nu)
    return _relative_entropy(lam_p, th) + _relative_entropy(lam_m, th)


def F_mf(ts: TraitSpace, nu) -> float:
    """Free energy: half the relative entropy with respect to gamma."""
    return 0.5 * relative_entropy(as_measure(nu, ts.K), ts.gamma)


def _density(ts, nu):
    nu = as_measure(nu, ts.K)
    if ts.gamma.all():
        return nu / ts.gamma
    if np.any((ts.gamma == 0) & (nu > 0)):
        return None
    return np.divide(nu, ts.gamma, out=np.zeros_like(nu), where=ts.gamma > 0)


def D_mf(ts: TraitSpace, k: KernelPair, nu) -> float:
    """Fisher information sum c_nu (sqrt(u) - 1)^2 gamma with u = dnu/dgamma."""
    u = _density(ts, nu)
    if u is None:
        return INF
    cnu = c_field(ts, k, nu)
    return float(np.sum(cnu * (np.sqrt(u) - 1.0) ** 2 * ts.gamma))


def D_mf_minus(ts: TraitSpace, k: KernelPair, nu) -> float:
    """Same sum as :func:`D_mf`, restricted to sites where the density is positive."""
    u = _density(ts, nu)
    if u is None:
        return INF
    cnu = c_field(ts, k, nu)
    terms = cnu * (np.sqrt(u) - 1.0) ** 2 * ts.gamma
    return float(np.sum(terms[u > 0]))


def L_mf(ts: TraitSpace, k: KernelPair, nu, lam_p, lam_m) -> float:
    """Lagrangian Ent(lam+|kappa+) + Ent(lam-|kappa-)."""
    lam_p, lam_m = _fluxes(ts, lam_p, lam_m)
    kp, km = kappas(ts, k, nu)
    return _relative_entropy(lam_p, kp) + _relative_entropy(lam_m, km)


def ext_sum(*parts: float) -> float:
    """Sum that saturates at +inf; a -inf part is not expected."""
    if any(math.isinf(p) for p in parts):
        return INF
    return float(sum(parts))


@dataclass(frozen=True)
class MFFunctionalReport:
    R_integral: float
    F_initial: float
    F_final: float
    D_integral: float
    I: float

    @classmethod
    def from_parts(cls, R_integral, F_initial, F_final, D_integral):
        if math.isinf(R_integral) or math.isinf(F_final) or math.isinf(D_integral):
            I = INF
        else:
            I = R_integral + F_final - F_initial + D_integral
        return cls(float(R_integral), float(F_initial), float(F_final), float(D_integral), float(I))

    def as_dict(self) -> dict:
        return {
            "R_integral": self.R_integral,
            "F_initial": self.F_initial,
            "F_final": self.F_final,
            "D_integral": self.D_integral,
            "I": self.I,
        }
