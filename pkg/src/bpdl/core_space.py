"""Finite trait space, kernel pair and the measure-dependent birth/death kernels.

A trait space has K sites with reference weights ``gamma``. The competition
kernel ``c[i, j]`` is the rate per unit mass at which a particle at site i is
removed by one at site j. The mutation kernel ``m`` is tied to it by
``m = c.T`` and ``c`` has a zero diagonal (no natural death).

For a measure ``nu`` (a nonnegative K-vector) the derived objects are

    c_nu    = c @ nu
    kappa+  = gamma * (m.T @ nu)      (= gamma * c_nu under m = c.T)
    kappa-  = nu * c_nu
    theta   = sqrt(kappa+ * kappa-) = c_nu * sqrt(gamma * nu)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    NegativeEntryError,
    NonSquareError,
    NonzeroDiagonalError,
    ValidationError,
)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TraitSpace:
    K: int
    gamma: np.ndarray
    labels: Optional[tuple] = field(default=None)

    def __post_init__(self):
        g = _frozen(self.gamma)
        if g.ndim != 1 or g.size < 1:
            raise DimensionMismatchError("gamma must be a nonempty 1-d array")
        if int(self.K) != self.K or self.K < 1 or g.size != self.K:
            raise DimensionMismatchError(f"K={self.K} does not match len(gamma)={g.size}")
        if not np.all(np.isfinite(g)):
            raise ValidationError("gamma must be finite")
        if np.any(g < 0):
            raise NegativeEntryError("gamma must be nonnegative")
        if g.sum() <= 0:
            raise ValidationError("gamma must have positive total mass")
        if self.labels is not None and len(self.labels) != self.K:
            raise DimensionMismatchError("labels must have length K")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "gamma", g)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def total_mass(self) -> float:
        return float(self.gamma.sum())


@dataclass(frozen=True)
class KernelPair:
    """Competition kernel ``c`` and mutation kernel ``m``.

    Use :func:`build_kernel_pair` for the detailed-balance pair. Constructing
    the dataclass directly accepts any nonnegative ``m``; that path exists so
    negative controls (``m != c.T``) can be expressed.
    """

    c: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        c = _frozen(self.c)
        m = _frozen(self.m)
        for name, a in (("c", c), ("m", m)):
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise NonSquareError(f"{name} must be a square matrix, got shape {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"{name} must have finite entries (bounded rates)")
            if np.any(a < 0):
                raise NegativeEntryError(f"{name} has negative entries")
        if c.shape != m.shape:
            raise DimensionMismatchError("c and m must have the same shape")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "m", m)

    @property
    def K(self) -> int:
        return self.c.shape[0]

    @property
    def sup_norm(self) -> float:
        return float(self.c.max()) if self.c.size else 0.0

    @property
    def is_balanced(self) -> bool:
        return bool(np.array_equal(self.m, self.c.T)) and not np.any(np.diag(self.c))


def build_kernel_pair(c: Sequence[Sequence[float]]) -> KernelPair:
    """Validate ``c`` and return the pair with ``m = c.T``."""
    a = np.array(c, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquareError(f"c must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("c must have finite entries (bounded rates)")
    if np.any(a < 0):
        bad = [tuple(int(v) for v in ij) for ij in np.argwhere(a < 0)]
        raise NegativeEntryError(f"c has negative entries at {bad}")
    diag = np.flatnonzero(np.diag(a))
    if diag.size:
        raise NonzeroDiagonalError(
            f"c has nonzero diagonal at sites {diag.tolist()}: "
            "violates the no natural death assumption (c[i][i] must be 0)"
        )
    return KernelPair(c=a, m=a.T.copy())


def all_nonneg(a: np.ndarray, finite: bool = True) -> bool:
    """True when every entry is >= 0 (and finite if ``finite``); NaN fails."""
    if a.size <= 16:
        # short vectors: Python comparisons beat the per-call cost of numpy reductions
        if finite:
            return all(0.0 <= x < math.inf for x in a.ravel().tolist())
        return all(x >= 0.0 for x in a.ravel().tolist())
    ok = a >= 0
    if finite:
        ok &= a < np.inf
    return bool(ok.all())


def as_measure(nu, K: int) -> np.ndarray:
    """Coerce ``nu`` to a float K-vector and check nonnegativity."""
    a = np.asarray(nu, dtype=float)
    if a.shape != (K,):
        raise DimensionMismatchError(f"expected a measure of shape ({K},), got {a.shape}")
    if not all_nonneg(a):
        raise NegativeEntryError("a measure must be finite and nonnegative")
    return a


def _check(ts: TraitSpace, k: KernelPair) -> None:
    if k.K != ts.K:
        raise DimensionMismatchError(f"kernel is {k.K}x{k.K} but trait space has K={ts.K}")


def c_field(ts: TraitSpace, k: KernelPair, nu) -> np.ndarray:
    _check(ts, k)
    return k.c @ as_measure(nu, ts.K)


def kappa_plus(ts: TraitSpace, k: KernelPair, nu) -> np.ndarray:
    _check(ts, k)
    return ts.gamma * (k.m.T @ as_measure(nu, ts.K))


def kappa_minus(ts: TraitSpace, k: KernelPair, nu) -> np.ndarray:
    _check(ts, k)
    nu = as_measure(nu, ts.K)
    return nu * (k.c @ nu)


def sqrt_product(a, b) -> np.ndarray:
    """Elementwise sqrt(a*b) as sqrt(a)*sqrt(b), exactly 0 where either factor is 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.sqrt(a) * np.sqrt(b)
    return np.where((a > 0) & (b > 0), out, 0.0)


def kappas(ts: TraitSpace, k: KernelPair, nu):
    """(kappa_plus, kappa_minus) with a single validation of ``nu``."""
    _check(ts, k)
    nu = as_measure(nu, ts.K)
    return ts.gamma * (k.m.T @ nu), nu * (k.c @ nu)


def theta(ts: TraitSpace, k: KernelPair, nu) -> np.ndarray:
    return sqrt_product(*kappas(ts, k, nu))
