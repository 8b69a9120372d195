"""Mean-field equation d/dt nu = kappa+[nu] - kappa-[nu] and its EDP functional.

Two independent integrators are provided:

* ``rk4``: classic fourth-order Runge-Kutta on a uniform output grid. Each
  grid interval is checked against two half steps and subdivided until the
  local error estimate meets ``tol``. A step that would create a negative
  entry is replaced by a positivity-preserving integrating-factor step.
* ``picard``: fixed-point iteration of the integrating-factor map
  ``G(nu)_t = exp(-C_t) * (nu0 + int_0^t kappa+[nu_s] exp(C_s) ds)`` with
  ``C_t = int_0^t c_nu`` on the whole grid, integrals by cumulative Simpson.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_simpson, trapezoid

from .core_space import KernelPair, TraitSpace, as_measure
from .errors import (
    DensityZeroOnFluxSupportError,
    InfiniteInitialEnergyError,
    NonConvergenceError,
    StepUnderflowError,
    ValidationError,
)
from .functionals import (
    INF,
    D_mf,
    F_mf,
    L_mf,
    MFFunctionalReport,
    R_mf,
    relative_entropy,
    tv_norm,
)


@dataclass(frozen=True)
class SolverOptions:
    method: str = "rk4"
    dt: float = 1e-3
    tol: float = 1e-10
    picard_max_iters: int = 500
    picard_tol: float = 1e-13
    min_step: float = 1e-12

    def __post_init__(self):
        if self.method not in ("rk4", "picard"):
            raise ValidationError(f"unknown method {self.method!r} (expected rk4 or picard)")
        if not self.dt > 0 or not self.tol > 0:
            raise ValidationError("dt and tol must be positive")
        if self.picard_max_iters < 1 or not self.picard_tol > 0:
            raise ValidationError("picard_max_iters and picard_tol must be positive")


@dataclass(frozen=True)
class MFTrajectory:
    """Nodes (t_k, nu_k, lambda+_k, lambda-_k) of a continuity-equation triple."""

    ts: TraitSpace
    k: KernelPair
    times: np.ndarray
    nu: np.ndarray
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1 or np.any(np.diff(t) <= 0):
            raise ValidationError("times must be a strictly increasing grid")
        for name in ("nu", "lambda_plus", "lambda_minus"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (t.size, self.ts.K):
                raise ValidationError(f"{name} has shape {a.shape}, expected {(t.size, self.ts.K)}")
            if np.any(a < 0):
                raise ValidationError(f"{name} has negative entries")
            object.__setattr__(self, name, a)
        object.__setattr__(self, "times", t)

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def final(self) -> np.ndarray:
        return self.nu[-1]

    def with_fluxes(self, lambda_plus, lambda_minus) -> "MFTrajectory":
        return replace(self, lambda_plus=lambda_plus, lambda_minus=lambda_minus)

    def continuity_residual(self) -> float:
        """max_k ||nu_{k+1} - nu_k - int (lambda+ - lambda-) dt||_TV / dt_k (trapezoid)."""
        if self.times.size < 2:
            return 0.0
        net = self.lambda_plus - self.lambda_minus
        dt = np.diff(self.times)
        integ = 0.5 * (net[1:] + net[:-1]) * dt[:, None]
        res = np.abs(np.diff(self.nu, axis=0) - integ).sum(axis=1) / dt
        return float(res.max())


def mf_rhs(ts: TraitSpace, k: KernelPair, scale_plus=1.0, scale_minus=1.0):
    """Vector field nu -> a*kappa+[nu] - b*kappa-[nu].

    Also returns ``parts(nu) -> (birth flux, death rate per unit mass)``.
    """
    g = ts.gamma
    mT = np.ascontiguousarray(k.m.T)
    c = k.c

    def parts(nu):
        return scale_plus * g * (mT @ nu), scale_minus * (c @ nu)

    def rhs(nu):
        p, r = parts(nu)
        return p - nu * r

    return rhs, parts


def _rk4(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _if_step(parts, y, h):
    """Positivity-preserving integrating-factor step, rates frozen at a midpoint."""

    def one(y0, b, r, hh):
        lin = np.where(r > 0, -np.expm1(-r * hh) / np.where(r > 0, r, 1.0), hh)
        return np.exp(-r * hh) * y0 + b * lin

    ymid = one(y, *parts(y), 0.5 * h)
    return np.maximum(one(y, *parts(ymid), h), 0.0)


def _integrate_rk4(rhs, parts, nu0, times, opts: SolverOptions):
    out = np.empty((times.size, nu0.size))
    out[0] = nu0
    stats = {"substeps": 0, "positivity_fallbacks": 0, "max_err": 0.0}

    def advance(y, h):
        if h < opts.min_step:
            raise StepUnderflowError(f"step fell below {opts.min_step} without meeting tol={opts.tol}")
        full = _rk4(rhs, y, h)
        half = _rk4(rhs, _rk4(rhs, y, 0.5 * h), 0.5 * h)
        err = tv_norm(full - half) / 15.0
        if not np.isfinite(err) or err > opts.tol * max(1.0, tv_norm(y)):
            stats["substeps"] += 1
            return advance(advance(y, 0.5 * h), 0.5 * h)
        stats["max_err"] = max(stats["max_err"], err)
        if np.any(half < 0):
            stats["positivity_fallbacks"] += 1
            return _if_step(parts, y, h)
        return half

    y = nu0
    for i in range(1, times.size):
        y = advance(y, times[i] - times[i - 1])
        out[i] = y
    return out, stats


def _integrate_picard(ts, k, nu0, times, opts: SolverOptions, scale_plus, scale_minus):
    c = k.c
    mT = k.m.T
    g = ts.gamma
    cur = np.tile(nu0, (times.size, 1))
    for it in range(1, opts.picard_max_iters + 1):
        cnu = scale_minus * (cur @ c.T)
        birth = scale_plus * g * (cur @ mT.T)
        C = cumulative_simpson(cnu, x=times, axis=0, initial=0.0)
        eC = np.exp(C)
        inner = cumulative_simpson(birth * eC, x=times, axis=0, initial=0.0)
        new = (nu0 + inner) / eC
        new = np.maximum(new, 0.0)
        change = float(np.abs(new - cur).sum(axis=1).max())
        cur = new
        if change <= opts.picard_tol:
            return cur, {"picard_iters": it, "picard_change": change}
    raise NonConvergenceError(
        f"Picard iteration did not reach tol={opts.picard_tol} in {opts.picard_max_iters} iterations"
        f" (last sup-TV change {change:.3e})"
    )


def time_grid(T: float, dt: float) -> np.ndarray:
    if not T > 0:
        raise ValidationError("T must be positive")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    M = max(1, int(math.ceil(T / dt - 1e-9)))
    return np.linspace(0.0, T, M + 1)


def solve_mf(
    ts: TraitSpace,
    k: KernelPair,
    nu0,
    T: float,
    opts: Optional[SolverOptions] = None,
    scale_plus: float = 1.0,
    scale_minus: float = 1.0,
) -> MFTrajectory:
    """Solve the mean-field equation on [0, T] and record lambda+- at the nodes.

    ``scale_plus``/``scale_minus`` multiply the birth/death fluxes. With values
    other than 1 the result is still a continuity-equation triple, but not the
    gradient-flow solution; this is how off-solution test paths are built.
    """
    opts = opts or SolverOptions()
    nu0 = as_measure(nu0, ts.K)
    times = time_grid(T, opts.dt)
    rhs, parts = mf_rhs(ts, k, scale_plus, scale_minus)
    if opts.method == "rk4":
        nu, stats = _integrate_rk4(rhs, parts, nu0, times, opts)
    else:
        nu, stats = _integrate_picard(ts, k, nu0, times, opts, scale_plus, scale_minus)
    lp = scale_plus * ts.gamma * (nu @ k.m)
    lm = scale_minus * nu * (nu @ k.c.T)
    stats["method"] = opts.method
    return MFTrajectory(ts, k, times, nu, lp, lm, stats)


def stationary_trajectory(ts: TraitSpace, k: KernelPair, T: float, dt: float) -> MFTrajectory:
    """Constant path nu = gamma with fluxes kappa+- (equal at gamma)."""
    times = time_grid(T, dt)
    nu = np.tile(ts.gamma, (times.size, 1))
    lp = ts.gamma * (nu @ k.m)
    lm = nu * (nu @ k.c.T)
    return MFTrajectory(ts, k, times, nu, lp, lm)


def _node_values(traj: MFTrajectory, fn: Callable) -> np.ndarray:
    return np.array([fn(i) for i in range(traj.times.size)])


def _integral(values: np.ndarray, times: np.ndarray) -> float:
    if np.any(np.isinf(values)):
        return INF
    return float(trapezoid(values, times))


def edp_mf(traj: MFTrajectory) -> MFFunctionalReport:
    """I = int R dt + F(nu_T) - F(nu_0) + int D dt, trapezoid rule on the grid."""
    ts, k = traj.ts, traj.k
    F0 = F_mf(ts, traj.nu[0])
    if math.isinf(F0):
        raise InfiniteInitialEnergyError("initial free energy is infinite (nu_0 not << gamma)")
    R = _node_values(traj, lambda i: R_mf(ts, k, traj.nu[i], traj.lambda_plus[i], traj.lambda_minus[i]))
    D = _node_values(traj, lambda i: D_mf(ts, k, traj.nu[i]))
    return MFFunctionalReport.from_parts(
        _integral(R, traj.times), F0, F_mf(ts, traj.nu[-1]), _integral(D, traj.times)
    )


def edp_integrands(traj: MFTrajectory) -> dict:
    """Per-node R, D and F (useful for export and plotting)."""
    ts, k = traj.ts, traj.k
    return {
        "R": _node_values(traj, lambda i: R_mf(ts, k, traj.nu[i], traj.lambda_plus[i], traj.lambda_minus[i])),
        "D": _node_values(traj, lambda i: D_mf(ts, k, traj.nu[i])),
        "F": _node_values(traj, lambda i: F_mf(ts, traj.nu[i])),
    }


def _log_density_on_support(traj: MFTrajectory, i: int) -> np.ndarray:
    """log(dnu/dgamma) at node i, with 0 where the net flux vanishes."""
    g = traj.ts.gamma
    nu = traj.nu[i]
    net = traj.lambda_plus[i] - traj.lambda_minus[i]
    charged = net != 0
    ok = (g > 0) & (nu > 0)
    if np.any(charged & ~ok):
        raise DensityZeroOnFluxSupportError(
            f"density vanishes where the net flux is nonzero at t={traj.times[i]:.6g}"
        )
    out = np.zeros_like(nu)
    out[ok] = np.log(nu[ok] / g[ok])
    return np.where(charged, out, 0.0)


def _centered(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    return (values[2:] - values[:-2]) / (times[2:] - times[:-2])


def chain_rule_residual(traj: MFTrajectory) -> float:
    """max over interior nodes of |dF/dt - 1/2 sum log(u) (lambda+ - lambda-)|."""
    if traj.times.size < 3:
        raise ValidationError("need at least three nodes for centered differences")
    for i in (0, traj.times.size - 1):
        _log_density_on_support(traj, i)
    F = _node_values(traj, lambda i: F_mf(traj.ts, traj.nu[i]))
    dF = _centered(F, traj.times)
    rhs = np.array(
        [
            0.5 * np.dot(_log_density_on_support(traj, i), traj.lambda_plus[i] - traj.lambda_minus[i])
            for i in range(1, traj.times.size - 1)
        ]
    )
    return float(np.max(np.abs(dF - rhs)))


def lagrangian_gaps_at(ts, k, nu, lam_p, lam_m) -> float:
    """|1/2 (L(nu,l+,l-) + L(nu,l-,l+)) - R - D| at a single point."""
    sym = 0.5 * (L_mf(ts, k, nu, lam_p, lam_m) + L_mf(ts, k, nu, lam_m, lam_p))
    rhs = R_mf(ts, k, nu, lam_p, lam_m) + D_mf(ts, k, nu)
    if math.isinf(sym) and math.isinf(rhs):
        return 0.0
    return abs(sym - rhs)


def lagrangian_decomposition_check(traj: MFTrajectory) -> Tuple[float, float]:
    """(sym_gap, antisym_gap) for the forward/backward Lagrangian split."""
    ts, k = traj.ts, traj.k
    n = traj.times.size
    for i in range(n):
        _log_density_on_support(traj, i)
    sym = max(
        lagrangian_gaps_at(ts, k, traj.nu[i], traj.lambda_plus[i], traj.lambda_minus[i]) for i in range(n)
    )
    if n < 3:
        return float(sym), 0.0
    ent = _node_values(traj, lambda i: relative_entropy(traj.nu[i], ts.gamma))
    dEnt = _centered(ent, traj.times)
    anti = []
    for j, i in enumerate(range(1, n - 1)):
        fwd = L_mf(ts, k, traj.nu[i], traj.lambda_plus[i], traj.lambda_minus[i])
        bwd = L_mf(ts, k, traj.nu[i], traj.lambda_minus[i], traj.lambda_plus[i])
        anti.append(abs(0.5 * (fwd - bwd) - 0.5 * dEnt[j]))
    return float(sym), float(max(anti))


def trajectory_columns(traj: MFTrajectory) -> Tuple[list, np.ndarray]:
    """Header and row matrix for CSV export: t, nu_i, lamp_i, lamm_i."""
    K = traj.ts.K
    header = (
        ["t"]
        + [f"nu_{i + 1}" for i in range(K)]
        + [f"lamp_{i + 1}" for i in range(K)]
        + [f"lamm_{i + 1}" for i in range(K)]
    )
    rows = np.column_stack([traj.times, traj.nu, traj.lambda_plus, traj.lambda_minus])
    return header, rows
