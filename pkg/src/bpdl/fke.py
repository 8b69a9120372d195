"""Forward Kolmogorov equation of the rescaled particle process on a truncated
configuration space, its Poisson invariant measure and discrete EDP functional.

Configurations are count vectors N with 1 <= |N| <= N_max. From N the chain
jumps to N + e_i at rate gamma_i * (m.T N)_i (= n kappa+_i(N/n)) and to N - e_i
at rate N_i (c N)_i / n (= n kappa-_i(N/n)). Births out of |N| = N_max are
dropped, which keeps the truncated chain reversible with respect to the
restricted Poisson measure.

Fluxes are indexed by (state, site): ``Jp[N, i]`` is the flux of N -> N + e_i
and ``Jm[N, i]`` the flux of N -> N - e_i, both normalised like P * kappa+-,
so that the continuity equation reads dP/dt = n * (inflow - outflow).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, logsumexp, xlogy

from .core_space import KernelPair, TraitSpace, as_measure
from .errors import (
    DimensionMismatchError,
    DominationFailureError,
    SpaceTooLargeError,
    StepTooLargeError,
    TruncationLeakError,
    ValidationError,
    ZeroMassError,
)
from .functionals import INF, phi, psi, relative_entropy, upsilon

DEFAULT_STATE_CAP = 10**6
# RK4 absolute stability on the negative real axis extends to about -2.785.
RK4_STABILITY = 2.785


def count_states(K: int, N_max: int) -> int:
    return math.comb(N_max + K, K) - 1


def _compositions(total: int, K: int):
    if K == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, K - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class ConfigSpace:
    """Enumerated configurations with neighbour tables (-1 = outside the space)."""

    K: int
    N_max: int
    states: np.ndarray
    plus_idx: np.ndarray
    minus_idx: np.ndarray
    sizes: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def index(self, counts) -> int:
        c = np.asarray(counts, dtype=np.int64)
        hits = np.flatnonzero(np.all(self.states == c, axis=1))
        if hits.size != 1:
            raise ValidationError(f"configuration {tuple(c)} is not in the space")
        return int(hits[0])

    def point_mass(self, counts, n: float) -> "FKEDistribution":
        p = np.zeros(self.size)
        p[self.index(counts)] = 1.0
        return FKEDistribution(self, p, n)


def enumerate_states(K: int, N_max: int, cap: int = DEFAULT_STATE_CAP) -> ConfigSpace:
    """All count vectors with 1 <= |N| <= N_max, grouped by |N|, each group in
    decreasing lexicographic order."""
    if K < 1 or N_max < 1:
        raise ValidationError("K and N_max must be at least 1")
    total = count_states(K, N_max)
    if total > cap:
        raise SpaceTooLargeError(f"{total} states exceed the cap of {cap}")
    states = np.array(
        [c for s in range(1, N_max + 1) for c in _compositions(s, K)], dtype=np.int64
    ).reshape(total, K)
    plus = np.full((total, K), -1, dtype=np.int64)
    minus = np.full((total, K), -1, dtype=np.int64)
    sizes = states.sum(axis=1)
    base = N_max + 1
    if K * math.log2(base) < 62:
        # mixed-radix codes, then binary search
        weights = base ** np.arange(K, dtype=np.int64)
        codes = states @ weights
        order = np.argsort(codes)
        sorted_codes = codes[order]

        def find(rows_codes, valid):
            pos = np.searchsorted(sorted_codes, rows_codes)
            pos = np.minimum(pos, total - 1)
            hit = valid & (sorted_codes[pos] == rows_codes)
            return np.where(hit, order[pos], -1)

        for i in range(K):
            plus[:, i] = find(codes + weights[i], sizes < N_max)
            minus[:, i] = find(codes - weights[i], (states[:, i] > 0) & (sizes > 1))
    else:
        lookup = {row.tobytes(): s for s, row in enumerate(states)}
        eye = np.eye(K, dtype=np.int64)
        for i in range(K):
            up = states + eye[i]
            down = states - eye[i]
            for s in range(total):
                plus[s, i] = lookup.get(up[s].tobytes(), -1)
                minus[s, i] = lookup.get(down[s].tobytes(), -1)
    for a in (states, plus, minus, sizes):
        a.setflags(write=False)
    return ConfigSpace(K, N_max, states, plus, minus, sizes)


@dataclass(frozen=True)
class FKEDistribution:
    space: ConfigSpace
    p: np.ndarray
    n: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (self.space.size,):
            raise DimensionMismatchError("probability vector does not match the space")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("not a probability vector")
        object.__setattr__(self, "p", p)

    def expectation(self, f) -> float:
        """E <f, N/n>."""
        return float(self.p @ (self.space.states @ np.asarray(f, dtype=float))) / self.n

    def variance(self, f) -> float:
        x = (self.space.states @ np.asarray(f, dtype=float)) / self.n
        m = self.p @ x
        return float(self.p @ (x - m) ** 2)


def log_poisson_weights(space: ConfigSpace, intensity, n: float) -> np.ndarray:
    """log of n^|N| prod intensity_i^N_i / N_i! (-inf where intensity_i = 0 < N_i)."""
    N = space.states
    terms = xlogy(N, np.asarray(intensity, dtype=float))
    return space.sizes * math.log(n) + terms.sum(axis=1) - gammaln(N + 1.0).sum(axis=1)


def _normalised(space, logw, n) -> FKEDistribution:
    p = np.exp(logw - logsumexp(logw))
    return FKEDistribution(space, p / p.sum(), n)


def stationary_pi(space: ConfigSpace, ts: TraitSpace, n: float) -> FKEDistribution:
    """Poisson measure with intensity n*gamma, restricted to the space and renormalised."""
    if space.K != ts.K:
        raise DimensionMismatchError("space and trait space disagree on K")
    return _normalised(space, log_poisson_weights(space, ts.gamma, n), n)


def tilted_pi(space: ConfigSpace, nu, n: float) -> FKEDistribution:
    """Poisson measure with intensity n*nu, restricted and renormalised."""
    nu = as_measure(nu, space.K)
    if nu.sum() <= 0:
        raise ZeroMassError("tilted measure needs nu(T) > 0")
    return _normalised(space, log_poisson_weights(space, nu, n), n)


def log_untruncated_normaliser(total_intensity: float) -> float:
    """log(exp(x) - 1) for x = n * total mass, computed stably."""
    x = float(total_intensity)
    return x + math.log(-math.expm1(-x)) if x > 0 else -INF


@dataclass(frozen=True)
class GeneratorAction:
    """Rates of the truncated chain. ``birth[s, i]`` and ``death[s, i]`` are the
    rates of s -> s + e_i and s -> s - e_i (zero when the target is outside)."""

    space: ConfigSpace
    n: float
    birth: np.ndarray
    death: np.ndarray
    dropped_birth: np.ndarray
    Q: sp.csr_matrix = field(repr=False)
    QT: sp.csr_matrix = field(repr=False)

    @property
    def out_rate(self) -> np.ndarray:
        return self.birth.sum(axis=1) + self.death.sum(axis=1)

    def apply_adjoint(self, p: np.ndarray) -> np.ndarray:
        """Q* p (right-hand side of the forward equation)."""
        return self.QT @ p

    def leak_rate(self, p: np.ndarray) -> float:
        return float(p @ self.dropped_birth.sum(axis=1))

    def solution_fluxes(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Jp = P kappa+, Jm = P kappa- on retained transitions."""
        return p[:, None] * self.birth / self.n, p[:, None] * self.death / self.n


def build_generator(
    space: ConfigSpace,
    ts: TraitSpace,
    k: KernelPair,
    n: float,
    birth_scale: float = 1.0,
    death_scale: float = 1.0,
) -> GeneratorAction:
    """Assemble the truncated generator.

    ``birth_scale``/``death_scale`` multiply every birth/death rate; values
    other than 1 give an off-solution dynamics used to probe the EDP functional.
    """
    if space.K != ts.K or k.K != ts.K:
        raise DimensionMismatchError("space, trait space and kernel disagree on K")
    if not n > 0:
        raise ValidationError("n must be positive")
    N = space.states.astype(float)
    full_birth = birth_scale * ts.gamma * (N @ k.m)
    death = death_scale * N * (N @ k.c.T) / n
    inside_p = space.plus_idx >= 0
    inside_m = space.minus_idx >= 0
    birth = np.where(inside_p, full_birth, 0.0)
    dropped = np.where(inside_p, 0.0, full_birth)
    death = np.where(inside_m, death, 0.0)

    S, K = space.size, space.K
    rows, cols, vals = [], [], []
    src = np.repeat(np.arange(S), K).reshape(S, K)
    for rate, tgt in ((birth, space.plus_idx), (death, space.minus_idx)):
        mask = (tgt >= 0) & (rate > 0)
        rows.append(src[mask])
        cols.append(tgt[mask])
        vals.append(rate[mask])
    out = birth.sum(axis=1) + death.sum(axis=1)
    rows.append(np.arange(S))
    cols.append(np.arange(S))
    vals.append(-out)
    Q = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(S, S)
    )
    for a in (birth, death, dropped):
        a.setflags(write=False)
    return GeneratorAction(space, float(n), birth, death, dropped, Q, Q.T.tocsr())


def detailed_balance_residual(gen: GeneratorAction, pi: FKEDistribution, eps: float = 1e-300) -> float:
    """max over retained pairs of |Pi(N) r(N->N+e) - Pi(N+e) r(N+e->N)| / max(Pi(N) r, eps)."""
    sp_ = gen.space
    s, i = np.nonzero(sp_.plus_idx >= 0)
    t = sp_.plus_idx[s, i]
    fwd = pi.p[s] * gen.birth[s, i]
    bwd = pi.p[t] * gen.death[t, i]
    if fwd.size == 0:
        return 0.0
    return float(np.max(np.abs(fwd - bwd) / np.maximum(fwd, eps)))


def stationarity_residual(gen: GeneratorAction, pi: FKEDistribution) -> float:
    """||Q* Pi||_1."""
    return float(np.abs(gen.apply_adjoint(pi.p)).sum())


@dataclass(frozen=True)
class FKETrajectory:
    gen: GeneratorAction
    times: np.ndarray
    P: np.ndarray
    leak: np.ndarray
    stats: dict = field(default_factory=dict, compare=False)

    def at(self, idx: int) -> FKEDistribution:
        return FKEDistribution(self.gen.space, self.P[idx], self.gen.n)

    @property
    def final(self) -> FKEDistribution:
        return self.at(-1)

    @property
    def total_leak(self) -> float:
        return float(self.leak[-1])


def solve_fke(
    gen: GeneratorAction,
    P0: FKEDistribution,
    T: float,
    dt: float,
    leak_budget: float = 1e-6,
    drift_tol: float = 1e-13,
) -> FKETrajectory:
    """Integrate dP/dt = Q* P with classic RK4 on a uniform grid.

    The step is rejected up front if dt * 2 max(out rate) leaves the RK4
    stability interval (a bound on the spectrum of Q). After each step tiny
    negative entries are clipped and the vector is renormalised when its
    mass drifts by more than ``drift_tol``. The leak diagnostic integrates
    the probability flux through the dropped births.
    """
    if P0.space is not gen.space and P0.space.size != gen.space.size:
        raise DimensionMismatchError("initial law lives on a different space")
    if not T > 0 or not dt > 0:
        raise ValidationError("T and dt must be positive")
    M = max(1, int(math.ceil(T / dt - 1e-9)))
    times = np.linspace(0.0, T, M + 1)
    h = T / M
    spectral = 2.0 * float(gen.out_rate.max()) if gen.space.size else 0.0
    if h * spectral > RK4_STABILITY:
        raise StepTooLargeError(
            f"dt={h:.3g} with spectral bound {spectral:.3g} exceeds the RK4 stability limit;"
            f" use dt <= {RK4_STABILITY / spectral:.3g}"
        )
    A = gen.QT
    P = np.empty((M + 1, gen.space.size))
    P[0] = P0.p
    leak_rate = np.empty(M + 1)
    leak_rate[0] = gen.leak_rate(P0.p)
    leak = np.zeros(M + 1)
    max_drift = 0.0
    clipped = 0.0
    renorms = 0
    p = P0.p.copy()
    for j in range(1, M + 1):
        k1 = A @ p
        k2 = A @ (p + 0.5 * h * k1)
        k3 = A @ (p + 0.5 * h * k2)
        k4 = A @ (p + h * k3)
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        neg = p < 0
        if neg.any():
            clipped = max(clipped, float(-p[neg].min()))
            p[neg] = 0.0
        drift = abs(p.sum() - 1.0)
        max_drift = max(max_drift, drift)
        if drift > drift_tol:
            p /= p.sum()
            renorms += 1
        P[j] = p
        leak_rate[j] = gen.leak_rate(p)
        leak[j] = leak[j - 1] + 0.5 * h * (leak_rate[j] + leak_rate[j - 1])
        if leak[j] > leak_budget:
            raise TruncationLeakError(
                f"leaked probability flux {leak[j]:.3e} exceeds budget {leak_budget:.1e} at t={times[j]:.4g};"
                " increase N_max"
            )
    stats = {"max_drift": max_drift, "max_clipped": clipped, "renormalisations": renorms}
    return FKETrajectory(gen, times, P, leak, stats)


# EDP functional


@dataclass(frozen=True)
class FKEEDPReport:
    R_integral: float
    F_initial: float
    F_final: float
    D_integral: float
    I: float
    leak: float
    F: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {
            "R_integral": self.R_integral,
            "F_initial": self.F_initial,
            "F_final": self.F_final,
            "D_integral": self.D_integral,
            "I": self.I,
            "leak": self.leak,
        }


def _pairs(space: ConfigSpace):
    s, i = np.nonzero(space.plus_idx >= 0)
    return s, i, space.plus_idx[s, i]


def free_energy(P: np.ndarray, pi: FKEDistribution) -> float:
    """F_n = Ent(P|Pi_n) / (2n)."""
    return relative_entropy(P, pi.p) / (2.0 * pi.n)


def fisher_information(gen: GeneratorAction, pi: FKEDistribution, P: np.ndarray, form: str = "plus") -> float:
    """D_n = sum (sqrt U(N+e_i) - sqrt U(N))^2 Pi(N) kappa+_i(N/n), U = P/Pi.

    ``form="minus"`` evaluates the same sum through the death side,
    Pi(N') kappa-_i(N'/n) on the pair (N' - e_i, N').
    """
    s, i, t = _pairs(gen.space)
    U = P / pi.p
    diff = (np.sqrt(U[t]) - np.sqrt(U[s])) ** 2
    if form == "plus":
        w = pi.p[s] * gen.birth[s, i] / gen.n
    elif form == "minus":
        w = pi.p[t] * gen.death[t, i] / gen.n
    else:
        raise ValidationError("form must be 'plus' or 'minus'")
    return float(np.sum(diff * w))


def _check_support(gen: GeneratorAction, Jp, Jm):
    sp_ = gen.space
    if np.any(Jp < 0) or np.any(Jm < 0):
        raise ValidationError("fluxes must be nonnegative")
    if np.any(Jp[sp_.plus_idx < 0] > 0) or np.any(Jm[sp_.minus_idx < 0] > 0):
        return False
    return True


def dissipation_upsilon(gen: GeneratorAction, P: np.ndarray, Jp: np.ndarray, Jm: np.ndarray) -> float:
    """R_n = sum over retained edges of Upsilon(J, P kappa+ on N, P kappa- on N+e)."""
    if not _check_support(gen, Jp, Jm):
        return INF
    s, i, t = _pairs(gen.space)
    u = P[s] * gen.birth[s, i] / gen.n
    v = P[t] * gen.death[t, i] / gen.n
    terms = upsilon(Jp[s, i], u, v) + upsilon(Jm[t, i], u, v)
    terms = np.atleast_1d(terms)
    return INF if np.any(np.isinf(terms)) else float(terms.sum())


def dissipation_direct(
    gen: GeneratorAction, pi: FKEDistribution, P: np.ndarray, Jp: np.ndarray, Jm: np.ndarray
) -> float:
    """Ent(Jp|Theta+) + Ent(Jm|Theta-) with Theta+(N,i) = sqrt(U(N)U(N+e_i)) Pi(N) kappa+_i."""
    if not _check_support(gen, Jp, Jm):
        return INF
    s, i, t = _pairs(gen.space)
    U = P / pi.p
    th = np.sqrt(U[s]) * np.sqrt(U[t]) * pi.p[s] * gen.birth[s, i] / gen.n
    theta_p = np.zeros_like(Jp)
    theta_m = np.zeros_like(Jm)
    theta_p[s, i] = th
    theta_m[t, i] = th
    return relative_entropy(Jp.ravel(), theta_p.ravel()) + relative_entropy(Jm.ravel(), theta_m.ravel())


def edp_fke(
    gen: GeneratorAction,
    pi: FKEDistribution,
    traj: FKETrajectory,
    fluxes: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> FKEEDPReport:
    """I_n = int R_n dt + F_n(P_T) - F_n(P_0) + int D_n dt (trapezoid).

    ``fluxes`` is a pair of arrays of shape (nodes, states, K); by default the
    solution fluxes P_t kappa+- of ``gen`` are used. Fluxes charging an edge
    whose Theta vanishes raise :class:`DominationFailureError`.
    """
    nodes = traj.times.size
    if fluxes is None:
        fl = [gen.solution_fluxes(traj.P[j]) for j in range(nodes)]
    else:
        Jp, Jm = fluxes
        fl = [(Jp[j], Jm[j]) for j in range(nodes)]
    R = np.empty(nodes)
    D = np.empty(nodes)
    F = np.empty(nodes)
    for j in range(nodes):
        P = traj.P[j]
        R[j] = dissipation_upsilon(gen, P, *fl[j])
        if math.isinf(R[j]):
            raise DominationFailureError(f"flux charges an edge with zero Theta at t={traj.times[j]:.6g}")
        D[j] = fisher_information(gen, pi, P)
        F[j] = free_energy(P, pi)
    Ri = float(trapezoid(R, traj.times))
    Di = float(trapezoid(D, traj.times))
    I = Ri + F[-1] - F[0] + Di
    return FKEEDPReport(Ri, float(F[0]), float(F[-1]), Di, float(I), traj.total_leak, F, R, D)


def d_tvw(P1: FKEDistribution, P2: FKEDistribution) -> float:
    """Weighted total variation sum (1 + (|N|/n)^2)^-1 |P1 - P2|."""
    if P1.space.size != P2.space.size or P1.n != P2.n:
        raise DimensionMismatchError("distributions live on different spaces")
    w = 1.0 / (1.0 + (P1.space.sizes / P1.n) ** 2)
    return float(np.sum(w * np.abs(P1.p - P2.p)))


def net_flux_contraction_check(theta: float, s: float) -> Tuple[float, float]:
    """Minimise phi(j/theta) theta + phi((j - s)/theta) theta over j >= max(s, 0)
    by bounded Brent search; return (minimiser, |min - Psi(s/theta) theta|)."""
    if not theta > 0:
        raise ValidationError("theta must be positive")
    lo = max(s, 0.0)
    hi = lo + 4.0 * (abs(s) + theta) + 1.0

    def cost(j):
        return (phi(j / theta) + phi(max(j - s, 0.0) / theta)) * theta

    res = minimize_scalar(cost, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12, "maxiter": 2000})
    j = float(res.x)
    return j, abs(float(res.fun) - psi(s / theta) * theta)


def trajectory_columns(traj: FKETrajectory, stride: int = 1):
    header = ["t"] + [f"p_{j}" for j in range(traj.gen.space.size)]
    idx = np.arange(0, traj.times.size, max(1, stride))
    if idx[-1] != traj.times.size - 1:
        idx = np.append(idx, traj.times.size - 1)
    return header, np.column_stack([traj.times[idx], traj.P[idx]])


def states_manifest(space: ConfigSpace) -> dict:
    return {
        "K": space.K,
        "N_max": space.N_max,
        "order": "by total count ascending, then decreasing lexicographic",
        "columns": [f"p_{j}" for j in range(space.size)],
        "states": space.states.tolist(),
    }
