"""Large-n experiments: cumulant generating functionals, the recovery-sequence
entropy, concentration of the FKE law around the mean-field path, entropic
chaos, and Monte-Carlo superposition of mean-field trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import poisson

from .core_space import KernelPair, TraitSpace, as_measure
from .errors import (
    NotAbsolutelyContinuousError,
    TailBudgetExceededError,
    ValidationError,
)
from .fke import (
    DEFAULT_STATE_CAP,
    FKEDistribution,
    build_generator,
    count_states,
    enumerate_states,
    log_poisson_weights,
    log_untruncated_normaliser,
    solve_fke,
    stationary_pi,
    tilted_pi,
)
from .functionals import F_mf, relative_entropy
from .meanfield import SolverOptions, edp_mf, solve_mf
from .particles import RngSpec, simulate

QUANTITIES = ("entropy_rate", "Gn", "mean_obs", "var_obs", "chaos_entropy", "I_infty_mc")
TABLE_HEADER = ["n", "quantity", "value", "limit", "gap", "stderr"]


@dataclass
class ConvergenceTable:
    rows: List[dict] = field(default_factory=list)
    meta: Dict[str, object] = field(default_factory=dict)

    def add(self, n, quantity, value, limit, stderr=0.0):
        if quantity not in QUANTITIES:
            raise ValidationError(f"unknown quantity tag {quantity!r}")
        prev = [r["n"] for r in self.rows if r["quantity"] == quantity]
        if prev and not n > prev[-1]:
            raise ValidationError("n must be strictly increasing within a quantity")
        self.rows.append(
            {
                "n": n,
                "quantity": quantity,
                "value": float(value),
                "limit": float(limit),
                "gap": abs(float(value) - float(limit)),
                "stderr": float(stderr),
            }
        )

    def column(self, quantity: str, key: str = "value") -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["quantity"] == quantity])

    def as_rows(self):
        return [[r[h] for h in TABLE_HEADER] for r in self.rows]


def _log_expm1(x: float) -> float:
    return log_untruncated_normaliser(x)


def G_n(ts: TraitSpace, f, n: float) -> float:
    """(1/n) log((exp(n sum e^f gamma) - 1) / (exp(n gamma(T)) - 1))."""
    f = np.asarray(f, dtype=float)
    if f.shape != (ts.K,) or not np.all(np.isfinite(f)):
        raise ValidationError("f must be a finite site function")
    a = float(np.sum(np.exp(f) * ts.gamma))
    return (_log_expm1(n * a) - _log_expm1(n * ts.total_mass)) / n


def G_limit(ts: TraitSpace, f) -> float:
    f = np.asarray(f, dtype=float)
    return float(np.sum(np.expm1(f) * ts.gamma))


def poisson_nmax(lam: float, tol: float) -> int:
    """Smallest M with P(Poisson(lam) > M) <= tol."""
    M = max(1, int(lam))
    while poisson.sf(M, lam) > tol:
        M += max(1, int(math.sqrt(lam)) // 4)
    while M > 1 and poisson.sf(M - 1, lam) <= tol:
        M -= 1
    return M


def _ratio_logs(ts, nu_bar):
    pos = nu_bar > 0
    if np.any(pos & (ts.gamma == 0)):
        raise NotAbsolutelyContinuousError("nu_bar charges a site where gamma vanishes")
    out = np.zeros_like(nu_bar)
    out[pos] = np.log(nu_bar[pos] / ts.gamma[pos])
    return out


def recovery_entropy_closed_form(ts: TraitSpace, nu_bar, n: float) -> float:
    nu_bar = as_measure(nu_bar, ts.K)
    A = n * nu_bar.sum()
    if A <= 0:
        raise ValidationError("nu_bar must have positive mass")
    logs = _ratio_logs(ts, nu_bar)
    mean_factor = n / -math.expm1(-A)
    return mean_factor * float(np.sum(logs * nu_bar)) + _log_expm1(n * ts.total_mass) - _log_expm1(A)


def recovery_entropy(
    ts: TraitSpace, nu_bar, n: float, tail_tol: float = 1e-10, cap: int = DEFAULT_STATE_CAP
):
    """(closed_form, direct) for Ent(Pi_{n,nu_bar} | Pi_n), both untruncated.

    ``direct`` sums over all configurations with |N| <= N_max, where N_max is
    the smallest value whose bound on the neglected contribution is below
    ``tail_tol``.
    """
    nu_bar = as_measure(nu_bar, ts.K)
    closed = recovery_entropy_closed_form(ts, nu_bar, n)
    A = n * nu_bar.sum()
    logs = _ratio_logs(ts, nu_bar)
    L = float(np.max(np.abs(logs)))
    C = abs(_log_expm1(n * ts.total_mass) - _log_expm1(A))
    z = -math.expm1(-A)

    def tail(M):
        return (L * A * poisson.sf(M - 1, A) + C * poisson.sf(M, A)) / z

    M = max(1, int(A))
    while tail(M) > tail_tol:
        M += 1
        if count_states(ts.K, M) > cap:
            raise TailBudgetExceededError(
                f"reaching tail bound {tail_tol:g} needs more than {cap} states"
            )
    space = enumerate_states(ts.K, M, cap=cap)
    logP = log_poisson_weights(space, nu_bar, n) - _log_expm1(A)
    logPi = log_poisson_weights(space, ts.gamma, n) - _log_expm1(n * ts.total_mass)
    P = np.exp(logP)
    keep = P > 0
    direct = float(np.sum(P[keep] * (logP[keep] - logPi[keep])))
    return closed, direct


def duality_gap(P: FKEDistribution, ts: TraitSpace, f) -> float:
    """(1/n) Ent(P | Pi_n) + G_n(f) - E <f, nu> against the untruncated Pi_n;
    nonnegative by the Donsker-Varadhan inequality."""
    n = P.n
    logPi = log_poisson_weights(P.space, ts.gamma, n) - _log_expm1(n * ts.total_mass)
    keep = P.p > 0
    ent = float(np.sum(P.p[keep] * (np.log(P.p[keep]) - logPi[keep])))
    return ent / n + G_n(ts, f, n) - P.expectation(f)


@dataclass(frozen=True)
class ExperimentSetup:
    """Shared inputs for the n -> infinity experiments."""

    ts: TraitSpace
    k: KernelPair
    nu0: np.ndarray
    dt: float = 1e-3
    mf_tol: float = 1e-10
    tail_tol: float = 1e-12
    leak_budget: float = 1e-6
    max_states: int = 200_000
    runs: int = 400
    seed: int = 0

    def mf_reference(self, t: float):
        return solve_mf(self.ts, self.k, self.nu0, t, SolverOptions(dt=self.dt, tol=self.mf_tol))

    def nmax_for(self, n: float, t: float) -> int:
        """Truncation level from a Poisson tail bound at the largest mass the
        mean-field path or the reference measure reaches on [0, t]."""
        masses = [float(np.sum(self.nu0)), self.ts.total_mass]
        if t > 0:
            masses.append(float(self.mf_reference(t).nu.sum(axis=1).max()))
        return poisson_nmax(n * max(masses), self.tail_tol)

    def fke_law(self, n: float, t: float):
        """FKE law at time t started from the truncated tilted measure."""
        N_max = self.nmax_for(n, t)
        space = enumerate_states(self.ts.K, N_max, cap=max(self.max_states, 1))
        P0 = tilted_pi(space, self.nu0, n)
        tail = 1.0 - math.exp(
            np.logaddexp.reduce(log_poisson_weights(space, self.nu0, n))
            - _log_expm1(n * float(np.sum(self.nu0)))
        )
        if t == 0:
            return space, P0, None, {"N_max": N_max, "initial_tail_mass": tail, "leak": 0.0}
        gen = build_generator(space, self.ts, self.k, n)
        traj = solve_fke(gen, P0, t, self.dt, leak_budget=self.leak_budget)
        info = {"N_max": N_max, "initial_tail_mass": tail, "leak": traj.total_leak}
        return space, traj.final, traj, info


def _sample_tilted(gen: np.random.Generator, nu0, n, size):
    out = np.empty((size, nu0.size), dtype=np.int64)
    for r in range(size):
        while True:
            x = gen.poisson(n * nu0)
            if x.sum() >= 1:
                break
        out[r] = x
    return out


def concentration_experiment(setup: ExperimentSetup, ns: Sequence[float], f, t: float) -> ConvergenceTable:
    """Mean and variance of <f, nu_t> under the law at size n, per n.

    Uses the exact FKE law when the truncated space fits in
    ``setup.max_states`` and a Gillespie ensemble of ``setup.runs`` runs
    otherwise. The limit column is <f, nu_t> on the mean-field path.
    """
    f = np.asarray(f, dtype=float)
    limit = float(f @ setup.mf_reference(t).final) if t > 0 else float(f @ setup.nu0)
    table = ConvergenceTable(meta={"t": t, "f": f.tolist(), "per_n": {}})
    for n in ns:
        N_max = setup.nmax_for(n, t)
        if count_states(setup.ts.K, N_max) <= setup.max_states:
            _, P, _, info = setup.fke_law(n, t)
            mean, var, se_m, se_v = P.expectation(f), P.variance(f), 0.0, 0.0
            info["method"] = "fke"
        else:
            init = RngSpec(setup.seed, 2**63 + int(n)).generator()
            starts = _sample_tilted(init, setup.nu0, n, setup.runs)
            x = np.empty(setup.runs)
            for r in range(setup.runs):
                log = simulate(setup.ts, setup.k, starts[r], n, t, RngSpec(setup.seed, r), record=False) \
                    if t > 0 else None
                counts = starts[r] if log is None else log.final_counts
                x[r] = f @ counts / n
            mean, var = float(x.mean()), float(x.var(ddof=1))
            se_m = math.sqrt(var / x.size)
            # normal-theory standard error of a sample variance
            se_v = var * math.sqrt(2.0 / (x.size - 1))
            info = {"method": "gillespie", "runs": setup.runs}
        table.add(n, "mean_obs", mean, limit, se_m)
        table.add(n, "var_obs", var, 0.0, se_v)
        table.meta["per_n"][str(n)] = info
    return table


def chaos_entropy_curve(setup: ExperimentSetup, ns: Sequence[float], t: float) -> ConvergenceTable:
    """Per n: (1/n) Ent(P_t | Pi_{n, nu_t}) (limit 0) and (1/n) Ent(P_t | Pi_n)
    (limit Ent(nu_t | gamma)), with P_t the FKE law from tilted initial data."""
    ratio = setup.nu0 / np.where(setup.ts.gamma > 0, setup.ts.gamma, 1.0)
    if np.any((setup.ts.gamma == 0) & (setup.nu0 > 0)) or np.any(ratio[setup.ts.gamma > 0] <= 0):
        raise ValidationError("chaos experiment needs a density bounded away from 0 and infinity")
    nu_t = setup.mf_reference(t).final if t > 0 else setup.nu0
    ent_limit = relative_entropy(nu_t, setup.ts.gamma)
    table = ConvergenceTable(meta={"t": t, "nu_t": nu_t.tolist(), "per_n": {}})
    for n in ns:
        space, P, _, info = setup.fke_law(n, t)
        chaos = relative_entropy(P.p, tilted_pi(space, nu_t, n).p) / n
        rate = relative_entropy(P.p, stationary_pi(space, setup.ts, n).p) / n
        table.add(n, "chaos_entropy", chaos, 0.0)
        table.add(n, "entropy_rate", rate, ent_limit)
        table.meta["per_n"][str(n)] = info
    return table


def entropy_table(ts: TraitSpace, nu_bar, f, ns: Sequence[float]) -> ConvergenceTable:
    """(1/n) recovery entropy against Ent(nu_bar|gamma) and G_n(f) against G(f)."""
    table = ConvergenceTable()
    lim_e = relative_entropy(as_measure(nu_bar, ts.K), ts.gamma)
    lim_g = G_limit(ts, f)
    for n in ns:
        table.add(n, "entropy_rate", recovery_entropy_closed_form(ts, nu_bar, n) / n, lim_e)
        table.add(n, "Gn", G_n(ts, f, n), lim_g)
    return table


@dataclass(frozen=True)
class EnsembleSpec:
    """Finite mixture of initial measures with sampling parameters."""

    atoms: np.ndarray
    weights: np.ndarray
    samples: int
    rng: RngSpec

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if a.shape[0] != w.size or w.size == 0:
            raise ValidationError("need one weight per atom")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must be nonnegative and sum to 1")
        if np.any(a < 0):
            raise ValidationError("atoms must be nonnegative measures")
        if self.samples < 1:
            raise ValidationError("samples must be positive")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class SuperpositionReport:
    I_infty_estimate: float
    F_infty_initial: float
    F_infty_final: float
    R_integral: float
    D_integral: float
    stderr: dict
    exact: dict
    lifted_edb_residual: float
    counts: list

    def as_dict(self) -> dict:
        return {
            "I_infty_estimate": self.I_infty_estimate,
            "F_infty_initial": self.F_infty_initial,
            "F_infty_final": self.F_infty_final,
            "R_integral": self.R_integral,
            "D_integral": self.D_integral,
            "lifted_edb_residual": self.lifted_edb_residual,
            "stderr": self.stderr,
            "exact": self.exact,
            "atom_counts": self.counts,
        }


def superposition_mc(
    ts: TraitSpace, k: KernelPair, spec: EnsembleSpec, T: float, opts: Optional[SolverOptions] = None
) -> SuperpositionReport:
    """Sample initial measures from ``spec``, solve the mean-field equation
    for each and average the EDP parts. Each distinct atom is solved once."""
    opts = opts or SolverOptions()
    for a in spec.atoms:
        if math.isinf(F_mf(ts, a)):
            raise ValidationError("every atom needs finite free energy")
    per_atom = []
    for a in spec.atoms:
        rep = edp_mf(solve_mf(ts, k, a, T, opts))
        per_atom.append([rep.I, rep.F_initial, rep.F_final, rep.R_integral, rep.D_integral])
    per_atom = np.array(per_atom)
    idx = spec.rng.generator().choice(spec.weights.size, size=spec.samples, p=spec.weights)
    vals = per_atom[idx]
    means = vals.mean(axis=0)
    if spec.samples > 1:
        se = vals.std(axis=0, ddof=1) / math.sqrt(spec.samples)
    else:
        se = np.zeros(5)
    exact = spec.weights @ per_atom
    names = ["I_infty_estimate", "F_infty_initial", "F_infty_final", "R_integral", "D_integral"]
    residual = abs(means[2] + means[3] + means[4] - means[1])
    return SuperpositionReport(
        *[float(v) for v in means],
        stderr={nm: float(s) for nm, s in zip(names, se)},
        exact={nm: float(v) for nm, v in zip(names, exact)},
        lifted_edb_residual=float(residual),
        counts=np.bincount(idx, minlength=spec.weights.size).tolist(),
    )
