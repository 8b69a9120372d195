"""Exact stochastic simulation (Gillespie direct method) of the particle system.

State: integer counts N_i per site at system size n, empirical measure N/n.
Rates out of N: birth at site i with gamma_i (m.T N)_i, death at site i with
N_i (c N)_i / n.

Random numbers come from numpy's PCG64 seeded by
``SeedSequence(entropy=seed, spawn_key=(stream,))``. Each event consumes one
standard exponential (waiting time) and then one uniform (event choice), in
that order, so a log is fully determined by ``(seed, stream)`` for a given
numpy release.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .core_space import KernelPair, TraitSpace
from .errors import (
    DimensionMismatchError,
    EmptyEnsembleError,
    RateOverflowError,
    ValidationError,
)

BIRTH = 1
DEATH = -1


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for v in (self.seed, self.stream):
            if int(v) != v or not 0 <= v < 2**64:
                raise ValidationError("seed and stream must be integers in [0, 2**64)")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class ParticleState:
    counts: np.ndarray
    n: float

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValidationError("counts must be a vector of nonnegative integers")
        if not self.n > 0:
            raise ValidationError("n must be positive")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def nu(self) -> np.ndarray:
        return self.counts / self.n


def event_rates(ts: TraitSpace, k: KernelPair, state: ParticleState) -> Tuple[np.ndarray, np.ndarray]:
    """(birth, death) rate vectors out of ``state``."""
    N = state.counts.astype(float)
    if N.size != ts.K or k.K != ts.K:
        raise DimensionMismatchError("state, trait space and kernel disagree on K")
    return ts.gamma * (k.m.T @ N), N * (k.c @ N) / state.n


def initial_counts(nu0, n: float, total: Optional[int] = None) -> np.ndarray:
    """round(n * nu0) with a largest-remainder correction so the counts sum to
    ``total`` (default: round(n * nu0(T))). Ties go to the lower site index."""
    x = np.asarray(nu0, dtype=float) * n
    if np.any(x < 0):
        raise ValidationError("nu0 must be nonnegative")
    target = int(round(x.sum())) if total is None else int(total)
    base = np.floor(x).astype(np.int64)
    short = target - int(base.sum())
    if short < 0:
        raise ValidationError("prescribed total is below the floor of n * nu0")
    order = np.lexsort((np.arange(x.size), -(x - base)))
    base[order[:short]] += 1
    return base


@dataclass(frozen=True)
class EventLog:
    """Events of one run. ``kinds`` holds +1 for a birth and -1 for a death."""

    N0: np.ndarray
    n: float
    T: float
    times: np.ndarray
    sites: np.ndarray
    kinds: np.ndarray
    final_counts: np.ndarray
    W_plus: np.ndarray
    W_minus: np.ndarray
    rng: Optional[RngSpec] = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def events(self):
        return list(zip(self.times.tolist(), self.sites.tolist(),
                        ["birth" if k == BIRTH else "death" for k in self.kinds.tolist()]))

    def counts_at(self, t: float) -> np.ndarray:
        """Configuration at time t (right-continuous) by replaying events."""
        m = int(np.searchsorted(self.times, t, side="right"))
        out = self.N0.copy()
        np.add.at(out, self.sites[:m], self.kinds[:m])
        return out

    def nu_at(self, t: float) -> np.ndarray:
        return self.counts_at(t) / self.n

    def summary(self) -> dict:
        return {
            "n": self.n,
            "T": self.T,
            "seed": None if self.rng is None else self.rng.seed,
            "stream": None if self.rng is None else self.rng.stream,
            "initial_counts": self.N0.tolist(),
            "final_counts": self.final_counts.tolist(),
            "W_plus": self.W_plus.tolist(),
            "W_minus": self.W_minus.tolist(),
            "births": int(np.sum(self.kinds == BIRTH)),
            "deaths": int(np.sum(self.kinds == DEATH)),
            "lone_particle_death_violations": int(self.diagnostics.get("lone_death", 0)),
        }


def simulate(
    ts: TraitSpace,
    k: KernelPair,
    N0: Sequence[int],
    n: float,
    T: float,
    rng: RngSpec,
    record: bool = True,
) -> EventLog:
    """Run the exact jump chain on [0, T].

    With ``record=False`` the per-event arrays are left empty (only the final
    state and fluxes are kept), which is faster for large ensembles.
    """
    state = ParticleState(np.asarray(N0), n)
    N = state.counts.copy()
    if N.size != ts.K or k.K != ts.K:
        raise DimensionMismatchError("N0, trait space and kernel disagree on K")
    if N.sum() < 1:
        raise ValidationError("the initial configuration must contain at least one particle")
    if not T > 0:
        raise ValidationError("T must be positive")
    K = ts.K
    g = ts.gamma
    mT = np.ascontiguousarray(k.m.T)
    c = k.c
    inv_n = 1.0 / n
    gen = rng.generator()
    times, sites, kinds = [], [], []
    births = np.zeros(K, dtype=np.int64)
    deaths = np.zeros(K, dtype=np.int64)
    lone_death = 0
    t = 0.0
    rates = np.empty(2 * K)
    while True:
        Nf = N.astype(float)
        rates[:K] = g * (mT @ Nf)
        rates[K:] = Nf * (c @ Nf) * inv_n
        cum = np.cumsum(rates)
        total = cum[-1]
        if not math.isfinite(total):
            raise RateOverflowError(f"total event rate overflowed at t={t:.6g}")
        if total <= 0.0:
            break
        if N.sum() == 1 and rates[K:].sum() > 0:
            lone_death += 1
        t += gen.standard_exponential() / total
        if t > T:
            break
        j = int(np.searchsorted(cum, gen.random() * total, side="right"))
        j = min(j, 2 * K - 1)
        while rates[j] == 0.0:  # guard against a zero-width final interval
            j -= 1
        site = j % K
        if j < K:
            N[site] += 1
            births[site] += 1
            kind = BIRTH
        else:
            N[site] -= 1
            deaths[site] += 1
            kind = DEATH
        if record:
            times.append(t)
            sites.append(site)
            kinds.append(kind)
    if lone_death:
        warnings.warn(f"{lone_death} steps had a single particle with positive death rate")
    return EventLog(
        N0=state.counts.copy(),
        n=float(n),
        T=float(T),
        times=np.array(times, dtype=float),
        sites=np.array(sites, dtype=np.int64),
        kinds=np.array(kinds, dtype=np.int64),
        final_counts=N,
        W_plus=births * inv_n,
        W_minus=deaths * inv_n,
        rng=rng,
        diagnostics={"lone_death": lone_death},
    )


def run_ensemble(
    ts: TraitSpace, k: KernelPair, N0, n: float, T: float, seed: int, runs: int, record: bool = True
) -> list:
    """``runs`` independent simulations on streams 0..runs-1 of ``seed``."""
    return [simulate(ts, k, N0, n, T, RngSpec(seed, s), record=record) for s in range(runs)]


def ensemble_stats(paths: Iterable[EventLog], f, t: float) -> Tuple[float, float, float]:
    """(mean, variance, stderr) of <f, nu_t> across paths; variance uses ddof=1
    (0 for a single path)."""
    paths = list(paths)
    if not paths:
        raise EmptyEnsembleError("no paths given")
    n = paths[0].n
    if any(p.n != n for p in paths):
        raise ValidationError("paths must share the system size n")
    f = np.asarray(f, dtype=float)
    if any(t > p.T for p in paths):
        raise ValidationError("t exceeds the simulated horizon")
    x = np.array([f @ p.nu_at(t) for p in paths])
    mean = float(x.mean())
    if x.size == 1:
        return mean, 0.0, 0.0
    var = float(x.var(ddof=1))
    return mean, var, math.sqrt(var / x.size)


def empirical_law(finals: np.ndarray, space) -> Tuple[np.ndarray, int]:
    """Histogram of final configurations over an enumerated FKE space, plus the
    number of configurations that fall outside it."""
    lookup = {row.tobytes(): i for i, row in enumerate(space.states)}
    out = np.zeros(space.size)
    missing = 0
    for row in np.asarray(finals, dtype=np.int64):
        j = lookup.get(row.tobytes())
        if j is None:
            missing += 1
        else:
            out[j] += 1
    return out / max(1, len(finals)), missing


def events_columns(log: EventLog):
    header = ["time", "site", "kind"]
    kinds = ["birth" if k == BIRTH else "death" for k in log.kinds.tolist()]
    return header, list(zip(log.times.tolist(), (log.sites + 1).tolist(), kinds))
