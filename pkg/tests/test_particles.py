import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from bpdl.core_space import KernelPair, TraitSpace, build_kernel_pair, kappa_minus, kappa_plus
from bpdl.errors import EmptyEnsembleError, RateOverflowError, ValidationError
from bpdl.functionals import tv_norm
from bpdl.particles import (
    BIRTH,
    DEATH,
    ParticleState,
    RngSpec,
    ensemble_stats,
    event_rates,
    events_columns,
    initial_counts,
    run_ensemble,
    simulate,
)
from oracles import gillespie_vs_fke


class TestRng:
    def test_validation(self):
        with pytest.raises(ValidationError):
            RngSpec(-1)
        with pytest.raises(ValidationError):
            RngSpec(1, 2**64)

    def test_reproducible_and_stream_dependent(self, ts2, k2):
        a = simulate(ts2, k2, [3, 1], 2.0, 2.0, RngSpec(11, 4))
        b = simulate(ts2, k2, [3, 1], 2.0, 2.0, RngSpec(11, 4))
        c = simulate(ts2, k2, [3, 1], 2.0, 2.0, RngSpec(11, 5))
        assert a.times.tobytes() == b.times.tobytes()
        assert a.sites.tobytes() == b.sites.tobytes()
        assert a.kinds.tobytes() == b.kinds.tobytes()
        assert a.times.tobytes() != c.times.tobytes()

    def test_generator_family(self):
        g = RngSpec(5, 2).generator()
        assert isinstance(g.bit_generator, np.random.PCG64)
        ref = np.random.Generator(np.random.PCG64(np.random.SeedSequence(5, spawn_key=(2,))))
        assert g.random() == ref.random()


class TestRates:
    @pytest.mark.parametrize(
        "N, birth, death", [((1, 0), (0, 1), (0, 0)), ((1, 1), (1, 1), (1, 1)), ((0, 0), (0, 0), (0, 0))]
    )
    def test_rate_table(self, ts2, k2, N, birth, death):
        b, d = event_rates(ts2, k2, ParticleState(np.array(N), 1.0))
        np.testing.assert_array_equal(b, birth)
        np.testing.assert_array_equal(d, death)

    def test_state_validation(self):
        with pytest.raises(ValidationError):
            ParticleState(np.array([1, -1]), 1.0)
        with pytest.raises(ValidationError):
            ParticleState(np.array([1.5, 0]), 1.0)
        with pytest.raises(ValidationError):
            ParticleState(np.array([1, 0]), 0.0)


@st.composite
def particle_systems(draw):
    K = draw(st.integers(1, 4))
    gamma = draw(arrays(float, K, elements=st.floats(0.01, 5.0)))
    c = draw(arrays(float, (K, K), elements=st.floats(0.0, 5.0)))
    np.fill_diagonal(c, 0.0)
    N = draw(arrays(np.int64, K, elements=st.integers(0, 50)))
    n = draw(st.floats(0.5, 20.0))
    return TraitSpace(K, gamma), build_kernel_pair(c), N, n


@settings(max_examples=200, deadline=None)
@given(particle_systems())
def test_rates_match_kappas(system):
    ts, k, N, n = system
    b, d = event_rates(ts, k, ParticleState(N, n))
    np.testing.assert_allclose(b, n * kappa_plus(ts, k, N / n), rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(d, n * kappa_minus(ts, k, N / n), rtol=1e-12, atol=1e-300)


class TestInitialCounts:
    def test_rounding(self):
        np.testing.assert_array_equal(initial_counts([0.5, 0.5], 8), [4, 4])
        np.testing.assert_array_equal(initial_counts([0.5, 0.5], 3), [2, 1])  # tie to lower index
        np.testing.assert_array_equal(initial_counts([0.26, 0.74], 10), [3, 7])

    def test_prescribed_total(self):
        N = initial_counts([0.2, 0.3, 0.5], 7, total=8)
        np.testing.assert_array_equal(N, [2, 2, 4])
        with pytest.raises(ValidationError):
            initial_counts([1.0, 1.0], 10, total=3)


class TestSimulate:
    def test_first_event_from_single_particle(self, ts2, k2):
        waits = []
        for s in range(10_000):
            log = simulate(ts2, k2, [1, 0], 1.0, 15.0, RngSpec(99, s))
            assert log.sites[0] == 1 and log.kinds[0] == BIRTH
            waits.append(log.times[0])
        assert stats.kstest(waits, "expon").pvalue > 0.01

    def test_no_competition_no_events(self):
        ts = TraitSpace(3, [1.0, 2.0, 0.5])
        k = build_kernel_pair(np.zeros((3, 3)))
        log = simulate(ts, k, [2, 0, 5], 3.0, 10.0, RngSpec(1))
        assert log.times.size == 0
        assert np.all(log.W_plus == 0) and np.all(log.W_minus == 0)
        np.testing.assert_array_equal(log.final_counts, [2, 0, 5])

    def test_flux_state_consistency(self, rng):
        ts = TraitSpace(3, [1.0, 0.5, 2.0])
        k = build_kernel_pair(rng.uniform(0, 2, (3, 3)) * (1 - np.eye(3)))
        n = 4.0
        log = simulate(ts, k, [3, 2, 6], n, 3.0, RngSpec(3, 7))
        assert np.array_equal(log.final_counts / n - log.N0 / n, log.W_plus - log.W_minus)
        np.testing.assert_array_equal(log.counts_at(log.T), log.final_counts)
        np.testing.assert_array_equal(log.counts_at(0.0), log.N0)
        assert np.all(np.diff(log.times) > 0)
        assert log.summary()["births"] == int(np.sum(log.kinds == BIRTH))
        assert log.summary()["deaths"] == int(np.sum(log.kinds == DEATH))

    def test_never_empty(self, ts2, k2):
        for s in range(50):
            log = simulate(ts2, k2, [1, 0], 1.0, 5.0, RngSpec(8, s))
            sizes = log.N0.sum() + np.cumsum(log.kinds)
            assert sizes.min(initial=1) >= 1
            assert log.diagnostics["lone_death"] == 0

    def test_lone_death_diagnostic(self):
        ts = TraitSpace(2, [1.0, 1.0])
        bad = KernelPair(c=np.array([[1.0, 0.0], [0.0, 0.0]]), m=np.zeros((2, 2)))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            log = simulate(ts, bad, [1, 0], 1.0, 50.0, RngSpec(0))
        assert log.diagnostics["lone_death"] >= 1
        assert any("single particle" in str(w.message) for w in caught)

    def test_rate_overflow(self, k2):
        ts = TraitSpace(2, [1e308, 1e308])
        with np.errstate(over="ignore"), pytest.raises(RateOverflowError):
            simulate(ts, k2, [5, 5], 1.0, 1.0, RngSpec(0))

    def test_rejects_bad_input(self, ts2, k2):
        with pytest.raises(ValidationError):
            simulate(ts2, k2, [0, 0], 1.0, 1.0, RngSpec(0))
        with pytest.raises(ValidationError):
            simulate(ts2, k2, [1, 0], 1.0, 0.0, RngSpec(0))

    def test_events_csv_is_one_based(self, ts2, k2):
        log = simulate(ts2, k2, [1, 0], 1.0, 30.0, RngSpec(1))
        header, rows = events_columns(log)
        assert header == ["time", "site", "kind"]
        assert rows[0][1:] == (2, "birth")


class TestEnsembleStats:
    def test_single_path(self, ts2, k2):
        paths = run_ensemble(ts2, k2, [2, 2], 2.0, 1.0, seed=1, runs=1)
        assert ensemble_stats(paths, [1, 1], 1.0)[1:] == (0.0, 0.0)

    def test_zero_function(self, ts2, k2):
        paths = run_ensemble(ts2, k2, [2, 2], 2.0, 1.0, seed=1, runs=10)
        assert ensemble_stats(paths, [0, 0], 0.5)[0] == 0.0

    def test_empty(self):
        with pytest.raises(EmptyEnsembleError):
            ensemble_stats([], [1, 1], 0.0)

    def test_horizon(self, ts2, k2):
        paths = run_ensemble(ts2, k2, [2, 2], 2.0, 1.0, seed=1, runs=2)
        with pytest.raises(ValidationError):
            ensemble_stats(paths, [1, 1], 2.0)

    def test_variance_decreases_with_n(self, ts2, k2):
        runs = 400
        prev = None
        for n in (4, 16, 64, 256):
            paths = run_ensemble(ts2, k2, initial_counts([0.5, 0.5], n), n, 1.0, seed=7, runs=runs, record=True)
            _, var, _ = ensemble_stats(paths, [1, 1], 1.0)
            se = var * math.sqrt(2.0 / (runs - 1))
            if prev is not None:
                assert var <= prev[0] + 2 * math.hypot(se, prev[1])
            prev = (var, se)


class TestAgainstFKE:
    def test_mean_matches_exact_law(self):
        space, _, exact, _, x = gillespie_vs_fke()
        fke_mean = float(exact @ space.states[:, 0]) / 2.0
        se = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean() - fke_mean) <= 3 * se

    def test_law_total_variation(self):
        _, emp, exact, missing, _ = gillespie_vs_fke()
        assert missing == 0
        # distance between probability laws: sup_A |P(A) - Q(A)| = half the L1 norm
        assert 0.5 * tv_norm(emp - exact) <= 0.01
