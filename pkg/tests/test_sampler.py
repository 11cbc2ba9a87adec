from __future__ import annotations

import collections

import numpy as np
import pytest

from stcca.covariance import GepPair, assemble_gep
from stcca.errors import DomainError
from stcca.model import (
    ChainState,
    PriorConfig,
    QuadraticCache,
    TemperingLadder,
    grad_selected,
    log_tempered,
)
from stcca.sampler import (
    draw_subset,
    gibbs_success_prob,
    gibbs_update_delta,
    initial_state,
    mala_update_theta,
    run_chain,
    temperature_update,
)


def random_gep(rng, p_x, p_y, n=50) -> GepPair:
    p = p_x + p_y
    G = rng.standard_normal((2 * p, p))
    S = G.T @ G / (2 * p)
    return assemble_gep(S[:p_x, :p_x], S[p_x:, p_x:], S[:p_x, p_x:], n=n)


def planted_gep(n=200) -> GepPair:
    """p=4 toy with a dominant planted pair on coordinates (0, 2)."""
    Sx = np.eye(2)
    Sy = np.eye(2)
    Sxy = np.zeros((2, 2))
    Sxy[0, 0] = 0.9
    return assemble_gep(Sx, Sy, Sxy, n=n)


class TestDrawSubset:
    def test_no_duplicates_and_range(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            s = draw_subset(20, 7, rng)
            assert len(set(s.tolist())) == 7
            assert s.min() >= 0 and s.max() < 20

    def test_size_zero(self):
        rng = np.random.default_rng(1)
        assert draw_subset(5, 0, rng).size == 0

    def test_oversize_clipped_to_permutation(self):
        rng = np.random.default_rng(2)
        s = draw_subset(6, 100, rng)
        assert sorted(s.tolist()) == list(range(6))

    def test_marginal_uniformity(self):
        # each coordinate should appear with frequency J/p
        rng = np.random.default_rng(3)
        p, J, reps = 12, 4, 6000
        counts = np.zeros(p)
        for _ in range(reps):
            counts[draw_subset(p, J, rng)] += 1
        freq = counts / reps
        expect = J / p
        se = np.sqrt(expect * (1 - expect) / reps)
        assert np.all(np.abs(freq - expect) < 4 * se)


class TestGibbsSuccessProb:
    def test_single_active_coordinate_is_forced(self):
        rng = np.random.default_rng(5)
        g = random_gep(rng, 3, 3, n=40)
        state = ChainState(
            delta=np.array([0, 0, 1, 0, 0, 0]), theta=rng.standard_normal(6)
        )
        prior = PriorConfig.defaults(6)
        lad = TemperingLadder.for_dimension(6)
        assert gibbs_success_prob(2, state, g, prior, lad) == 1.0

    def test_zero_quotient_difference_reduces_to_prior_odds(self):
        # A = 0 kills the quotient term; rho0 = rho1 kills the Gaussian term
        Sx = np.eye(2)
        g = assemble_gep(Sx, Sx, np.zeros((2, 2)), n=30)
        prior = PriorConfig(rho0=3.0, rho1=3.0, q=0.2)
        lad = TemperingLadder(
            temperatures=np.array([1.0, 2.0]), step_sizes=np.array([0.1, 0.1])
        )
        rng = np.random.default_rng(6)
        state = ChainState(
            delta=np.array([1, 1, 0, 1]), theta=rng.standard_normal(4), k=2
        )
        want = 1.0 / (1.0 + np.exp(-prior.a / 2.0))
        assert gibbs_success_prob(0, state, g, prior, lad) == pytest.approx(want, rel=1e-12)

    def test_matches_tempered_density_ratio(self):
        # two-point oracle: q_j = sigmoid(logpi(delta_on) - logpi(delta_off))
        rng = np.random.default_rng(7)
        g = random_gep(rng, 3, 3, n=35)
        prior = PriorConfig.defaults(6)
        lad = TemperingLadder.for_dimension(6)
        for trial in range(20):
            delta = rng.integers(0, 2, size=6)
            delta[rng.integers(6)] = 1
            theta = rng.standard_normal(6)
            k = int(rng.integers(1, 6))
            j = int(rng.integers(6))
            state = ChainState(delta=delta.copy(), theta=theta, k=k)
            d_on = delta.copy()
            d_on[j] = 1
            d_off = delta.copy()
            d_off[j] = 0
            if d_off.sum() == 0:
                continue
            lt_on = log_tempered(ChainState(delta=d_on, theta=theta, k=k), g, prior, lad)
            lt_off = log_tempered(ChainState(delta=d_off, theta=theta, k=k), g, prior, lad)
            want = 1.0 / (1.0 + np.exp(lt_off - lt_on))
            got = gibbs_success_prob(j, state, g, prior, lad)
            assert got == pytest.approx(want, abs=1e-10)


class TestGibbsUpdateDelta:
    def test_empty_subset_is_identity(self):
        rng = np.random.default_rng(8)
        g = random_gep(rng, 3, 3, n=30)
        state = ChainState(delta=np.array([1, 0, 1, 0, 1, 0]), theta=rng.standard_normal(6))
        before = state.delta.copy()
        gibbs_update_delta(
            state, g, PriorConfig.defaults(6), TemperingLadder.for_dimension(6),
            np.array([], dtype=int), rng,
        )
        assert np.array_equal(state.delta, before)

    def test_coordinates_outside_subset_untouched(self):
        rng = np.random.default_rng(9)
        g = random_gep(rng, 4, 4, n=30)
        prior = PriorConfig.defaults(8)
        lad = TemperingLadder.for_dimension(8)
        state = ChainState(delta=np.ones(8), theta=rng.standard_normal(8))
        before = state.delta.copy()
        subset = np.array([1, 5])
        gibbs_update_delta(state, g, prior, lad, subset, rng)
        outside = [j for j in range(8) if j not in (1, 5)]
        assert np.array_equal(state.delta[outside], before[outside])

    def test_forced_coordinate_survives(self):
        rng = np.random.default_rng(10)
        g = random_gep(rng, 2, 2, n=30)
        prior = PriorConfig.defaults(4)
        lad = TemperingLadder.for_dimension(4)
        for seed in range(30):
            state = ChainState(
                delta=np.array([0, 1, 0, 0]), theta=np.random.default_rng(seed).standard_normal(4)
            )
            gibbs_update_delta(
                state, g, prior, lad, np.array([1]), np.random.default_rng(seed + 100)
            )
            assert state.delta[1] == 1

    def test_injected_uniform_thresholds(self):
        rng = np.random.default_rng(11)
        g = random_gep(rng, 3, 3, n=30)
        prior = PriorConfig.defaults(6)
        lad = TemperingLadder.for_dimension(6)
        state = ChainState(delta=np.array([1, 1, 0, 0, 1, 0]), theta=rng.standard_normal(6))
        # u = 0 always lands at or below q_j, so the coordinate switches on
        gibbs_update_delta(
            state, g, prior, lad, np.array([3]), rng, uniforms=np.array([0.0])
        )
        assert state.delta[3] == 1
        # u = 1 exceeds every q_j < 1, switching a non-forced coordinate off
        gibbs_update_delta(
            state, g, prior, lad, np.array([3]), rng, uniforms=np.array([1.0])
        )
        assert state.delta[3] == 0

    def test_single_coordinate_frequency(self):
        # Monte Carlo frequency oracle at reduced scale
        rng = np.random.default_rng(12)
        g = random_gep(rng, 3, 3, n=35)
        prior = PriorConfig.defaults(6)
        lad = TemperingLadder.for_dimension(6)
        base = ChainState(delta=np.array([1, 0, 1, 0, 0, 1]), theta=rng.standard_normal(6))
        j = 3
        q = gibbs_success_prob(j, base, g, prior, lad)
        assert 0.0 < q < 1.0
        reps = 20_000
        hits = 0
        for _ in range(reps):
            state = base.copy()
            gibbs_update_delta(state, g, prior, lad, np.array([j]), rng)
            hits += int(state.delta[j])
        freq = hits / reps
        se = np.sqrt(q * (1 - q) / reps)
        assert abs(freq - q) <= 3 * se


class TestMalaUpdateTheta:
    def test_vanishing_step_accepts(self):
        rng = np.random.default_rng(13)
        g = random_gep(rng, 3, 3, n=40)
        prior = PriorConfig.defaults(6)
        lad = TemperingLadder(
            temperatures=np.array([1.0, 1.5]),
            step_sizes=np.array([1e-12, 1e-12]),
        )
        state = ChainState(delta=np.array([1, 1, 0, 1, 0, 0]), theta=rng.standard_normal(6))
        sel_size = 3
        accepted, alpha, _ = mala_update_theta(
            state, g, prior, lad, rng,
            xi=np.zeros(sel_size), accept_u=0.999999,
        )
        assert accepted
        assert alpha > 1 - 1e-6

    def test_unselected_redraw_variance(self):
        rng = np.random.default_rng(14)
        g = random_gep(rng, 2, 2, n=40)
        prior = PriorConfig.defaults(4)
        lad = TemperingLadder(
            temperatures=np.array([1.0, 2.0]), step_sizes=np.array([0.05, 0.05])
        )
        state = ChainState(
            delta=np.array([1, 0, 0, 1]), theta=rng.standard_normal(4), k=2
        )
        draws = []
        for _ in range(30_000):
            mala_update_theta(state, g, prior, lad, rng)
            draws.append(state.theta[1])
        var = np.var(draws)
        want = lad.temperatures[1] / prior.rho0  # 0.2
        assert abs(var - want) / want < 0.02
        assert abs(np.mean(draws)) < 5 * np.sqrt(want / 30_000)

    def test_one_dim_block_samples_its_gaussian_target(self):
        # scale invariance makes the quotient constant on 1-dim blocks, so
        # the selected coordinate targets exactly Normal(0, t_k / rho1)
        rng = np.random.default_rng(15)
        g = random_gep(rng, 2, 2, n=40)
        prior = PriorConfig.defaults(4)
        lad = TemperingLadder(
            temperatures=np.array([1.0, 1.25]), step_sizes=np.array([1.5, 1.5])
        )
        state = ChainState(delta=np.array([0, 0, 1, 0]), theta=rng.standard_normal(4), k=2)
        xs = np.empty(25_000)
        for i in range(xs.size):
            mala_update_theta(state, g, prior, lad, rng)
            xs[i] = state.theta[2]
        want = lad.temperatures[1] / prior.rho1  # 2.5
        assert abs(np.var(xs) - want) / want < 0.1

    def test_domain_violating_proposal_rejected(self):
        # indefinite B (an unrepaired rank-based estimate): steer the
        # proposal into the negative-curvature direction
        g = assemble_gep(
            np.array([[1.0]]), np.array([[-0.5]]), np.array([[0.3]]), n=20
        )
        prior = PriorConfig.defaults(2)
        lad = TemperingLadder(temperatures=np.array([1.0]), step_sizes=np.array([0.01]))
        delta = np.array([1, 1])
        theta0 = np.array([1.0, 0.5])
        state = ChainState(delta=delta.copy(), theta=theta0.copy())
        eta = 0.01
        gvec = grad_selected(theta0, 1, delta, g, prior, lad)
        target = np.array([0.0, 1.0])  # theta' B theta = 0 there
        xi = (target - theta0 - eta * gvec) / np.sqrt(2 * eta)
        accepted, alpha, _ = mala_update_theta(
            state, g, prior, lad, np.random.default_rng(0),
            unselected_z=np.empty(0), xi=xi, accept_u=0.0,
        )
        assert not accepted
        assert alpha == 0.0
        assert np.array_equal(state.theta, theta0)

    def test_missing_n_rejected(self):
        g = assemble_gep(np.eye(1), np.eye(1), np.zeros((1, 1)))
        state = ChainState(delta=np.array([1, 0]), theta=np.zeros(2))
        with pytest.raises(DomainError):
            mala_update_theta(
                state, g, PriorConfig.defaults(2), TemperingLadder.for_dimension(2),
                np.random.default_rng(0),
            )


class TestTemperatureUpdate:
    def _setup(self, K, log_weights=None):
        rng = np.random.default_rng(16)
        g = random_gep(rng, 2, 2, n=30)
        prior = PriorConfig.defaults(4)
        temps = 1.0 + 0.5 * np.arange(K)
        lad = TemperingLadder(
            temperatures=temps,
            log_weights=log_weights,
            step_sizes=np.full(K, 0.1),
        )
        state = ChainState(delta=np.array([1, 0, 1, 0]), theta=rng.standard_normal(4))
        return state, g, prior, lad

    def test_single_level_is_identity_and_draws_nothing(self):
        state, g, prior, lad = self._setup(1)
        rng = np.random.default_rng(99)
        probe = np.random.default_rng(99)
        temperature_update(state, g, prior, lad, rng)
        assert state.k == 1
        assert rng.random() == probe.random()  # stream untouched

    def test_boundary_corrections_at_three_levels(self):
        # flat target (log_post = 0, equal weights) isolates the Hastings
        # correction: boundary -> interior accepts with probability 1/2,
        # interior -> boundary always accepts
        state, g, prior, lad = self._setup(3)
        state.k = 1
        temperature_update(state, g, prior, lad, None, log_post=0.0, w=0.9, u=0.499)
        assert state.k == 2
        state.k = 1
        temperature_update(state, g, prior, lad, None, log_post=0.0, w=0.1, u=0.501)
        assert state.k == 1
        state.k = 2
        temperature_update(state, g, prior, lad, None, log_post=0.0, w=0.3, u=0.999)
        assert state.k == 1  # interior -> boundary, ratio 2, accepts
        state.k = 2
        temperature_update(state, g, prior, lad, None, log_post=0.0, w=0.7, u=0.999)
        assert state.k == 3

    def test_direction_uniform_threshold(self):
        state, g, prior, lad = self._setup(5)
        state.k = 3
        temperature_update(state, g, prior, lad, None, log_post=0.0, w=0.5, u=0.49)
        assert state.k == 2  # w = 0.5 goes left
        state.k = 3
        temperature_update(state, g, prior, lad, None, log_post=0.0, w=0.51, u=0.49)
        assert state.k == 4

    def test_occupancy_matches_weights(self):
        # fixed state, k moves alone: stationary law known in closed form
        state, g, prior, lad = self._setup(3, log_weights=np.array([0.0, 0.7, -0.4]))
        from stcca.model import log_quasi_posterior

        L = log_quasi_posterior(state, g, prior)
        log_w = -lad.log_weights + L / lad.temperatures
        pi = np.exp(log_w - log_w.max())
        pi /= pi.sum()
        rng = np.random.default_rng(17)
        steps = 200_000
        counts = np.zeros(3)
        for _ in range(steps):
            temperature_update(state, g, prior, lad, rng, log_post=L)
            counts[state.k - 1] += 1
        occ = counts / steps
        assert np.max(np.abs(occ - pi)) < 0.01


class TestInitialState:
    def test_shapes_and_cold_start(self):
        rng = np.random.default_rng(18)
        s = initial_state(12, rng)
        assert s.k == 1
        assert s.delta.shape == (12,)
        assert s.theta.shape == (12,)
        assert s.n_active >= 1

    def test_support_is_fair_coin(self):
        rng = np.random.default_rng(19)
        means = np.mean([initial_state(10, rng).delta for _ in range(4000)], axis=0)
        assert np.all(np.abs(means - 0.5) < 0.035)


class TestRunChain:
    def _gep(self, rng):
        return random_gep(rng, 3, 3, n=40)

    def test_zero_iterations_keeps_initial_state_only(self):
        g = self._gep(np.random.default_rng(20))
        tr = run_chain(g, PriorConfig.defaults(6), TemperingLadder.for_dimension(6),
                       n_iters=0, seed=1)
        assert tr.delta.shape == (1, 6)
        assert tr.k.tolist() == [1]

    def test_same_seed_bit_identical(self):
        g = self._gep(np.random.default_rng(21))
        prior = PriorConfig.defaults(6)
        lad = TemperingLadder.for_dimension(6)
        a = run_chain(g, prior, lad, n_iters=200, seed=7)
        b = run_chain(g, prior, lad, n_iters=200, seed=7)
        assert np.array_equal(a.delta, b.delta)
        assert np.array_equal(a.theta, b.theta)
        assert np.array_equal(a.k, b.k)
        assert np.array_equal(a.rayleigh, b.rayleigh)

    def test_support_never_empty_and_k_in_range(self):
        g = self._gep(np.random.default_rng(22))
        tr = run_chain(g, PriorConfig.defaults(6), TemperingLadder.for_dimension(6),
                       n_iters=500, seed=3)
        assert tr.support_sizes().min() >= 1
        assert tr.k.min() >= 1 and tr.k.max() <= 5
        assert np.all(np.isfinite(tr.rayleigh))

    def test_planted_pair_identified(self):
        # dominant planted pair at p=4; the post burn-in mode of the support
        # should be exactly {0, 2} for nearly every seed
        g = planted_gep(n=200)
        prior = PriorConfig.defaults(4)
        hits = 0
        n_seeds = 20
        for seed in range(n_seeds):
            lad = TemperingLadder.for_dimension(4)
            tr = run_chain(g, prior, lad, n_iters=2000, seed=seed)
            burn = 3 * tr.n_iters // 4
            rows = [tuple(row) for row in tr.delta[burn:]]
            mode = collections.Counter(rows).most_common(1)[0][0]
            if mode == (1, 0, 1, 0):
                hits += 1
        assert hits >= int(0.95 * n_seeds)

    def test_subset_size_clipped(self):
        g = self._gep(np.random.default_rng(23))
        tr = run_chain(g, PriorConfig.defaults(6), TemperingLadder.for_dimension(6),
                       n_iters=50, subset_size=1000, seed=5)
        assert tr.n_iters == 50
