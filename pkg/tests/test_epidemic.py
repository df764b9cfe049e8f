"""Contact detection vs brute force, infection arithmetic, run invariants."""

import numpy as np
import pytest

from masksim.epidemic import (Health, World, WorldConfig, advance,
                              contact_pairs, health_transitions,
                              infection_probability, infection_trials,
                              keyed_uniform_agents, keyed_uniform_pairs,
                              run, sample_mask_bits, step_movement)


def brute_force_pairs(positions, epsilon):
    """O(n^2) oracle for the grid-based contact finder."""
    n = len(positions)
    eps2 = epsilon * epsilon
    pairs = set()
    for i in range(n):
        for j in range(i + 1, n):
            dx = positions[i, 0] - positions[j, 0]
            dy = positions[i, 1] - positions[j, 1]
            if dx * dx + dy * dy <= eps2:
                pairs.add((i, j))
    return pairs


# =============================================================================
# Contact detection
# =============================================================================

def test_pair_at_exactly_epsilon_included():
    pos = np.array([[0.0, 0.0], [2.0, 0.0]])
    ii, jj = contact_pairs(pos, epsilon=2.0)
    assert list(zip(ii, jj)) == [(0, 1)]


def test_grid_spaced_2eps_has_no_pairs():
    eps = 0.7
    xs, ys = np.meshgrid(np.arange(5) * 2 * eps, np.arange(4) * 2 * eps)
    pos = np.column_stack([xs.ravel(), ys.ravel()])
    ii, jj = contact_pairs(pos, epsilon=eps)
    assert len(ii) == 0


@pytest.mark.parametrize("seed,n,eps", [(0, 200, 2.0), (1, 200, 0.5),
                                        (2, 300, 1.3), (3, 50, 5.0)])
def test_grid_equals_bruteforce(seed, n, eps):
    rng = np.random.default_rng(seed)
    pos = rng.uniform([0, 0], [20, 10], size=(n, 2))
    ii, jj = contact_pairs(pos, epsilon=eps)
    got = set(zip(ii.tolist(), jj.tolist()))
    assert len(got) == len(ii)          # no duplicates
    assert got == brute_force_pairs(pos, eps)


def test_contact_pairs_trivial_sizes():
    assert contact_pairs(np.zeros((0, 2)), 1.0)[0].shape == (0,)
    assert contact_pairs(np.zeros((1, 2)), 1.0)[0].shape == (0,)
    ii, jj = contact_pairs(np.zeros((3, 2)), 1.0)   # all co-located
    assert set(zip(ii.tolist(), jj.tolist())) == {(0, 1), (0, 2), (1, 2)}


# =============================================================================
# Infection arithmetic
# =============================================================================

def test_perfect_mask_blocks_everything():
    assert infection_probability(0.3, 1.0, 1, 0.5, 0) == 0.0
    assert infection_probability(0.3, 0.5, 0, 1.0, 1) == 0.0


def test_frozen_probability_both_masked():
    assert infection_probability(0.3, 0.9, 1, 0.9, 1) == pytest.approx(0.003)


def test_masks_off_gives_p0():
    assert infection_probability(0.3, 0.9, 0, 0.9, 0) == 0.3


def test_infection_trials_respect_keyed_uniforms():
    cfg = WorldConfig(n_agents=2, p0=1.0, initial_infected=1, seed=5,
                      room=(5.0, 5.0))
    w = World(cfg)
    w.positions[:] = [[1.0, 1.0], [1.5, 1.0]]
    w.mask_bits[:] = 0
    ii, jj = contact_pairs(w.positions, cfg.epsilon)
    new = infection_trials(w, ii, jj, step=1)
    assert new == 1                      # p0=1: certain infection
    assert np.all(w.health == Health.INFECTED)


def test_immune_agents_never_infect_or_catch():
    cfg = WorldConfig(n_agents=3, p0=1.0, initial_infected=1, seed=2,
                      room=(5.0, 5.0))
    w = World(cfg)
    w.positions[:] = [[1, 1], [1.2, 1], [1.4, 1]]
    w.health[:] = [Health.IMMUNE_SLIGHT, Health.INFECTED, Health.IMMUNE_SERIOUS]
    ii, jj = contact_pairs(w.positions, cfg.epsilon)
    assert infection_trials(w, ii, jj, step=1) == 0


# =============================================================================
# Health transitions
# =============================================================================

def test_transition_fires_exactly_at_recovery_steps():
    cfg = WorldConfig(n_agents=1, recovery_steps=20, initial_infected=1, seed=0)
    w = World(cfg)
    w.infected_since[0] = 5
    for step in range(6, 25):
        health_transitions(w, step)
        assert w.health[0] == Health.INFECTED
    health_transitions(w, 25)
    assert w.health[0] in (Health.IMMUNE_SLIGHT, Health.IMMUNE_SERIOUS)


def test_sequelae_logistic_tails():
    for age, expect in ((0.0, Health.IMMUNE_SLIGHT),
                        (100.0, Health.IMMUNE_SERIOUS)):
        cfg = WorldConfig(n_agents=2000, recovery_steps=1, initial_infected=1,
                          seed=3)
        w = World(cfg)
        w.health[:] = Health.INFECTED
        w.infected_since[:] = 0
        w.ages[:] = age
        health_transitions(w, 1)
        share = np.mean(w.health == expect)
        assert share > 0.97


def test_sequelae_cohort_matches_binomial_oracle():
    # choose the age whose serious-sequelae probability is exactly 0.3
    cfg = WorldConfig(n_agents=10_000, recovery_steps=1, initial_infected=1,
                      seed=8)
    age_at_30pct = cfg.sequelae_age_mid + \
        cfg.sequelae_age_scale * np.log(0.3 / 0.7)
    w = World(cfg)
    w.health[:] = Health.INFECTED
    w.infected_since[:] = 0
    w.ages[:] = age_at_30pct
    health_transitions(w, 1)
    serious = float(np.mean(w.health == Health.IMMUNE_SERIOUS))
    assert serious == pytest.approx(0.30, abs=0.015)


# =============================================================================
# Movement
# =============================================================================

def test_zero_velocity_zero_noise_stays_put():
    cfg = WorldConfig(n_agents=5, accel=0.0, seed=1)
    w = World(cfg)
    w.velocities[:] = 0.0
    before = w.positions.copy()
    step_movement(w)
    assert np.array_equal(w.positions, before)


def test_reflection_preserves_speed_and_stays_inside():
    cfg = WorldConfig(n_agents=1, accel=0.0, max_speed=2.0, seed=1)
    w = World(cfg)
    w.positions[:] = [[0.3, 9.8]]
    w.velocities[:] = [[-1.0, 1.5]]
    step_movement(w)
    assert 0.0 <= w.positions[0, 0] <= 20.0
    assert 0.0 <= w.positions[0, 1] <= 10.0
    assert w.positions[0] == pytest.approx([0.7, 8.7])
    assert np.linalg.norm(w.velocities[0]) == pytest.approx(np.hypot(1.0, 1.5))


def test_movement_deterministic_per_seed():
    def trajectory():
        w = World(WorldConfig(n_agents=20, seed=12))
        for _ in range(50):
            step_movement(w)
        return w.positions.copy()

    assert np.array_equal(trajectory(), trajectory())


# =============================================================================
# Mask sampling
# =============================================================================

def test_fixed_fraction_extremes():
    w = World(WorldConfig(n_agents=100, mask_fraction=0.0, seed=0))
    assert sample_mask_bits(w, 1).sum() == 0
    w2 = World(WorldConfig(n_agents=100, mask_fraction=1.0, seed=0))
    assert sample_mask_bits(w2, 1).sum() == 100


def test_controller_mode_matches_binomial_concentration():
    cfg = WorldConfig(n_agents=1000, mask_mode="controller", seed=4)
    w = World(cfg)
    bits = sample_mask_bits(w, 7, probabilities=np.full(1000, 0.9))
    assert abs(bits.mean() - 0.9) < 0.03


def test_controller_mode_requires_probabilities():
    w = World(WorldConfig(n_agents=10, mask_mode="controller", seed=0))
    with pytest.raises(ValueError):
        sample_mask_bits(w, 1)


def test_keyed_streams_are_order_independent():
    ii = np.array([3, 10, 4])
    jj = np.array([7, 12, 9])
    u1 = keyed_uniform_pairs(1, 5, ii, jj)
    u2 = keyed_uniform_pairs(1, 5, ii[::-1].copy(), jj[::-1].copy())[::-1]
    assert np.array_equal(u1, u2)
    a = keyed_uniform_agents(1, 3, 5, 10)
    b = keyed_uniform_agents(1, 3, 5, 10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, keyed_uniform_agents(1, 3, 6, 10))


# =============================================================================
# Whole runs
# =============================================================================

def test_population_conserved_every_step():
    series = run(WorldConfig(n_agents=80, seed=6, initial_infected=2), steps=60)
    totals = (series.susceptible + series.infected
              + series.immune_slight + series.immune_serious)
    assert np.all(totals == 80)


def test_cumulative_infections_monotone_without_masks():
    series = run(WorldConfig(n_agents=120, seed=7, mask_fraction=0.0,
                             initial_infected=1), steps=80)
    ever_infected = 120 - series.susceptible
    assert np.all(np.diff(ever_infected) >= 0)


def test_zero_initial_infected_stays_flat():
    series = run(WorldConfig(n_agents=50, seed=8, initial_infected=0), steps=30)
    assert np.all(series.susceptible == 50)
    assert np.all(series.infected == 0)


def test_run_deterministic_and_csv_bytes_identical(tmp_path):
    cfg = WorldConfig(n_agents=60, seed=9, mask_fraction=0.25,
                      initial_infected=2)
    s1 = run(cfg, steps=40)
    s2 = run(cfg, steps=40)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    s1.to_csv(p1)
    s2.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(s1.infected, s2.infected)


def test_raising_mask_effectiveness_weakly_reduces_new_infections():
    # coupling with common random numbers: one step from a common state
    base = WorldConfig(n_agents=150, seed=10, mask_fraction=0.5,
                       mask_effectiveness=0.3, initial_infected=10, p0=0.5)
    seeds = range(25)
    for s in seeds:
        w_lo = World(WorldConfig(**{**base.__dict__, "seed": s}))
        w_hi = World(WorldConfig(**{**base.__dict__, "seed": s,
                                    "mask_effectiveness": 0.9}))
        w_hi.positions[:] = w_lo.positions
        w_hi.health[:] = w_lo.health
        for w in (w_lo, w_hi):
            sample_mask_bits(w, 1)
        # same wearer set under the keyed stream, same contacts
        assert np.array_equal(w_lo.mask_bits, w_hi.mask_bits)
        ii, jj = contact_pairs(w_lo.positions, base.epsilon)
        new_lo = infection_trials(w_lo, ii, jj, 1)
        new_hi = infection_trials(w_hi, ii, jj, 1)
        assert new_hi <= new_lo


def test_peak_infected_fraction_helper():
    series = run(WorldConfig(n_agents=100, seed=11, initial_infected=1),
                 steps=100)
    assert series.peak_infected_fraction() == \
        pytest.approx(series.infected.max() / 100)
