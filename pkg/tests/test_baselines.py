import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from constel.baselines import (
    SaConfig,
    evaluate_schedule,
    metropolis_accept,
    neighbor,
    random_schedule,
    simulated_annealing,
)
from constel.errors import DomainError
from constel.resources_env import SatAction, Schedule, is_compliant, schedule_masks
from constel.scenario import RateConfig, ResourceScenario, synthesize_resource_scenario
from oracles import exhaustive_schedule_optimum


def test_random_schedule_contracts():
    empty = synthesize_resource_scenario(3, 10, (0.0, 0.0), seed=0)
    assert not random_schedule(empty, np.random.default_rng(0)).actions.any()
    sc = synthesize_resource_scenario(5, 30, (0.6, 0.6), seed=1)
    a = random_schedule(sc, np.random.default_rng(4)).actions
    assert np.array_equal(a, random_schedule(sc, np.random.default_rng(4)).actions)
    assert is_compliant(sc, a)


def test_random_schedule_uniform_over_mask():
    sc = ResourceScenario(1, 1, [60.0], [[1]], [[1]], [[0]], RateConfig(), 0.5, 0.5, 1, 1)
    rng = np.random.default_rng(0)
    counts = np.bincount([random_schedule(sc, rng).actions[0, 0] for _ in range(4000)], minlength=4)
    assert np.all(np.abs(counts / 4000 - 0.25) < 0.03)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_schedules_always_compliant(seed):
    sc = synthesize_resource_scenario(3, 8, (0.4, 0.4), seed=seed)
    assert is_compliant(sc, random_schedule(sc, np.random.default_rng(seed)).actions)


def test_evaluate_schedule():
    sc = synthesize_resource_scenario(2, 6, (0.0, 0.0), seed=0, init_bat=0.9, init_mem=0.1)
    assert evaluate_schedule(sc, Schedule(np.zeros((2, 6), dtype=np.int64))) == 0.0
    contention = ResourceScenario(3, 1, [60.0], [[0], [0], [0]], [[1], [0], [1]], [[1], [1], [1]],
                                  RateConfig(), 0.5, 0.5, 1, 1)
    joint = np.array([[SatAction.D], [SatAction.NOP], [SatAction.D]])
    assert evaluate_schedule(contention, joint) == 70.0
    assert evaluate_schedule(contention, joint) == evaluate_schedule(contention, joint)
    with pytest.raises(DomainError):
        evaluate_schedule(contention, np.array([[1], [0], [0]]))


def test_neighbor_contracts():
    sc = synthesize_resource_scenario(3, 10, (0.5, 0.5), seed=2)
    rng = np.random.default_rng(0)
    s = random_schedule(sc, rng)
    for _ in range(50):
        nb = neighbor(s, sc, rng)
        assert (nb.actions != s.actions).sum() <= 1
        assert is_compliant(sc, nb.actions)
        s = nb
    single = synthesize_resource_scenario(2, 5, (0.0, 0.0), seed=0)
    s0 = Schedule(np.zeros((2, 5), dtype=np.int64))
    assert np.array_equal(neighbor(s0, single, rng).actions, s0.actions)


def test_metropolis():
    assert metropolis_accept(-10.0, 10.0) == pytest.approx(math.exp(-1))
    assert metropolis_accept(-10.0, 10.0) == pytest.approx(0.3679, abs=1e-4)
    assert metropolis_accept(5.0, 1.0) == 1.0
    assert metropolis_accept(0.0, 1e-9) == 1.0


def test_sa_trace_and_running_max():
    sc = synthesize_resource_scenario(4, 20, seed=3)
    res = simulated_annealing(sc, SaConfig(iterations=80, rng_seed=1, proposals_per_iteration=4))
    best = [r[2] for r in res.trace]
    assert all(b >= a for a, b in zip(best, best[1:]))
    assert res.best.reward >= res.initial_reward
    assert evaluate_schedule(sc, res.best) == res.best.reward
    temps = [r[3] for r in res.trace]
    assert temps[0] == 50.0 and temps[1] == pytest.approx(47.5)
    again = simulated_annealing(sc, SaConfig(iterations=80, rng_seed=1, proposals_per_iteration=4))
    assert np.array_equal(again.best.actions, res.best.actions) and again.trace == res.trace


def test_sa_zero_iterations_returns_initial():
    sc = synthesize_resource_scenario(3, 10, seed=2)
    res = simulated_annealing(sc, SaConfig(iterations=0, rng_seed=5))
    init = random_schedule(sc, np.random.default_rng(5))
    assert np.array_equal(res.best.actions, init.actions)
    assert res.best.reward == res.initial_reward and res.trace == []


@pytest.mark.parametrize("seed", range(3))
def test_sa_near_optimal_at_micro_scale(seed):
    sc = synthesize_resource_scenario(1, 7, (0.5, 0.5), seed=seed)
    opt, _ = exhaustive_schedule_optimum(sc)
    res = simulated_annealing(sc, SaConfig(iterations=2000, rng_seed=seed))
    assert res.best.reward >= opt - 0.01 * abs(opt)


def test_sa_beats_random_on_average():
    sc = synthesize_resource_scenario(4, 20, seed=6)
    sa = [simulated_annealing(sc, SaConfig(iterations=120, rng_seed=s, proposals_per_iteration=4)).best.reward
          for s in range(8)]
    rnd = [evaluate_schedule(sc, random_schedule(sc, np.random.default_rng(100 + s))) for s in range(8)]
    assert np.mean(sa) > np.mean(rnd)


def test_sa_config_validation():
    for bad in (dict(iterations=-1), dict(initial_temperature=0), dict(cooling_factor=1.0),
                dict(proposals_per_iteration=0)):
        with pytest.raises(ValueError):
            SaConfig(**bad).validate()


def test_masks_shape():
    sc = synthesize_resource_scenario(2, 3, seed=0)
    assert schedule_masks(sc).shape == (2, 3, 4)
