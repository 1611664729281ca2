"""Simulated annealing and randomized schedule search."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from constel.errors import DomainError
from constel.resources_env import Schedule, is_compliant, replay, schedule_masks
from constel.scenario import ResourceScenario


@dataclass
class SaConfig:
    iterations: int = 120
    initial_temperature: float = 50.0
    cooling_factor: float = 0.95
    rng_seed: int = 0
    # proposals evaluated per iteration; temperature cools once per iteration
    proposals_per_iteration: int = 1

    def validate(self) -> "SaConfig":
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.initial_temperature <= 0:
            raise ValueError("initial_temperature must be > 0")
        if not 0.0 < self.cooling_factor < 1.0:
            raise ValueError("cooling_factor must lie in (0, 1)")
        if self.proposals_per_iteration < 1:
            raise ValueError("proposals_per_iteration must be >= 1")
        return self


@dataclass
class SaResult:
    best: Schedule
    initial_reward: float
    # rows of (iteration, current_reward, best_reward, temperature)
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)


def random_schedule(scenario: ResourceScenario, rng) -> Schedule:
    """Every cell drawn uniformly from its feasible actions."""
    masks = schedule_masks(scenario)
    counts = masks.sum(axis=-1)
    pick = np.minimum((rng.random(counts.shape) * counts).astype(np.int64), counts - 1)
    # index of the pick-th True entry in each mask
    actions = np.argmax(np.cumsum(masks, axis=-1) > pick[..., None], axis=-1)
    return Schedule(actions.astype(np.int64))


def evaluate_schedule(scenario: ResourceScenario, schedule) -> float:
    actions = schedule.actions if isinstance(schedule, Schedule) else np.asarray(schedule)
    if not is_compliant(scenario, actions):
        raise DomainError("schedule contains actions outside their feasible masks")
    return replay(scenario, actions)


def neighbor(schedule: Schedule, scenario: ResourceScenario, rng, max_retries: int = 32) -> Schedule:
    """Change one uniformly chosen cell to a different feasible action."""
    masks = schedule_masks(scenario)
    n, T = schedule.actions.shape
    for _ in range(max_retries):
        i, t = int(rng.integers(n)), int(rng.integers(T))
        options = np.flatnonzero(masks[i, t])
        options = options[options != schedule.actions[i, t]]
        if options.size:
            out = schedule.actions.copy()
            out[i, t] = options[int(rng.integers(options.size))]
            return Schedule(out)
    return Schedule(schedule.actions.copy())


def metropolis_accept(delta: float, temperature: float) -> float:
    """Probability of accepting a move that changes reward by ``delta``."""
    if delta >= 0:
        return 1.0
    return math.exp(delta / temperature)


def simulated_annealing(scenario: ResourceScenario, config: SaConfig, rng=None) -> SaResult:
    """Metropolis search with geometric cooling, starting from a random schedule.

    Only cells with more than one feasible action are proposed, which is the
    same distribution as :func:`neighbor` conditioned on a legal move.
    """
    config.validate()
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    cur = random_schedule(scenario, rng)
    cur_r = replay(scenario, cur.actions)
    best, best_r = cur.actions.copy(), cur_r
    init_r = cur_r
    masks = schedule_masks(scenario)
    movable = np.argwhere(masks.sum(axis=-1) > 1)
    temp = config.initial_temperature
    trace = []
    actions = cur.actions.copy()
    for it in range(config.iterations):
        for _ in range(config.proposals_per_iteration):
            if not len(movable):
                break
            i, t = movable[int(rng.integers(len(movable)))]
            old = actions[i, t]
            options = np.flatnonzero(masks[i, t])
            options = options[options != old]
            actions[i, t] = options[int(rng.integers(options.size))]
            new_r = replay(scenario, actions)
            if rng.random() < metropolis_accept(new_r - cur_r, temp):
                cur_r = new_r
                if cur_r > best_r:
                    best_r = cur_r
                    best = actions.copy()
            else:
                actions[i, t] = old
        trace.append((it, cur_r, best_r, temp))
        temp *= config.cooling_factor
    return SaResult(Schedule(best, best_r), init_r, trace)
