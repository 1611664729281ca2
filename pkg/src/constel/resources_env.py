"""Multi-satellite battery/memory scheduling environment.

Each slot every satellite picks one of NOP, Q (acquire), D (downlink) or QD.
Acquisition needs AT access, downlink needs GS access; resource limits are
not masked but penalised. Contention for the same AT or GS in a slot is
resolved first-come first-served by ascending satellite id: later claimants
lose that task's effect and reward and pay the contention penalty.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from constel.errors import DomainError
from constel.kernels import replay_schedule
from constel.scenario import RateConfig, ResourceScenario


class SatAction(enum.IntEnum):
    NOP = 0
    Q = 1
    D = 2
    QD = 3


ACTIONS = tuple(SatAction)
_ACQ = (SatAction.Q, SatAction.QD)
_DL = (SatAction.D, SatAction.QD)


@dataclass(frozen=True)
class SatObservation:
    bat: float
    mem: float
    opp_at: int
    opp_gs: int
    sun: int


@dataclass(frozen=True)
class ConstellationState:
    """Slot index, its duration and one observation per satellite.

    The state returned after the last slot is terminal: ``t == T`` and all
    opportunities are zero.
    """

    t: int
    tau_t: float
    sats: tuple[SatObservation, ...]


@dataclass
class Violations:
    battery_depleted: bool = False
    memory_overflow: bool = False
    contention_gs: bool = False
    contention_at: bool = False
    invalid_action: bool = False

    def names(self) -> list[str]:
        return [k for k, v in self.__dict__.items() if v]


@dataclass
class StepOutcome:
    next_state: ConstellationState
    per_sat_reward: list[float]
    total_reward: float
    done: bool
    violations: list[Violations]


def feasible_mask(obs: SatObservation) -> np.ndarray:
    """Boolean mask over (NOP, Q, D, QD)."""
    q = obs.opp_at != 0
    d = obs.opp_gs != 0
    return np.array([True, q, d, q and d])


def feasible_set(obs: SatObservation) -> set[SatAction]:
    return {a for a, ok in zip(ACTIONS, feasible_mask(obs)) if ok}


def is_feasible(obs: SatObservation, action) -> bool:
    return bool(feasible_mask(obs)[int(action)])


def _sample_rates(rates: RateConfig, rng) -> RateConfig:
    if rng is None or not rates.bounds:
        return rates
    drawn = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in sorted(rates.bounds.items())}
    return RateConfig(**{**rates.to_dict(), **drawn})


def transition(obs: SatObservation, action, tau: float, rates: RateConfig, rng=None,
               chi_dl_allowed=True, chi_aq_allowed=True):
    """Advance one satellite; returns (bat', mem', pre-clamp bat', pre-clamp mem').

    ``chi_*_allowed`` lets contention suppress a task the satellite lost.
    With ``rng`` and sampling bounds on the rates, bounded rates are redrawn.
    """
    action = SatAction(int(action))
    if not is_feasible(obs, action):
        raise DomainError(f"{action.name} is infeasible for {obs}")
    rates = _sample_rates(rates, rng)
    chi_dl = 1.0 if (action in _DL and obs.opp_gs != 0 and chi_dl_allowed) else 0.0
    chi_aq = 1.0 if (action in _ACQ and obs.opp_at != 0 and chi_aq_allowed) else 0.0
    return _advance(obs, tau, rates, chi_dl, chi_aq)


def _advance(obs, tau, rates, chi_dl, chi_aq):
    s = float(obs.sun)
    pre_b = obs.bat + tau * (rates.dB_bg + chi_dl * rates.dB_dl + s * rates.dB_sun)
    pre_m = obs.mem + tau * (rates.dM_tm + chi_dl * rates.dM_dl + chi_aq * rates.dM_aq)
    return min(max(pre_b, 0.0), 1.0), min(max(pre_m, 0.0), 1.0), pre_b, pre_m


def resolve_contention(joint_action, state: ConstellationState) -> list[tuple[bool, bool]]:
    """Per satellite (downlink_contested, acquisition_contested), FCFS by ascending id.

    Only feasible claims take part; an infeasible action claims nothing.
    """
    gs_taken, at_taken = set(), set()
    out = []
    for obs, a in zip(state.sats, joint_action):
        a = SatAction(int(a))
        c_gs = c_at = False
        if is_feasible(obs, a):
            if a in _DL:
                if obs.opp_gs in gs_taken:
                    c_gs = True
                else:
                    gs_taken.add(obs.opp_gs)
            if a in _ACQ:
                if obs.opp_at in at_taken:
                    c_at = True
                else:
                    at_taken.add(obs.opp_at)
        out.append((c_gs, c_at))
    return out


def reward_sat(obs: SatObservation, action, tau: float, pre_bat: float, pre_mem: float,
               contention=(False, False), rates: RateConfig | None = None) -> float:
    rates = rates or RateConfig()
    action = SatAction(int(action))
    if not is_feasible(obs, action):
        return -rates.P_invAct
    c_gs, c_at = contention
    chi_dl = 1.0 if (action in _DL and not c_gs) else 0.0
    chi_aq = 1.0 if (action in _ACQ and not c_at) else 0.0
    r = tau * chi_aq * rates.dR_aq + tau * chi_dl * rates.dR_dl
    if pre_bat < 0.0:
        r -= rates.P_bat
    if pre_mem > 1.0:
        r -= rates.P_mem
    if c_gs:
        r -= rates.P_simGS
    if c_at:
        r -= rates.P_simAT
    return r


def observe(scenario: ResourceScenario, t: int, bat, mem) -> ConstellationState:
    if t >= scenario.T:
        sats = tuple(SatObservation(float(b), float(m), 0, 0, 0) for b, m in zip(bat, mem))
        return ConstellationState(scenario.T, float(scenario.tau[-1]), sats)
    sats = tuple(
        SatObservation(float(bat[i]), float(mem[i]), int(scenario.at_access[i, t]),
                       int(scenario.gs_access[i, t]), int(scenario.sun[i, t]))
        for i in range(scenario.n)
    )
    return ConstellationState(t, float(scenario.tau[t]), sats)


def env_reset(scenario: ResourceScenario) -> ConstellationState:
    return observe(scenario, 0, scenario.init_bat, scenario.init_mem)


def env_step(state: ConstellationState, joint_action, scenario: ResourceScenario, rng=None) -> StepOutcome:
    """Apply one joint action.

    An infeasible per-satellite action scores -P_invAct and acts as NOP on
    the dynamics (background load, telemetry and sunlight still apply).
    """
    if state.t >= scenario.T:
        raise DomainError("step called on a finished episode")
    if len(joint_action) != scenario.n:
        raise DomainError(f"joint action must have {scenario.n} entries")
    tau = state.tau_t
    contention = resolve_contention(joint_action, state)
    bats, mems, rewards, viols = [], [], [], []
    for obs, a, (c_gs, c_at) in zip(state.sats, joint_action, contention):
        a = SatAction(int(a))
        rates = _sample_rates(scenario.rates, rng)
        v = Violations(contention_gs=c_gs, contention_at=c_at)
        if is_feasible(obs, a):
            b, m, pre_b, pre_m = transition(obs, a, tau, rates, None, not c_gs, not c_at)
            r = reward_sat(obs, a, tau, pre_b, pre_m, (c_gs, c_at), rates)
            v.battery_depleted = pre_b < 0.0
            v.memory_overflow = pre_m > 1.0
        else:
            b, m, _, _ = _advance(obs, tau, rates, 0.0, 0.0)
            r = -rates.P_invAct
            v.invalid_action = True
        bats.append(b)
        mems.append(m)
        rewards.append(r)
        viols.append(v)
    total = 0.0
    for r in rewards:
        total += r
    t1 = state.t + 1
    return StepOutcome(observe(scenario, t1, bats, mems), rewards, total, t1 == scenario.T, viols)


class ResourceEnv:
    """Stateful wrapper; ``stochastic`` redraws bounded rates every step from ``rng``."""

    def __init__(self, scenario: ResourceScenario, rng=None, stochastic=False):
        self.scenario = scenario
        self.rng = rng
        self.stochastic = stochastic
        self.state = env_reset(scenario)
        self.done = False

    def reset(self) -> ConstellationState:
        self.state = env_reset(self.scenario)
        self.done = False
        return self.state

    def masks(self) -> np.ndarray:
        return np.array([feasible_mask(o) for o in self.state.sats])

    def step(self, joint_action) -> StepOutcome:
        out = env_step(self.state, joint_action, self.scenario, self.rng if self.stochastic else None)
        self.state = out.next_state
        self.done = out.done
        return out


# --------------------------------------------------------------------------
# schedules


@dataclass
class Schedule:
    actions: np.ndarray  # (n, T) ints in SatAction order
    reward: float | None = field(default=None)

    def to_json(self) -> list[list[str]]:
        return [[SatAction(int(a)).name for a in row] for row in self.actions]

    @classmethod
    def from_json(cls, rows) -> "Schedule":
        try:
            arr = np.array([[SatAction[name] for name in row] for row in rows], dtype=np.int64)
        except KeyError as exc:
            raise DomainError(f"unknown action name {exc}") from None
        return cls(arr)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Schedule":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def schedule_masks(scenario: ResourceScenario) -> np.ndarray:
    """(n, T, 4) feasibility masks for every cell."""
    q = scenario.at_access != 0
    d = scenario.gs_access != 0
    return np.stack([np.ones_like(q), q, d, q & d], axis=-1)


def is_compliant(scenario: ResourceScenario, actions) -> bool:
    m = schedule_masks(scenario)
    a = np.asarray(actions, dtype=np.int64)
    return bool(np.take_along_axis(m, a[..., None], axis=-1).all())


def replay(scenario: ResourceScenario, actions) -> float:
    """Deterministic total reward of a [sat][slot] table (no compliance check)."""
    a = np.ascontiguousarray(actions, dtype=np.int64)
    if a.shape != (scenario.n, scenario.T):
        raise DomainError(f"schedule must be shaped ({scenario.n}, {scenario.T})")
    return float(replay_schedule(
        a, scenario.tau, scenario.at_access, scenario.gs_access, scenario.sun,
        scenario.init_bat, scenario.init_mem, scenario.rates.as_array(),
        int(scenario.n_at), int(scenario.n_gs),
    ))


def rollout_schedule(scenario: ResourceScenario, actions):
    """Step a schedule through :func:`env_step`; yields every StepOutcome."""
    state = env_reset(scenario)
    for t in range(scenario.T):
        out = env_step(state, [int(x) for x in actions[:, t]], scenario)
        yield state, out
        state = out.next_state


def write_trajectory_csv(scenario: ResourceScenario, actions, path) -> Path:
    """Trajectory log: one row per (slot, satellite)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sat", "action", "bat", "mem", "reward", "flags"])
        for state, out in rollout_schedule(scenario, actions):
            for i, obs in enumerate(out.next_state.sats):
                w.writerow([state.t, i, SatAction(int(actions[i, state.t])).name,
                            repr(obs.bat), repr(obs.mem), repr(out.per_sat_reward[i]),
                            "|".join(out.violations[i].names())])
    return path
