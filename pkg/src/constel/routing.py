"""Q-routing over a satellite ISL graph, Dijkstra baselines and route evaluation.

States are nodes, actions are next-hop nodes. The per-hop reward is the
negated sum of propagation latency, a freshly sampled queueing latency and a
target term that is -bonus on the hop reaching the destination (so the hop
into ``dst`` earns ``+bonus``).
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from constel.errors import DomainError, NoRouteError
from constel.kernels import qrouting_episodes
from constel.scenario import RoutingScenario

PLAIN = "plain"
MQ = "mq"


@dataclass
class LearnerConfig:
    episodes: int = 25_000
    alpha: float = 0.05
    gamma: float = 0.9
    epsilon0: float = 0.3
    epsilon_decay: float = 0.9995
    loop_penalty: float = 100.0
    target_bonus_magnitude: float = 100.0

    def validate(self) -> "LearnerConfig":
        if self.episodes <= 0:
            raise ValueError("episodes must be > 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.epsilon0 <= 1.0:
            raise ValueError("epsilon0 must lie in [0, 1]")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must lie in (0, 1]")
        return self


@dataclass
class QTable:
    values: np.ndarray
    # per-episode (steps, total_reward, delivered); filled by train()
    trace: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def to_dict(self) -> dict:
        return {"n": int(self.n), "q": self.values.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QTable":
        n = int(d["n"])
        q = np.asarray(d["q"], dtype=np.float64)
        if q.size != n * n:
            raise ValueError(f"q must hold n*n = {n * n} values, got {q.size}")
        return cls(q.reshape(n, n))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "QTable":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RoutingEpisodeResult:
    route: list[int]
    total_latency: float
    hops: int
    delivered: bool
    total_reward: float


def _check_node(scenario: RoutingScenario, node) -> int:
    node = int(node)
    if not 0 <= node < scenario.n:
        raise DomainError(f"unknown node {node}")
    return node


def _edge(scenario: RoutingScenario, u, v) -> int:
    try:
        return scenario.edge_index[(int(u), int(v))]
    except KeyError:
        raise DomainError(f"no link {u}->{v}") from None


def feasible_actions(scenario: RoutingScenario, state) -> set[int]:
    state = _check_node(scenario, state)
    return {int(v) for v in scenario.neighbors(state)}


def sample_queue_latency(scenario: RoutingScenario, edge, rng) -> float:
    lo, hi = scenario.queue_bounds[_edge(scenario, *edge)]
    return float(lo + rng.random() * (hi - lo))


def reward(scenario: RoutingScenario, state, action, sampled_queue, target_bonus_magnitude=100.0) -> float:
    j = _edge(scenario, state, action)
    target = -target_bonus_magnitude if int(action) == scenario.dst else 0.0
    return -(float(scenario.prop_latency[j]) + float(sampled_queue) + target)


class RoutingEnv:
    """Single-packet environment: reset() to src, step(next_hop) until dst."""

    def __init__(self, scenario: RoutingScenario, rng, target_bonus_magnitude=100.0):
        self.scenario = scenario
        self.rng = rng
        self.bonus = target_bonus_magnitude
        self.state = scenario.src

    def reset(self) -> int:
        self.state = self.scenario.src
        return self.state

    def valid_actions(self) -> set[int]:
        return feasible_actions(self.scenario, self.state)

    def step(self, action):
        action = int(action)
        lq = sample_queue_latency(self.scenario, (self.state, action), self.rng)
        r = reward(self.scenario, self.state, action, lq, self.bonus)
        self.state = action
        return self.state, r, action == self.scenario.dst


def q_update(q: np.ndarray, s, a, r, s_next, alpha, gamma, scenario: RoutingScenario | None = None) -> float:
    """One Bellman update of ``q[s, a]`` in place; returns the new value.

    The max over next actions ranges over neighbours of ``s_next`` when a
    scenario is given, else over the whole row.
    """
    row = q[s_next]
    if scenario is not None:
        nbrs = scenario.neighbors(s_next)
        best = float(row[nbrs].max()) if len(nbrs) else 0.0
    else:
        best = float(row.max())
    q[s, a] = (1.0 - alpha) * q[s, a] + alpha * (r + gamma * best)
    return float(q[s, a])


def train(scenario: RoutingScenario, config: LearnerConfig, rng) -> QTable:
    """Epsilon-greedy tabular Q-learning from src to dst.

    A revisit ends the episode after a second, loop-penalised update of the
    same entry. Epsilon decays once per episode. Randomness is drawn from
    ``rng`` in blocks so the compiled and pure-Python kernels agree exactly.
    """
    config.validate()
    n = scenario.n
    q = np.zeros((n, n), dtype=np.float64)
    ptr, idx = scenario.csr
    prop = np.ascontiguousarray(scenario.prop_latency)
    qlo = np.ascontiguousarray(scenario.queue_bounds[:, 0])
    qhi = np.ascontiguousarray(scenario.queue_bounds[:, 1])
    stats = np.zeros((config.episodes, 3), dtype=np.float64)
    eps = float(config.epsilon0)
    done = 0
    while done < config.episodes:
        remaining = config.episodes - done
        u = rng.random(3 * n * min(remaining, 2048))
        ran, eps = qrouting_episodes(
            q, ptr, idx, prop, qlo, qhi, scenario.src, scenario.dst,
            eps, float(config.epsilon_decay), float(config.alpha), float(config.gamma),
            float(config.loop_penalty), float(config.target_bonus_magnitude),
            u, remaining, stats[done:],
        )
        done += ran
    return QTable(q, trace=stats)


def route_cost(scenario: RoutingScenario, route, mode=MQ) -> float:
    """Expected latency of ``route``: propagation (+ mean queueing for ``mq``)."""
    total = 0.0
    for u, v in zip(route[:-1], route[1:]):
        j = _edge(scenario, u, v)
        total += _weight(scenario, j, mode)
    return total


def _weight(scenario: RoutingScenario, j: int, mode: str) -> float:
    if mode == PLAIN:
        return float(scenario.prop_latency[j])
    if mode == MQ:
        lo, hi = scenario.queue_bounds[j]
        return float(scenario.prop_latency[j] + (lo + hi) / 2.0)
    raise ValueError(f"unknown weight mode {mode!r}")


def _result(scenario, route, delivered, bonus=100.0) -> RoutingEpisodeResult:
    lat = route_cost(scenario, route, MQ)
    rew = -lat + (bonus if delivered else 0.0)
    return RoutingEpisodeResult(route, lat, len(route) - 1, delivered, rew if delivered else 0.0)


def extract_route(qtable: QTable, scenario: RoutingScenario, unresponsive=(), bonus=100.0) -> RoutingEpisodeResult:
    """Follow the best unvisited, responsive neighbour from src.

    Ties go to the lowest node id. ``total_latency`` and ``total_reward`` use
    mean queueing delays; an undelivered walk reports reward 0.
    """
    q = qtable.values
    blocked = {int(x) for x in unresponsive}
    state = scenario.src
    route = [state]
    visited = {state}
    while state != scenario.dst:
        cands = [int(v) for v in scenario.neighbors(state) if v not in visited and v not in blocked]
        if not cands:
            return _result(scenario, route, False, bonus)
        # stable sort on -Q keeps ascending ids among ties
        state = min(cands, key=lambda v: (-q[route[-1], v], v))
        route.append(state)
        visited.add(state)
    return _result(scenario, route, True, bonus)


def dijkstra(scenario: RoutingScenario, weight_mode=PLAIN, unresponsive=()) -> list[int]:
    """Minimum-weight src->dst path, ties broken by lexicographically smallest node sequence."""
    blocked = {int(x) for x in unresponsive}
    src, dst = scenario.src, scenario.dst
    ptr, idx = scenario.csr
    heap = [(0.0, (src,))]
    done = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return list(path)
        for j in range(ptr[u], ptr[u + 1]):
            v = int(idx[j])
            if v in done or v in blocked:
                continue
            heapq.heappush(heap, (d + _weight(scenario, j, weight_mode), path + (v,)))
    raise NoRouteError(f"no route from {src} to {dst}")


@dataclass
class LatencySamples:
    samples: np.ndarray
    mean: float
    percentiles: dict[int, float]


def evaluate_route(scenario: RoutingScenario, route, rng, replications=1000) -> LatencySamples:
    """End-to-end latency over ``replications`` fresh queue draws per hop."""
    if len(route) < 2 or route[0] != scenario.src:
        raise DomainError("route must start at src and have at least one hop")
    js = np.array([_edge(scenario, u, v) for u, v in zip(route[:-1], route[1:])])
    lo = scenario.queue_bounds[js, 0]
    hi = scenario.queue_bounds[js, 1]
    u = rng.random((int(replications), len(js)))
    samples = (scenario.prop_latency[js] + (lo + u * (hi - lo))).sum(axis=1)
    pct = {p: float(np.percentile(samples, p)) for p in (5, 25, 50, 75, 95)}
    return LatencySamples(samples, float(samples.mean()), pct)
