"""Synthetic, seeded scenarios for both use cases, plus JSON persistence.

Routing scenarios are +Grid inter-satellite-link meshes; resource scenarios
are per-satellite, per-slot timelines of acquisition-target (AT) access,
ground-station (GS) access and sunlight. Everything is a pure function of its
inputs and seed.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np

from constel.errors import InvalidScenarioError, ScenarioParseError
from constel.kernels import RATE_NAMES

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SatCoord:
    plane_index: int
    slot_index: int

    def to_id(self, sats_per_plane: int) -> int:
        return self.plane_index * sats_per_plane + self.slot_index

    @classmethod
    def from_id(cls, sat_id: int, sats_per_plane: int) -> "SatCoord":
        return cls(*divmod(sat_id, sats_per_plane))


# --------------------------------------------------------------------------
# routing


@dataclass(eq=False)
class RoutingScenario:
    """ISL graph with per-edge latencies.

    ``edges`` is an (m, 2) array of directed pairs sorted lexicographically;
    ``prop_latency`` (m,) and ``queue_bounds`` (m, 2) are aligned with it.
    All latencies are milliseconds.
    """

    n: int
    edges: np.ndarray
    prop_latency: np.ndarray
    queue_bounds: np.ndarray
    src: int
    dst: int
    rng_seed: int = 0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.prop_latency = np.asarray(self.prop_latency, dtype=np.float64).reshape(-1)
        self.queue_bounds = np.asarray(self.queue_bounds, dtype=np.float64).reshape(-1, 2)
        order = np.lexsort((self.edges[:, 1], self.edges[:, 0]))
        if not np.array_equal(order, np.arange(len(order))):
            self.edges = self.edges[order]
            self.prop_latency = self.prop_latency[order]
            self.queue_bounds = self.queue_bounds[order]

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(u), int(v)): i for i, (u, v) in enumerate(self.edges)}

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(nbr_ptr, nbr_idx): neighbours of u are nbr_idx[nbr_ptr[u]:nbr_ptr[u+1]], ascending.

        Because edges are sorted, CSR slot j is also edge index j.
        """
        counts = np.bincount(self.edges[:, 0], minlength=self.n)
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        return ptr, self.edges[:, 1].copy()

    def neighbors(self, u: int) -> np.ndarray:
        ptr, idx = self.csr
        return idx[ptr[u]:ptr[u + 1]]

    def validate(self) -> "RoutingScenario":
        if self.n < 2:
            raise InvalidScenarioError("routing scenario needs at least 2 nodes")
        m = len(self.edges)
        if len(self.prop_latency) != m or len(self.queue_bounds) != m:
            raise InvalidScenarioError("edge attribute arrays must align with edges")
        if m and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise InvalidScenarioError("edge endpoint out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise InvalidScenarioError("self-loops are not allowed")
        pairs = set(self.edge_index)
        if len(pairs) != m:
            raise InvalidScenarioError("duplicate edges")
        for u, v in pairs:
            if (v, u) not in pairs:
                raise InvalidScenarioError(f"edge set is not symmetric: ({u},{v}) has no reverse")
        if np.any(~np.isfinite(self.prop_latency)) or np.any(self.prop_latency <= 0):
            raise InvalidScenarioError("propagation latencies must be finite and > 0")
        lo, hi = self.queue_bounds[:, 0], self.queue_bounds[:, 1]
        if np.any(lo < 0) or np.any(lo > hi):
            raise InvalidScenarioError("queue bounds must satisfy 0 <= l_min <= l_max")
        for name in ("src", "dst"):
            if not 0 <= getattr(self, name) < self.n:
                raise InvalidScenarioError(f"{name} out of range")
        if self.src == self.dst:
            raise InvalidScenarioError("src and dst must differ")
        if self.dst not in reachable(self, self.src):
            raise InvalidScenarioError("dst is unreachable from src")
        return self

    def with_endpoints(self, src: int, dst: int) -> "RoutingScenario":
        return replace(self, src=src, dst=dst).validate()

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "routing",
            "version": SCHEMA_VERSION,
            "n": int(self.n),
            "edges": self.edges.tolist(),
            "prop_latency": self.prop_latency.tolist(),
            "queue_bounds": self.queue_bounds.tolist(),
            "src": int(self.src),
            "dst": int(self.dst),
            "rng_seed": int(self.rng_seed),
        }

    def __eq__(self, other):
        if not isinstance(other, RoutingScenario):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def reachable(scenario: RoutingScenario, start: int) -> set[int]:
    seen = {start}
    todo = deque([start])
    while todo:
        u = todo.popleft()
        for v in scenario.neighbors(u):
            v = int(v)
            if v not in seen:
                seen.add(v)
                todo.append(v)
    return seen


def build_grid_topology(num_planes: int, sats_per_plane: int) -> list[tuple[int, int]]:
    """Undirected +Grid links (u < v) for ``num_planes`` x ``sats_per_plane`` satellites.

    Intra-plane rings wrap; planes do not (the first and last plane are
    separated by a seam).
    """
    if num_planes < 2 or sats_per_plane < 2:
        raise InvalidScenarioError("grid dimensions must both be >= 2")
    links = set()
    for p in range(num_planes):
        for s in range(sats_per_plane):
            u = SatCoord(p, s).to_id(sats_per_plane)
            v = SatCoord(p, (s + 1) % sats_per_plane).to_id(sats_per_plane)
            links.add((min(u, v), max(u, v)))
            if p + 1 < num_planes:
                links.add((u, SatCoord(p + 1, s).to_id(sats_per_plane)))
    return sorted(links)


def _check_range(name, lohi, *, positive=False):
    lo, hi = (float(x) for x in lohi)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise InvalidScenarioError(f"{name} range is inverted or non-finite: ({lo}, {hi})")
    if lo < 0 or (positive and lo <= 0):
        raise InvalidScenarioError(f"{name} range must be {'positive' if positive else 'non-negative'}")
    return lo, hi


def synthesize_routing_scenario(
    num_planes: int,
    sats_per_plane: int,
    latency_params=(1.0, 10.0),
    queue_params=(0.0, 5.0),
    src: int = 0,
    dst: int | None = None,
    seed: int = 0,
) -> RoutingScenario:
    """Random +Grid scenario.

    Propagation latency is drawn once per undirected link and mirrored;
    queue bounds are drawn per directed edge as the sorted pair of two
    uniforms inside ``queue_params``.
    """
    links = build_grid_topology(num_planes, sats_per_plane)
    n = num_planes * sats_per_plane
    if dst is None:
        dst = n - 1
    lat_lo, lat_hi = _check_range("latency_params", latency_params, positive=True)
    q_lo, q_hi = _check_range("queue_params", queue_params)
    if src == dst:
        raise InvalidScenarioError("src and dst must differ")
    rng = np.random.default_rng(seed)
    link_prop = rng.uniform(lat_lo, lat_hi, size=len(links))
    edges, prop = [], []
    for (u, v), w in zip(links, link_prop):
        edges += [(u, v), (v, u)]
        prop += [w, w]
    edges = np.array(edges, dtype=np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, prop = edges[order], np.array(prop)[order]
    draws = np.sort(rng.uniform(q_lo, q_hi, size=(len(edges), 2)), axis=1)
    return RoutingScenario(n, edges, prop, draws, int(src), int(dst), int(seed)).validate()


# --------------------------------------------------------------------------
# resources


@dataclass
class RateConfig:
    """Per-second rates of change (fractions of capacity) and reward/penalty magnitudes.

    ``bounds`` optionally maps a rate name to a (min, max) range; when a
    stochastic environment is used those rates are drawn per step.
    """

    dB_bg: float = -1e-5
    dB_dl: float = -2e-4
    dB_sun: float = 1e-4
    dM_tm: float = 1e-5
    dM_dl: float = -5e-4
    dM_aq: float = 3e-4
    dR_aq: float = 1.0
    dR_dl: float = 2.0
    P_bat: float = 100.0
    P_mem: float = 100.0
    P_simGS: float = 50.0
    P_simAT: float = 50.0
    P_invAct: float = 200.0
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)

    _NEGATIVE = ("dB_bg", "dB_dl", "dM_dl")
    _POSITIVE = ("dB_sun", "dM_tm", "dM_aq", "dR_aq", "dR_dl")
    _PENALTIES = ("P_bat", "P_mem", "P_simGS", "P_simAT", "P_invAct")

    def validate(self) -> "RateConfig":
        for name in self._NEGATIVE:
            if not getattr(self, name) < 0:
                raise InvalidScenarioError(f"rate {name} must be negative")
        for name in self._POSITIVE:
            if not getattr(self, name) > 0:
                raise InvalidScenarioError(f"rate {name} must be positive")
        for name in self._PENALTIES:
            if not getattr(self, name) >= 0:
                raise InvalidScenarioError(f"penalty {name} must be non-negative")
        for name, (lo, hi) in self.bounds.items():
            if name not in self._NEGATIVE + self._POSITIVE[:3]:
                raise InvalidScenarioError(f"sampling bounds given for non-rate {name!r}")
            if lo > hi:
                raise InvalidScenarioError(f"bounds for {name} are inverted")
            sign = np.sign(getattr(self, name))
            if np.sign(lo) != sign or np.sign(hi) != sign:
                raise InvalidScenarioError(f"bounds for {name} must share the nominal sign")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in RATE_NAMES], dtype=np.float64)

    def to_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in RATE_NAMES}

    @classmethod
    def from_dict(cls, d: dict, bounds: dict | None = None) -> "RateConfig":
        unknown = set(d) - set(RATE_NAMES)
        if unknown:
            raise ScenarioParseError(f"rates.{sorted(unknown)[0]}", "unknown rate name")
        vals = {k: float(v) for k, v in d.items()}
        b = {k: (float(v[0]), float(v[1])) for k, v in (bounds or {}).items()}
        return cls(**vals, bounds=b).validate()


@dataclass(eq=False)
class ResourceScenario:
    """Per-satellite, per-slot opportunity timeline.

    ``at_access``/``gs_access`` hold the accessible asset id (0 = none) and
    ``sun`` the 0/1 illumination flag, all shaped (n, T).
    """

    n: int
    T: int
    tau: np.ndarray
    at_access: np.ndarray
    gs_access: np.ndarray
    sun: np.ndarray
    rates: RateConfig
    init_bat: np.ndarray
    init_mem: np.ndarray
    n_at: int
    n_gs: int
    rng_seed: int = 0

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.float64).reshape(-1)
        for name in ("at_access", "gs_access", "sun"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(self.n, -1))
        self.init_bat = np.broadcast_to(np.asarray(self.init_bat, dtype=np.float64), (self.n,)).copy()
        self.init_mem = np.broadcast_to(np.asarray(self.init_mem, dtype=np.float64), (self.n,)).copy()

    def validate(self) -> "ResourceScenario":
        if self.n < 1 or self.T < 1:
            raise InvalidScenarioError("need n >= 1 satellites and T >= 1 slots")
        if self.tau.shape != (self.T,):
            raise InvalidScenarioError("tau must have one entry per slot")
        if np.any(~np.isfinite(self.tau)) or np.any(self.tau <= 0):
            raise InvalidScenarioError("slot durations must be > 0")
        for name, hi in (("at_access", self.n_at), ("gs_access", self.n_gs), ("sun", 1)):
            arr = getattr(self, name)
            if arr.shape != (self.n, self.T):
                raise InvalidScenarioError(f"{name} must be shaped [sat][slot] = ({self.n}, {self.T})")
            if arr.size and (arr.min() < 0 or arr.max() > hi):
                raise InvalidScenarioError(f"{name} values must lie in 0..{hi}")
        for name in ("init_bat", "init_mem"):
            arr = getattr(self, name)
            if np.any(arr < 0) or np.any(arr > 1):
                raise InvalidScenarioError(f"{name} must lie in [0, 1]")
        if self.n_at < 0 or self.n_gs < 0:
            raise InvalidScenarioError("asset counts must be non-negative")
        self.rates.validate()
        return self

    @property
    def tau_max(self) -> float:
        return float(self.tau.max())

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "resources",
            "version": SCHEMA_VERSION,
            "n": int(self.n),
            "T": int(self.T),
            "tau": self.tau.tolist(),
            "at_access": self.at_access.tolist(),
            "gs_access": self.gs_access.tolist(),
            "sun": self.sun.tolist(),
            "n_at": int(self.n_at),
            "n_gs": int(self.n_gs),
            "rates": self.rates.to_dict(),
            "rate_bounds": {k: list(v) for k, v in sorted(self.rates.bounds.items())},
            "init_bat": self.init_bat.tolist(),
            "init_mem": self.init_mem.tolist(),
            "rng_seed": int(self.rng_seed),
        }

    def __eq__(self, other):
        if not isinstance(other, ResourceScenario):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def synthesize_resource_scenario(
    n: int,
    T: int,
    window_density_params=(0.3, 0.2),
    rates: RateConfig | None = None,
    seed: int = 0,
    *,
    tau_range=(30.0, 120.0),
    sun_run=(3, 8),
    n_at: int | None = None,
    n_gs: int | None = None,
    init_bat: float = 0.8,
    init_mem: float = 0.2,
) -> ResourceScenario:
    """Random resource timeline.

    ``window_density_params`` is (AT density, GS density): the per-cell
    probability of an access event. Access ids are uniform over the assets.
    Sunlight alternates day/night runs whose lengths are uniform integers in
    ``sun_run``, starting from a random phase per satellite. By default there
    are max(2, n // 2) targets and max(1, n // 4) ground stations.
    """
    if n < 1 or T < 1:
        raise InvalidScenarioError("need n >= 1 satellites and T >= 1 slots")
    d_at, d_gs = (float(x) for x in window_density_params)
    for name, d in (("AT density", d_at), ("GS density", d_gs)):
        if not 0.0 <= d <= 1.0:
            raise InvalidScenarioError(f"{name} must lie in [0, 1], got {d}")
    tau_lo, tau_hi = _check_range("tau_range", tau_range, positive=True)
    run_lo, run_hi = int(sun_run[0]), int(sun_run[1])
    if run_lo < 1 or run_lo > run_hi:
        raise InvalidScenarioError("sun_run must satisfy 1 <= min <= max")
    n_at = max(2, n // 2) if n_at is None else int(n_at)
    n_gs = max(1, n // 4) if n_gs is None else int(n_gs)
    rates = (rates or RateConfig()).validate()

    rng = np.random.default_rng(seed)
    tau = rng.uniform(tau_lo, tau_hi, size=T)
    at = np.where(rng.random((n, T)) < d_at, rng.integers(1, n_at + 1, size=(n, T)), 0) if n_at else np.zeros((n, T), int)
    gs = np.where(rng.random((n, T)) < d_gs, rng.integers(1, n_gs + 1, size=(n, T)), 0) if n_gs else np.zeros((n, T), int)
    sun = np.zeros((n, T), dtype=np.int64)
    for i in range(n):
        lit = bool(rng.integers(0, 2))
        t = 0
        while t < T:
            run = int(rng.integers(run_lo, run_hi + 1))
            sun[i, t:t + run] = int(lit)
            lit = not lit
            t += run
    return ResourceScenario(
        n, T, tau, at, gs, sun, rates,
        np.full(n, init_bat), np.full(n, init_mem), n_at, n_gs, int(seed),
    ).validate()


def access_windows(scenario: ResourceScenario) -> list[tuple[str, int, int, int]]:
    """Maximal runs of one nonzero asset id per satellite: (kind, sat, start, stop)."""
    out = []
    for kind, grid in (("at", scenario.at_access), ("gs", scenario.gs_access)):
        for i in range(scenario.n):
            row = grid[i]
            t = 0
            while t < scenario.T:
                if row[t] == 0:
                    t += 1
                    continue
                start = t
                while t < scenario.T and row[t] == row[start]:
                    t += 1
                out.append((kind, i, start, t))
    return out


def drop_access_windows(scenario: ResourceScenario, proportion: float, rng) -> ResourceScenario:
    """Copy of ``scenario`` with ``round(proportion * #windows)`` windows deleted.

    Windows are removed in the order of one seeded permutation, so for a fixed
    generator state the deleted sets are nested as ``proportion`` grows.
    """
    if not 0.0 <= proportion <= 1.0:
        raise InvalidScenarioError("failure proportion must lie in [0, 1]")
    windows = access_windows(scenario)
    order = rng.permutation(len(windows))
    k = int(round(proportion * len(windows)))
    at = scenario.at_access.copy()
    gs = scenario.gs_access.copy()
    for w in order[:k]:
        kind, i, start, stop = windows[w]
        (at if kind == "at" else gs)[i, start:stop] = 0
    return replace(scenario, at_access=at, gs_access=gs, rates=scenario.rates)


# --------------------------------------------------------------------------
# persistence


def _need(d: dict, key: str):
    if key not in d:
        raise ScenarioParseError(key)
    return d[key]


def scenario_from_dict(d: dict):
    if not isinstance(d, dict):
        raise ScenarioParseError("kind", "scenario file must hold a JSON object")
    kind = _need(d, "kind")
    version = _need(d, "version")
    if version != SCHEMA_VERSION:
        raise ScenarioParseError("version", f"unsupported scenario version {version!r}")
    try:
        if kind == "routing":
            keys = ("n", "edges", "prop_latency", "queue_bounds", "src", "dst")
            vals = {k: _need(d, k) for k in keys}
            edges = vals["edges"]
            if not isinstance(edges, list) or any(not isinstance(e, list) or len(e) != 2 for e in edges):
                raise ScenarioParseError("edges", "edges must be a list of [u, v] pairs")
            qb = vals["queue_bounds"]
            if not isinstance(qb, list) or any(not isinstance(b, list) or len(b) != 2 for b in qb):
                raise ScenarioParseError("queue_bounds", "queue_bounds must be a list of [l_min, l_max] pairs")
            sc = RoutingScenario(
                int(vals["n"]), np.array(edges, dtype=np.int64).reshape(-1, 2),
                vals["prop_latency"], np.array(qb, dtype=np.float64).reshape(-1, 2),
                int(vals["src"]), int(vals["dst"]), int(d.get("rng_seed", 0)),
            )
        elif kind == "resources":
            keys = ("n", "T", "tau", "at_access", "gs_access", "sun", "n_at", "n_gs", "rates", "init_bat", "init_mem")
            vals = {k: _need(d, k) for k in keys}
            n, T = int(vals["n"]), int(vals["T"])
            for k in ("at_access", "gs_access", "sun"):
                arr = np.asarray(vals[k])
                if arr.shape != (n, T):
                    raise ScenarioParseError(k, f"{k} must be a dense [sat][slot] array of shape ({n}, {T})")
            if not isinstance(vals["rates"], dict):
                raise ScenarioParseError("rates", "rates must be an object")
            rates = RateConfig.from_dict(vals["rates"], d.get("rate_bounds") or {})
            sc = ResourceScenario(
                n, T, vals["tau"], vals["at_access"], vals["gs_access"], vals["sun"], rates,
                vals["init_bat"], vals["init_mem"], int(vals["n_at"]), int(vals["n_gs"]),
                int(d.get("rng_seed", 0)),
            )
        else:
            raise ScenarioParseError("kind", f"unknown scenario kind {kind!r}")
    except ScenarioParseError:
        raise
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidScenarioError):
            raise
        raise ScenarioParseError("?", f"malformed scenario: {exc}") from exc
    return sc.validate()


def save_scenario(scenario, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scenario.to_dict(), indent=1) + "\n", encoding="utf-8")
    return path


def load_scenario(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError("<json>", f"invalid JSON: {exc}") from exc
    return scenario_from_dict(d)


def summary(scenario) -> dict[str, Any]:
    if isinstance(scenario, RoutingScenario):
        return {
            "kind": "routing", "nodes": scenario.n, "links": len(scenario.edges) // 2,
            "src": scenario.src, "dst": scenario.dst,
            "mean_prop_ms": round(float(scenario.prop_latency.mean()), 4),
        }
    kinds = [w[0] for w in access_windows(scenario)]
    return {
        "kind": "resources", "sats": scenario.n, "slots": scenario.T,
        "at_windows": kinds.count("at"),
        "gs_windows": kinds.count("gs"),
        "sunlit_fraction": round(float(scenario.sun.mean()), 4),
    }
