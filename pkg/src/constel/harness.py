"""Experiment protocols producing plot-ready reports.

Routing: latency distributions, latency gains, hop/latency regressions and
failure injection of unresponsive nodes. Resources: execution time versus
reward, reward spread over seeds, and failure injection of access windows.
Every stochastic element draws from a generator derived from an explicit
seed plus a stable key, so reports are reproducible apart from timing columns.
"""
from __future__ import annotations

import csv
import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from constel.baselines import SaConfig, random_schedule, simulated_annealing
from constel.ppo import PolicyParams, PpoConfig, greedy_schedule, train_scheduler
from constel.resources_env import Schedule, replay
from constel.routing import (
    MQ,
    PLAIN,
    QTable,
    dijkstra,
    evaluate_route,
    extract_route,
    train,
)
from constel.scenario import ResourceScenario, RoutingScenario, drop_access_windows

REPORT_SCHEMA_VERSION = 1
ALGORITHMS = ("qrouting", "dijkstra", "dijkstra_mq")
TIMING_COLUMNS = ("time_s", "mean_time_s")


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, keys); string keys are hashed stably."""
    words = [int(seed)] + [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))


@dataclass
class Report:
    kind: str
    rows: list[dict]
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self, timing=True) -> dict:
        rows = self.rows if timing else [
            {k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in self.rows
        ]
        return {"schema_version": REPORT_SCHEMA_VERSION, "kind": self.kind,
                "meta": self.meta, "rows": rows, **self.extra}


def _stats(samples) -> dict:
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        return {"mean_latency": None, "p5": None, "p25": None, "p50": None, "p75": None, "p95": None}
    out = {"mean_latency": float(s.mean())}
    for p in (5, 25, 50, 75, 95):
        out[f"p{p}"] = float(np.percentile(s, p))
    return out


def latency_gain(reference_samples, candidate_samples) -> float:
    """Mean latency of the reference minus that of the candidate (positive = candidate faster)."""
    return float(np.mean(reference_samples) - np.mean(candidate_samples))


def fit_hop_latency(latency_diffs, hop_diffs) -> dict:
    """Least-squares line hop_diff = slope * latency_diff + intercept.

    Flagged degenerate (slope/intercept None) with fewer than two points or
    no spread in latency difference.
    """
    x = np.asarray(latency_diffs, dtype=np.float64)
    y = np.asarray(hop_diffs, dtype=np.float64)
    if x.size < 2 or np.ptp(x) == 0.0:
        return {"slope": None, "intercept": None, "points": int(x.size), "degenerate": True}
    slope, intercept = np.polyfit(x, y, 1)
    return {"slope": float(slope), "intercept": float(intercept), "points": int(x.size), "degenerate": False}


# --------------------------------------------------------------------------
# routing


def _bench_cell(args):
    si, ci, seed, scenario, config, replications = args
    qt = train(scenario, config, derive_rng(seed, "train", si, ci))
    res = extract_route(qt, scenario)
    routes = {"qrouting": res.route if res.delivered else None}
    for name, mode in (("dijkstra", PLAIN), ("dijkstra_mq", MQ)):
        routes[name] = dijkstra(scenario, mode)
    out = {}
    for name, route in routes.items():
        if route is None:
            out[name] = (None, None)
            continue
        ev = evaluate_route(scenario, route, derive_rng(seed, "eval", si, ci, name), replications)
        out[name] = (ev.samples, len(route) - 1)
    return (si, ci, seed), out


def run_routing_bench(scenarios, learner_configs, replications=1000, seeds=(0,), jobs=1) -> Report:
    """Train Q-routing per (scenario, config, seed) and evaluate it against both Dijkstra variants.

    One row per (scenario, config, algorithm); samples pool all seeds.
    """
    scenarios = list(scenarios)
    learner_configs = list(learner_configs)
    cells = [(si, ci, int(s), sc, cfg, int(replications))
             for si, sc in enumerate(scenarios) for ci, cfg in enumerate(learner_configs) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_bench_cell, cells))
    else:
        results = dict(map(_bench_cell, cells))

    rows, samples, gains, pairs = [], {}, [], {}
    for si, sc in enumerate(scenarios):
        for ci, cfg in enumerate(learner_configs):
            per_alg = {}
            for alg in ALGORITHMS:
                pooled, hops, delivered = [], [], 0
                for s in seeds:
                    smp, h = results[(si, ci, int(s))][alg]
                    if smp is not None:
                        pooled.append(smp)
                        hops.append(h)
                        delivered += 1
                pooled = np.concatenate(pooled) if pooled else np.zeros(0)
                per_alg[alg] = (pooled, hops)
                key = f"{si}/{ci}/{alg}"
                samples[key] = pooled.tolist()
                rows.append({
                    "scenario": si, "src": sc.src, "dst": sc.dst, "config": ci,
                    "episodes": cfg.episodes, "alpha": cfg.alpha, "algorithm": alg,
                    **_stats(pooled),
                    "mean_hops": float(np.mean(hops)) if hops else None,
                    "delivery_rate": delivered / len(seeds),
                    "seeds": ";".join(str(int(s)) for s in seeds),
                    "samples_key": key,
                })
            q_smp, q_hops = per_alg["qrouting"]
            d_smp, d_hops = per_alg["dijkstra"]
            if q_smp.size and d_smp.size:
                g = latency_gain(d_smp, q_smp)
                gains.append({"scenario": si, "config": ci, "src": sc.src, "dst": sc.dst,
                              "gain_vs_dijkstra": g,
                              "gain_vs_dijkstra_mq": latency_gain(per_alg["dijkstra_mq"][0], q_smp),
                              "latency_diff": -g,
                              "hop_diff": float(np.mean(q_hops) - np.mean(d_hops))})
                pairs.setdefault(ci, []).append(gains[-1])
    regressions = []
    for ci, cfg in enumerate(learner_configs):
        pts = pairs.get(ci, [])
        fit = fit_hop_latency([p["latency_diff"] for p in pts], [p["hop_diff"] for p in pts])
        regressions.append({"config": ci, "episodes": cfg.episodes, "alpha": cfg.alpha, **fit})
    meta = {"seeds": [int(s) for s in seeds], "replications": int(replications),
            "configs": [asdict(c) for c in learner_configs]}
    return Report("routing_bench", rows, meta, {"gains": gains, "regressions": regressions, "samples": samples})


def _nominal_route(alg, scenario, qtable):
    if alg == "qrouting":
        res = extract_route(qtable, scenario)
        return res.route if res.delivered else None
    return dijkstra(scenario, PLAIN if alg == "dijkstra" else MQ)


def run_routing_flex(scenario: RoutingScenario, qtable: QTable, failure_sizes, seeds=range(10),
                     replications=100, bonus=100.0) -> Report:
    """Inject ``k`` unresponsive interior nodes on each algorithm's nominal path.

    Dijkstra paths are precomputed and fail outright (reward 0). Q-routing
    re-extracts its route from the table with the failed nodes skipped.
    Reward is bonus minus evaluated end-to-end latency when delivered, else 0.
    """
    sizes = sorted(int(k) for k in failure_sizes)
    rows = []
    for k in sizes:
        for alg in ALGORITHMS:
            nominal = _nominal_route(alg, scenario, qtable)
            interior = nominal[1:-1] if nominal else []
            base = {"failure_size": k, "algorithm": alg,
                    "nominal_hops": len(nominal) - 1 if nominal else None,
                    "seeds": ";".join(str(int(s)) for s in seeds)}
            if nominal is None or k > len(interior):
                rows.append({**base, "feasible": False, "delivery_rate": None, "mean_reward": None,
                             "mean_latency": None, "mean_hops": None})
                continue
            lats, hops, rewards, delivered = [], [], [], 0
            for s in seeds:
                rng = derive_rng(int(s), "flex", k, alg)
                failed = rng.choice(interior, size=k, replace=False).tolist() if k else []
                if alg == "qrouting":
                    res = extract_route(qtable, scenario, unresponsive=failed)
                    route = res.route if res.delivered else None
                else:
                    route = nominal if not failed else None
                if route is None:
                    rewards.append(0.0)
                    continue
                ev = evaluate_route(scenario, route, rng, replications)
                delivered += 1
                lats.append(ev.mean)
                hops.append(len(route) - 1)
                rewards.append(bonus - ev.mean)
            rows.append({**base, "feasible": True,
                         "delivery_rate": delivered / len(seeds),
                         "mean_reward": float(np.mean(rewards)),
                         "mean_latency": float(np.mean(lats)) if lats else None,
                         "mean_hops": float(np.mean(hops)) if hops else None})
    return Report("routing_flex", rows, {"seeds": [int(s) for s in seeds], "replications": int(replications),
                                         "failure_sizes": sizes, "src": scenario.src, "dst": scenario.dst})


# --------------------------------------------------------------------------
# resources


def _warm_up(scenario: ResourceScenario) -> None:
    # keeps JIT compilation out of measured time
    replay(scenario, np.zeros((scenario.n, scenario.T), dtype=np.int64))


def _std(x) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def run_resources_tradeoff(scenarios, rl_episodes=(5, 10, 15, 20), sa_iterations=(30, 60, 90, 120),
                           seeds=range(5), ppo_config: PpoConfig | None = None,
                           sa_config: SaConfig | None = None, sa_sweep: int = 1) -> Report:
    """Wall-clock time and reward mean/std over seeds for RL, SA and RND.

    ``scenarios`` maps a label to a ResourceScenario (a list is labelled
    ``{n}x{T}``). ``sa_sweep`` is the number of proposals per SA iteration.
    Runs are sequential so timings are comparable.
    """
    if not isinstance(scenarios, dict):
        scenarios = {f"{s.n}x{s.T}": s for s in scenarios}
    ppo_config = ppo_config or PpoConfig()
    sa_config = sa_config or SaConfig()
    seeds = [int(s) for s in seeds]
    rows = []
    for label, sc in scenarios.items():
        _warm_up(sc)
        jobs = [("rnd", 1)] + [("sa", b) for b in sa_iterations] + [("rl", b) for b in rl_episodes]
        for alg, budget in jobs:
            rewards, times, errors = [], [], []
            for s in seeds:
                t0 = time.perf_counter()
                try:
                    if alg == "rnd":
                        r = replay(sc, random_schedule(sc, derive_rng(s, "rnd")).actions)
                    elif alg == "sa":
                        cfg = replace(sa_config, iterations=int(budget), rng_seed=s,
                                      proposals_per_iteration=int(sa_sweep))
                        r = simulated_annealing(sc, cfg, derive_rng(s, "sa")).best.reward
                    else:
                        cfg = replace(ppo_config, train_episodes=int(budget))
                        res = train_scheduler(sc, cfg, derive_rng(s, "rl"))
                        r = greedy_schedule(res.params, sc).reward
                except Exception as exc:  # recorded; the batch continues
                    errors.append(f"{s}:{type(exc).__name__}")
                    continue
                times.append(time.perf_counter() - t0)
                rewards.append(float(r))
            rows.append({
                "scenario": label, "n": sc.n, "T": sc.T, "algorithm": alg, "budget": int(budget),
                "mean_reward": float(np.mean(rewards)) if rewards else None,
                "std_reward": _std(rewards) if rewards else None,
                "mean_time_s": float(np.mean(times)) if times else None,
                "runs": len(rewards), "errors": ";".join(errors),
                "seeds": ";".join(map(str, seeds)),
            })
    meta = {"seeds": seeds, "ppo_config": asdict(ppo_config), "sa_config": asdict(sa_config),
            "sa_sweep": int(sa_sweep)}
    return Report("resources_tradeoff", rows, meta)


def run_resources_flex(scenario: ResourceScenario, policy: PolicyParams, sa_schedule,
                       failure_proportions=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5), seeds=range(20)) -> Report:
    """Delete a seeded fraction of access windows and re-score each method.

    RL re-plans greedily on the perturbed timeline; the SA schedule is
    replayed unchanged, so tasks whose window vanished score -P_invAct; RND
    is redrawn on the perturbed timeline.
    """
    sa_actions = sa_schedule.actions if isinstance(sa_schedule, Schedule) else np.asarray(sa_schedule)
    props = sorted(float(p) for p in failure_proportions)
    seeds = [int(s) for s in seeds]
    per = {(p, a): [] for p in props for a in ("rl", "sa", "rnd")}
    for s in seeds:
        for p in props:
            # same permutation for every p given the seed, so failures are nested
            perturbed = drop_access_windows(scenario, p, derive_rng(s, "windows"))
            per[(p, "rl")].append(greedy_schedule(policy, perturbed).reward)
            per[(p, "sa")].append(replay(perturbed, sa_actions))
            per[(p, "rnd")].append(replay(perturbed, random_schedule(perturbed, derive_rng(s, "rnd", p)).actions))
    rows = []
    for p in props:
        for alg in ("rl", "sa", "rnd"):
            vals = per[(p, alg)]
            rows.append({"failure_proportion": p, "algorithm": alg, "mean_reward": float(np.mean(vals)),
                         "std_reward": _std(vals), "runs": len(vals), "seeds": ";".join(map(str, seeds))})
    return Report("resources_flex", rows, {"seeds": seeds, "failure_proportions": props,
                                           "sa_nominal_reward": replay(scenario, sa_actions)})


# --------------------------------------------------------------------------
# output


def emit_report(report: Report, path, formats=("csv", "json")) -> list[Path]:
    """Write ``<path>.csv`` (one row per measurement) and/or ``<path>.json``."""
    if isinstance(formats, str):
        formats = [f.strip() for f in formats.split(",") if f.strip()]
    stem = Path(path)
    if stem.suffix in (".csv", ".json"):
        stem = stem.with_suffix("")
    written = []
    for fmt in formats:
        if fmt == "csv":
            out = stem.with_suffix(".csv")
            cols = []
            for r in report.rows:
                cols += [k for k in r if k not in cols]
            with out.open("w", newline="", encoding="utf-8") as fh:
                w = csv.DictWriter(fh, fieldnames=["schema_version"] + cols, restval="")
                w.writeheader()
                for r in report.rows:
                    w.writerow({"schema_version": REPORT_SCHEMA_VERSION,
                                **{k: ("" if v is None else v) for k, v in r.items()}})
        elif fmt == "json":
            out = stem.with_suffix(".json")
            out.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(out)
    return written


def load_report(path) -> Report:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    extra = {k: v for k, v in d.items() if k not in ("schema_version", "kind", "meta", "rows")}
    return Report(d["kind"], d["rows"], d["meta"], extra)

