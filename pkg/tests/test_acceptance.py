"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantities and its wall-clock time, then asserts the outcome (including the
runtime budget).
"""
import csv
import json
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from constel.baselines import SaConfig, simulated_annealing
from constel.cli import main as cli
from constel.harness import derive_rng, run_resources_flex, run_resources_tradeoff, run_routing_flex
from constel.ppo import PpoConfig, greedy_schedule, loss_and_grads, train_scheduler, LAYERS
from constel.resources_env import ResourceEnv, SatAction, replay
from constel.routing import MQ, PLAIN, LearnerConfig, dijkstra, extract_route, q_update, train
from constel.scenario import RateConfig, ResourceScenario, RoutingScenario, synthesize_resource_scenario, \
    synthesize_routing_scenario
from test_ppo import tiny_batch
from oracles import brute_force_shortest, exhaustive_schedule_optimum, path_weight, random_connected_scenario

pytestmark = pytest.mark.slow

NOP, Q, D, QD = SatAction


@pytest.fixture
def report(capsys):
    t0 = time.perf_counter()

    def _report(name, ok, detail, budget_s):
        elapsed = time.perf_counter() - t0
        ok = bool(ok) and elapsed < budget_s
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({elapsed:.1f}s of {budget_s:.0f}s)")
        assert ok, f"{name}: {detail} in {elapsed:.1f}s"

    return _report


def test_q_update_arithmetic(report):
    sc = RoutingScenario(2, [(0, 1), (1, 0)], [1.0, 1.0], [(0, 0), (0, 0)], 0, 1)
    q = np.zeros((2, 2))
    first = q_update(q, 0, 1, -12.0, 0, 0.05, 0.9, sc)
    second = q_update(q, 0, 1, -12.0, 0, 0.05, 0.9, sc)
    ok = abs(first + 0.6) <= 4 * np.spacing(0.6) and abs(second + 1.197) <= 4 * np.spacing(1.197)
    report("q_update hand values", ok, f"first={first!r} second={second!r}", 1)


def test_shortest_path_oracle(report):
    mismatches = 0
    for seed in range(200):
        sc = random_connected_scenario(np.random.default_rng(seed), n_max=12)
        for mode in (PLAIN, MQ):
            best_w, _ = brute_force_shortest(sc, mode)
            mismatches += path_weight(sc, dijkstra(sc, mode), mode) != best_w
    report("dijkstra vs brute force on 200 graphs", mismatches == 0, f"mismatches={mismatches}", 30)


def test_qrouting_convergence(report):
    cfg = LearnerConfig(episodes=25_000, alpha=0.05, gamma=0.9, epsilon0=0.3)
    # per-seed gaps are heavy-tailed (most seeds land exactly on the optimum),
    # so the batch is sized for a usable standard error on the mean
    ratios = []
    for seed in range(50):
        sc = synthesize_routing_scenario(3, 4, (1, 10), (0, 5), 0, 11, seed=seed)
        res = extract_route(train(sc, cfg, derive_rng(seed, "train")), sc)
        # evaluation with queue noise disabled: mean queueing delay on every hop
        opt = path_weight(sc, dijkstra(sc, MQ), MQ)
        ratios.append(res.total_latency / opt if res.delivered else np.inf)
    gaps = np.asarray(ratios) - 1.0
    gap = float(gaps.mean())
    report("Q-routing within 5% of Dijkstra-MQ", gap <= 0.05,
           f"mean gap={gap:.2%} (se {gaps.std(ddof=1) / np.sqrt(gaps.size):.2%}) over {gaps.size} seeds, "
           f"optimal on {np.mean(gaps < 1e-12):.0%}, worst={gaps.max():.2%}", 120)


def test_routing_flexibility(report):
    cfg = LearnerConfig()
    failures = []
    for seed in range(10):
        sc = synthesize_routing_scenario(3, 4, (1, 10), (0, 5), 0, 11, seed=seed)
        qt = train(sc, cfg, derive_rng(seed, "train"))
        rows = {r["algorithm"]: r for r in run_routing_flex(sc, qt, [1], seeds=range(10), replications=100).rows}
        for alg in ("dijkstra", "dijkstra_mq"):
            if rows[alg]["delivery_rate"] != 0.0 or rows[alg]["mean_reward"] != 0.0:
                failures.append(f"{seed}:{alg}")
        q = rows["qrouting"]
        if q["delivery_rate"] != 1.0 or q["mean_hops"] < q["nominal_hops"]:
            failures.append(f"{seed}:qrouting")
    report("one unresponsive node: Dijkstra fails, Q-routing reroutes", not failures,
           f"10 scenarios x 10 failure seeds, violations={failures}", 120)


def _one_slot(bat, mem, at, gs, sun, n=1):
    return ResourceScenario(n, 1, [60.0], [[at]] * n, [[gs]] * n, [[sun]] * n, RateConfig(), bat, mem, 1, 1)


def test_resource_hand_traces(report):
    sc = _one_slot(0.5, 0.5, 0, 1, 1)
    env = ResourceEnv(sc)
    env.reset()
    out = env.step([D])
    bat, mem = out.next_state.sats[0].bat, out.next_state.sats[0].mem
    checks = {"battery": abs(bat - 0.4934) < 1e-15, "memory": abs(mem - 0.4706) < 1e-15}
    qd = ResourceEnv(_one_slot(0.8, 0.2, 1, 1, 1))
    qd.reset()
    checks["reward QD"] = qd.step([QD]).total_reward == 180.0
    dep = ResourceEnv(_one_slot(0.0026, 0.5, 0, 1, 0))
    dep.reset()
    o = dep.step([D])
    checks["reward depleted"] = o.total_reward == 20.0 and o.violations[0].battery_depleted
    two = ResourceScenario(3, 1, [60.0], [[0], [0], [0]], [[1], [0], [1]], [[1], [1], [1]],
                           RateConfig(), 0.5, 0.5, 1, 1)
    c = ResourceEnv(two)
    c.reset()
    o = c.step([D, NOP, D])
    checks["contention"] = (o.per_sat_reward == [120.0, 0.0, -50.0] and o.total_reward == 70.0
                            and replay(two, np.array([[D], [NOP], [D]])) == 70.0)
    report("transition/reward hand traces", all(checks.values()),
           ", ".join(f"{k}={'ok' if v else 'MISMATCH'}" for k, v in checks.items()), 1)


def test_micro_scale_optimality(report):
    cfg = PpoConfig(train_episodes=300, rollout_episodes=4, minibatch_size=32)
    lines, ok = [], True
    for seed in range(5):
        sc = synthesize_resource_scenario(1, 8, (0.5, 0.5), seed=seed)
        opt, _ = exhaustive_schedule_optimum(sc)
        sa = simulated_annealing(sc, SaConfig(iterations=2000, rng_seed=seed)).best.reward
        rl = greedy_schedule(train_scheduler(sc, cfg, derive_rng(seed, "rl")).params, sc).reward
        ok &= sa >= 0.9 * opt and rl >= 0.9 * opt
        lines.append(f"s{seed}: opt={opt:.0f} sa={sa / opt:.0%} rl={rl / opt:.0%}")
    report("SA and PPO reach 90% of exhaustive optimum (1 sat, 8 slots)", ok, "; ".join(lines), 600)


def test_ppo_gradient_check(report):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(3):
        params, batch = tiny_batch(rng, n=1, B=3, hidden=4)
        cfg = PpoConfig()
        _, grads, _ = loss_and_grads(params, batch, cfg)
        for k in LAYERS:
            arr = params.arrays[k]
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + 1e-5
                lp = loss_and_grads(params, batch, cfg)[0]
                arr[idx] = orig - 1e-5
                lm = loss_and_grads(params, batch, cfg)[0]
                arr[idx] = orig
                num = (lp - lm) / 2e-5
                worst = max(worst, abs(grads[k][idx] - num) / max(abs(grads[k][idx]), abs(num), 1e-6))
    report("PPO analytic vs finite-difference gradients", worst <= 1e-4, f"max rel err={worst:.2e}", 30)


def test_fig9_ordering(report):
    sc = synthesize_resource_scenario(10, 50, seed=1)
    rep = run_resources_tradeoff([sc], rl_episodes=(20,), sa_iterations=(120,), seeds=range(20), sa_sweep=sc.n)
    r = {row["algorithm"]: row for row in rep.rows}
    sd = {k: r[k]["std_reward"] for k in ("sa", "rl", "rnd")}
    ok = sd["sa"] < sd["rl"] < sd["rnd"] and r["sa"]["mean_reward"] > r["rnd"]["mean_reward"]
    detail = ", ".join(f"{k} {r[k]['mean_reward']:.0f}±{sd[k]:.0f}" for k in ("rnd", "sa", "rl"))
    report("std SA < RL < RND and mean SA > RND (10x50, 20 seeds)", ok, detail, 900)


def test_fig10_trend(report):
    sc = synthesize_resource_scenario(4, 20, seed=1)
    policy = train_scheduler(sc, PpoConfig(train_episodes=20), derive_rng(0, "rl")).params
    sa = simulated_annealing(sc, SaConfig(iterations=120, proposals_per_iteration=sc.n), derive_rng(0, "sa")).best
    props = [round(0.1 * k, 1) for k in range(11)]
    rep = run_resources_flex(sc, policy, sa, props, seeds=range(20))
    mean = {(row["algorithm"], row["failure_proportion"]): row["mean_reward"] for row in rep.rows}
    rl_wins = all(mean[("rl", p)] > mean[("sa", p)] for p in props if p >= 0.3)
    rho = {a: spearmanr(props, [mean[(a, p)] for p in props])[0] for a in ("rl", "sa", "rnd")}
    ok = rl_wins and all(v <= 0 for v in rho.values())
    report("RL > replayed SA for p >= 0.3, rewards non-increasing in p (4x20, 20 seeds)", ok,
           f"rl_wins={rl_wins}, spearman=" + ", ".join(f"{a}:{v:.2f}" for a, v in rho.items()), 900)


def _strip_timing(path):
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            return [{k: v for k, v in row.items() if k != "mean_time_s"} for row in csv.DictReader(fh)]
    d = json.loads(path.read_text())
    for row in d["rows"]:
        row.pop("mean_time_s", None)
    return d


def test_determinism(report, tmp_path):
    runs = []
    for k in ("a", "b"):
        d = tmp_path / k
        d.mkdir()
        s, r = str(d / "s.json"), str(d / "r.json")
        steps = [
            ["generate", "routing", "--planes", "3", "--sats", "4", "--seed", "3", "-o", s],
            ["generate", "resources", "--sats", "4", "--slots", "20", "--seed", "3", "-o", r],
            ["train", "qrouting", "-s", s, "--seed", "5", "-o", str(d / "q.json"), "--trace", str(d / "qt.csv")],
            ["train", "ppo", "-s", r, "--episodes", "5", "--seed", "5", "-o", str(d / "p.json")],
            ["train", "sa", "-s", r, "--seed", "5", "-o", str(d / "sa.json")],
            ["train", "rnd", "-s", r, "--seed", "5", "-o", str(d / "rnd.json")],
            ["evaluate", "routing", "-s", s, "-q", str(d / "q.json"), "--seeds", "3", "-o", str(d / "ev")],
            ["evaluate", "resources", "-s", r, "-p", str(d / "p.json"), "--schedule", str(d / "sa.json"),
             "--seeds", "3", "-o", str(d / "evr")],
            ["flex", "routing", "-s", s, "-q", str(d / "q.json"), "--failures", "0,1,2", "-o", str(d / "fr")],
            ["flex", "resources", "-s", r, "-p", str(d / "p.json"), "--schedule", str(d / "sa.json"),
             "--seeds", "5", "-o", str(d / "fx")],
            ["tradeoff", "-s", r, "--sa-iters", "10,20", "--rl-episodes", "2", "--seeds", "2", "-o", str(d / "to")],
        ]
        codes = [cli(x) for x in steps]
        runs.append((d, codes))
    (da, ca), (db, cb) = runs
    names = sorted(p.name for p in da.iterdir())
    differ = []
    for name in names:
        if name.startswith("to."):
            same = _strip_timing(da / name) == _strip_timing(db / name)
        else:
            same = (da / name).read_bytes() == (db / name).read_bytes()
        if not same:
            differ.append(name)
    ok = not differ and set(ca) == {0} and set(cb) == {0}
    report("byte-identical artifacts across two seeded runs", ok,
           f"{len(names)} artifacts compared, differing={differ}", 300)
