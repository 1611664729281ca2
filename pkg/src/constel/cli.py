"""``constel <verb> <usecase>`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

import numpy as np

from constel import harness
from constel.baselines import SaConfig, random_schedule, simulated_annealing
from constel.errors import ConstelError
from constel.ppo import PolicyParams, PpoConfig, greedy_schedule, train_scheduler, write_curve_csv
from constel.resources_env import Schedule, replay
from constel.routing import MQ, PLAIN, LearnerConfig, QTable, dijkstra, evaluate_route, extract_route, train
from constel.scenario import (
    ResourceScenario,
    RoutingScenario,
    load_scenario,
    save_scenario,
    summary,
    synthesize_resource_scenario,
    synthesize_routing_scenario,
)


class UsageError(Exception):
    pass


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def _pair(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected 'min,max', got {text!r}")
    return tuple(vals)


def _default_seed() -> int:
    return int(os.environ.get("CONSTEL_SEED", "0"))


def _seed_list(args) -> list[int]:
    if getattr(args, "seed_list", None):
        return _ints(args.seed_list)
    return list(range(args.seed, args.seed + args.seeds))


# --------------------------------------------------------------------------
# output placement


def _run_dir(args, verb: str) -> Path:
    root = Path(args.out_dir)
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run = root / f"{stamp}-{verb}"
    run.mkdir(parents=True, exist_ok=False)
    latest = root / "latest"
    if latest.is_symlink() or latest.exists():
        latest.unlink()
    latest.symlink_to(run.name)
    return run


def _target(args, verb: str, default_name: str) -> Path:
    if getattr(args, "output", None):
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        return out
    return _run_dir(args, verb) / default_name


def _load_kind(path, cls, what):
    if path is None:
        raise UsageError(f"a {what} scenario is required (-s/--scenario)")
    p = Path(path)
    if not p.exists():
        raise ConstelError(f"missing artifact: scenario file {p}")
    sc = load_scenario(p)
    if not isinstance(sc, cls):
        raise ConstelError(f"{p} is not a {what} scenario")
    return sc


def _need_file(path, what) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise ConstelError(f"missing artifact: {what} {p}")
    return p


def _scenario(args, cls, what):
    gen = getattr(args, "generate", None)
    if gen is not None:
        if args.scenario is not None:
            raise UsageError("config gives both a scenario path and generation parameters")
        if cls is RoutingScenario:
            return synthesize_routing_scenario(**gen)
        return synthesize_resource_scenario(**gen)
    return _load_kind(args.scenario, cls, what)


# --------------------------------------------------------------------------
# commands


def cmd_generate(args):
    if args.usecase == "routing":
        sc = synthesize_routing_scenario(args.planes, args.sats, args.latency, args.queue,
                                         args.src, args.dst, args.seed)
    else:
        sc = synthesize_resource_scenario(args.sats, args.slots, args.densities, seed=args.seed,
                                          tau_range=args.tau, n_at=args.targets, n_gs=args.stations,
                                          init_bat=args.init_bat, init_mem=args.init_mem)
    out = save_scenario(sc, _target(args, "generate", f"{args.usecase}.json"))
    print(out)
    print(json.dumps(summary(sc), sort_keys=True))
    return 0


def cmd_train(args):
    algo = args.algorithm
    if algo == "qrouting":
        sc = _scenario(args, RoutingScenario, "routing")
        cfg = LearnerConfig(args.episodes or 25_000, args.alpha, args.gamma, args.epsilon, args.decay)
        qt = train(sc, cfg, np.random.default_rng(args.seed))
        out = qt.save(_target(args, "train", "qtable.json"))
        if args.trace:
            _write_trace(qt, Path(args.trace))
        res = extract_route(qt, sc)
        print(out)
        print(json.dumps({"route": res.route, "delivered": res.delivered,
                          "expected_latency_ms": res.total_latency}))
        return 0
    sc = _scenario(args, ResourceScenario, "resources")
    if algo == "ppo":
        cfg = PpoConfig(train_episodes=args.episodes or 20)
        res = train_scheduler(sc, cfg, np.random.default_rng(args.seed))
        out = res.params.save(_target(args, "train", "policy.json"), cfg)
        curve = write_curve_csv(res.curve, out.with_name(out.stem + "_curve.csv"))
        sched = greedy_schedule(res.params, sc)
        print(out)
        print(curve)
        print(json.dumps({"greedy_reward": sched.reward}))
        return 0
    if algo == "sa":
        cfg = SaConfig(iterations=args.iterations, rng_seed=args.seed, proposals_per_iteration=args.sweep)
        res = simulated_annealing(sc, cfg)
        out = res.best.save(_target(args, "train", "sa_schedule.json"))
        trace = out.with_name(out.stem + "_trace.csv")
        with trace.open("w", encoding="utf-8") as fh:
            fh.write("iteration,current_reward,best_reward,temperature\n")
            for it, cur, best, temp in res.trace:
                fh.write(f"{it},{cur!r},{best!r},{temp!r}\n")
        print(out)
        print(json.dumps({"best_reward": res.best.reward}))
        return 0
    sched = random_schedule(sc, np.random.default_rng(args.seed))
    out = sched.save(_target(args, "train", "rnd_schedule.json"))
    print(out)
    print(json.dumps({"reward": replay(sc, sched.actions)}))
    return 0


def _write_trace(qt: QTable, path: Path):
    with path.open("w", encoding="utf-8") as fh:
        fh.write("episode,steps,total_reward,delivered\n")
        for i, (steps, total, delivered) in enumerate(qt.trace):
            fh.write(f"{i},{int(steps)},{float(total)!r},{bool(delivered)}\n")


def _pairs(text, sc: RoutingScenario):
    if not text:
        return [(sc.src, sc.dst)]
    out = []
    for item in text.split(","):
        a, b = item.split(":")
        out.append((int(a), int(b)))
    return out


def _emit(report, args, verb, name):
    target = _target(args, verb, name)
    for p in harness.emit_report(report, target, args.formats):
        print(p)


def cmd_evaluate(args):
    seeds = _seed_list(args)
    if args.usecase == "routing":
        sc = _scenario(args, RoutingScenario, "routing")
        scenarios = [sc.with_endpoints(a, b) for a, b in _pairs(args.pairs, sc)]
        if args.qtable:
            qt = QTable.load(_need_file(args.qtable, "Q-table"))
            if qt.n != sc.n:
                raise ConstelError(f"Q-table has {qt.n} nodes but the scenario has {sc.n}")
            report = _evaluate_table(scenarios, qt, args.replications, seeds)
        else:
            configs = [LearnerConfig(e, a, args.gamma, args.epsilon, args.decay)
                       for e in _ints(args.episodes) for a in _floats(args.alpha)]
            report = harness.run_routing_bench(scenarios, configs, args.replications, seeds, args.jobs)
        _emit(report, args, "evaluate", "routing_bench")
        return 0
    sc = _scenario(args, ResourceScenario, "resources")
    rows = []
    if args.policy:
        params = PolicyParams.load(_need_file(args.policy, "policy checkpoint"))
        if params.n_sats != sc.n:
            raise ConstelError(f"policy was trained for {params.n_sats} satellites, scenario has {sc.n}")
        rows.append({"algorithm": "rl", "reward": greedy_schedule(params, sc).reward})
    if args.schedule:
        sched = Schedule.load(_need_file(args.schedule, "schedule"))
        if sched.actions.shape != (sc.n, sc.T):
            raise ConstelError("schedule shape does not match the scenario")
        rows.append({"algorithm": "sa", "reward": replay(sc, sched.actions)})
    for s in seeds:
        rows.append({"algorithm": "rnd", "seed": s,
                     "reward": replay(sc, random_schedule(sc, harness.derive_rng(s, "rnd")).actions)})
    _emit(harness.Report("resources_evaluate", rows, {"seeds": seeds}), args, "evaluate", "resources_eval")
    return 0


def _evaluate_table(scenarios, qt, replications, seeds):
    rows = []
    for si, sc in enumerate(scenarios):
        routes = {"qrouting": extract_route(qt, sc), "dijkstra": dijkstra(sc, PLAIN), "dijkstra_mq": dijkstra(sc, MQ)}
        for alg, r in routes.items():
            route = r.route if alg == "qrouting" else r
            delivered = r.delivered if alg == "qrouting" else True
            smp = np.concatenate([evaluate_route(sc, route, harness.derive_rng(s, "eval", si, alg), replications).samples
                                  for s in seeds]) if delivered else np.zeros(0)
            rows.append({"scenario": si, "src": sc.src, "dst": sc.dst, "algorithm": alg,
                         **harness._stats(smp), "hops": len(route) - 1, "delivered": delivered,
                         "route": "-".join(map(str, route))})
    return harness.Report("routing_evaluate", rows, {"seeds": seeds, "replications": replications})


def cmd_flex(args):
    seeds = _seed_list(args)
    if args.usecase == "routing":
        sc = _scenario(args, RoutingScenario, "routing")
        qt = QTable.load(_need_file(args.qtable, "Q-table (-q)"))
        if qt.n != sc.n:
            raise ConstelError(f"Q-table has {qt.n} nodes but the scenario has {sc.n}")
        report = harness.run_routing_flex(sc, qt, _ints(args.failures), seeds, args.replications)
        _emit(report, args, "flex", "routing_flex")
        return 0
    sc = _scenario(args, ResourceScenario, "resources")
    params = PolicyParams.load(_need_file(args.policy, "policy checkpoint (-p)"))
    sched = Schedule.load(_need_file(args.schedule, "SA schedule (--schedule)"))
    if params.n_sats != sc.n or sched.actions.shape != (sc.n, sc.T):
        raise ConstelError("policy/schedule do not match the scenario dimensions")
    report = harness.run_resources_flex(sc, params, sched, _floats(args.proportions), seeds)
    _emit(report, args, "flex", "resources_flex")
    return 0


def cmd_tradeoff(args):
    seeds = _seed_list(args)
    if args.scenario or getattr(args, "generate", None):
        scenarios = [_scenario(args, ResourceScenario, "resources")]
    else:
        scenarios = []
        for item in args.sizes.split(","):
            n, T = (int(x) for x in item.lower().split("x"))
            scenarios.append(synthesize_resource_scenario(n, T, seed=args.scenario_seed))
    if args.jobs != 1:
        print("tradeoff runs are timed and always execute with --jobs 1", file=sys.stderr)
    report = harness.run_resources_tradeoff(scenarios, _ints(args.rl_episodes), _ints(args.sa_iters),
                                            seeds, sa_sweep=args.sweep)
    _emit(report, args, "tradeoff", "tradeoff")
    return 0


# --------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--seed", type=int, default=_default_seed(), help="base seed (env CONSTEL_SEED)")
    p.add_argument("-o", "--output", help="output file or report stem; default is a timestamped run directory")
    p.add_argument("--out-dir", default="runs", help="root for timestamped run directories")
    p.add_argument("--config", help="ExperimentConfig JSON whose keys override flags")


def _seeds(p):
    p.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds from --seed")
    p.add_argument("--seed-list", help="explicit comma-separated seeds (overrides --seeds)")
    p.add_argument("--formats", default="csv,json")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="constel", description=__doc__)
    verbs = ap.add_subparsers(dest="verb", required=True)

    gen = verbs.add_parser("generate", help="write a synthetic scenario")
    gen_uc = gen.add_subparsers(dest="usecase", required=True)
    g = gen_uc.add_parser("routing")
    _common(g)
    g.add_argument("--planes", type=int, required=True)
    g.add_argument("--sats", type=int, required=True, help="satellites per plane")
    g.add_argument("--latency", type=_pair, default=(1.0, 10.0), help="propagation range ms 'min,max'")
    g.add_argument("--queue", type=_pair, default=(0.0, 5.0), help="queue-bound envelope ms 'min,max'")
    g.add_argument("--src", type=int, default=0)
    g.add_argument("--dst", type=int, default=None, help="default: last node")
    g = gen_uc.add_parser("resources")
    _common(g)
    g.add_argument("--sats", type=int, required=True)
    g.add_argument("--slots", type=int, required=True)
    g.add_argument("--densities", type=_pair, default=(0.3, 0.2), help="AT,GS access densities")
    g.add_argument("--tau", type=_pair, default=(30.0, 120.0), help="slot duration range s")
    g.add_argument("--targets", type=int, default=None)
    g.add_argument("--stations", type=int, default=None)
    g.add_argument("--init-bat", type=float, default=0.8)
    g.add_argument("--init-mem", type=float, default=0.2)
    gen.set_defaults(func=cmd_generate)

    tr = verbs.add_parser("train", help="train a model or run a schedule optimiser")
    tr.add_argument("algorithm", choices=("qrouting", "ppo", "sa", "rnd"))
    _common(tr)
    tr.add_argument("-s", "--scenario")
    tr.add_argument("--episodes", type=int, default=None, help="Q-routing episodes (25000) or PPO episodes (20)")
    tr.add_argument("--alpha", type=float, default=0.05)
    tr.add_argument("--gamma", type=float, default=0.9)
    tr.add_argument("--epsilon", type=float, default=0.3)
    tr.add_argument("--decay", type=float, default=0.9995)
    tr.add_argument("--trace", help="Q-routing per-episode trace CSV")
    tr.add_argument("--iterations", type=int, default=120, help="SA iterations")
    tr.add_argument("--sweep", type=int, default=1, help="SA proposals per iteration")
    tr.set_defaults(func=cmd_train)

    ev = verbs.add_parser("evaluate", help="compare algorithms on a scenario")
    ev.add_argument("usecase", choices=("routing", "resources"))
    _common(ev)
    _seeds(ev)
    ev.add_argument("-s", "--scenario")
    ev.add_argument("-q", "--qtable", help="evaluate this table instead of training")
    ev.add_argument("--pairs", help="src:dst pairs, e.g. 0:11,1:10 (default: scenario endpoints)")
    ev.add_argument("--episodes", default="15000,20000,25000")
    ev.add_argument("--alpha", default="0.05")
    ev.add_argument("--gamma", type=float, default=0.9)
    ev.add_argument("--epsilon", type=float, default=0.3)
    ev.add_argument("--decay", type=float, default=0.9995)
    ev.add_argument("--replications", type=int, default=1000)
    ev.add_argument("-p", "--policy")
    ev.add_argument("--schedule")
    ev.set_defaults(func=cmd_evaluate)

    fx = verbs.add_parser("flex", help="failure-injection analysis")
    fx.add_argument("usecase", choices=("routing", "resources"))
    _common(fx)
    _seeds(fx)
    fx.add_argument("-s", "--scenario")
    fx.add_argument("-q", "--qtable")
    fx.add_argument("--failures", default="0,1,2,3", help="unresponsive-node counts")
    fx.add_argument("--replications", type=int, default=100)
    fx.add_argument("-p", "--policy")
    fx.add_argument("--schedule")
    fx.add_argument("--proportions", default="0,0.1,0.2,0.3,0.4,0.5")
    fx.set_defaults(func=cmd_flex)

    to = verbs.add_parser("tradeoff", help="execution time vs reward grid")
    _common(to)
    _seeds(to)
    to.add_argument("-s", "--scenario")
    to.add_argument("--sizes", default="10x50", help="generated sizes NxT when no scenario is given")
    to.add_argument("--scenario-seed", type=int, default=0)
    to.add_argument("--sa-iters", default="30,60,90,120")
    to.add_argument("--rl-episodes", default="5,10,15,20")
    to.add_argument("--sweep", type=int, default=1, help="SA proposals per iteration")
    to.set_defaults(func=cmd_tradeoff)
    return ap


def _apply_config(args, parser):
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        raise ConstelError(f"missing artifact: config file {path}")
    cfg = json.loads(path.read_text(encoding="utf-8"))
    cfg.pop("kind", None)
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest == "generate":
            args.generate = value
            continue
        if not hasattr(args, dest):
            parser.error(f"unknown config key {key!r}")
        if dest in ("seed_list", "episodes", "alpha", "failures", "proportions", "sa_iters", "rl_episodes") \
                and isinstance(value, list):
            value = ",".join(str(v) for v in value)
        setattr(args, dest, value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, parser)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"constel: error: {exc}", file=sys.stderr)
        return 2
    except (ConstelError, OSError, ValueError, KeyError) as exc:
        print(f"constel: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
