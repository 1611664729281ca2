"""Time the compiled kernels against their pure-Python and numpy counterparts.

    python3 benchmarks/bench_kernels.py --sats 10 --slots 50 --episodes 2000

Each path is checked for identical output before it is timed.
"""
import argparse
import json
import timeit

import numpy as np

from constel import USE_NUMBA
from constel.kernels import qrouting_episodes, replay_schedule_kernel, replay_schedule_numpy
from constel.scenario import synthesize_resource_scenario, synthesize_routing_scenario


def _best(fn, number, repeat=5):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_replay(n, T, seed):
    sc = synthesize_resource_scenario(n, T, seed=seed)
    actions = np.random.default_rng(seed).integers(0, 4, (n, T))
    args = (actions, sc.tau, sc.at_access, sc.gs_access, sc.sun, sc.init_bat, sc.init_mem,
            sc.rates.as_array(), int(sc.n_at), int(sc.n_gs))
    paths = {"numpy": replay_schedule_numpy, "python": replay_schedule_kernel.py_func}
    if USE_NUMBA:
        paths["numba"] = replay_schedule_kernel
    ref = replay_schedule_numpy(*args)
    out = {}
    for name, fn in paths.items():
        assert fn(*args) == ref, name
        number = 2000 if name == "numba" else 20
        out[name] = _best(lambda: fn(*args), number)
    return out


def bench_qrouting(planes, sats, episodes, seed):
    sc = synthesize_routing_scenario(planes, sats, seed=seed)
    ptr, idx = sc.csr
    lo = np.ascontiguousarray(sc.queue_bounds[:, 0])
    hi = np.ascontiguousarray(sc.queue_bounds[:, 1])
    u = np.random.default_rng(seed).random(3 * sc.n * episodes)

    def run(fn):
        q = np.zeros((sc.n, sc.n))
        stats = np.zeros((episodes, 3))
        fn(q, ptr, idx, sc.prop_latency, lo, hi, sc.src, sc.dst, 0.3, 0.9995, 0.05, 0.9, 100.0, 100.0,
           u, episodes, stats)
        return q

    paths = {"python": qrouting_episodes.py_func}
    if USE_NUMBA:
        paths["numba"] = qrouting_episodes
    ref = run(qrouting_episodes.py_func)
    out = {}
    for name, fn in paths.items():
        assert np.array_equal(run(fn), ref), name
        out[name] = _best(lambda: run(fn), 20 if name == "numba" else 1, repeat=3)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sats", type=int, default=10)
    ap.add_argument("--slots", type=int, default=50)
    ap.add_argument("--planes", type=int, default=3)
    ap.add_argument("--per-plane", type=int, default=4)
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print machine-readable results")
    args = ap.parse_args()

    results = {
        f"replay {args.sats}x{args.slots}": bench_replay(args.sats, args.slots, args.seed),
        f"qrouting {args.planes}x{args.per_plane} x{args.episodes} ep": bench_qrouting(
            args.planes, args.per_plane, args.episodes, args.seed),
    }
    if args.json:
        print(json.dumps(results, indent=1))
        return
    print(f"numba enabled: {USE_NUMBA}")
    for task, times in results.items():
        base = times["python"]
        cells = ", ".join(f"{k} {v * 1e6:,.1f} us ({base / v:,.0f}x)" for k, v in sorted(times.items()))
        print(f"{task:<32} {cells}")


if __name__ == "__main__":
    main()
