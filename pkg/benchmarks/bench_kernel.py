"""Compare the compiled and pure-Python epoch kernels on Table 3 sized runs.

    python3 benchmarks/bench_kernel.py [--trials 3] [--n 1000] [--L 800]

Both kernels run the same seeded trials; the script checks the metrics agree
and prints the mean wall time per trial and the speed-up.
"""
import argparse
import time

from ciota.simnet import SimConfig, make_topology, run_simulation
from ciota.simnet.kernel import CEpochKernel


def bench(backend, generator, n, L, trials, fanout):
    times, results = [], []
    for seed in range(trials):
        topo = make_topology(generator, n, seed)
        cfg = SimConfig(n, L, seed=seed, fanout=fanout, backend=backend)
        t0 = time.perf_counter()
        results.append(run_simulation(cfg, topo).to_json())
        times.append(time.perf_counter() - t0)
    return sum(times) / len(times), results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--L", type=int, default=800)
    ap.add_argument("--fanout", type=int, default=None)
    ap.add_argument("--generators", nargs="+", default=["complete", "watts_strogatz", "barabasi_albert"])
    args = ap.parse_args()
    if CEpochKernel is None:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation` first")

    print(f"{'generator':<16} {'python s':>10} {'cython s':>10} {'speed-up':>9}  match")
    for gen in args.generators:
        py, py_res = bench("python", gen, args.n, args.L, args.trials, args.fanout)
        cy, cy_res = bench("cython", gen, args.n, args.L, args.trials, args.fanout)
        print(f"{gen:<16} {py:10.3f} {cy:10.3f} {py / cy:8.1f}x  {py_res == cy_res}")


if __name__ == "__main__":
    main()
