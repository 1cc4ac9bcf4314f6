"""Time the numba kernels against the pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from hepim.cli import benchmark_program, desk_fuzz_case
from hepim.ntt import build_tables, forward_ntt, inverse_ntt
from hepim.presets import load_preset
from hepim.runtime import ActionStream, HarvesterConfig, Phase, energy_walk


def best_of(fn, repeat):
    fn()  # warm-up, includes jit compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    prog, inputs, *_ = desk_fuzz_case(1)
    yield f"grid run, desk svm ({prog.steps} steps)", \
        lambda be: prog.run(prog.fresh_grid(), inputs, validate=False, backend=be)

    params = load_preset("paper")
    tables = build_tables(params.primes[0], params.n)
    batch = np.random.default_rng(0).integers(0, tables.q, (64, params.n))
    yield "ntt roundtrip, 64 x 4096 at 36 bits", \
        lambda be: inverse_ntt(forward_ntt(batch, tables, backend=be), tables, backend=be)

    mnist, _ = benchmark_program("mnist")
    e = np.random.default_rng(1).uniform(1e-10, 5e-9, mnist.words.shape[0])
    stream = ActionStream(Phase.COMPUTE, e, np.full(len(e), 1 / 30.3e6), mnist.schedule)
    h = HarvesterConfig(power=2e-3)
    yield f"energy walk, mnist schedule ({stream.length} actions)", \
        lambda be: energy_walk(stream, h, 0.0, 1e-9, 1e-7, backend=be)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"{'kernel':<48}{'numba s':>10}{'numpy s':>10}{'ratio':>8}")
    for name, fn in cases():
        nb = best_of(lambda: fn("numba"), args.repeat)
        npy = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:<48}{nb:>10.4f}{npy:>10.4f}{npy / nb:>8.1f}")


if __name__ == "__main__":
    main()
