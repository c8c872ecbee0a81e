"""Compare the compiled and pure-Python Glauber kernels.

Both backends are fed the same proposal stream from the same start, so the
final states must agree; the script checks that before reporting timings.

Usage::

    python3 benchmarks/bench_kernels.py [--steps 200000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from tiltlab import kernels, sampler
from tiltlab.ensemble import make_config

CASES = {
    "1 curve, N=1024": make_config(1, (0, 1024), 1024, 1.0, 2.0, [0], [0], floor=0.0),
    "4 curves, N=512": make_config(4, (0, 512), 512, 1.0, 4.0, [3, 2, 1, 0], [3, 2, 1, 0], floor=0.0),
}


def time_backend(name: str, config, steps: int, repeat: int):
    kern = kernels.get_backend(name)
    chain = sampler.new_chain(config, 0)
    prep = sampler._prepare(config)
    codes, us = chain.stream.draw(steps, sampler._n_codes(config))
    out = np.zeros((0, config.n, chain.state.heights.shape[1]), dtype=np.int32)
    best, final = np.inf, None
    for _ in range(repeat):
        H = chain.state.heights.copy()
        t0 = time.perf_counter()
        kern.glauber_steps(H, prep.floor, prep.ceil, prep.logp, prep.min_off, prep.coef,
                           codes, us, prep.interior, 0, out)
        best = min(best, time.perf_counter() - t0)
        final = H
    return best, final


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'case':<18} {'python (s)':>11} {'cython (s)':>11} {'speedup':>9} {'Msteps/s':>9}")
    for label, cfg in CASES.items():
        t_py, h_py = time_backend("python", cfg, args.steps, args.repeat)
        t_cy, h_cy = time_backend("cython", cfg, args.steps, args.repeat)
        if not np.array_equal(h_py, h_cy):
            raise SystemExit(f"{label}: backends disagree")
        print(f"{label:<18} {t_py:11.3f} {t_cy:11.4f} {t_py / t_cy:9.0f} {args.steps / t_cy / 1e6:9.1f}")


if __name__ == "__main__":
    main()
