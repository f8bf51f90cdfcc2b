"""Benchmark the hot kernels: numba @njit vs the pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py [--batch 256] [--repeats 100]

Times one mixture-experiment training iteration broken into its kernel
calls, plus KDE evaluation, on both backends.
"""

import argparse
import time

import numpy as np

from ganreg import kernels, networks


def timeit(fn, repeats):
    fn()  # warm-up / jit compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=100)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    spec_g = networks.mixture_generator_spec()
    spec_d = networks.mixture_discriminator_spec()
    pg = networks.init_params(spec_g, rng)
    pd = networks.init_params(spec_d, rng)
    gsw, gsb, _ = spec_g.layout()
    dsw, dsb, _ = spec_d.layout()
    gw, ga = spec_g.widths_array(), spec_g.acts_array()
    dw, da = spec_d.widths_array(), spec_d.acts_array()

    m = args.batch
    z = rng.standard_normal((m, 2))
    xr = rng.standard_normal((m, 3))
    xf = networks.generator_forward(pg, z)
    refs = rng.standard_normal((10_000, 3))
    queries = rng.standard_normal((1_000, 3))
    h = np.array([0.1, 0.1, 0.1])

    cases = {
        "gen forward": lambda: kernels.mlp_forward(pg.flat, gsw, gsb, gw, ga, z),
        "disc grad (gamma=0.1)": lambda: kernels.disc_penalized_grad(
            pd.flat, dsw, dsb, dw, da, xr, xf, 0.1, False),
        "disc grad (gamma=0)": lambda: kernels.disc_penalized_grad(
            pd.flat, dsw, dsb, dw, da, xr, xf, 0.0, False),
        "gen grad": lambda: kernels.gen_loss_grad(
            pg.flat, gsw, gsb, gw, ga, pd.flat, dsw, dsb, dw, da, z, True),
        "kde eval (1k x 10k)": lambda: kernels.kde_eval(queries, refs, h),
    }

    pure = [b for b in kernels.available_backends() if b != "auto"]
    results = {}
    for backend in pure:
        kernels.set_backend(backend)
        results[backend] = {name: timeit(fn, args.repeats)
                            for name, fn in cases.items()}
    kernels.set_backend(kernels._default_backend())

    names = list(cases)
    width = max(len(n) for n in names)
    header = f"{'kernel':<{width}}" + "".join(
        f"  {b:>12}" for b in results) + "  speedup"
    print(header)
    print("-" * len(header))
    for name in names:
        row = f"{name:<{width}}"
        vals = [results[b][name] for b in results]
        for v in vals:
            row += f"  {v:>10.3f}ms"
        if len(vals) == 2 and vals[0] > 0:
            row += f"  {vals[1] / vals[0]:>6.2f}x"
        print(row)
    reg = sum(results[b][k] for b in results for k in
              ("gen forward", "disc grad (gamma=0.1)", "gen grad")
              if b == kernels.get_backend())
    print(f"\nactive backend: {kernels.get_backend()}  "
          f"(~{reg:.1f} ms per regularized training iteration)")


if __name__ == "__main__":
    main()
