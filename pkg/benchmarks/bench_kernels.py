"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--T 2000] [--L 20] [--repeat 5]

Reports the best-of-``repeat`` wall time per kernel and a full sampler run
for each available backend.
"""
import argparse
import contextlib
import time

import numpy as np

from drivestyle import kernels
from drivestyle.sticky import Hyperparameters, fit
from drivestyle.synth import synthesize

KERNELS = ("forward_loglik", "backward_messages", "sample_forward", "crt_counts")


@contextlib.contextmanager
def using(impl):
    saved = {name: getattr(kernels, name) for name in KERNELS}
    try:
        for name in KERNELS:
            setattr(kernels, name, getattr(impl, name))
        yield
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--T", type=int, default=2000, help="frames")
    p.add_argument("--L", type=int, default=20, help="truncation level")
    p.add_argument("--repeat", type=int, default=5, help="timing repeats (best is reported)")
    p.add_argument("--fit-iters", type=int, default=30, help="sweeps in the end-to-end timing")
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = rng.dirichlet(np.full(args.L, 0.5), size=args.L)
    init = rng.dirichlet(np.ones(args.L))
    log_emit = rng.normal(0, 10, size=(args.T, args.L))
    u = rng.random(args.T)
    counts = rng.integers(0, 50, size=(args.L, args.L))
    conc = rng.gamma(1.0, size=(args.L, args.L))
    uc = rng.random(int(counts.sum()))
    series, _ = synthesize(3, args.T, seed=1)
    hyper = Hyperparameters.from_data(series.channels, truncation_L=args.L)

    backends = kernels.available_backends()
    results = {}
    for name, impl in backends.items():
        back = impl.backward_messages(rows, log_emit)
        cases = {
            "forward_loglik": lambda: impl.forward_loglik(rows, init, log_emit),
            "backward_messages": lambda: impl.backward_messages(rows, log_emit),
            "sample_forward": lambda: impl.sample_forward(rows, init, log_emit, back, u),
            "crt_counts": lambda: impl.crt_counts(counts, conc, uc),
        }
        results[name] = {k: best_of(fn, args.repeat) for k, fn in cases.items()}
        with using(impl):
            results[name][f"fit x{args.fit_iters}"] = best_of(
                lambda: fit(series.channels, hyper, args.fit_iters, seed=1), 1)

    names = list(results)
    print(f"T={args.T} L={args.L}  (seconds, best of {args.repeat})")
    print(f"{'kernel':<20}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for case in results[names[0]]:
        line = f"{case:<20}" + "".join(f"{results[n][case]:12.5f}" for n in names)
        if "python" in results and "cython" in results:
            line += f"{results['python'][case] / results['cython'][case]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
