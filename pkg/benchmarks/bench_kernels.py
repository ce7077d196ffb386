"""Compare the compiled kernels with their numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py [--n 40000] [--repeat 5]``.
Prints the median wall time of each kernel per backend, the speed-up, and the
largest absolute difference between the two backends' outputs. The last line
times a complete distribution-regression fit under each backend.
"""

from __future__ import annotations

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from censmte import _pykernels

try:
    from censmte import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def _time(fn, repeat: int) -> float:
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _inputs(n: int, nx: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    dense = np.ascontiguousarray(np.column_stack([np.ones(n), rng.uniform(0.2, 0.8, n),
                                                  rng.uniform(0, 1, n)]))
    xcode = rng.integers(0, nx, n).astype(np.int64)
    theta = np.concatenate([[0.1, 1.5, -0.4], rng.normal(0, 0.3, nx - 1)])
    b = (rng.uniform(size=n) < 0.4).astype(float)
    w = rng.exponential(size=n)
    offsets = np.ascontiguousarray(rng.normal(0, 1, n))
    sv = np.ascontiguousarray(np.linspace(-1, 1, 41))
    dv = np.ascontiguousarray(np.full(41, 1.3))
    return theta, dense, xcode, b, w, offsets, sv, dv


def _max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def _fit_time(pure: bool, n: int) -> float:
    code = (
        "import time, warnings; warnings.simplefilter('ignore')\n"
        "from censmte.oracle import DgpSpec, simulate\n"
        "from censmte.pipeline import estimate, EstimatorOptions\n"
        "spec = DgpSpec.from_dict({'instrument': {'low': 0, 'high': 1},"
        " 'propensity': {'p0': 0.2, 'pz': 0.6}, 'censoring': {'kind': 'uniform', 'low': 2, 'high': 10},"
        " 'outcomes': {'kind': 'exponential', 'a0': 1, 'b0': 1, 'a1': 0.5, 'b1': 2}})\n"
        f"t = simulate(spec, {n}, 0).table\n"
        "t0 = time.perf_counter(); estimate(t, EstimatorOptions()); print(time.perf_counter() - t0)\n"
    )
    env = dict(os.environ)
    if pure:
        env["CENSMTE_PURE_PYTHON"] = "1"
    else:
        env.pop("CENSMTE_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=40000)
    ap.add_argument("--nx", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-fit", action="store_true")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")
        return 1
    theta, dense, xcode, b, w, offsets, sv, dv = _inputs(args.n, args.nx)
    cases = {
        "logit_loglik": (theta, dense, xcode, b, w),
        "logit_derivs": (theta, dense, xcode, b, w),
        "dmtr_mean": (offsets, sv, dv),
    }
    print(f"n={args.n} nx={args.nx} repeat={args.repeat}")
    print(f"{'kernel':14s} {'cython ms':>10s} {'python ms':>10s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, call_args in cases.items():
        fc, fp = getattr(_ckernels, name), getattr(_pykernels, name)
        tc = _time(lambda: fc(*call_args), args.repeat)
        tp = _time(lambda: fp(*call_args), args.repeat)
        diff = _max_diff(fc(*call_args), fp(*call_args))
        print(f"{name:14s} {tc * 1e3:10.3f} {tp * 1e3:10.3f} {tp / tc:9.2f} {diff:11.2e}")
    if not args.skip_fit:
        tc, tp = _fit_time(False, args.n), _fit_time(True, args.n)
        print(f"{'full estimate':14s} {tc * 1e3:10.1f} {tp * 1e3:10.1f} {tp / tc:9.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
