"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 50]
"""
import argparse
import time

import numpy as np

from triplanetok.diffcore import _kernels_py

try:
    from triplanetok.diffcore import _kernels
except ImportError:
    _kernels = None


def _cases(rng, dtype):
    x = rng.standard_normal((4096, 64)).astype(dtype)
    g = rng.standard_normal(x.shape).astype(dtype)
    gain, bias = np.ones(64, dtype), np.zeros(64, dtype)
    table = rng.standard_normal((1024, 64)).astype(dtype)
    idx = rng.integers(0, 1024, size=(4, 8192)).astype(np.int64)
    wts = rng.random((4, 8192)).astype(dtype)
    gq = rng.standard_normal((8192, 64)).astype(dtype)
    return {
        "gelu_forward": lambda k: k.gelu_forward(x),
        "gelu_backward": lambda k: k.gelu_backward(x, np.tanh(x), g),
        "softmax_forward": lambda k: k.softmax_forward(x.copy()),
        "softmax_backward": lambda k: k.softmax_backward(np.abs(x), g),
        "layer_norm_forward": lambda k: k.layer_norm_forward(x, gain, bias, 1e-5),
        "layer_norm_backward": lambda k: k.layer_norm_backward(g, x, np.ones((4096, 1), dtype), gain),
        "bilinear_gather": lambda k: k.bilinear_gather(table, idx, wts),
        "bilinear_scatter": lambda k: k.bilinear_scatter(gq, idx, wts, 1024),
    }


def best_ms(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args()
    if _kernels is None:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
    cases = _cases(np.random.default_rng(0), np.dtype(args.dtype))
    print(f"{'kernel':<22}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, call in cases.items():
        a = best_ms(lambda: call(_kernels_py), args.repeat)
        b = best_ms(lambda: call(_kernels), args.repeat)
        print(f"{name:<22}{a:>10.3f}{b:>11.3f}{a / b:>8.2f}x")


if __name__ == "__main__":
    main()
