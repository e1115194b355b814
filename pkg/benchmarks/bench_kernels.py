"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 8]

Times each kernel on small-preset shapes, then one full training step, on
every available backend, and prints the median and the speedup.
"""

import argparse
import timeit

import numpy as np

from somoformer import kernels
from somoformer.model import SoMoFormer, preset
from somoformer.optim import AdamState
from somoformer.scene import TrajectoryWindow
from somoformer.training import train_step


def kernel_cases(batch, rng):
    cfg = preset("small")
    Q, d, H = cfg.n_queries, cfg.d_model, cfg.n_heads
    rows = batch * Q
    x = rng.normal(size=(rows, d))
    gain, bias = rng.normal(size=d), rng.normal(size=d)
    y, xhat, rstd = kernels.layer_norm_forward(x, gain, bias, 1e-5)
    scores = rng.normal(size=(batch, H * Q, Q))
    mask = np.ones((batch, Q), dtype=bool)
    mask[:, Q // 2:] = rng.random((batch, Q - Q // 2)) < 0.5
    p = kernels.masked_softmax_forward(scores, mask)
    h = rng.normal(size=(rows, cfg.d_ff))
    return {
        "layer_norm fwd": lambda: kernels.layer_norm_forward(x, gain, bias, 1e-5),
        "layer_norm bwd": lambda: kernels.layer_norm_backward(y, xhat, rstd, gain),
        "softmax fwd": lambda: kernels.masked_softmax_forward(scores, mask),
        "softmax bwd": lambda: kernels.masked_softmax_backward(p.reshape(-1, Q), p.reshape(-1, Q)),
        "gelu fwd": lambda: kernels.gelu_forward(h),
        "gelu bwd": lambda: kernels.gelu_backward(h, h),
    }


def train_case(batch, rng):
    cfg = preset("small")
    model = SoMoFormer(cfg, seed=0)
    windows = []
    for _ in range(batch):
        full = rng.normal(scale=0.05, size=(cfg.n_slots, cfg.n_joints, 3, cfg.length)).cumsum(axis=-1)
        windows.append(TrajectoryWindow(full[..., :cfg.t], full[..., cfg.t:], np.ones(cfg.n_slots, bool)))
    prep = model.prepare(windows)
    adam = AdamState()
    return lambda: train_step(model, prep, adam, 1e-4)


def median_time(fn, repeat):
    fn()
    return float(np.median(timeit.repeat(fn, number=1, repeat=repeat)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args()
    backends = kernels.available_backends()
    results = {}
    for name in backends:
        with kernels.backend(name):
            rng = np.random.default_rng(0)
            cases = kernel_cases(args.batch, rng)
            cases[f"train step (small, batch {args.batch})"] = train_case(args.batch, rng)
            results[name] = {k: median_time(fn, args.repeat) for k, fn in cases.items()}

    names = list(results[backends[0]])
    width = max(map(len, names)) + 2
    header = "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else "")
    print("kernel".ljust(width) + header)
    for k in names:
        row = "".join(f"{results[b][k] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{results['python'][k] / results['cython'][k]:>11.1f}x"
        print(k.ljust(width) + row)
    if len(backends) == 1:
        print("compiled kernels not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
