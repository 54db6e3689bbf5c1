"""Compare the compiled and NumPy LSTM backends.

    python3 benchmarks/bench_kernels.py [--batch 64] [--frames 300] [--hidden 16]

Times the forward recurrence, BPTT, weight gradients and a full training
step (3 layers, 7 input channels) per backend and reports the speedup.
"""

import argparse
import timeit

import numpy as np

from fformation.neuralnet import available, get_backend, init_params, loss_and_grads


def _best(fn, number, repeat=5):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench(name, B, T, H, dtype, number):
    kern = get_backend(name)
    rng = np.random.default_rng(0)
    xproj = rng.normal(size=(B, T, 4 * H)).astype(dtype)
    U = (rng.normal(size=(4 * H, H)) * 0.2).astype(dtype)
    gates, cell, tcell, hidden = kern.lstm_forward(xproj, U)
    dz = kern.lstm_backward(hidden, gates, cell, tcell, U)
    params = init_params(7, 2, rng, hidden_size=H, dtype=dtype)
    X = rng.normal(size=(B, T, 7)).astype(dtype)
    y = rng.integers(0, 2, B)
    w = np.ones(2)
    return {
        "forward": _best(lambda: kern.lstm_forward(xproj, U), number),
        "backward": _best(lambda: kern.lstm_backward(hidden, gates, cell, tcell, U), number),
        "weight_grads": _best(lambda: kern.lstm_weight_grads(dz, hidden, hidden), number),
        "train_step": _best(lambda: loss_and_grads(X, y, params, w, name), max(1, number // 4)),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--number", type=int, default=8)
    args = p.parse_args()
    names = available()
    print(f"backends: {', '.join(names)}; batch {args.batch}, frames {args.frames}, hidden {args.hidden}")
    for dtype in (np.float32, np.float64):
        results = {n: bench(n, args.batch, args.frames, args.hidden, dtype, args.number) for n in names}
        print(f"\n{np.dtype(dtype).name:8s} {'op':14s}" + "".join(f"{n:>12s}" for n in names)
              + ("     speedup" if len(names) > 1 else ""))
        for op in results[names[0]]:
            row = [results[n][op] * 1e3 for n in names]
            line = f"{'':8s} {op:14s}" + "".join(f"{v:10.2f}ms" for v in row)
            if len(names) > 1:
                line += f"{results['numpy'][op] / results['cython'][op]:11.1f}x"
            print(line)
        frames = args.batch * args.frames
        if "cython" in results:
            print(f"{'':8s} compiled forward: {results['cython']['forward'] / frames * 1e9:.0f} ns per frame")


if __name__ == "__main__":
    main()
