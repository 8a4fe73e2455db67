"""Time each numba kernel against its numpy twin and check they agree.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

The backend switch is read at call time, so the full-model rows flip
GADGETFORGE_NUMBA inside this process.
"""
from __future__ import annotations

import argparse
import json
import os
import time

import numpy as np

from gadgetforge._accel import HAVE_NUMBA
from gadgetforge.autodiff import backward, bce_loss
from gadgetforge.autodiff.kernels import _col2im_nb, _col2im_np, _im2col_nb, _im2col_np
from gadgetforge.embedding import _sgns_epoch_nb, _sgns_epoch_np
from gadgetforge.kan import _basis_nb, _basis_np, uniform_knots
from gadgetforge.network import ModelConfig, NetworkInput, forward_batch, init_model, make_batch
from gadgetforge.network.lstm import _backward_nb, _backward_np, _forward_nb, _forward_np


def best_of(fn, repeat):
    fn()  # warm-up (and jit compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


def kernel_cases(rng):
    x = rng.normal(size=(64, 40, 256))
    cols = _im2col_np(x, 5)
    yield "im2col B64 T40 C256 k5", lambda: _im2col_nb(x, 5), lambda: _im2col_np(x, 5)
    yield "col2im B64 T40 C256 k5", lambda: _col2im_nb(cols, 5, 256), lambda: _col2im_np(cols, 5, 256)

    xw = rng.normal(scale=0.5, size=(64, 40, 512))
    u = rng.normal(scale=0.1, size=(128, 512))
    p = rng.normal(scale=0.1, size=(3, 128))
    hs, cs, gates = _forward_np(xw, u, p)
    dh = rng.normal(size=hs.shape)
    yield "lstm fwd B64 T40 H128", lambda: _forward_nb(xw, u, p), lambda: _forward_np(xw, u, p)
    yield ("lstm bwd B64 T40 H128", lambda: _backward_nb(dh, cs, gates, u, p),
           lambda: _backward_np(dh, cs, gates, u, p))

    knots = uniform_knots(5, 3)
    xs = rng.uniform(-1, 1, size=64 * 21)
    yield ("bspline basis n1344 G5 k3", lambda: _basis_nb(xs, knots, 3, True),
           lambda: _basis_np(xs, knots, 3, True))

    vocab, dim = 200, 100
    pairs = rng.integers(2, vocab, size=(20000, 2)).astype(np.int64)
    negs = rng.integers(2, vocab, size=(20000, 5)).astype(np.int64)
    w0 = rng.uniform(-0.005, 0.005, size=(vocab, dim))

    def sgns(kernel):
        def run():
            w_in, w_out = w0.copy(), np.zeros_like(w0)
            kernel(w_in, w_out, pairs, negs, 0.025, 0.0, float(len(pairs)))
            return w_in, w_out
        return run

    yield "sgns epoch 20k pairs d100", sgns(_sgns_epoch_nb), sgns(_sgns_epoch_np)


def train_step_case(rng, length=24, batch=64):
    cfg = ModelConfig(vocab_size=0)
    emb = rng.normal(scale=0.1, size=(300, cfg.embed_dim))
    model = init_model(cfg, emb)
    inputs = [NetworkInput(rng.integers(2, 300, size=length), rng.uniform(-1, 1, cfg.struct_dim))
              for _ in range(batch)]
    b = make_batch(inputs, np.arange(batch) % 2)

    def step():
        loss = bce_loss(forward_batch(model, b, train=True, rng=np.random.default_rng(0)), b.labels)
        backward(loss)
        return loss.item()

    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, nb, npf in kernel_cases(rng):
        t_nb, t_np = best_of(nb, args.repeat), best_of(npf, args.repeat)
        diff = max_diff(nb(), npf())
        rows.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np, "max_abs_diff": diff})
        print(f"{name:32s} {t_nb * 1e3:10.2f} {t_np * 1e3:10.2f} {t_np / t_nb:8.2f} {diff:11.2e}")

    step = train_step_case(rng)
    timed = {}
    for flag in ("1", "0"):
        os.environ["GADGETFORGE_NUMBA"] = flag
        timed[flag] = best_of(step, max(1, args.repeat // 2)), step()
    os.environ.pop("GADGETFORGE_NUMBA")
    (t_nb, l_nb), (t_np, l_np) = timed["1"], timed["0"]
    diff = abs(l_nb - l_np)
    rows.append({"kernel": "train step B64 T24 (full model)", "numba_s": t_nb, "numpy_s": t_np, "max_abs_diff": diff})
    print(f"{'train step B64 T24 (full model)':32s} {t_nb * 1e3:10.2f} {t_np * 1e3:10.2f} {t_np / t_nb:8.2f} "
          f"{diff:11.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
