"""Compare the compiled and numpy convolution kernels.

Times im2col, col2im and a full conv2d forward+backward at the shapes the
default backbone sees with a batch of 16, first checking that both
backends agree exactly.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import json
import timeit

import numpy as np

from partial_screen import _kernels, _kernels_py
from partial_screen import tensor as T

try:
    from partial_screen import _ext
except ImportError:
    _ext = None

# (channels_in, size) per block of the default 64x64 backbone
BLOCKS = [(1, 64), (8, 32), (16, 16), (32, 8)]
OUT_CHANNELS = [8, 16, 32, 32]


def _conv_step(x, w, b):
    xt = T.Tensor(x, requires_grad=True)
    out = T.conv2d(xt, T.Tensor(w, requires_grad=True), T.Tensor(b, requires_grad=True), stride=2, padding=1)
    T.tsum(out * out).backward()


def run(repeat: int, batch: int = 16) -> dict:
    rng = np.random.default_rng(0)
    backends = {"python": _kernels_py}
    if _ext is not None:
        backends["compiled"] = _ext
    rows = []
    for (cin, size), cout in zip(BLOCKS, OUT_CHANNELS):
        x = rng.standard_normal((batch, cin, size, size))
        w = rng.standard_normal((cout, cin, 3, 3))
        b = np.zeros(cout)
        ref_cols, oh, ow = _kernels_py.im2col(x, 3, 2, 1)
        row = {"shape": list(x.shape)}
        for name, mod in backends.items():
            cols, _, _ = mod.im2col(x, 3, 2, 1)
            folded = mod.col2im(ref_cols, x.shape, 3, 2, 1)
            assert np.array_equal(cols, ref_cols), f"{name} im2col disagrees"
            assert np.array_equal(folded, _kernels_py.col2im(ref_cols, x.shape, 3, 2, 1)), f"{name} col2im disagrees"
            t_unfold = min(timeit.repeat(lambda: mod.im2col(x, 3, 2, 1), number=1, repeat=repeat))
            t_fold = min(timeit.repeat(lambda: mod.col2im(ref_cols, x.shape, 3, 2, 1), number=1, repeat=repeat))
            _kernels.im2col, _kernels.col2im = mod.im2col, mod.col2im
            t_conv = min(timeit.repeat(lambda: _conv_step(x, w, b), number=1, repeat=repeat))
            row[name] = {"im2col_ms": 1e3 * t_unfold, "col2im_ms": 1e3 * t_fold, "conv_fwd_bwd_ms": 1e3 * t_conv}
        rows.append(row)
    return {"default_backend": _kernels.BACKEND, "batch": batch, "blocks": rows}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    saved = _kernels.im2col, _kernels.col2im
    try:
        report = run(args.repeat)
    finally:
        _kernels.im2col, _kernels.col2im = saved
    print(json.dumps(report, indent=2))
    for row in report["blocks"]:
        line = f"{str(row['shape']):>20}"
        for name in ("python", "compiled"):
            if name in row:
                r = row[name]
                line += f"  {name}: unfold {r['im2col_ms']:.3f} fold {r['col2im_ms']:.3f} conv {r['conv_fwd_bwd_ms']:.3f} ms"
        print(line)


if __name__ == "__main__":
    main()
