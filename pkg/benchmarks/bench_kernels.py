"""Compare the compiled and pure-numpy kernel backends.

Times the convolution and pooling primitives (forward + backward) on the
shapes the cascade actually uses, then a full stage forward/backward.

Run:  python3 benchmarks/bench_kernels.py
"""
import sys
import time

import numpy as np


def _load_backends():
    backends = []
    from rotdet import _kernels_py
    backends.append(_kernels_py)
    try:
        from rotdet import _kernels_cy
        backends.append(_kernels_cy)
    except ImportError:
        print("compiled backend unavailable; timing the numpy fallback only")
    return backends


def _time(fn, repeats=10):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_primitives(backends):
    rng = np.random.default_rng(0)
    cases = [
        ("conv 50x3x24x24 k3 s2 ->10", (50, 3, 24, 24), 10, 3, 2),
        ("conv 50x24x23x23 k3 s1 ->32", (50, 24, 23, 23), 32, 3, 1),
        ("conv 50x3x48x48 k3 s2 ->24", (50, 3, 48, 48), 24, 3, 2),
    ]
    print(f"{'case':38s}" + "".join(f"{b.NAME:>12s}" for b in backends))
    for name, xshape, oc, k, s in cases:
        x = rng.standard_normal(xshape).astype(np.float32)
        w = rng.standard_normal((oc, xshape[1], k, k)).astype(np.float32) * 0.1
        b = np.zeros(oc, dtype=np.float32)
        row_f, row_b = [], []
        for be in backends:
            y = be.conv2d_forward(x, w, b, s)
            gout = np.ones_like(y)
            row_f.append(_time(lambda be=be: be.conv2d_forward(x, w, b, s)))
            row_b.append(_time(lambda be=be: be.conv2d_backward(x, w, s, gout)))
        print(f"{name + ' fwd':38s}" + "".join(f"{t * 1e3:10.2f}ms" for t in row_f))
        print(f"{name + ' bwd':38s}" + "".join(f"{t * 1e3:10.2f}ms" for t in row_b))

    x = rng.standard_normal((50, 24, 11, 11)).astype(np.float32)
    row_f, row_b = [], []
    for be in backends:
        y, idx = be.maxpool_forward(x, 2, 2)
        g = np.ones_like(y)
        row_f.append(_time(lambda be=be: be.maxpool_forward(x, 2, 2)))
        row_b.append(_time(lambda be=be: be.maxpool_backward(g, idx, x.shape, 2, 2)))
    print(f"{'maxpool 50x24x11x11 k2 s2 fwd':38s}"
          + "".join(f"{t * 1e3:10.2f}ms" for t in row_f))
    print(f"{'maxpool 50x24x11x11 k2 s2 bwd':38s}"
          + "".join(f"{t * 1e3:10.2f}ms" for t in row_b))


def bench_stage(backend_env):
    """Full stage-3 train step through the public API with one backend."""
    import os
    import subprocess

    code = (
        "import time, numpy as np\n"
        "from rotdet import cascade\n"
        "from rotdet.backend import BACKEND_NAME\n"
        "net = cascade.build_pcn(3, seed=0)\n"
        "x = np.random.default_rng(0).standard_normal((50, 3, 48, 48)).astype(np.float32)\n"
        "labels = None\n"
        "def step():\n"
        "    outs, cache = cascade.forward(net, x, want_cache=True)\n"
        "    g = {k: np.ones_like(v) / v.size for k, v in outs.items()}\n"
        "    cascade.backward(net, cache, g)\n"
        "step()\n"
        "t0 = time.perf_counter()\n"
        "for _ in range(10): step()\n"
        "dt = (time.perf_counter() - t0) / 10\n"
        "print(f'{BACKEND_NAME}: stage-3 fwd+bwd batch 50: {dt*1e3:.1f} ms/iter')\n"
    )
    env = dict(os.environ, **backend_env)
    subprocess.run([sys.executable, "-c", code], env=env, check=True)


if __name__ == "__main__":
    bench_primitives(_load_backends())
    print()
    sys.stdout.flush()  # keep ordering ahead of the subprocess output
    bench_stage({})
    bench_stage({"ROTDET_PURE": "1"})
