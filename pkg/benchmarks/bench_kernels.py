"""Benchmark the compiled kernel lane against the pure-numpy fallback.

Times each hot kernel on transformer-sized inputs in both lanes, then times
one full image explanation end to end per lane (in subprocesses, because
the lane is fixed at import time by GECLIP_PURE_PY).

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 20 --skip-end-to-end
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from clipscope._kernels import _ref

try:
    from clipscope._kernels import _core
except ImportError:
    _core = None


def _time(fn, args, repeats):
    """Median seconds per call after one warm-up call."""
    fn(*args)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _cases(rng):
    """(name, arg-builder) pairs on shapes near a small ViT block."""
    n, d = 197, 768
    x = rng.normal(size=(n, d))
    w = rng.normal(size=(d, d))
    gain = rng.normal(size=d) + 1.0
    bias = rng.normal(size=d)
    gy = rng.normal(size=(n, d))
    att = rng.normal(size=(n, n))
    grid = rng.random((14, 14))

    soft = _ref.softmax_rows(att)
    _, mean, rstd = _ref.layer_norm(x, gain, bias, 1e-5)
    return [
        ("matmul 197x768 @ 768x768", "matmul", (x, w)),
        ("softmax_rows 197x197", "softmax_rows", (att,)),
        ("softmax_rows_grad 197x197", "softmax_rows_grad", (soft, rng.normal(size=(n, n)))),
        ("layer_norm 197x768", "layer_norm", (x, gain, bias, 1e-5)),
        ("layer_norm_grad 197x768", "layer_norm_grad", (x, gain, mean, rstd, gy)),
        ("quick_gelu 197x768", "quick_gelu", (x,)),
        ("quick_gelu_grad 197x768", "quick_gelu_grad", (x, gy)),
        ("relu 197x768", "relu", (x,)),
        ("relu_grad 197x768", "relu_grad", (x, gy)),
        ("bilinear_resize 14x14 -> 224x224", "bilinear_resize", (grid, 224, 224)),
    ]


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for label, name, args in _cases(rng):
        t_py = _time(getattr(_ref, name), args, repeats)
        if _core is None:
            rows.append((label, t_py, None, None))
            continue
        t_cy = _time(getattr(_core, name), args, repeats)
        rows.append((label, t_py, t_cy, t_py / t_cy))
    return rows


def bench_end_to_end(repeats):
    """Time one toy-model image explanation per lane in fresh processes."""
    script = (
        "import time\n"
        "import numpy as np\n"
        "from clipscope import _kernels\n"
        "from clipscope.toydata import build_toy_bundle, render_item\n"
        "from clipscope.explain import explain_image\n"
        "bundle = build_toy_bundle(seed=0, image_size=32)\n"
        "img, _, _, caption, _ = render_item(np.random.default_rng(0), 32)\n"
        "pixels = bundle.preprocess(img)\n"
        "encoded = bundle.tokenizer.encode(caption)\n"
        "explain_image(bundle, pixels, encoded)\n"
        "samples = []\n"
        f"for _ in range({repeats}):\n"
        "    t0 = time.perf_counter()\n"
        "    explain_image(bundle, pixels, encoded)\n"
        "    samples.append(time.perf_counter() - t0)\n"
        "samples.sort()\n"
        "print(_kernels.BACKEND, samples[len(samples) // 2])\n"
    )
    results = {}
    for lane, extra_env in (("python", {"GECLIP_PURE_PY": "1"}), ("compiled", {})):
        env = dict(os.environ)
        env.pop("GECLIP_PURE_PY", None)
        env.update(extra_env)
        out = subprocess.run(
            [sys.executable, "-c", script], env=env,
            capture_output=True, text=True, check=True,
        )
        backend, seconds = out.stdout.split()
        results[lane] = (backend, float(seconds))
    return results


def _fmt(seconds):
    if seconds is None:
        return "      n/a"
    if seconds < 1e-3:
        return f"{seconds * 1e6:7.1f}us"
    return f"{seconds * 1e3:7.2f}ms"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30,
                        help="timed calls per kernel (median is reported)")
    parser.add_argument("--skip-end-to-end", action="store_true",
                        help="only run the per-kernel microbenchmarks")
    args = parser.parse_args(argv)

    if _core is None:
        print("compiled lane unavailable (extension not built); "
              "showing the pure-numpy lane only\n")

    print(f"{'kernel':38s} {'python':>9s} {'compiled':>9s} {'speedup':>8s}")
    for label, t_py, t_cy, ratio in bench_kernels(args.repeats):
        speed = f"{ratio:7.2f}x" if ratio is not None else "     n/a"
        print(f"{label:38s} {_fmt(t_py)} {_fmt(t_cy)} {speed}")

    if not args.skip_end_to_end and _core is not None:
        print("\nend to end (toy-model image explanation, fresh process per lane):")
        for lane, (backend, seconds) in bench_end_to_end(args.repeats).items():
            print(f"  {lane:9s} backend={backend:7s} {_fmt(seconds)} per call")


if __name__ == "__main__":
    main()
