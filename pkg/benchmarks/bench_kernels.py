"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row runs the same inputs on both paths, checks that the outputs agree
and reports the best-of-N wall time.  The first numba call (compilation or
cache load) is excluded.
"""

import argparse
import time

import numpy as np

from vesselwall import _kernels
from vesselwall.phantom import PhantomSpec, VesselSpec, generate
from vesselwall.polar import from_polar, to_polar, upsample4x
from vesselwall.segment import OracleSegmenter, Segmenter, init_contours, radial_gradient


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    img = upsample4x(rng.random((128, 128)))
    polar = rng.random((180, 256))

    spec = PhantomSpec(width=128, height=128, depth=3, noise_sigma=0.04,
                       vessels=[VesselSpec(x=64.0, y=64.0, lumen_radius=10.0, wall_thickness=4.0)])
    v, _ = generate(spec)
    seg = Segmenter(OracleSegmenter())
    prob, _ = seg.probability(v, 1, (64.0, 64.0))
    lumen, _ = init_contours(prob)
    grad = radial_gradient(prob)
    start = lumen.rho + rng.integers(-3, 4, size=180)

    return [
        ("to_polar 512x512 -> 180x256", lambda: to_polar(img)),
        ("from_polar 180x256 -> 512x512", lambda: from_polar(polar)),
        ("snake, 180 nodes, <=100 sweeps",
         lambda: _kernels.snake_descend(start, grad, -1.0, 0.1, 0.1, 1.0, 100)[0]),
        ("segment one slice (end to end)",
         lambda: seg.segment(v, 1, (64.0, 64.0)).polar_mask),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'kernel':<34} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}  agree")
    for name, fn in cases():
        _kernels.set_jit(False)
        ref = fn()
        t_np = best_of(fn, args.repeat)
        _kernels.set_jit(True)
        out = fn()
        t_nb = best_of(fn, args.repeat)
        agree = np.array_equal(ref, out) or np.allclose(ref, out, rtol=0, atol=1e-12)
        print(f"{name:<34} {t_np * 1e3:11.2f} {t_nb * 1e3:11.2f} {t_np / t_nb:8.1f}x  {agree}")


if __name__ == "__main__":
    main()
