"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs every kernel on representative inputs (a generated environment's
occluder set plus synthetic clouds and grids), checks that both
implementations return identical results, then reports timings.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Set EQA_FORGE_FORCE_FALLBACK=1 before importing eqa_forge to make the
package itself run on the numpy path; this script imports both backends
directly and is unaffected by the variable.
"""

import argparse
import math
import sys
import time

import numpy as np

from eqa_forge._kernels import fallback

try:
    from eqa_forge._kernels import _core
except ImportError:
    _core = None

from eqa_forge.env_model import EnvGenSpec, generate_environment, occupancy_grid
from eqa_forge.pc_render import Camera


def _env_inputs(scale: float):
    env = generate_environment(EnvGenSpec(), seed=0)
    axes, params, corners = env.occluder_arrays()
    camera = Camera(position=(2.0, 2.0, 1.0), yaw=0.7)
    fwd, right, up = camera.basis()
    origin = np.asarray(camera.position, np.float64)
    n_rays = int(20000 * scale)
    rng = np.random.default_rng(0)
    pts = env.global_cloud.positions[
        rng.integers(0, len(env.global_cloud.positions), n_rays)
    ].astype(np.float64)
    dirs = pts - origin
    grid = occupancy_grid(env, resolution=0.05, agent_radius=0.1)
    return env, axes, params, corners, camera, origin, right, up, fwd, dirs, grid


def _time(fn, repeat: int) -> float:
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repetitions (best-of)")
    ap.add_argument("--scale", type=float, default=1.0, help="input size multiplier")
    args = ap.parse_args(argv)

    if _core is None:
        print("compiled extension not built; showing fallback timings only", file=sys.stderr)

    env, axes, params, corners, camera, origin, right, up, fwd, dirs, grid = _env_inputs(
        args.scale
    )
    rng = np.random.default_rng(1)
    cloud = rng.normal(size=(int(4000 * args.scale), 3))
    centroids = cloud[: int(256 * args.scale)]
    gx0, gy0 = grid.origin[0] + 0.3, grid.origin[1] + 0.3
    segs = rng.uniform(0.3, 6.7, size=(int(2000 * args.scale), 4))

    cases = [
        (
            f"min_hit_param ({len(dirs)} rays x {len(axes)} rects)",
            lambda impl: impl.min_hit_param(origin, dirs, axes, params, 1e-9),
        ),
        (
            "depth_buffer (512x512)",
            lambda impl: impl.depth_buffer(
                origin, right, up, fwd, camera.tan_h, camera.tan_v,
                512, 512, axes, params, corners, 0.05,
            ),
        ),
        (
            f"fps (n={len(cloud)}, k=512)",
            lambda impl: impl.fps(cloud, 512, 0),
        ),
        (
            f"ball_query ({len(centroids)} centroids, k=32)",
            lambda impl: impl.ball_query(cloud, centroids, 0.4, 32),
        ),
        (
            f"segment_blocked ({len(segs)} segments)",
            lambda impl: [
                impl.segment_blocked(
                    grid.cells, grid.origin[0], grid.origin[1], grid.resolution,
                    gx0, gy0, float(x1), float(y1),
                )
                for x1, y1, _, _ in segs
            ],
        ),
    ]

    header = f"{'kernel':44s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, call in cases:
        ref = call(fallback)
        t_fb = _time(lambda: call(fallback), args.repeat)
        if _core is None:
            print(f"{name:44s} {t_fb * 1e3:9.2f}ms {'-':>10s} {'-':>8s}")
            continue
        got = call(_core)
        if isinstance(ref, list):
            same = ref == got
        else:
            same = np.array_equal(ref, got)
        if not same:
            print(f"{name}: MISMATCH between backends", file=sys.stderr)
            return 1
        t_c = _time(lambda: call(_core), args.repeat)
        print(f"{name:44s} {t_fb * 1e3:9.2f}ms {t_c * 1e3:9.2f}ms {t_fb / t_c:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
