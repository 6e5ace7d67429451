"""Benchmark the raycasting hot path: numba-jitted BVH traversal versus
the pure-numpy fallback selected by ``LIDARSCENE_DISABLE_NUMBA=1``.

Because the backend is chosen at import time, the comparison spawns this
script twice as subprocesses, once per backend, then prints both timings.

    python benchmarks/bench_raycast.py [--frames 3] [--rows 32] [--cols 256]

The default workload is deliberately small: the numpy fallback tests every
ray against every triangle, so its cost grows with rays x triangles.
"""

import argparse
import json
import os
import subprocess
import sys
import time


def workload(frames, rows, cols, tessellation):
    import numpy as np

    from lidarscene.accel import NUMBA_ENABLED
    from lidarscene.layout import Pose, SceneParams, generate_random_scene
    from lidarscene.raycast import render_conditional
    from lidarscene.sensor import SensorSpec

    spec = SensorSpec(rows=rows, cols=cols)
    scene = generate_random_scene(0, SceneParams())
    # warm-up frame: triggers jit compilation so it is not timed
    render_conditional(scene, spec, Pose(), tessellation)
    t0 = time.perf_counter()
    returns = 0
    for i in range(frames):
        pose = Pose((float(i), 0.0, 0.0), 0.0)
        img = render_conditional(scene, spec, pose, tessellation)
        returns += int((img.depth > 0).sum())
    elapsed = time.perf_counter() - t0
    rays = frames * rows * cols
    return {
        "backend": "numba" if NUMBA_ENABLED else "numpy",
        "frames": frames,
        "rays": rays,
        "returns": returns,
        "seconds": elapsed,
        "rays_per_second": rays / elapsed,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=3)
    parser.add_argument("--tessellation", type=int, default=8)
    parser.add_argument("--rows", type=int, default=32)
    parser.add_argument("--cols", type=int, default=256)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.child:
        print(json.dumps(workload(args.frames, args.rows, args.cols, args.tessellation)))
        return

    results = []
    for disable in ("0", "1"):
        env = dict(os.environ, LIDARSCENE_DISABLE_NUMBA=disable)
        out = subprocess.run(
            [sys.executable, __file__, "--child", "--frames", str(args.frames),
             "--rows", str(args.rows), "--cols", str(args.cols),
             "--tessellation", str(args.tessellation)],
            env=env, capture_output=True, text=True, check=True,
        )
        results.append(json.loads(out.stdout.splitlines()[-1]))

    jit, plain = results
    assert jit["returns"] == plain["returns"], "backends disagree on returned pixels"
    print(f"workload: {args.frames} frames at {args.rows}x{args.cols} "
          f"({jit['rays']} rays, {jit['returns']} returns)")
    for r in results:
        print(f"  {r['backend']:>5}: {r['seconds']:8.3f} s  "
              f"({r['rays_per_second'] / 1e6:6.2f} Mray/s)")
    print(f"speedup: {plain['seconds'] / jit['seconds']:.1f}x")


if __name__ == "__main__":
    main()
