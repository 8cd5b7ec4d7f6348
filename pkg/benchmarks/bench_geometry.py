"""Compare the compiled geometry kernels against the numpy fallback.

The backend is fixed at import time by TGF_GEOM_BACKEND, so each side
runs in its own subprocess. Outputs are compared bitwise before any
timing is reported; a speedup over mismatched results would be
meaningless.

Usage:
    python3 benchmarks/bench_geometry.py
    python3 benchmarks/bench_geometry.py --clusters 48 --streamlines 16
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np


def run_workload(n_clusters, streamlines, points, num_points, repeats, out_path):
    from tractgraph.geometry import (
        GEOMETRY_BACKEND,
        cluster_pair_distance,
        distance_matrix,
        resample_streamline,
    )
    from tractgraph.synthetic import SyntheticAtlasConfig, gen_atlas

    atlas = gen_atlas(
        SyntheticAtlasConfig(
            n_clusters=n_clusters,
            streamlines_per_cluster=streamlines,
            points_per_streamline=points,
            seed=7,
        )
    )
    clusters = atlas.clusters

    timings = {}

    t0 = time.perf_counter()
    for _ in range(repeats):
        matrix = distance_matrix(clusters, num_points=num_points)
    timings["distance_matrix"] = (time.perf_counter() - t0) / repeats

    t0 = time.perf_counter()
    for _ in range(repeats * 20):
        pair = cluster_pair_distance(clusters[0], clusters[1], num_points=num_points)
    timings["cluster_pair_distance"] = (time.perf_counter() - t0) / (repeats * 20)

    lines = [s for c in clusters[:8] for s in c.streamlines]
    t0 = time.perf_counter()
    for _ in range(repeats):
        resampled = [resample_streamline(s, num_points).points for s in lines]
    timings["resample_streamline"] = (time.perf_counter() - t0) / (repeats * len(lines))

    np.savez(
        out_path,
        matrix=matrix,
        pair=np.float64(pair),
        resampled=np.stack(resampled),
    )
    print(json.dumps({"backend": GEOMETRY_BACKEND, "timings": timings}))


def run_side(backend, args, out_path):
    env = dict(os.environ, TGF_GEOM_BACKEND=backend)
    proc = subprocess.run(
        [
            sys.executable,
            os.path.abspath(__file__),
            "--worker",
            "--out",
            out_path,
            "--clusters",
            str(args.clusters),
            "--streamlines",
            str(args.streamlines),
            "--points",
            str(args.points),
            "--num-points",
            str(args.num_points),
            "--repeats",
            str(args.repeats),
        ],
        env=env,
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(f"{backend} worker failed with exit code {proc.returncode}")
    report = json.loads(proc.stdout.strip().splitlines()[-1])
    if report["backend"] != backend:
        raise SystemExit(
            f"requested backend {backend} but worker imported {report['backend']}; "
            "is the compiled extension built?"
        )
    return report["timings"]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--clusters", type=int, default=40)
    parser.add_argument("--streamlines", type=int, default=12)
    parser.add_argument("--points", type=int, default=30)
    parser.add_argument("--num-points", type=int, default=15)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    parser.add_argument("--out", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        run_workload(
            args.clusters, args.streamlines, args.points, args.num_points, args.repeats, args.out
        )
        return

    print(
        f"workload: {args.clusters} clusters x {args.streamlines} streamlines, "
        f"resampled to {args.num_points} points, best of {args.repeats}"
    )
    with tempfile.TemporaryDirectory() as tmp:
        out_c = os.path.join(tmp, "cython.npz")
        out_p = os.path.join(tmp, "python.npz")
        t_cython = run_side("cython", args, out_c)
        t_python = run_side("python", args, out_p)

        a, b = np.load(out_c), np.load(out_p)
        for key in ("matrix", "pair", "resampled"):
            if not np.array_equal(a[key], b[key]):
                raise SystemExit(f"backend outputs differ on {key}: benchmark void")
    print("outputs bitwise identical across backends")
    print(f"{'kernel':<24}{'cython':>12}{'python':>12}{'speedup':>10}")
    for key in sorted(t_cython):
        tc, tp = t_cython[key], t_python[key]
        print(f"{key:<24}{tc * 1e3:>10.3f}ms{tp * 1e3:>10.3f}ms{tp / tc:>9.1f}x")


if __name__ == "__main__":
    main()
