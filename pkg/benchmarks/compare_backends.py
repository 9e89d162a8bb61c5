"""Benchmark the compiled kernel extension against the pure-numpy fallback.

Runs the full two-stage planning cycle (the hot path) plus the individual
kernels under the active backend, then re-executes itself with
``TRAFFICWEAVE_PURE_PYTHON=1`` to produce the comparison table.

Usage: python benchmarks/compare_backends.py [--repetitions N]
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np


def bench_once(repetitions: int) -> dict:
    import torch

    torch.set_num_threads(1)
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))
    from conftest import constant_mean_model, make_exemplar
    from trafficweave.features import HORIZON, history_features
    from trafficweave.kernels import BACKEND, gmm_sample, lstm_cell
    from trafficweave.planner import bootstrap_window, plan_cycle
    from trafficweave.sampler import FastSampler
    from conftest import nominal_state

    sampler = FastSampler(constant_mean_model(0.0, 0.0))
    x0 = nominal_state()
    cond, _ = make_exemplar(np.zeros((HORIZON, 2)))
    feats = history_features(cond)
    prev = np.array([cond.history_actions[-1][0].s_ddot,
                     cond.history_actions[-1][0].tau_ddot])
    fixed = bootstrap_window(x0.robot)

    def timeit(fn, reps):
        out = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            out.append((time.perf_counter() - t0) * 1000)
        return statistics.median(out)

    rng = np.random.default_rng(0)
    B, H, M = 4096, 16, 2
    pre = rng.standard_normal((B, 4 * H)).astype(np.float32)
    c = np.zeros((B, H), dtype=np.float32)

    weights = np.full((B, M), 1.0 / M, dtype=np.float32)
    means = rng.standard_normal((B, M, 2)).astype(np.float32)
    scales = rng.random((B, M, 2)).astype(np.float32) + 0.1
    corrs = (rng.random((B, M)).astype(np.float32) - 0.5)
    u = rng.random(B).astype(np.float32)
    eps = rng.standard_normal((B, 2)).astype(np.float32)

    return {
        "backend": BACKEND,
        "plan_cycle_ms": timeit(
            lambda: plan_cycle(sampler, feats, prev, x0, fixed, -1.85, seed=0),
            repetitions),
        "lstm_cell_4096x16_ms": timeit(lambda: lstm_cell(pre, c), 20),
        "gmm_sample_4096_ms": timeit(
            lambda: gmm_sample(weights, means, scales, corrs, u, eps), 20),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repetitions", type=int, default=3)
    ap.add_argument("--emit-json", action="store_true",
                    help="print raw JSON only (used for the fallback subprocess)")
    args = ap.parse_args()

    mine = bench_once(args.repetitions)
    if args.emit_json:
        print(json.dumps(mine))
        return

    env = dict(os.environ, TRAFFICWEAVE_PURE_PYTHON="1")
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__),
         "--repetitions", str(args.repetitions), "--emit-json"],
        env=env, capture_output=True, text=True, check=True)
    other = json.loads(proc.stdout.strip().splitlines()[-1])
    rows = sorted(set(mine) - {"backend"})
    print(f"{'kernel':32s} {mine['backend']:>10s} {other['backend']:>10s} {'speedup':>8s}")
    for k in rows:
        print(f"{k:32s} {mine[k]:>9.1f}ms {other[k]:>9.1f}ms "
              f"{other[k] / mine[k]:>7.1f}x")


if __name__ == "__main__":
    main()
