#!/usr/bin/env python3
"""Run the experiment matrix behind the headline results.

Each job trains one configuration over a set of seeds and writes
``<out>/<job>/seed_<s>/`` run directories (metrics.csv, checkpoints, config),
plus an ``aggregate.csv`` per job.  Jobs:

* ``particle-social``    five seeds of the landmark-reference task with the
                         divergence-pressure settings (the headline run).
* ``particle-no-comm``   silenced-channel control on the same budget.
* ``particle-static``    prescribed identity code control (confusion check).
* ``digits-shared``      five seeds of the digit-comparison game with shared
                         trunk layers and divergence pressure.
* ``digits-no-comm``     silenced-channel control for the digit game.
* ``particle-probe``     single short seed to sanity-check learning trends.
* ``digit-probe``        single short seed to sanity-check learning trends.

Controls use plateau stopping (no improvement for a long window); the main
runs stop only on hitting a generous reward threshold, since their reward
curves sit on a floor for a long stretch before improving.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import time

from cfcomm.config import ExperimentConfig, preset
from cfcomm.training import aggregate, train


def _cfg(name: str, **overrides) -> ExperimentConfig:
    return dataclasses.replace(preset(name), **overrides)


JOBS = {
    "particle-social": dict(
        cfg=lambda: _cfg("particle-social", epochs=20000,
                         early_stop_window=200, early_stop_reward=-26.0),
        baseline="macc", seeds=(1, 2, 3, 4, 5)),
    "particle-no-comm": dict(
        cfg=lambda: _cfg("particle-social", epochs=20000,
                         early_stop_window=300, early_stop_delta=0.05),
        baseline="no-comm", seeds=(1, 2, 3, 4, 5)),
    "particle-static": dict(
        cfg=lambda: _cfg("particle-social", epochs=3000),
        baseline="static-comm", seeds=(1,)),
    "digits-shared": dict(
        cfg=lambda: _cfg("digits-shared", epochs=5000,
                         early_stop_window=150, early_stop_reward=1.92),
        baseline="macc", seeds=(1, 2, 3, 4, 5)),
    "digits-no-comm": dict(
        cfg=lambda: _cfg("digits-shared", epochs=5000,
                         early_stop_window=200, early_stop_delta=0.01),
        baseline="no-comm", seeds=(1, 2, 3, 4, 5)),
    "particle-probe": dict(
        cfg=lambda: _cfg("particle-social", epochs=2500),
        baseline="macc", seeds=(101,)),
    "digit-probe": dict(
        cfg=lambda: _cfg("digits-shared", epochs=1200),
        baseline="macc", seeds=(201,)),
}


def run_job(name: str, out_root: str, seeds, log_every: int) -> None:
    spec = JOBS[name]
    cfg = spec["cfg"]()
    seeds = seeds or spec["seeds"]
    job_dir = f"{out_root}/{name}"
    for s in seeds:
        t0 = time.time()
        res = train(cfg, seed=s, out_dir=f"{job_dir}/seed_{s}",
                    baseline=spec["baseline"], log_every=log_every)
        print(f"[{name}] seed {s}: {res.epochs_run} epochs"
              f"{' (early stop)' if res.stopped_early else ''}, "
              f"last epoch reward {res.mean_reward_last:.3f}, "
              f"{time.time() - t0:.0f}s", flush=True)
    aggregate(job_dir, f"{job_dir}/aggregate.csv")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("jobs", nargs="+",
                    help=f"job names ({', '.join(JOBS)}) or 'all'")
    ap.add_argument("--out", default="acceptance_runs")
    ap.add_argument("--seeds", type=int, nargs="*", default=None,
                    help="override the job's seed list")
    ap.add_argument("--log-every", type=int, default=500)
    args = ap.parse_args(argv)

    names = list(JOBS) if args.jobs == ["all"] else args.jobs
    for name in names:
        if name not in JOBS:
            ap.error(f"unknown job {name!r}; choose from {', '.join(JOBS)}")
    for name in names:
        run_job(name, args.out, args.seeds, args.log_every)
    return 0


if __name__ == "__main__":
    sys.exit(main())
