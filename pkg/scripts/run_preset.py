"""Run one or more preset experiments and write their reports.

    python3 scripts/run_preset.py triangle_power even_cycle --out runs/
    python3 scripts/run_preset.py --all --out runs/ --replicas 50

Each preset lands in ``<out>/<name>/report.json`` and ``replicas.csv``.
Exit status is 1 if any non-exploratory preset fails its assertions.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from errw.experiments import PRESETS, preset, run_experiment


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="*", help=f"preset names: {', '.join(sorted(PRESETS))}")
    p.add_argument("--all", action="store_true", help="run every preset")
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args(argv)
    names = sorted(PRESETS) if args.all else args.names
    if not names:
        p.error("name at least one preset or pass --all")

    failed = False
    for name in names:
        cfg = preset(name)
        changes = {k: v for k, v in (("replicas", args.replicas), ("n_steps", args.steps),
                                     ("workers", args.workers)) if v is not None}
        if changes:
            cfg = cfg.replace(**changes)
        t0 = time.perf_counter()
        report = run_experiment(cfg)
        report.write(args.out / name)
        status = "ok" if report.passed else ("exploratory" if cfg.exploratory else "FAILED")
        failed |= not report.passed and not cfg.exploratory
        print(f"{name}: {status} in {time.perf_counter() - t0:.1f}s")
        for key, value in report.aggregate.items():
            print(f"  {key}: {value}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
