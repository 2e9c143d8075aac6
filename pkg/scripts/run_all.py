"""Run every bundled scenario through the CLI, one output directory each.

    python scripts/run_all.py --out runs/ [--jobs N] [--only case-3 delay-ok]

Simulation scenarios go through ``mgstab simulate``; documents with
``"kind": "eig-sweep"`` go through ``mgstab eigs``. Runs are independent, so
``--jobs`` > 1 executes them in parallel processes.
"""
import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from mgstab.cli import run_cli

SCEN = Path(__file__).resolve().parents[1] / "src" / "mgstab" / "data" / "scenarios"


def run_one(path: Path, out: Path) -> tuple[str, int, float]:
    kind = json.loads(path.read_text()).get("kind")
    dest = out / path.stem
    if kind == "eig-sweep":
        argv = ["eigs", "--sweep", str(path), "--out", str(dest)]
    else:
        argv = ["simulate", "--scenario", str(path), "--out", str(dest)]
    t0 = time.perf_counter()
    code = run_cli(argv)
    return path.stem, code, time.perf_counter() - t0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="scenario names (default: all bundled)")
    a = ap.parse_args(argv)
    paths = sorted(SCEN.glob("*.json"))
    if a.only:
        paths = [p for p in paths if p.stem in a.only]
    out = Path(a.out)
    t0 = time.perf_counter()
    if a.jobs > 1:
        with ProcessPoolExecutor(a.jobs) as pool:
            results = list(pool.map(run_one, paths, [out] * len(paths)))
    else:
        results = [run_one(p, out) for p in paths]
    for name, code, dt in results:
        print(f"{name:28s} exit {code}  {dt:7.1f} s")
    print(f"total {time.perf_counter() - t0:.1f} s")
    return max((code for _, code, _ in results), default=0)


if __name__ == "__main__":
    sys.exit(main())
