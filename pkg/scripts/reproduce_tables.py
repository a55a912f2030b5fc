"""Run synth -> simulate -> evaluate for a config and print the RAB / relative SE grid.

    python scripts/reproduce_tables.py --config configs/default.yaml --out runs/default
"""

import argparse
import csv
import sys
import time
from collections import defaultdict
from pathlib import Path

from spatialsurvey.cli import main as cli_main


def print_grid(results: Path, m: int, n_bar: int) -> None:
    rows = defaultdict(dict)
    designs = []
    with open(results, newline="") as fh:
        for r in csv.DictReader(fh):
            if int(r["m"]) != m or int(r["n_bar"]) != n_bar:
                continue
            rows[(int(r["day"]), r["rho"], float(r["true"]))][r["design"]] = (float(r["rab"]), float(r["se"]))
            if r["design"] not in designs:
                designs.append(r["design"])
    print(f"relative SE (RAB) at m={m}, n_bar={n_bar}")
    print(f"{'day':>4} {'rho':>4} {'Y':>7} " + " ".join(f"{d:>15}" for d in designs))
    for (day, rho, y), cells in sorted(rows.items()):
        best = min(cells, key=lambda d: cells[d][1])
        out = []
        for d in designs:
            rab, se = cells[d]
            out.append(f"{se:7.3f}{'*' if d == best else ' '}({rab:.4f})")
        print(f"{day:>4} {rho:>4} {y:>7.0f} " + " ".join(out))
    print("* lowest relative SE in the row")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/default.yaml")
    parser.add_argument("--out", default="runs/default")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replicates", type=int)
    parser.add_argument("--m", type=int, default=80)
    parser.add_argument("--n-bar", type=int, default=3)
    args = parser.parse_args()
    extra = [] if args.seed is None else ["--seed", str(args.seed)]
    extra += [] if args.replicates is None else ["--replicates", str(args.replicates)]
    for cmd in ("synth", "simulate", "evaluate"):
        t0 = time.perf_counter()
        code = cli_main([cmd, "--config", args.config, "--out", args.out, *extra])
        if code:
            sys.exit(code)
        print(f"{cmd}: {time.perf_counter() - t0:.1f} s")
    print_grid(Path(args.out) / "tables" / "results.csv", args.m, args.n_bar)
    t6 = Path(args.out) / "tables" / "table6.csv"
    print("\nscreening scenario")
    print(t6.read_text())


if __name__ == "__main__":
    main()
