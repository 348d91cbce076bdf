"""Scaling study: controller effort versus system size.

Runs the bench sweep (1, 2, and 7 pipes) and prints the Table-style
summary: per-step variable counts, average realized cost, and average
computation time per closed-loop step. The decomposition's per-step
time grows far slower than the variable count squared, which is the
point of splitting the horizon problem.
"""

import csv
from pathlib import Path

from cvheat.cli import main

root = Path(__file__).resolve().parents[1]
out = Path(__file__).parent / "out" / "bench"
code = main(["bench", "--sweep", str(root / "scenarios" / "bench_sweep.yaml"), "--out", str(out)])
assert code == 0, f"bench exited with {code}"

with open(out / "bench.csv", newline="") as f:
    rows = list(csv.DictReader(f))

print(f"{'pipes':>6} {'vars/step':>10} {'avg cost [EUR]':>15} {'avg time [s]':>13}")
for r in rows:
    print(
        f"{r['n_pipes']:>6} {r['n_variables']:>10} "
        f"{float(r['avg_cost_per_step_eur']):>15.5f} "
        f"{float(r['avg_calc_time_per_step_s']):>13.3f}"
    )
small = next(r for r in rows if r["n_pipes"] == "1")
large = next(r for r in rows if r["n_pipes"] == "7")
ratio = float(large["avg_calc_time_per_step_s"]) / float(small["avg_calc_time_per_step_s"])
print(f"\n(7,5)/(1,2) per-step time ratio: {ratio:.1f}")
