"""A small Monte-Carlo grid of false discovery rate and power.

Each cell repeats the simulate-then-detect loop with fresh seeds and reports
the mean false discovery proportion and the mean number of true discoveries.
Bigger grids are available from the command line:
``posbias simulate --reps 20 -o grid.csv``.

Run with ``python3 demos/fdr_grid.py`` (about a minute).
"""

from posbias import SimulationConfig, run_grid

base = SimulationConfig(n_items=12, n_good=60, n_biased=30, q=0.1, reps=5, seed=11)
grid = run_grid([0.1, 0.4], [0.4, 0.7], base)

fdp = grid.mean_fdp()
td = grid.mean_true_discoveries()
print(f"target FDR q={base.q}, {base.reps} reps per cell, {base.n_biased} biased annotators\n")
print("  p1    p2   mean FDP   true discoveries")
for i, p1 in enumerate(grid.p1_list):
    for j, p2 in enumerate(grid.p2_list):
        print(f"{p1:4.1f}  {p2:4.1f}   {fdp[i, j]:8.3f}   {td[i, j]:8.1f}")

print("\nCSV form:\n" + grid.to_csv())
