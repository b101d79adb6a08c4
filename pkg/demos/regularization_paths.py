"""Compare the three regularization paths on one small instance.

Exact ISS follows the path knot by knot, LBI approximates it with small
explicit steps, and LASSO runs in the penalty parameter instead of time.
Biased annotators should enter first on all three.

Run with ``python3 demos/regularization_paths.py``.
"""

import numpy as np

from posbias import PathConfig, SimulationConfig, build_operators, generate
from posbias.paths import entering_times, gram_stats, iss_path_exact, lasso_path, lbi_path

ds, truth = generate(SimulationConfig(n_items=10, n_good=24, n_biased=6, p1=0.1, p2=0.6), seed=4)
stats = gram_stats(build_operators(ds), ds.response)

iss = iss_path_exact(stats)
lbi = lbi_path(stats, config=PathConfig(kappa=256.0))
las = lasso_path(stats)
print(f"knots: ISS {len(iss)}, LBI {len(lbi)} recorded of {lbi.info['steps']} steps, LASSO {len(las)}")

# larger Z means earlier entry on every path
z = {name: entering_times(path) for name, path in (("iss", iss), ("lbi", lbi), ("lasso", las))}
order = np.argsort(-z["iss"], kind="stable")

print("\nannotator  biased   1/t ISS    1/t LBI   lambda LASSO")
for j in order[:10]:
    print(f"{ds.annotators[j]:>9}  {str(j in truth):>6}  {z['iss'][j]:9.4f}  {z['lbi'][j]:9.4f}"
          f"  {z['lasso'][j]:9.3f}")

for name, zz in z.items():
    top = set(np.argsort(-zz, kind="stable")[: len(truth)])
    print(f"{name:>5}: {len(top & truth)} of the first {len(truth)} entries are biased")
