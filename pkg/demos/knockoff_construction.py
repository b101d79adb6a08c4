"""Build knockoff copies of the annotator design and inspect them.

A knockoff column mimics the correlations of its original but is built to
carry no bias signal.  The script checks the three Gram identities and shows
how the gap vector ``s`` differs between the equicorrelated and SDP choices.
Items here are compared only with their neighbours on a line, and most
judgments show the lower-numbered item on the left.  The sum of all
annotator columns is then close to a score difference, so the residual
columns are strongly correlated and the two choices of ``s`` differ.

Run with ``python3 demos/knockoff_construction.py``.
"""

import numpy as np

from posbias import ComparisonDataset, build_operators, construct_knockoffs
from posbias.knockoff import gram_condition_errors

rng = np.random.default_rng(2)
n_items, n_annotators, per = 6, 20, 8
pairs = np.array([(k, k + 1) for k in range(n_items - 1)])
picks = rng.integers(0, len(pairs), n_annotators * per)
swap = rng.random(len(picks)) < 0.1
left = np.where(swap, pairs[picks, 1], pairs[picks, 0])
right = np.where(swap, pairs[picks, 0], pairs[picks, 1])
theta = rng.normal(size=n_items)
y = np.sign(theta[left] - theta[right] + rng.normal(size=len(picks)))
ds = ComparisonDataset([f"i{k}" for k in range(n_items)], [f"a{k}" for k in range(n_annotators)],
                       np.repeat(np.arange(n_annotators), per), left, right, y)

ops = build_operators(ds)
print(f"|E|={ops.n_edges}  |V|={ops.n_items}  |U|={ops.n_coords}")

for mode in ("equicorrelated", "sdp"):
    kf = construct_knockoffs(ops, mode, rng=0)
    errs = gram_condition_errors(ops, kf)
    d = np.diag(kf.sigma)
    eig = np.linalg.eigvalsh(2 * kf.sigma - np.diag(kf.s))[0]
    print(f"\n{mode}")
    print("  max Gram violations: " + ", ".join(f"{k}={v:.1e}" for k, v in errs.items()))
    print(f"  s / diag(sigma): mean {np.mean(kf.s / d):.3f}, min {np.min(kf.s / d):.3f}")
    print(f"  smallest eigenvalue of 2 sigma - diag(s): {eig:.3e}")
    # residual correlation of each column with its own knockoff
    print(f"  median original/knockoff correlation: {np.median(1 - kf.s / d):.3f}")
