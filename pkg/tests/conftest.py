import itertools
from pathlib import Path

import numpy as np
import pytest

from posbias.data import ComparisonDataset

FIXTURES = Path(__file__).resolve().parent / "fixtures"

# (criterion, passed, detail) lines reported at the end of the session
ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail=""):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
    if detail:
        line += f": {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def random_dataset(rng, n_items, n_annotators, per_annotator=None, gamma=None, noise=1.0,
                   theta=None, dichotomous=False):
    """Random comparisons on a complete item graph.

    Every annotator judges ``per_annotator`` random pairs (all pairs by
    default) in random orientation; responses follow the linear model.

    Returns
    -------
    ds, theta, gamma
    """
    pairs = np.array(list(itertools.combinations(range(n_items), 2)))
    theta = rng.normal(size=n_items) if theta is None else np.asarray(theta, dtype=float)
    theta = theta - theta.mean()
    gamma = np.zeros(n_annotators) if gamma is None else np.asarray(gamma, dtype=float)
    a, l, r = [], [], []
    for j in range(n_annotators):
        if per_annotator is None:
            chosen = pairs
        else:
            chosen = pairs[rng.choice(len(pairs), size=per_annotator, replace=per_annotator > len(pairs))]
        flip = rng.random(len(chosen)) < 0.5
        l.extend(np.where(flip, chosen[:, 1], chosen[:, 0]))
        r.extend(np.where(flip, chosen[:, 0], chosen[:, 1]))
        a.extend([j] * len(chosen))
    a, l, r = np.array(a), np.array(l), np.array(r)
    y = theta[l] - theta[r] + gamma[a] + noise * rng.normal(size=len(a))
    if dichotomous:
        y = np.where(y >= 0, 1.0, -1.0)
    ds = ComparisonDataset([f"v{i}" for i in range(n_items)], [f"a{j}" for j in range(n_annotators)],
                           a, l, r, y)
    return ds, theta, gamma


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
