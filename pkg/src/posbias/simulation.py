"""Synthetic crowdsourced comparisons with planted position bias.

A random total order on ``n_items`` candidates is drawn, and every
annotator judges every unordered pair once with the presentation side
chosen uniformly.  Good annotators report the true direction with
probability ``1 - p1``.  Biased annotators click their preferred side
(left by default) with probability ``p2`` and otherwise behave like good
annotators.
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._io import atomic_write_text, fmt
from .data import ComparisonDataset
from .detection import DetectionConfig, detect
from .paths import PathConfig

__all__ = [
    "SimulationConfig",
    "TrialMetrics",
    "GridResult",
    "generate",
    "run_trial",
    "run_grid",
    "trial_metrics",
    "child_seed",
]


@dataclass
class SimulationConfig:
    n_items: int = 16
    n_good: int = 100
    n_biased: int = 50
    p1: float = 0.1
    p2: float = 0.5
    q: float = 0.1
    plus: bool = False
    reps: int = 100
    engine: str = "iss_exact"
    s_mode: str = "equicorrelated"
    normalize: bool = True
    path: PathConfig = field(default_factory=PathConfig)
    bias_side: str = "left"
    seed: int = 0

    def __post_init__(self):
        for name in ("p1", "p2", "q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_items < 2:
            raise ValueError("n_items must be >= 2")
        if self.n_good < 0 or self.n_biased < 0:
            raise ValueError("annotator counts must be nonnegative")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.bias_side not in ("left", "random"):
            raise ValueError("bias_side must be 'left' or 'random'")

    @property
    def n_annotators(self):
        return self.n_good + self.n_biased

    def detection_config(self, seed) -> DetectionConfig:
        return DetectionConfig(q=self.q, plus=self.plus, engine=self.engine, s_mode=self.s_mode,
                               normalize=self.normalize, path=self.path, seed=seed)


@dataclass(frozen=True)
class TrialMetrics:
    fdp: float
    true_discoveries: int
    selected_size: int

    @property
    def false_discoveries(self):
        return self.selected_size - self.true_discoveries


def generate(cfg: SimulationConfig, seed=None):
    """Draw one synthetic dataset.

    Annotators ``a1 .. a{n_good}`` are good and the remaining ones biased;
    items are ``v1 .. v{n_items}``.

    Returns
    -------
    ds : ComparisonDataset
    truth : frozenset of int
        Indices of the biased annotators.
    """
    rng = np.random.default_rng(seed)
    n, n_ann = cfg.n_items, cfg.n_annotators
    true_score = rng.permutation(n)
    pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64)
    n_pairs = len(pairs)
    total = n_pairs * n_ann

    annot = np.repeat(np.arange(n_ann), n_pairs)
    i = np.tile(pairs[:, 0], n_ann)
    j = np.tile(pairs[:, 1], n_ann)
    swap = rng.random(total) < 0.5
    left = np.where(swap, j, i)
    right = np.where(swap, i, j)
    truth_dir = np.where(true_score[left] > true_score[right], 1.0, -1.0)
    flip = rng.random(total) < cfg.p1
    response = np.where(flip, -truth_dir, truth_dir)

    biased = annot >= cfg.n_good
    if cfg.bias_side == "left":
        side = np.ones(n_ann)
    else:
        side = np.where(rng.random(n_ann) < 0.5, 1.0, -1.0)
    position = biased & (rng.random(total) < cfg.p2)
    response = np.where(position, side[annot], response)

    ds = ComparisonDataset(
        [f"v{k + 1}" for k in range(n)],
        [f"a{k + 1}" for k in range(n_ann)],
        annot, left, right, response,
    )
    return ds, frozenset(range(cfg.n_good, n_ann))


def trial_metrics(selected, truth) -> TrialMetrics:
    selected = set(selected)
    td = len(selected & set(truth))
    fp = len(selected) - td
    return TrialMetrics(fp / max(len(selected), 1), td, len(selected))


def _split(seed):
    data_ss, det_ss = np.random.SeedSequence(seed).spawn(2)
    return data_ss, int(det_ss.generate_state(1)[0])


def run_trial(cfg: SimulationConfig, seed=None) -> TrialMetrics:
    """Generate, detect and score one trial."""
    seed = cfg.seed if seed is None else seed
    data_ss, det_seed = _split(seed)
    ds, truth = generate(cfg, np.random.default_rng(data_ss))
    report = detect(ds, cfg.detection_config(det_seed))
    return trial_metrics(report.selection.selected, truth)


def child_seed(seed, i, j, rep) -> int:
    """Seed of replicate ``rep`` in grid cell ``(i, j)``."""
    return int(np.random.SeedSequence([int(seed), int(i), int(j), int(rep)]).generate_state(1)[0])


@dataclass
class GridResult:
    p1_list: list
    p2_list: list
    trials: list  # trials[i][j] -> list of TrialMetrics
    config: SimulationConfig

    def mean_fdp(self):
        return np.array([[np.mean([t.fdp for t in cell]) for cell in row] for row in self.trials])

    def mean_true_discoveries(self):
        return np.array([[np.mean([t.true_discoveries for t in cell]) for cell in row]
                         for row in self.trials])

    def rows(self):
        fdp, td = self.mean_fdp(), self.mean_true_discoveries()
        cfg = self.config
        for i, p1 in enumerate(self.p1_list):
            for j, p2 in enumerate(self.p2_list):
                yield (fmt(p1), fmt(p2), fmt(fdp[i, j]), fmt(td[i, j]), cfg.reps, cfg.engine, fmt(cfg.q))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("p1", "p2", "mean_fdp", "mean_true_discoveries", "reps", "engine", "q"))
        w.writerows(self.rows())
        return buf.getvalue()

    def write(self, path):
        atomic_write_text(path, self.to_csv())


def _grid_task(args):
    cfg, seed = args
    return run_trial(cfg, seed)


def run_grid(p1_list, p2_list, base_cfg: SimulationConfig, n_jobs=1) -> GridResult:
    """Mean FDP and true discoveries over ``base_cfg.reps`` trials per cell.

    Replicate ``r`` of cell ``(i, j)`` uses ``child_seed(base_cfg.seed, i, j, r)``,
    so results do not depend on ``n_jobs`` or completion order.
    """
    p1_list, p2_list = list(p1_list), list(p2_list)
    tasks, index = [], []
    for i, p1 in enumerate(p1_list):
        for j, p2 in enumerate(p2_list):
            cfg = replace(base_cfg, p1=p1, p2=p2)
            for r in range(base_cfg.reps):
                tasks.append((cfg, child_seed(base_cfg.seed, i, j, r)))
                index.append((i, j))
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_grid_task, tasks, chunksize=1))
    else:
        results = [_grid_task(t) for t in tasks]
    trials = [[[] for _ in p2_list] for _ in p1_list]
    for (i, j), res in zip(index, results):
        trials[i][j].append(res)
    return GridResult(p1_list, p2_list, trials, base_cfg)
