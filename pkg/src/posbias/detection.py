"""End-to-end detection of position-biased annotators.

``detect`` builds the design, constructs knockoffs, runs a path engine on
``[A, A_tilde]``, thresholds the knockoff statistics at FDR level ``q``,
refits scores and biases on the selected annotators and sorts every
annotator into good / bad / ugly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text, fmt
from .data import ComparisonDataset, DesignOperators, build_operators, left_right_counts
from .errors import DimensionError
from .knockoff import (
    ENGINES,
    KnockoffStats,
    SelectionResult,
    construct_knockoffs,
    extended_operators,
    knockoff_stats_from_path,
    knockoff_threshold,
    run_path,
)
from .paths import PathConfig, gram_stats

__all__ = [
    "DetectionConfig",
    "DetectionReport",
    "detect",
    "reestimate",
    "classify_annotators",
    "match_ratio",
    "ranks",
    "ISS_EXACT_LIMIT",
]

# above this many annotators the exact ISS path gets expensive and LBI is used
ISS_EXACT_LIMIT = 500


@dataclass
class DetectionConfig:
    """Settings of :func:`detect`.

    ``engine=None`` picks ``"iss_exact"`` up to :data:`ISS_EXACT_LIMIT`
    annotators and ``"lbi"`` beyond.
    """

    q: float = 0.1
    plus: bool = False
    engine: str | None = None
    s_mode: str = "equicorrelated"
    normalize: bool = True
    path: PathConfig = field(default_factory=PathConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if self.engine is not None and self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if self.s_mode not in ("equicorrelated", "sdp"):
            raise ValueError("s_mode must be 'equicorrelated' or 'sdp'")

    def resolve_engine(self, n_annotators):
        if self.engine is not None:
            return self.engine
        return "iss_exact" if n_annotators <= ISS_EXACT_LIMIT else "lbi"


@dataclass
class DetectionReport:
    annotators: tuple
    items: tuple
    engine: str
    stats: KnockoffStats
    selection: SelectionResult
    theta_hat: np.ndarray
    gamma_hat: np.ndarray
    theta_original: np.ndarray
    classes: dict
    counts: dict | None
    match_ratio: dict | None
    config: DetectionConfig

    @property
    def selected_ids(self):
        return [self.annotators[j] for j in self.selection.selected]

    def summary(self):
        sel = self.selection
        return (
            f"selected={sel.n_selected} T={fmt(sel.threshold)} q={fmt(sel.q)} "
            f"plus={str(sel.plus).lower()} engine={self.engine}"
        )

    def annotator_rows(self):
        chosen = set(self.selection.selected)
        for j, key in enumerate(self.annotators):
            left, right = self.counts[key] if self.counts else ("", "")
            mr = fmt(self.match_ratio[key]) if self.match_ratio and key in self.match_ratio else ""
            yield (
                key, left, right, fmt(self.stats.z[j]), fmt(self.stats.z_tilde[j]),
                fmt(self.stats.w[j]), int(j in chosen), self.classes[key],
                fmt(self.gamma_hat[j]), mr,
            )

    def item_rows(self):
        r0, r1 = ranks(self.theta_original), ranks(self.theta_hat)
        for i, key in enumerate(self.items):
            yield key, fmt(self.theta_original[i]), int(r0[i]), fmt(self.theta_hat[i]), int(r1[i])

    def to_text(self) -> str:
        cfg = self.config
        sel = self.selection
        buf = io.StringIO()
        header = [
            ("engine", self.engine),
            ("q", fmt(sel.q)),
            ("plus", str(sel.plus).lower()),
            ("s_mode", cfg.s_mode),
            ("normalize", str(cfg.normalize).lower()),
            ("seed", str(cfg.seed)),
            ("n_items", str(len(self.items))),
            ("n_annotators", str(len(self.annotators))),
            ("threshold", fmt(sel.threshold)),
            ("n_selected", str(sel.n_selected)),
            ("selected", " ".join(self.selected_ids)),
        ]
        buf.write("# position-bias detection report\n")
        for k, v in header:
            buf.write(f"{k} = {v}\n")
        writer = csv.writer(buf, lineterminator="\n")
        buf.write("\n[annotators]\n")
        writer.writerow(("id", "left", "right", "z", "z_tilde", "w", "selected", "class",
                         "gamma_hat", "match_ratio"))
        writer.writerows(self.annotator_rows())
        buf.write("\n[items]\n")
        writer.writerow(("id", "theta_original", "rank_original", "theta_corrected", "rank_corrected"))
        writer.writerows(self.item_rows())
        return buf.getvalue()

    def items_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("id", "theta_original", "rank_original", "theta_corrected", "rank_corrected"))
        writer.writerows(self.item_rows())
        return buf.getvalue()

    def write(self, path):
        atomic_write_text(path, self.to_text())


def ranks(theta):
    """1-based ranks, highest score first; ties keep registry order."""
    order = np.argsort(-np.asarray(theta), kind="stable")
    r = np.empty(len(order), dtype=np.int64)
    r[order] = np.arange(1, len(order) + 1)
    return r


def reestimate(ds: ComparisonDataset, s_hat, ops: DesignOperators | None = None):
    """Least-squares scores and biases with biases restricted to ``s_hat``.

    Solves ``min ||Y - grad theta - A_S gamma_S||`` in the minimum-norm
    sense; ``theta`` is mean-zero on every connected component and
    ``gamma`` vanishes off ``s_hat``.
    """
    ops = ops or build_operators(ds)
    support = np.array(sorted(set(int(j) for j in s_hat)), dtype=np.int64)
    gamma = np.zeros(ops.n_coords)
    sub = ops.with_annot(ops.annot[:, support])
    st = gram_stats(sub, ds.response)
    if support.size:
        g_s = np.linalg.lstsq(st.profiled_gram, st.profiled_cross, rcond=None)[0]
        gamma[support] = g_s
        theta = st.theta_at(g_s)
    else:
        theta = st.theta_at(np.zeros(0))
    return theta, gamma


def classify_annotators(selection: SelectionResult, counts: dict) -> dict:
    """Map every annotator to ``"good"``, ``"bad"`` or ``"ugly"``.

    Not selected: good.  Selected with a zero left or right count: bad.
    Otherwise selected: ugly.  ``counts`` must be ordered by annotator index.
    """
    chosen = set(selection.selected)
    classes = {}
    for j, (key, (left, right)) in enumerate(counts.items()):
        if j not in chosen:
            classes[key] = "good"
        elif left == 0 or right == 0:
            classes[key] = "bad"
        else:
            classes[key] = "ugly"
    return classes


def match_ratio(ds: ComparisonDataset, annotator, theta) -> float:
    """Fraction of an annotator's judgments agreeing with ``sign(theta_l - theta_r)``.

    Score ties count as disagreement.
    """
    if not ds.is_dichotomous:
        raise ValueError("match ratio requires dichotomous responses")
    j = ds.annotator_index(annotator) if isinstance(annotator, str) else int(annotator)
    rows = ds.annot_idx == j
    if not rows.any():
        raise KeyError(f"annotator {annotator!r} has no records")
    theta = np.asarray(theta, dtype=float)
    diff = np.sign(theta[ds.left_idx[rows]] - theta[ds.right_idx[rows]])
    return float(np.mean(diff == np.sign(ds.response[rows])))


def _sign_counts(ds):
    p = ds.n_annotators
    left = np.bincount(ds.annot_idx[ds.response > 0], minlength=p)
    right = np.bincount(ds.annot_idx[ds.response < 0], minlength=p)
    return {key: (int(left[j]), int(right[j])) for j, key in enumerate(ds.annotators)}


def detect(ds: ComparisonDataset, config: DetectionConfig | None = None) -> DetectionReport:
    """Select position-biased annotators with knockoff FDR control.

    Raises
    ------
    DimensionError
        If ``|E| < 2|U| + |V|``.
    """
    cfg = config or DetectionConfig()
    if ds.n_edges < 2 * ds.n_annotators + ds.n_items:
        raise DimensionError(ds.n_edges, ds.n_annotators, ds.n_items)
    ops = build_operators(ds)
    engine = cfg.resolve_engine(ds.n_annotators)
    rng = np.random.default_rng(cfg.seed)

    kf = construct_knockoffs(ops, cfg.s_mode, normalize=cfg.normalize, rng=rng)
    st = gram_stats(extended_operators(ops, kf), ds.response)
    path = run_path(st, engine=engine, config=cfg.path)
    stats = knockoff_stats_from_path(path)
    selection = knockoff_threshold(stats.w, cfg.q, cfg.plus)

    theta_hat, gamma_hat = reestimate(ds, selection.selected, ops)
    theta_orig, _ = reestimate(ds, (), ops)
    if ds.is_dichotomous:
        counts = left_right_counts(ds)
        mr = {key: match_ratio(ds, j, theta_orig) for j, key in enumerate(ds.annotators)
              if np.any(ds.annot_idx == j)}
        classes = classify_annotators(selection, counts)
    else:
        counts, mr = None, None
        classes = classify_annotators(selection, _sign_counts(ds))
    return DetectionReport(
        ds.annotators, ds.items, engine, stats, selection, theta_hat, gamma_hat,
        theta_orig, classes, counts, mr, cfg,
    )
