"""Detection of position-biased annotators in crowdsourced pairwise comparisons.

The model is ``Y = grad @ theta + A @ gamma + noise`` with item scores
``theta`` and a sparse per-annotator position bias ``gamma``.  Biased
annotators are selected along LBI / ISS / LASSO paths with knockoff false
discovery rate control.
"""

from .data import (
    ComparisonDataset,
    ComparisonRecord,
    DesignOperators,
    build_operators,
    left_right_counts,
    parse_dataset,
    read_dataset,
    write_dataset,
)
from .detection import (
    DetectionConfig,
    DetectionReport,
    classify_annotators,
    detect,
    match_ratio,
    reestimate,
)
from .errors import ConvergenceError, DatasetError, DimensionError, NumericalError
from .knockoff import (
    KnockoffFeatures,
    KnockoffStats,
    SelectionResult,
    compute_s,
    construct_knockoffs,
    equivalence_check,
    knockoff_statistics,
    knockoff_threshold,
    reduced_model,
)
from .linalg import LaplacianSystem, complement_basis, nnls, psd_square_root, solve_score
from .paths import PathConfig, SolutionPath, entering_times, iss_path_exact, lasso_path, lbi_path
from .simulation import SimulationConfig, TrialMetrics, generate, run_grid, run_trial

__version__ = "0.1.0"
