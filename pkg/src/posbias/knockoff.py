"""Knockoff filter for annotator bias with a nuisance score vector.

Knockoff copies ``A_tilde`` of the annotator design ``A`` satisfy::

    A_tilde.T A_tilde = A.T A
    A.T A_tilde       = A.T A - diag(s)
    grad.T A_tilde    = grad.T A

and are built as ``A - (I - H) A inv(Sigma) diag(s) + Q C`` where ``H``
projects onto ``col(grad)``, ``Sigma = A.T (I - H) A``, ``Q`` is an
orthonormal basis orthogonal to ``[grad, A]`` and
``C.T C = 2 diag(s) - diag(s) inv(Sigma) diag(s)``.  ``H`` is never formed;
every product with it goes through a Laplacian solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data import DesignOperators
from .errors import DimensionError, NumericalError
from .linalg import LaplacianSystem, complement_basis, psd_square_root, solve_score
from .paths import (
    PathConfig,
    default_lambda_grid,
    entering_times,
    gram_stats,
    iss_path_exact,
    lasso_path,
    lbi_path,
)

__all__ = [
    "KnockoffFeatures",
    "KnockoffStats",
    "SelectionResult",
    "EquivalenceReport",
    "compute_s",
    "construct_knockoffs",
    "extended_operators",
    "knockoff_statistics",
    "knockoff_threshold",
    "residual_design",
    "kernel_basis",
    "reduced_model",
    "run_path",
    "knockoff_stats_from_path",
    "equivalence_check",
]

ENGINES = ("lbi", "iss_exact", "lasso")


@dataclass
class KnockoffFeatures:
    """Knockoff design and the ingredients of its construction.

    ``s`` is expressed in the units of the raw design, so the three Gram
    identities hold verbatim even when it was chosen on normalized columns.
    """

    a_tilde: np.ndarray
    s: np.ndarray
    q_basis: np.ndarray
    c_factor: np.ndarray
    mode: str
    sigma: np.ndarray = field(repr=False)
    normalized: bool = False

    @property
    def n_annotators(self):
        return self.a_tilde.shape[1]


@dataclass
class KnockoffStats:
    z: np.ndarray
    z_tilde: np.ndarray
    w: np.ndarray


@dataclass
class SelectionResult:
    threshold: float
    selected: tuple
    q: float
    plus: bool

    @property
    def n_selected(self):
        return len(self.selected)


# ----------------------------------------------------------------------------
# s vector


def compute_s(sigma, mode="equicorrelated", max_iter=60):
    """Knockoff gap vector ``s`` for Gram matrix ``sigma``.

    Constraints: ``0 <= s_j <= 1`` and ``diag(s) <= 2 sigma`` (Loewner).

    ``"equicorrelated"`` sets every ``s_j = min(1, 2 lambda_min(sigma))``.
    ``"sdp"`` maximizes ``sum(s)`` under the same constraints with a
    log-barrier interior point method (damped Newton steps on
    ``t sum(s) + logdet(2 sigma - diag(s)) + sum(log s + log(1 - s))``,
    ``t`` growing tenfold per round, at most ``max_iter`` Newton steps per
    round).  The equicorrelated vector is returned if it is better.

    Raises
    ------
    NumericalError
        If ``lambda_min(sigma) <= 1e-12``: some column lies numerically in
        the span of the nuisance design and no knockoff gap exists.
    """
    sigma = np.asarray(sigma, dtype=float)
    sigma = 0.5 * (sigma + sigma.T)
    p = sigma.shape[0]
    if p == 0:
        return np.zeros(0)
    lam_min = float(np.linalg.eigvalsh(sigma)[0])
    if lam_min <= 1e-12:
        raise NumericalError(
            f"Sigma = A.T (I - H) A is singular (lambda_min = {lam_min:.3e}); "
            "an annotator column lies in col(grad) and knockoffs degenerate"
        )
    s_eq = np.full(p, min(1.0, 2.0 * lam_min))
    if mode == "equicorrelated":
        return s_eq
    if mode != "sdp":
        raise ValueError(f"unknown s mode {mode!r}")

    two_sigma = 2.0 * sigma
    s = 0.5 * s_eq
    t = 1.0
    while p / t > 1e-9:
        for _ in range(max_iter):
            xinv = np.linalg.inv(two_sigma - np.diag(s))
            grad = t - np.diag(xinv) + 1.0 / s - 1.0 / (1.0 - s)
            hess = xinv * xinv + np.diag(1.0 / s**2 + 1.0 / (1.0 - s) ** 2)
            step = np.linalg.solve(hess, grad)
            if grad @ step <= 1e-12:
                break
            # largest feasible step, then backtrack
            a = 1.0
            while a > 1e-12:
                cand = s + a * step
                if np.all((cand > 0) & (cand < 1)):
                    try:
                        np.linalg.cholesky(two_sigma - np.diag(cand))
                        break
                    except np.linalg.LinAlgError:
                        pass
                a *= 0.5
            s = s + 0.99 * a * step
        t *= 10.0
    if np.linalg.eigvalsh(two_sigma - np.diag(s))[0] < -1e-8 or s.sum() < s_eq.sum():
        return s_eq
    return s


# ----------------------------------------------------------------------------
# construction


def residual_design(ops: DesignOperators, system: LaplacianSystem | None = None):
    """``(I - H) A`` as a dense array, together with ``Sigma = A.T (I - H) A``."""
    if system is None:
        system = LaplacianSystem(ops.grad, component_labels=ops.component_labels)
    a = ops.annot
    m = ops.grad.T @ a
    m = m.toarray() if sp.issparse(m) else np.asarray(m)
    r = solve_score(system, m)
    a_dense = a.toarray() if sp.issparse(a) else np.asarray(a, dtype=float)
    resid = a_dense - ops.grad @ r
    ata = a.T @ a
    ata = ata.toarray() if sp.issparse(ata) else np.asarray(ata)
    sigma = ata - m.T @ r
    return resid, 0.5 * (sigma + sigma.T)


def construct_knockoffs(ops: DesignOperators, mode="equicorrelated", normalize=True,
                        rng=None, check_tol=1e-6) -> KnockoffFeatures:
    """Build knockoffs of the annotator columns of ``ops``.

    Parameters
    ----------
    ops : DesignOperators
    mode : {"equicorrelated", "sdp"}
    normalize : bool
        Choose ``s`` on the correlation scale of ``(I - H) A`` (unit column
        norms) and map it back.  Without it the box ``s_j <= 1`` is applied
        to raw Gram entries, so annotators with many labels get knockoffs
        that are nearly copies of their own column.
    rng : numpy Generator or seed
        Drives the random complement basis ``Q``.

    Raises
    ------
    DimensionError
        If ``|E| < 2|U| + |V|``.
    NumericalError
        If ``Sigma`` is singular, or the Gram identities fail to hold within
        ``check_tol`` entrywise.
    """
    n_edges, n_items, p = ops.n_edges, ops.n_items, ops.n_coords
    if n_edges < 2 * p + n_items:
        raise DimensionError(n_edges, p, n_items)
    system = LaplacianSystem(ops.grad, component_labels=ops.component_labels)
    resid, sigma = residual_design(ops, system)

    if normalize:
        d = np.sqrt(np.diag(sigma))
        if np.any(d <= 0):
            raise NumericalError("an annotator column is entirely explained by item scores")
        s = compute_s(sigma / np.outer(d, d), mode) * d**2
    else:
        s = compute_s(sigma, mode)

    sinv_s = np.linalg.solve(sigma, np.diag(s))
    cc = 2.0 * np.diag(s) - np.diag(s) @ sinv_s
    c = psd_square_root(0.5 * (cc + cc.T))
    q = complement_basis(ops.grad, ops.annot, p, rng=rng)
    a = ops.annot.toarray() if sp.issparse(ops.annot) else np.asarray(ops.annot, dtype=float)
    a_tilde = a - resid @ sinv_s + q @ c

    kf = KnockoffFeatures(a_tilde, s, q, c, mode, sigma, normalize)
    errs = gram_condition_errors(ops, kf)
    if max(errs.values()) > check_tol:
        raise NumericalError(f"knockoff Gram conditions violated: {errs}")
    return kf


def gram_condition_errors(ops: DesignOperators, kf: KnockoffFeatures) -> dict:
    """Max entrywise violations of the three Gram identities."""
    a = ops.annot
    at = kf.a_tilde
    ata = a.T @ a
    ata = ata.toarray() if sp.issparse(ata) else np.asarray(ata)
    ga = ops.grad.T @ a
    ga = ga.toarray() if sp.issparse(ga) else np.asarray(ga)
    return {
        "tilde_gram": float(np.max(np.abs(at.T @ at - ata), initial=0.0)),
        "cross_gram": float(np.max(np.abs(np.asarray(a.T @ at) - (ata - np.diag(kf.s))), initial=0.0)),
        "grad_cross": float(np.max(np.abs(np.asarray(ops.grad.T @ at) - ga), initial=0.0)),
    }


def extended_operators(ops: DesignOperators, kf: KnockoffFeatures) -> DesignOperators:
    """Operators with the design replaced by ``[A, A_tilde]``."""
    a = ops.annot.toarray() if sp.issparse(ops.annot) else np.asarray(ops.annot, dtype=float)
    return ops.with_annot(np.hstack([a, kf.a_tilde]))


# ----------------------------------------------------------------------------
# statistics and threshold


def knockoff_statistics(z, z_tilde) -> KnockoffStats:
    """``w_j = max(z_j, z_tilde_j) * sign(z_j - z_tilde_j)``."""
    z = np.asarray(z, dtype=float)
    zt = np.asarray(z_tilde, dtype=float)
    if z.shape != zt.shape:
        raise ValueError("z and z_tilde must have equal lengths")
    w = np.maximum(z, zt) * np.sign(z - zt)
    return KnockoffStats(z, zt, w)


def knockoff_threshold(w, q, plus=False) -> SelectionResult:
    """Data-dependent knockoff (``plus=False``) or knockoff+ threshold.

    ``T = min{t : (offset + #{w_j <= -t}) / max(1, #{w_j >= t}) <= q}`` over
    ``t`` in the nonzero ``|w_j|``, with offset 0 or 1.  ``T = inf`` and an
    empty selection when no ``t`` qualifies.
    """
    w = np.asarray(w, dtype=float)
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    offset = 1.0 if plus else 0.0
    cands = np.unique(np.abs(w[w != 0]))
    for t in cands:
        ratio = (offset + np.count_nonzero(w <= -t)) / max(1, np.count_nonzero(w >= t))
        if ratio <= q:
            return SelectionResult(float(t), tuple(int(j) for j in np.flatnonzero(w >= t)), q, plus)
    return SelectionResult(np.inf, (), q, plus)


# ----------------------------------------------------------------------------
# paths on the extended design


def run_path(ops_or_stats, y=None, engine="iss_exact", config: PathConfig | None = None):
    if engine == "lbi":
        return lbi_path(ops_or_stats, y, config)
    if engine == "iss_exact":
        return iss_path_exact(ops_or_stats, y, config)
    if engine == "lasso":
        return lasso_path(ops_or_stats, y, config)
    raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")


def knockoff_stats_from_path(path) -> KnockoffStats:
    """Split the entering statistics of ``[A, A_tilde]`` into ``(z, z_tilde)``."""
    z_all = entering_times(path)
    p = z_all.shape[0] // 2
    return knockoff_statistics(z_all[:p], z_all[p:])


# ----------------------------------------------------------------------------
# reduced model


def kernel_basis(grad, tol=None):
    """Orthonormal basis ``U2`` of ``ker(grad.T)`` from a full SVD of ``grad``.

    Dense; meant for small instances.
    """
    g = grad.toarray() if sp.issparse(grad) else np.asarray(grad, dtype=float)
    u, sv, _ = np.linalg.svd(g, full_matrices=True)
    if tol is None:
        tol = max(g.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    return u[:, rank:]


def reduced_model(ops: DesignOperators, y, u2=None):
    """Eliminate the scores: ``X = U2.T A``, ``y_r = U2.T y``.

    Returns
    -------
    x : ndarray
    y_r : ndarray
    u2 : ndarray
    """
    if u2 is None:
        u2 = kernel_basis(ops.grad)
    a = ops.annot.toarray() if sp.issparse(ops.annot) else np.asarray(ops.annot, dtype=float)
    return u2.T @ a, u2.T @ np.asarray(y, dtype=float), u2


@dataclass
class EquivalenceReport:
    engine: str
    w_full: np.ndarray
    w_reduced: np.ndarray
    max_diff: float
    tol: float

    @property
    def passed(self):
        return bool(self.max_diff <= self.tol)

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        rel = "<" if self.passed else ">="
        tol = f"{self.tol:g}".replace("e-0", "e-").replace("e+0", "e+")
        return f"{status} max_diff{rel}{tol} (max_diff={self.max_diff:.3e}, engine={self.engine})"


def equivalence_check(ops: DesignOperators, y, mode="equicorrelated", engine="iss_exact",
                      config: PathConfig | None = None, normalize=True, rng=None,
                      tol=1e-6, knockoffs: KnockoffFeatures | None = None) -> EquivalenceReport:
    """Compare knockoff statistics of the full model and the reduced model.

    The full pipeline profiles the scores out through Laplacian solves on
    ``[grad, A, A_tilde]``; the reduced pipeline regresses ``U2.T y`` on
    ``[U2.T A, U2.T A_tilde]`` with no score block at all.
    """
    if engine not in ("iss_exact", "lasso"):
        raise ValueError("equivalence holds for the exact ISS and LASSO paths")
    if ops.n_coords > 100:
        warnings.warn(
            f"equivalence_check uses a dense SVD; {ops.n_coords} annotators exceeds the "
            "guideline of 100", stacklevel=2,
        )
    cfg = config or PathConfig()
    kf = knockoffs or construct_knockoffs(ops, mode, normalize=normalize, rng=rng)
    ext = extended_operators(ops, kf)
    st_full = gram_stats(ext, y)

    x_ko, y_r, _ = reduced_model(ext, y)
    red = DesignOperators(sp.csr_matrix((x_ko.shape[0], 0)), x_ko, np.zeros(0, dtype=np.int64))
    st_red = gram_stats(red, y_r)

    if engine == "lasso" and cfg.lambda_grid is None:
        lam = max(st_full.lambda_max, st_red.lambda_max)
        cfg = PathConfig(**{**cfg.__dict__, "lambda_grid": default_lambda_grid(
            lam, cfg.n_lambda, cfg.lambda_min_ratio)})
    w_full = knockoff_stats_from_path(run_path(st_full, engine=engine, config=cfg)).w
    w_red = knockoff_stats_from_path(run_path(st_red, engine=engine, config=cfg)).w
    diff = float(np.max(np.abs(w_full - w_red), initial=0.0))
    return EquivalenceReport(engine, w_full, w_red, diff, tol)
