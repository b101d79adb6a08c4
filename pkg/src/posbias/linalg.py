"""Numerical kernels shared by the path solvers and the knockoff construction.

* graph-Laplacian least squares by preconditioned conjugate gradients,
* orthonormal bases of the complement of ``col([grad, annot])``,
* square roots of positive semidefinite matrices,
* nonnegative least squares (Lawson-Hanson active set).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from .errors import ConvergenceError, DimensionError, NumericalError

__all__ = [
    "LaplacianSystem",
    "solve_score",
    "project_mean_zero",
    "complement_basis",
    "psd_square_root",
    "nnls",
    "nnls_gram",
]


def _component_labels_of(lap):
    _, labels = _cc(sp.csr_matrix(lap), directed=False)
    # renumber by smallest node index so labels are deterministic
    relabel = {}
    return np.array([relabel.setdefault(c, len(relabel)) for c in labels], dtype=np.int64)


@dataclass(frozen=True)
class LaplacianSystem:
    """Normal equations ``grad.T @ grad @ theta = rhs`` of an edge-item operator.

    Parameters
    ----------
    grad : sparse matrix, shape (n_edges, n_items)
    tol : float
        Relative residual tolerance of the conjugate gradient solve.
    max_iter : int, optional
        Iteration cap, default ``10 * n_items``.
    component_labels : ndarray, optional
        Connected-component id of every item; derived from the sparsity of
        ``grad.T @ grad`` when omitted.
    """

    grad: sp.spmatrix
    tol: float = 1e-10
    max_iter: int | None = None
    component_labels: np.ndarray | None = None
    lap: sp.csr_matrix = field(init=False, repr=False)
    labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        n = self.grad.shape[1]
        if self.max_iter is None:
            object.__setattr__(self, "max_iter", max(10 * n, 10))
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        lap = sp.csr_matrix(self.grad.T @ self.grad)
        object.__setattr__(self, "lap", lap)
        labels = self.component_labels
        if labels is None:
            labels = _component_labels_of(lap) if n else np.zeros(0, dtype=np.int64)
        object.__setattr__(self, "labels", np.asarray(labels, dtype=np.int64))

    @property
    def n_items(self):
        return self.grad.shape[1]


def project_mean_zero(x, labels):
    """Subtract per-component means along axis 0."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        return x.copy()
    n_comp = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=n_comp).astype(float)
    if x.ndim == 1:
        means = np.bincount(labels, weights=x, minlength=n_comp) / sizes
        return x - means[labels]
    sums = np.zeros((n_comp, x.shape[1]))
    np.add.at(sums, labels, x)
    return x - (sums / sizes[:, None])[labels]


def solve_score(sys: LaplacianSystem, rhs):
    """Minimum-norm solution of ``(grad.T grad) theta = rhs``.

    ``rhs`` is first projected to zero mean on every connected component
    (the range of the Laplacian); the solution is returned mean-zero per
    component, i.e. ``pinv(grad.T grad) @ rhs``.  A 2-D ``rhs`` is solved
    column by column in a single vectorized Jacobi-preconditioned CG.

    Raises
    ------
    ConvergenceError
        If some column misses ``||r|| <= tol * (1 + ||rhs||)`` after
        ``max_iter`` iterations.
    """
    rhs = np.asarray(rhs, dtype=float)
    vec = rhs.ndim == 1
    b = project_mean_zero(rhs.reshape(rhs.shape[0], -1), sys.labels)
    n, k = b.shape
    if n == 0 or k == 0:
        return np.zeros(rhs.shape)
    lap = sys.lap
    diag = lap.diagonal().copy()
    diag[diag == 0] = 1.0
    inv_diag = (1.0 / diag)[:, None]

    bnorm = np.linalg.norm(b, axis=0)
    target = sys.tol * (1.0 + bnorm)
    x = np.zeros_like(b)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    rnorm = bnorm.copy()
    for _ in range(sys.max_iter):
        if np.all(rnorm <= target):
            break
        ap = lap @ p
        pap = np.einsum("ij,ij->j", p, ap)
        live = (rnorm > target) & (pap > 0)
        alpha = np.where(live, rz / np.where(pap > 0, pap, 1.0), 0.0)
        x += alpha * p
        r -= alpha * ap
        # re-project: keeps the residual in range(L) despite roundoff
        r = project_mean_zero(r, sys.labels)
        rnorm = np.linalg.norm(r, axis=0)
        z = inv_diag * r
        rz_new = np.einsum("ij,ij->j", r, z)
        beta = np.where(live & (rz > 0), rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = z + beta * p
        rz = rz_new
    else:
        if not np.all(rnorm <= target):
            raise ConvergenceError(
                f"Laplacian CG did not converge in {sys.max_iter} iterations",
                float(np.max(rnorm)),
            )
    x = project_mean_zero(x, sys.labels)
    return x[:, 0] if vec else x


def _as_dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=float)


def complement_basis(grad, annot, k=None, rng=None, check_tol=1e-8):
    """Orthonormal ``Q`` with ``grad.T Q = 0`` and ``annot.T Q = 0``.

    Randomized range finding: ``k`` Gaussian directions in edge space are
    projected onto the orthogonal complement of ``col([grad, annot])``
    (twice, against roundoff), orthonormalized by QR, then projected and
    orthonormalized once more.

    Parameters
    ----------
    grad, annot : matrices with ``n_edges`` rows
    k : int, optional
        Number of columns, default ``annot.shape[1]``.
    rng : numpy Generator or seed, optional

    Raises
    ------
    DimensionError
        If ``n_edges < 2 * n_annot + n_items``, or if the complement has
        fewer than ``k`` dimensions.
    """
    n_edges, n_items = grad.shape
    n_annot = annot.shape[1]
    if k is None:
        k = n_annot
    if n_edges < 2 * n_annot + n_items:
        raise DimensionError(n_edges, n_annot, n_items)
    rng = np.random.default_rng(rng)

    blocks = sp.hstack([sp.csr_matrix(grad), sp.csr_matrix(annot)]).tocsr()
    gram = _as_dense(blocks.T @ blocks)
    evals, evecs = np.linalg.eigh(gram)
    keep = evals > evals.max() * 1e-12 * gram.shape[0]
    rank = int(keep.sum())
    if n_edges - rank < k:
        raise DimensionError(
            n_edges, n_annot, n_items,
            f"col([grad, annot]) has rank {rank}, leaving {n_edges - rank} < {k} complement directions",
        )
    # pinv(B.T B) restricted to the numerical range
    inv_half = evecs[:, keep] / np.sqrt(evals[keep])

    def project_out(v):
        for _ in range(2):
            coef = inv_half.T @ (blocks.T @ v)
            v = v - blocks @ (inv_half @ coef)
        return v

    q = project_out(rng.standard_normal((n_edges, k)))
    q, r = np.linalg.qr(q)
    diag = np.abs(np.diag(r))
    if k and diag.min() <= 1e-10 * diag.max():
        raise NumericalError("complement basis is rank deficient")
    q, _ = np.linalg.qr(project_out(q))

    err_orth = np.max(np.abs(q.T @ q - np.eye(k))) if k else 0.0
    err_grad = np.max(np.abs(grad.T @ q)) if k and n_items else 0.0
    err_annot = np.max(np.abs(annot.T @ q)) if k and n_annot else 0.0
    if max(err_orth, err_grad, err_annot) > check_tol:
        raise NumericalError(
            f"complement basis check failed: |QtQ-I|={err_orth:.2e}, "
            f"|grad.T Q|={err_grad:.2e}, |annot.T Q|={err_annot:.2e}"
        )
    return q


def psd_square_root(m, clip_tol=None):
    """Factor ``C`` with ``C.T @ C`` equal to ``m`` with small eigenvalues clipped.

    Eigenvalues below ``clip_tol`` (default ``1e-10 * ||m||_2``) are set to
    zero.

    Raises
    ------
    NumericalError
        If ``m`` is not symmetric or has an eigenvalue below ``-clip_tol``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-10 * max(scale, 1.0):
        raise NumericalError("matrix is not symmetric")
    m = 0.5 * (m + m.T)
    evals, evecs = np.linalg.eigh(m)
    if clip_tol is None:
        clip_tol = 1e-10 * max(np.max(np.abs(evals), initial=0.0), np.finfo(float).tiny)
    if evals.size and evals.min() < -clip_tol:
        raise NumericalError(
            f"matrix is indefinite: min eigenvalue {evals.min():.3e} < -{clip_tol:.3e}"
        )
    evals = np.where(evals < clip_tol, 0.0, evals)
    return np.sqrt(evals)[:, None] * evecs.T


def _solve_passive(m, c):
    try:
        return sla.solve(m, c, assume_a="pos", check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        return np.linalg.lstsq(m, c, rcond=None)[0]


def nnls_gram(m, c, x0=None, tol=None, max_iter=None):
    """Minimize ``0.5 x.T m x - c.T x`` over ``x >= 0`` (Lawson-Hanson).

    Parameters
    ----------
    m : ndarray, shape (n, n)
        Symmetric positive semidefinite Hessian.
    c : ndarray, shape (n,)
    x0 : ndarray, optional
        Feasible warm start; its support seeds the passive set.
    tol : float, optional
        Dual feasibility tolerance, default ``1e-11 * max(1, |c|_inf, |m|_inf)``.
    max_iter : int, optional
        Cap on outer iterations, default ``3 * n + 10``.

    Returns
    -------
    x : ndarray
    """
    m = np.asarray(m, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if tol is None:
        tol = 1e-11 * max(1.0, np.max(np.abs(c), initial=0.0), np.max(np.abs(m), initial=0.0))
    if max_iter is None:
        max_iter = 3 * n + 10
    x = np.zeros(n) if x0 is None else np.maximum(np.asarray(x0, dtype=float), 0.0)
    passive = x > 0

    def inner(x, passive):
        # walk from feasible x towards the passive-set minimizer
        for _ in range(n + 1):
            z = np.zeros(n)
            if passive.any():
                z[passive] = _solve_passive(m[np.ix_(passive, passive)], c[passive])
            bad = passive & (z <= 0)
            if not bad.any():
                return z, passive
            idx = np.flatnonzero(bad)
            step = x[idx] / (x[idx] - z[idx])
            i = int(np.argmin(step))
            x = x + step[i] * (z - x)
            x[idx[i]] = 0.0
            passive = passive & (x > 0)
            x[~passive] = 0.0
        raise ConvergenceError("NNLS inner loop did not terminate", float("nan"))

    if passive.any():
        x, passive = inner(x, passive)
    for _ in range(max_iter):
        w = c - m @ x
        cand = np.where(passive, -np.inf, w)
        j = int(np.argmax(cand)) if n else 0
        if n == 0 or cand[j] <= tol:
            return x
        passive = passive.copy()
        passive[j] = True
        x, passive = inner(x, passive)
    raise ConvergenceError(f"NNLS exceeded {max_iter} iterations", float(np.max(c - m @ x)))


def nnls(g, b, tol=None, max_iter=None):
    """Nonnegative least squares ``argmin_{x >= 0} ||g x - b||^2``."""
    g = _as_dense(g)
    b = np.asarray(b, dtype=float)
    return nnls_gram(g.T @ g, g.T @ b, tol=tol, max_iter=max_iter)
