"""Regularization paths of the sparse-bias model.

Three engines share the :class:`SolutionPath` output type:

``lbi_path``
    Linearized Bregman iteration: gradient steps on ``theta`` and on the
    dual variable ``w`` of ``gamma`` with ``gamma = kappa * shrink(w)``.
``iss_path_exact``
    Piecewise-constant inverse scale space path, one nonnegative least
    squares fit per knot.
``lasso_path``
    Exact piecewise-linear LASSO homotopy, sampled on a lambda grid.

All three only touch the design through its Gram matrix and its cross
products with the response (:class:`GramStats`); ``theta`` is profiled
out by a graph-Laplacian solve wherever the dynamics require it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data import DesignOperators
from .errors import ConvergenceError, NumericalError
from .linalg import LaplacianSystem, nnls_gram, solve_score

__all__ = [
    "PathConfig",
    "SolutionPath",
    "GramStats",
    "gram_stats",
    "shrink",
    "lbi_path",
    "iss_path_exact",
    "lasso_path",
    "entering_times",
    "default_lambda_grid",
]


def shrink(x):
    """Soft threshold at one: ``sign(x) * max(|x| - 1, 0)``."""
    return np.sign(x) * np.maximum(np.abs(x) - 1.0, 0.0)


@dataclass
class PathConfig:
    """Parameters of the path engines.

    Attributes
    ----------
    kappa : float
        LBI damping; large values approach the ISS limit.
    dt : float or None
        LBI step; ``None`` picks ``1 / (2 kappa ||K||_2)`` with ``K`` the
        Gram matrix of ``[grad, design]``.
    t_max : float or None
        End time of ISS/LBI paths.  ``None`` runs exact ISS to completion
        and LBI to ``lbi_horizon / lambda_max``.
    lambda_grid : array or None
        Strictly decreasing LASSO grid; ``None`` uses ``n_lambda`` log-spaced
        values from ``lambda_max`` to ``lambda_min_ratio * lambda_max``.
    record_stride : int
        LBI records a knot every ``record_stride`` steps (plus at every
        sign-pattern change of ``gamma``).
    """

    kappa: float = 256.0
    dt: float | None = None
    t_max: float | None = None
    lambda_grid: np.ndarray | None = None
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-3
    record_stride: int = 1000
    lbi_horizon: float = 20.0
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_max is not None and not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.lambda_grid is not None:
            grid = np.asarray(self.lambda_grid, dtype=float)
            if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
                raise ValueError("lambda_grid must be a nonempty vector of positive values")
            if np.any(np.diff(grid) >= 0):
                raise ValueError("lambda_grid must be strictly decreasing")
            self.lambda_grid = grid


@dataclass
class SolutionPath:
    """Knots ``(param, gamma, theta)`` of a solution path.

    ``params`` increase for time paths (``kind == "time"``) and decrease for
    LASSO paths (``kind == "lambda"``).  ``entering[j]`` is the first
    parameter at which coordinate ``j`` is nonzero, ``nan`` if never.
    """

    params: np.ndarray
    gammas: np.ndarray
    thetas: np.ndarray
    kind: str
    entering: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def knots(self):
        return list(zip(self.params, self.gammas, self.thetas))

    @property
    def n_coords(self):
        return self.gammas.shape[1]

    def __len__(self):
        return len(self.params)


def entering_times(path: SolutionPath) -> np.ndarray:
    """Entering statistic ``Z_j`` of every coordinate.

    ``sup{lambda : gamma_j(lambda) != 0}`` for LASSO paths and
    ``1 / t_enter`` for time paths; zero for coordinates that never enter.
    """
    ent = np.asarray(path.entering, dtype=float)
    z = np.zeros_like(ent)
    hit = np.isfinite(ent)
    if path.kind == "lambda":
        z[hit] = ent[hit]
    elif path.kind == "time":
        with np.errstate(divide="ignore"):
            z[hit] = np.where(ent[hit] > 0, 1.0 / ent[hit], np.inf)
    else:
        raise ValueError(f"unknown path kind {path.kind!r}")
    return z


@dataclass(frozen=True)
class GramStats:
    """Sufficient statistics of ``(grad, design, y)``.

    ``k_tt = grad.T grad``, ``k_tg = grad.T design``, ``k_gg = design.T design``,
    ``c_t = grad.T y`` and ``c_g = design.T y``.  ``profiled_gram`` and
    ``profiled_cross`` eliminate ``theta``:
    ``G = design.T (I - H) design`` and ``b = design.T (I - H) y`` with
    ``H`` the projector onto ``col(grad)``.
    """

    k_tt: np.ndarray
    k_tg: np.ndarray
    k_gg: np.ndarray
    c_t: np.ndarray
    c_g: np.ndarray
    y_norm: float
    system: LaplacianSystem | None
    profiled_gram: np.ndarray
    profiled_cross: np.ndarray

    @property
    def n_items(self):
        return self.k_tt.shape[0]

    @property
    def n_coords(self):
        return self.k_gg.shape[0]

    @property
    def lambda_max(self):
        return float(np.max(np.abs(self.profiled_cross), initial=0.0))

    def theta_at(self, gamma):
        """Least-squares scores given biases: ``pinv(grad.T grad) grad.T (y - design gamma)``."""
        if self.system is None:
            return np.zeros((0,) + np.shape(gamma)[1:])
        gamma = np.asarray(gamma, dtype=float)
        c_t = self.c_t if gamma.ndim == 1 else self.c_t[:, None]
        return solve_score(self.system, c_t - self.k_tg @ gamma)

    def full_gram(self):
        return np.block([[self.k_tt, self.k_tg], [self.k_tg.T, self.k_gg]])


def _dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=float)


def gram_stats(ops: DesignOperators, y, tol=1e-10) -> GramStats:
    """Compute :class:`GramStats` for a design and response.

    ``ops.grad`` may have zero columns (plain regression on ``ops.annot``).
    """
    y = np.asarray(y, dtype=float)
    grad, design = ops.grad, ops.annot
    if y.shape != (ops.n_edges,):
        raise ValueError(f"response must have length {ops.n_edges}")
    k_gg = _dense(design.T @ design)
    c_g = np.asarray(design.T @ y, dtype=float).ravel()
    n_items = grad.shape[1]
    if n_items == 0:
        k_tt = np.zeros((0, 0))
        k_tg = np.zeros((0, design.shape[1]))
        c_t = np.zeros(0)
        return GramStats(k_tt, k_tg, k_gg, c_t, c_g, float(np.linalg.norm(y)), None, k_gg, c_g)
    system = LaplacianSystem(grad, tol=tol, component_labels=ops.component_labels)
    k_tt = _dense(system.lap)
    k_tg = _dense(grad.T @ design)
    c_t = np.asarray(grad.T @ y, dtype=float).ravel()
    sol = solve_score(system, np.column_stack([k_tg, c_t]))
    gram = k_gg - k_tg.T @ sol[:, :-1]
    gram = 0.5 * (gram + gram.T)
    cross = c_g - k_tg.T @ sol[:, -1]
    return GramStats(k_tt, k_tg, k_gg, c_t, c_g, float(np.linalg.norm(y)), system, gram, cross)


def _as_stats(ops, y):
    if isinstance(ops, GramStats):
        return ops
    return gram_stats(ops, y)


def _first_entry(params, gammas):
    nz = gammas != 0
    ever = nz.any(axis=0)
    first = np.argmax(nz, axis=0)
    ent = np.full(gammas.shape[1], np.nan)
    ent[ever] = params[first[ever]]
    return ent


# ----------------------------------------------------------------------------
# Linearized Bregman iteration


def lbi_path(ops, y=None, config: PathConfig | None = None) -> SolutionPath:
    """Linearized Bregman iteration path.

    Starting from ``w = 0``, ``gamma = 0`` and the least-squares scores
    ``theta = pinv(grad.T grad) grad.T y``, iterate with residual
    ``r = y - grad theta - design gamma``::

        w     <- w + dt * design.T r
        gamma <- kappa * shrink(w)
        theta <- theta + kappa * dt * grad.T r

    until ``k * dt > t_max``.  Products are evaluated through the Gram
    matrix of ``[grad, design]``, which reproduces the iterates exactly.

    Parameters
    ----------
    ops : DesignOperators or GramStats
    y : ndarray, shape (n_edges,)
        Ignored when ``ops`` is already a :class:`GramStats`.
    config : PathConfig

    Returns
    -------
    SolutionPath
        Time path.  ``entering[j]`` is the midpoint ``(k - 1/2) dt`` of the
        step at which ``gamma_j`` first became nonzero.
    """
    cfg = config or PathConfig()
    st = _as_stats(ops, y)
    nv, p = st.n_items, st.n_coords
    kmat = st.full_gram()
    cvec = np.concatenate([st.c_t, st.c_g])
    norm_k = float(np.linalg.eigvalsh(kmat)[-1]) if kmat.size else 0.0
    kappa = float(cfg.kappa)
    dt = cfg.dt if cfg.dt is not None else 1.0 / (2.0 * kappa * max(norm_k, 1e-300))
    if kappa * dt * norm_k >= 2.0:
        raise ValueError(
            f"unstable step: kappa*dt*||K|| = {kappa * dt * norm_k:.3g} >= 2"
        )
    lam_max = st.lambda_max
    if cfg.t_max is not None:
        t_max = cfg.t_max
    elif lam_max > 0:
        t_max = cfg.lbi_horizon / lam_max
    else:
        t_max = dt
    n_steps = int(np.floor(t_max / dt)) + 1
    if n_steps > cfg.max_steps:
        raise ValueError(f"LBI would need {n_steps} steps (> max_steps={cfg.max_steps})")

    theta0 = st.theta_at(np.zeros(p)) if nv else np.zeros(0)
    v = np.concatenate([theta0, np.zeros(p)])
    w = np.zeros(p)
    gamma = np.zeros(p)
    sgn = np.zeros(p, dtype=np.int8)
    entered = np.full(p, -1, dtype=np.int64)
    blowup = 1e8 * max(st.y_norm, 1e-300)

    params, gammas, thetas = [0.0], [gamma.copy()], [theta0.copy()]
    # state u = [theta; w]; both blocks take a step along the same residual
    # gradient, scaled by kappa*dt for theta and dt for w
    step = np.concatenate([np.full(nv, kappa * dt), np.full(p, dt)])
    dk = step[:, None] * kmat
    dc = step * cvec
    u = np.concatenate([theta0, w])
    wv = u[nv:]
    incr = np.empty_like(u)
    pos = np.zeros(p, dtype=bool)
    neg = np.zeros(p, dtype=bool)
    stride = cfg.record_stride
    for k in range(1, n_steps + 1):
        np.subtract(dc, dk @ v, out=incr)
        u += incr
        np.clip(wv, -1.0, 1.0, out=gamma)
        np.subtract(wv, gamma, out=gamma)
        gamma *= kappa
        v[:nv] = u[:nv]
        v[nv:] = gamma
        new_pos = wv > 1.0
        new_neg = wv < -1.0
        changed = not (np.array_equal(new_pos, pos) and np.array_equal(new_neg, neg))
        if changed:
            fresh = (new_pos | new_neg) & (entered < 0)
            entered[fresh] = k
            pos, neg = new_pos, new_neg
            if not np.all(np.isfinite(gamma)) or np.linalg.norm(gamma) > blowup:
                raise NumericalError("LBI diverged; reduce kappa * dt")
        if changed or k % stride == 0 or k == n_steps:
            params.append(k * dt)
            gammas.append(gamma.copy())
            thetas.append(u[:nv].copy())
    w = wv.copy()
    if not np.all(np.isfinite(u)) or np.linalg.norm(gamma) > blowup:
        raise NumericalError("LBI diverged; reduce kappa * dt")

    ent = np.where(entered > 0, (entered - 0.5) * dt, np.nan)
    return SolutionPath(
        np.asarray(params), np.asarray(gammas), np.asarray(thetas).reshape(len(params), nv),
        "time", ent, {"kappa": kappa, "dt": dt, "t_max": t_max, "steps": n_steps, "w": w},
    )


# ----------------------------------------------------------------------------
# Exact inverse scale space


def iss_path_exact(ops, y=None, config: PathConfig | None = None, max_knots=None) -> SolutionPath:
    """Exact inverse scale space path with ``theta`` profiled out.

    Between knots ``gamma`` is constant and the subgradient moves linearly,
    ``dp/dt = b - G gamma``.  A knot occurs when an inactive ``|p_j|`` hits
    one; at each knot ``gamma`` is refit on ``{j : |p_j| = 1}`` by least
    squares under the sign constraints ``sign(gamma_j) = p_j`` (a
    nonnegative least squares problem after flipping signs).  Simultaneous
    hits are resolved toward the smallest index.

    Intended for small and medium designs (a few hundred coordinates).
    """
    cfg = config or PathConfig()
    st = _as_stats(ops, y)
    gmat, b = st.profiled_gram, st.profiled_cross
    p_dim = gmat.shape[0]
    t_max = np.inf if cfg.t_max is None else cfg.t_max
    if max_knots is None:
        max_knots = 20 * p_dim + 100
    scale = max(1.0, np.max(np.abs(st.c_g), initial=0.0), np.max(np.abs(gmat), initial=0.0))
    gtol = 1e-10 * scale

    t = 0.0
    pvec = np.zeros(p_dim)
    gamma = np.zeros(p_dim)
    params, gammas, subgrads = [0.0], [gamma.copy()], [pvec.copy()]
    done = False
    for _ in range(max_knots):
        g = b - gmat @ gamma
        inactive = np.abs(pvec) < 1.0
        tau = np.full(p_dim, np.inf)
        up = inactive & (g > gtol)
        dn = inactive & (g < -gtol)
        tau[up] = (1.0 - pvec[up]) / g[up]
        tau[dn] = (-1.0 - pvec[dn]) / g[dn]
        j = int(np.argmin(tau)) if p_dim else 0
        if p_dim == 0 or not np.isfinite(tau[j]) or t + tau[j] > t_max:
            done = True
            break
        step = max(tau[j], 0.0)
        t += step
        pvec = np.clip(pvec + step * g, -1.0, 1.0)
        pvec[j] = 1.0 if g[j] > 0 else -1.0
        on = gamma != 0
        pvec[on] = np.sign(gamma[on])

        active = np.flatnonzero(np.abs(pvec) >= 1.0)
        s = np.sign(pvec[active])
        sub = gmat[np.ix_(active, active)] * np.outer(s, s)
        u0 = np.maximum(s * gamma[active], 0.0)
        try:
            u = nnls_gram(sub, s * b[active], x0=u0)
        except ConvergenceError as exc:
            raise NumericalError(f"ISS knot fit failed at t={t:.6g}: {exc}") from exc
        gamma = np.zeros(p_dim)
        gamma[active] = s * u
        params.append(t)
        gammas.append(gamma.copy())
        subgrads.append(pvec.copy())
    if not done:
        raise ConvergenceError(f"ISS path exceeded {max_knots} knots", float(np.max(np.abs(b - gmat @ gamma))))

    params = np.asarray(params)
    gammas = np.asarray(gammas)
    thetas = st.theta_at(gammas.T).T if st.n_items else np.zeros((len(params), 0))
    return SolutionPath(params, gammas, thetas, "time", _first_entry(params, gammas),
                        {"t_end": t, "completed": cfg.t_max is None,
                         "subgradients": np.asarray(subgrads)})


# ----------------------------------------------------------------------------
# LASSO homotopy


def default_lambda_grid(lambda_max, n=100, min_ratio=1e-3):
    if not lambda_max > 0:
        return np.array([1.0])
    return np.geomspace(lambda_max, lambda_max * min_ratio, n)


def lasso_path(ops, y=None, config: PathConfig | None = None, max_events=None) -> SolutionPath:
    """LASSO path of ``0.5 ||y - grad theta - design gamma||^2 + lam ||gamma||_1``.

    ``theta`` is profiled out, leaving ``0.5 g.T G g - b.T g + lam |g|_1``.
    The exact piecewise-linear path is followed by homotopy (entries and
    exits of the active set) from ``lambda_max = |b|_inf`` down to the
    smallest grid value, so entering values are exact rather than limited
    by the grid.  Knots are all homotopy breakpoints plus the grid points.
    """
    cfg = config or PathConfig()
    st = _as_stats(ops, y)
    gmat, b = st.profiled_gram, st.profiled_cross
    p_dim = gmat.shape[0]
    lam_max = st.lambda_max
    grid = cfg.lambda_grid
    if grid is None:
        grid = default_lambda_grid(lam_max, cfg.n_lambda, cfg.lambda_min_ratio)
    lam_end = float(grid[-1])
    if max_events is None:
        max_events = 20 * p_dim + 100
    scale = max(1.0, np.max(np.abs(st.c_g), initial=0.0), np.max(np.abs(gmat), initial=0.0))
    ztol = 1e-10 * scale

    ev_lam = [lam_max]
    ev_gamma = [np.zeros(p_dim)]
    gamma = np.zeros(p_dim)
    active = np.zeros(p_dim, dtype=bool)
    signs = np.zeros(p_dim)
    lam = lam_max
    if lam_max > ztol and lam_max > lam_end:
        j = int(np.argmax(np.abs(b)))
        active[j] = True
        signs[j] = np.sign(b[j])
        just_left = -1
        for _ in range(max_events):
            idx = np.flatnonzero(active)
            d = np.zeros(p_dim)
            sub = gmat[np.ix_(idx, idx)]
            try:
                d[idx] = np.linalg.solve(sub, signs[idx])
            except np.linalg.LinAlgError:
                d[idx] = np.linalg.lstsq(sub, signs[idx], rcond=None)[0]
            c = b - gmat @ gamma
            a = gmat @ d
            delta = np.full(p_dim, np.inf)
            inact = ~active
            with np.errstate(divide="ignore", invalid="ignore"):
                d1 = np.where(1.0 - a > 0, (lam - c) / (1.0 - a), np.inf)
                d2 = np.where(1.0 + a > 0, (lam + c) / (1.0 + a), np.inf)
                ent = np.minimum(np.where(d1 > 0, d1, np.inf), np.where(d2 > 0, d2, np.inf))
                ex = np.where(gamma * d < 0, -gamma / d, np.inf)
            delta[inact] = ent[inact]
            delta[active] = ex[active]
            if just_left >= 0:
                # a coordinate that just left sits on the boundary; ignore its zero-length re-entry
                if delta[just_left] <= 1e-12 * lam:
                    delta[just_left] = np.inf
            j = int(np.argmin(delta))
            step = delta[j]
            if not np.isfinite(step) or lam - step <= lam_end:
                gamma = gamma + (lam - lam_end) * d
                gamma[~active] = 0.0
                lam = lam_end
                ev_lam.append(lam)
                ev_gamma.append(gamma.copy())
                break
            step = max(step, 0.0)
            gamma = gamma + step * d
            lam -= step
            just_left = -1
            if active[j]:
                active[j] = False
                signs[j] = 0.0
                gamma[j] = 0.0
                just_left = j
            else:
                active[j] = True
                signs[j] = np.sign(c[j] - step * a[j])
            gamma[~active] = 0.0
            ev_lam.append(lam)
            ev_gamma.append(gamma.copy())
        else:
            raise ConvergenceError(f"LASSO homotopy exceeded {max_events} events", lam)

    ev_lam = np.asarray(ev_lam)
    ev_gamma = np.asarray(ev_gamma)
    grid_gamma = _interp_path(ev_lam, ev_gamma, grid)
    lam_all = np.concatenate([ev_lam, grid])
    gam_all = np.vstack([ev_gamma, grid_gamma])
    order = np.argsort(-lam_all, kind="stable")
    lam_all, gam_all = lam_all[order], gam_all[order]
    # grid points that coincide with a breakpoint up to roundoff are merged
    keep = np.ones(len(lam_all), dtype=bool)
    keep[1:] = -np.diff(lam_all) > 1e-12 * np.abs(lam_all[:-1])
    lam_all, gam_all = lam_all[keep], gam_all[keep]
    thetas = st.theta_at(gam_all.T).T if st.n_items else np.zeros((len(lam_all), 0))

    # entry lambda of each coordinate is the first breakpoint where it is nonzero;
    # a coordinate entering at an event is zero exactly at that lambda, so record
    # the event lambda at which it became active
    ent = np.full(p_dim, np.nan)
    for k in range(1, len(ev_lam)):
        fresh = (ev_gamma[k] != 0) & (ev_gamma[k - 1] == 0) & np.isnan(ent)
        ent[fresh] = ev_lam[k - 1]
    return SolutionPath(lam_all, gam_all, thetas, "lambda", ent,
                        {"lambda_max": lam_max, "events": ev_lam, "event_gammas": ev_gamma,
                         "grid": np.asarray(grid)})


def _interp_path(ev_lam, ev_gamma, lam_query):
    """Evaluate a piecewise-linear path (``ev_lam`` decreasing) at ``lam_query``."""
    out = np.zeros((len(lam_query), ev_gamma.shape[1]))
    for i, lam in enumerate(lam_query):
        if lam >= ev_lam[0]:
            continue
        if lam <= ev_lam[-1]:
            out[i] = ev_gamma[-1]
            continue
        k = int(np.searchsorted(-ev_lam, -lam, side="right"))
        l0, l1 = ev_lam[k - 1], ev_lam[k]
        frac = (l0 - lam) / (l0 - l1)
        out[i] = ev_gamma[k - 1] + frac * (ev_gamma[k] - ev_gamma[k - 1])
    return out
