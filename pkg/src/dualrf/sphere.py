"""Riemannian primitives on the unit hypersphere S^{p-1}.

Points are plain numpy arrays whose last axis holds the p ambient
coordinates; every function broadcasts over leading axes. Tangent vectors
are ambient vectors orthogonal to their base point.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

# distance below which theta/sin(theta) switches to its Taylor series
_SERIES_EPS = 1e-6
# log map refuses points closer than this to the antipode
CUT_LOCUS_TOL = 1e-8
_TAU_MAX = 1e8
# antipodes of negatively weighted points closer than this are tested as minima
_ANTIPODE_CHECK = 0.25
# smallest |eigenvalue| kept when the Hessian is indefinite, relative to the largest
_SADDLE_FLOOR = 1e-3
# distances tried along the descent ray out of a cone point that is not a minimum;
# the smallest clears the cut-locus tolerance
_ESCAPE_LADDER = 10.0 * CUT_LOCUS_TOL * 2.0 ** np.arange(24)
# multiple of the log-map rounding error accepted as a zero residual
_ROUNDING_FACTOR = 8.0


class CutLocusError(ValueError):
    """Raised when a log map or transport is requested at an antipodal pair."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed; carries the last iterate and its residual."""

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


def unit(x, axis=-1):
    """Renormalize ``x`` to unit length along ``axis``."""
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot normalize a zero vector")
    return x / norm


def _check_dims(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def inner(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def geodesic_distance(a, b):
    """Great-circle distance in [0, pi].

    Uses ``2 atan2(|a - b|, |a + b|)``, which equals the arccos of the clamped
    inner product but keeps full precision for nearly coincident and nearly
    antipodal pairs.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_dims(a, b)
    return 2.0 * np.arctan2(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))


def _theta_over_sin(theta):
    theta = np.asarray(theta, dtype=float)
    small = theta < _SERIES_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, 1.0 + theta**2 / 6.0, theta / np.sin(theta))
    return out


def log_map(mu, s):
    """Logarithmic map ``Log_mu(s)``: a tangent vector at ``mu`` of length d(mu, s).

    Raises
    ------
    CutLocusError
        If ``s`` lies within ``CUT_LOCUS_TOL`` of the antipode of ``mu``.
    """
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    _check_dims(mu, s)
    theta = geodesic_distance(mu, s)
    if np.any(theta > np.pi - CUT_LOCUS_TOL):
        raise CutLocusError("log map undefined at cut locus")
    c = inner(mu, s)[..., None]
    return (s - mu * c) * _theta_over_sin(theta)[..., None]


def exp_map(mu, v):
    """Exponential map ``Exp_mu(v) = cos|v| mu + sin|v| v/|v|``; ``Exp_mu(0) = mu``."""
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dims(mu, v)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(n > 0, n, 1.0)
    out = np.cos(n) * mu + np.sin(n) * v / safe
    out = np.where(n > 0, out, mu)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def project_tangent(mu, v):
    """Orthogonal projection of ambient ``v`` onto the tangent space at ``mu``."""
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - mu * inner(mu, v)[..., None]


def parallel_transport(s1, s2, v):
    """Transport tangent vector ``v`` at ``s1`` along the geodesic to ``s2``.

    With ``q = Log_{s1}(s2)`` the component of ``v`` orthogonal to ``q`` is
    carried unchanged while the component along ``q`` rotates in the plane of
    the geodesic.
    """
    s1 = np.asarray(s1, dtype=float)
    v = np.asarray(v, dtype=float)
    q = log_map(s1, s2)
    nq = np.linalg.norm(q, axis=-1, keepdims=True)
    nq2 = nq**2
    safe = np.where(nq2 > 0, nq2, 1.0)
    coef = np.where(nq2 > 0, inner(q, v)[..., None] / safe, 0.0)
    return v - q * coef + coef * (-s1 * np.sin(nq) * nq + q * np.cos(nq))


class FrechetInfo(NamedTuple):
    n_iter: np.ndarray
    residual: np.ndarray


def _log_field(mu, pts):
    """Log vectors ``Log_mu(s_a)`` and distances for rows of points in one pass.

    ``mu`` has shape (B, p) and ``pts`` (B, N, p). Log vectors toward points
    on the cut locus of ``mu`` are set to zero; callers check ``theta``.
    """
    c = np.matmul(pts, mu[:, :, None])[..., 0]
    perp = pts - c[..., None] * mu[:, None, :]
    sn = np.linalg.norm(perp, axis=-1)
    theta = np.arctan2(sn, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(theta < _SERIES_EPS, 1.0 + theta**2 / 6.0, theta / sn)
    ratio = np.where(theta > np.pi - CUT_LOCUS_TOL, 0.0, ratio)
    return perp * ratio[..., None], theta


class _Eval(NamedTuple):
    logs: np.ndarray
    theta: np.ndarray
    vbar: np.ndarray
    residual: np.ndarray
    objective: np.ndarray


def _evaluate(mu, pts, w):
    """Weighted log average, its norm and the objective; NaN residual on a cut locus."""
    logs, theta = _log_field(mu, pts)
    vbar = np.matmul(w[:, None, :], logs)[:, 0]
    res = np.sqrt(np.einsum("bp,bp->b", vbar, vbar))
    res = np.where(np.any(theta > np.pi - CUT_LOCUS_TOL, axis=1), np.nan, res)
    return _Eval(logs, theta, vbar, res, np.einsum("bn,bn->b", w, theta**2))


def _rounding_floor(theta, w):
    """Residual attainable in floating point: each log vector carries an error
    of about ``eps_mach * theta / sin(theta)``, which grows next to antipodes."""
    sn = np.maximum(np.sin(theta), CUT_LOCUS_TOL)
    return _ROUNDING_FACTOR * np.finfo(float).eps * np.sum(np.abs(w) * theta / sn, axis=-1)


def _newton_direction(mu, w, ev):
    """Solve ``H d = vbar`` with the Riemannian Hessian of ``1/2 sum w d^2``.

    Per point the Hessian is ``u u^T + theta cot(theta) (P - u u^T)`` with
    ``u`` the unit log direction and ``P`` the tangent projector. Returns the
    direction and a mask of rows where the Hessian is positive definite on
    the tangent space. Other rows use absolute eigenvalues (floored at a
    fraction of the largest), which keeps a descent direction while
    following the curvature along indefinite valleys.
    """
    p = mu.shape[-1]
    theta = ev.theta
    safe = np.where(theta > 0, theta, 1.0)
    u = ev.logs / safe[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = np.where(theta < _SERIES_EPS, 1.0 - theta**2 / 3.0, theta / np.tan(theta))
    outer = mu[:, :, None] * mu[:, None, :]
    hess = (np.sum(w * tc, axis=1)[:, None, None] * (np.eye(p) - outer)
            + np.matmul(((w * (1.0 - tc))[..., None] * u).transpose(0, 2, 1), u))
    lam, vec = np.linalg.eigh(hess + outer)
    scale = np.maximum(np.abs(lam).max(axis=1), 1e-300)
    pd = np.isfinite(lam).all(axis=1) & (lam.min(axis=1) > 1e-10 * scale)
    ok = np.isfinite(lam).all(axis=1)
    lam = np.where(pd[:, None], lam,
                   np.maximum(np.abs(lam), _SADDLE_FLOOR * scale[:, None]))
    lam = np.where(ok[:, None], lam, 1.0)
    d = np.einsum("bij,bj->bi", vec, np.einsum("bji,bj->bi", vec, ev.vbar) / lam)
    d = project_tangent(mu, d)
    return np.where(ok[:, None], d, ev.vbar), pd


class _Antipode(NamedTuple):
    tip: np.ndarray
    is_min: np.ndarray
    escape: np.ndarray
    objective: np.ndarray


def _antipode(pts, w, j):
    """Inspect the antipode of point ``j`` (negatively weighted) in each row.

    Such an antipode ``-s`` is a cone point of ``sum_a w_a d^2(mu, s_a)``:
    the negatively weighted cluster at ``s`` (total weight ``W < 0``) raises
    the objective at rate ``2 pi |W|`` in every direction while the other
    points pull along ``g = sum_rest w Log_{-s}``. The tip is a local minimum
    when ``|g| <= pi |W|``; otherwise ``g (1 - pi |W| / |g|)`` is a descent
    step out of it.
    """
    tip = -pts[np.arange(pts.shape[0]), j]
    logs, dtip = _log_field(tip, pts)
    cluster = dtip > np.pi - CUT_LOCUS_TOL
    wc = np.sum(np.where(cluster, w, 0.0), axis=1)
    pull = np.matmul(np.where(cluster, 0.0, w)[:, None, :], logs)[:, 0]
    npull = np.sqrt(np.einsum("bp,bp->b", pull, pull))
    is_min = (wc < 0) & (npull <= -wc * np.pi)
    shrink = np.where(npull > 0, 1.0 + wc * np.pi / np.where(npull > 0, npull, 1.0), 0.0)
    return _Antipode(tip, is_min, pull * np.clip(shrink, 0.0, None)[:, None],
                     np.einsum("bn,bn->b", w, dtip**2))


def _best_on_ray(tip, escape, pts, w):
    """Point of lowest objective among ``Exp_tip(r e)`` for the ladder ``r``."""
    e = escape / np.linalg.norm(escape, axis=1, keepdims=True)
    m, n_lad = tip.shape[0], _ESCAPE_LADDER.size
    cand = exp_map(tip[:, None, :], _ESCAPE_LADDER[None, :, None] * e[:, None, :])
    flat = cand.reshape(m * n_lad, -1)
    ev = _evaluate(flat, np.repeat(pts, n_lad, axis=0), np.repeat(w, n_lad, axis=0))
    best = np.argmin(ev.objective.reshape(m, n_lad), axis=1)
    return cand[np.arange(m), best]


def frechet_mean(points, weights=None, eps=1e-10, max_iter=200, init="max_weight",
                 full_output=False):
    """Weighted intrinsic mean of orientations: ``argmin sum_a w_a d^2(mu, s_a)``.

    Iterates ``mu <- Exp_mu(tau * d)`` where ``d`` solves the Newton system
    with the Riemannian Hessian (absolute eigenvalues when it is indefinite)
    and falls back to the averaged log vector ``sum_a w_a Log_mu(s_a)``
    when that is not a descent direction. A step is kept
    when it lowers the objective (sufficient decrease) or, once objective
    changes fall below rounding, when it lowers the residual
    ``|sum_a w_a Log_mu(s_a)|``; otherwise ``tau`` is halved. Accepted steps
    double ``tau``.

    Signed weights are accepted. With negative weights the minimum may sit
    exactly at the antipode of a negatively weighted point, where the log map
    is undefined. Once an iterate comes within ``_ANTIPODE_CHECK`` of the
    antipode of a negatively weighted point, that antipode is tested and
    taken when it is a local minimum that does not raise the objective; such
    problems report residual 0. When it is not a minimum and the iterate is
    no better than it, the search restarts from the antipode along its
    steepest descent ray.

    Parameters
    ----------
    points : array_like, shape (..., N, p)
        Orientations; leading axes are independent problems solved together.
    weights : array_like, shape (..., N), optional
        Defaults to uniform ``1/N``.
    eps : float
        Stationarity tolerance on the residual. It is raised to a small
        multiple of the log map's rounding error, ``eps_mach * sum_a |w_a|
        theta_a / sin(theta_a)``, which only matters for means lying within
        about 1e-6 of an antipode.
    max_iter : int
    init : {"max_weight", "first"}
        Start from the point with the largest ``|w|`` or from the first point.
    full_output : bool
        Also return a :class:`FrechetInfo` with per-problem iteration counts
        and final residuals.

    Raises
    ------
    ConvergenceError
        When some problem has not reached ``eps`` after ``max_iter`` steps.
    CutLocusError
        When the starting point is antipodal to one of the points.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim < 2 or pts.shape[-2] == 0:
        raise ValueError("need at least one point")
    n = pts.shape[-2]
    if weights is None:
        w = np.full(pts.shape[:-1], 1.0 / n)
    else:
        w = np.broadcast_to(np.asarray(weights, dtype=float), pts.shape[:-1])
    batch = pts.shape[:-2]
    pts2 = pts.reshape((-1, n, pts.shape[-1]))
    w2 = np.ascontiguousarray(w).reshape((-1, n))
    nb = pts2.shape[0]

    if init == "max_weight":
        idx = np.argmax(np.abs(w2), axis=1)
    elif init == "first":
        idx = np.zeros(nb, dtype=int)
    else:
        raise ValueError(f"unknown init {init!r}")
    mu = pts2[np.arange(nb), idx].copy()

    ev = _evaluate(mu, pts2, w2)
    if np.any(np.isnan(ev.residual)):
        bad = int(np.flatnonzero(np.isnan(ev.residual))[0])
        raise CutLocusError(f"log map undefined at cut locus (problem index {bad})")
    logs, theta, vbar, res, obj = (np.array(x) for x in ev)
    neg = w2 < 0
    tau = np.ones(nb)
    restarted = np.zeros(nb, dtype=bool)
    n_iter = np.zeros(nb, dtype=int)
    tol = np.maximum(eps, _rounding_floor(theta, w2))
    active = res >= tol
    for _ in range(max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        P, W, m = pts2[rows], w2[rows], mu[rows]
        cur = _Eval(logs[rows], theta[rows], vbar[rows], res[rows], obj[rows])
        t = tau[rows]
        floor = 1e-13 * (1.0 + np.abs(cur.objective))

        # cone points at antipodes of negatively weighted points
        j = np.argmax(np.where(neg[rows], cur.theta, -1.0), axis=1)
        gap = np.where(neg[rows].any(axis=1), np.pi - cur.theta[np.arange(rows.size), j], np.inf)
        close = np.flatnonzero(gap < _ANTIPODE_CHECK)

        # the curvature model is misleading next to a cone point: use the gradient there
        step, pd = _newton_direction(m, W, cur)
        slope = 2.0 * np.einsum("bp,bp->b", step, cur.vbar)
        newton = slope > 0
        step = np.where(newton[:, None], step, cur.vbar)
        slope = np.where(newton, slope, 2.0 * cur.residual**2)
        base = m.copy()
        ref = cur.objective.copy()
        tip = np.zeros(rows.size, dtype=bool)
        near = np.zeros(rows.size, dtype=bool)
        if close.size:
            anti = _antipode(P[close], W[close], j[close])
            tip[close] = anti.is_min & (anti.objective <= ref[close] + floor[close])
            # iterates no better than a nearby cone point that is not a minimum
            # restart from the tip along its descent ray. Within rounding of the
            # tip's objective the smaller stationarity measure decides, and a
            # restart is always followed by a regular step, since the minimum
            # may lie off the ray closer to the tip than the objective resolves
            tip_res = np.sqrt(np.sum(anti.escape ** 2, axis=1))
            fc = floor[close]
            worse = ((cur.objective[close] > anti.objective + fc)
                     | ((cur.objective[close] >= anti.objective - fc)
                        & (cur.residual[close] >= tip_res)))
            esc = ~anti.is_min & ~restarted[rows[close]] & worse
            ce = close[esc]
            near[ce] = True
            if ce.size:
                # the restart point is the best of a geometric ladder of
                # distances along the ray; the minimum can be far closer to the
                # tip than any step length the regular line search would try
                base[ce] = _best_on_ray(anti.tip[esc], anti.escape[esc], P[ce], W[ce])
                step[ce] = 0.0
                slope[ce] = 0.0
                ref[ce] = anti.objective[esc]
            tips = close[tip[close]]
            tip_points = anti.tip[tip[close]]
            tip_obj = anti.objective[tip[close]]

        # steps never exceed a quarter circle; curvature steps are also capped at
        # tau = 1 while gradient steps may stretch so weak residuals still progress
        length = np.maximum(np.sqrt(np.einsum("bp,bp->b", step, step)), 1e-300)
        t = np.minimum(t, 0.25 * np.pi / length)
        t = np.where(newton & ~near, np.minimum(t, 1.0), t)
        cand = exp_map(base, t[:, None] * step)
        new = _evaluate(cand, P, W)
        decrease = new.objective <= ref - 1e-4 * t * slope
        flat = (np.abs(new.objective - cur.objective) <= floor) & (new.residual < cur.residual)
        accept = (decrease | flat) & ~np.isnan(new.residual)
        acc = rows[accept]
        mu[acc] = cand[accept]
        logs[acc] = new.logs[accept]
        theta[acc] = new.theta[accept]
        vbar[acc] = new.vbar[accept]
        res[acc] = new.residual[accept]
        obj[acc] = new.objective[accept]
        tol[acc] = np.maximum(eps, _rounding_floor(new.theta[accept], W[accept]))
        tau[acc] = np.minimum(2.0 * t[accept], _TAU_MAX)
        tau[rows[~accept]] = 0.5 * t[~accept]
        # a restart hands over to a fresh curvature step
        tau[rows[near]] = 1.0
        if tip.any():
            mu[rows[tips]] = tip_points
            obj[rows[tips]] = tip_obj
            res[rows[tips]] = 0.0
        restarted[rows] = near
        n_iter[rows] += 1
        active = res >= tol
    if np.any(active):
        worst = int(np.argmax(np.where(active, res, -np.inf)))
        raise ConvergenceError(
            f"Frechet mean did not converge in {max_iter} iterations "
            f"(residual {res[worst]:.3e} at problem {worst})",
            last_iterate=mu.reshape(batch + (-1,)), residual=res.reshape(batch))
    out = mu.reshape(batch + (pts.shape[-1],))
    if full_output:
        return out, FrechetInfo(n_iter.reshape(batch), res.reshape(batch))
    return out


def tangent_basis(mu):
    """Orthonormal basis of the tangent space at ``mu``, shape (p, p-1).

    The standard basis of the tangent space at the north pole ``e_p`` is
    parallel-transported to ``mu``, so the chart agrees with plain
    coordinates when ``mu`` is the pole. Near the south pole the transport
    is undefined and a QR completion of ``mu`` is used instead.
    """
    mu = unit(mu)
    p = mu.shape[-1]
    pole = np.zeros(p)
    pole[-1] = 1.0
    if geodesic_distance(mu, pole) < np.pi - 1e-3:
        basis = parallel_transport(pole, mu, np.eye(p)[: p - 1])
        basis = basis - np.outer(basis @ mu, mu)
        q, _ = np.linalg.qr(basis.T)
        # restore the sign convention lost by QR
        signs = np.sign(np.sum(q * basis.T, axis=0))
        return q * signs
    q, _ = np.linalg.qr(np.column_stack([mu, np.eye(p)]))
    return q[:, 1:p]


def random_uniform(n, p, rng):
    """``n`` points drawn uniformly on S^{p-1}."""
    x = rng.standard_normal((n, p))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
