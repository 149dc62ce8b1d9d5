"""Random fields with values on the unit hypersphere S^{p-1}.

An orientation field is built by normalizing ``p`` independent latent
Gaussian fields. Its covariance ``C_S(h) = E<S(u), S(u+h)>`` follows from
the latent correlation through :func:`covariance_transform`. Conditioning
replaces the kriging update of the real-valued case by a signed-weight
Frechet mean.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import (_binned_pair_stat, cell_kriging_weights, gridded_covariance,
                       simulate_gaussian_grid, snap_to_cells)
from .special import bisect_monotone, hyp2f1
from .sphere import ConvergenceError, frechet_mean, unit


@dataclass
class SphereField:
    """Orientation per grid cell; ``values`` has shape (ny, nx, p)."""

    domain: GridDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:2] != self.domain.shape:
            raise ValueError("values do not match the domain shape")

    @property
    def p(self):
        return self.values.shape[-1]

    def at(self, flat_index):
        return self.values.reshape(-1, self.p)[flat_index]


@dataclass
class SphereObservations:
    locations: np.ndarray
    orientations: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        s = np.asarray(self.orientations, dtype=float)
        if s.ndim != 2 or s.shape[0] != self.locations.shape[0]:
            raise ValueError("need one orientation row per location")
        self.orientations = unit(s)

    def __len__(self):
        return self.locations.shape[0]

    @property
    def p(self):
        return self.orientations.shape[1]


def _transform_constant(p):
    return (2.0 / p) * math.exp(2.0 * (math.lgamma((p + 1) / 2.0) - math.lgamma(p / 2.0)))


def covariance_transform(p, c):
    """Sphere covariance implied by latent correlation ``c``.

    ``C_S = (2/p) (Gamma((p+1)/2) / Gamma(p/2))^2  c  2F1(1/2, 1/2; (p+2)/2; c^2)``.
    For ``p = 1`` this is ``(2/pi) arcsin(c)``.
    """
    c = np.asarray(c, dtype=float)
    if np.any(np.abs(c) > 1.0 + 1e-12):
        raise ValueError("latent correlation must lie in [-1, 1]")
    c = np.clip(c, -1.0, 1.0)
    out = _transform_constant(p) * c * hyp2f1(0.5, 0.5, (p + 2) / 2.0, c * c)
    return float(out) if np.ndim(out) == 0 else out


def inverse_covariance_transform(p, cs):
    """Latent correlation ``c`` with ``covariance_transform(p, c) = cs``."""
    cs = np.asarray(cs, dtype=float)
    if np.any(np.abs(cs) > 1.0 + 1e-12):
        raise ValueError("sphere covariance outside the attainable range [-1, 1]")
    mag = np.clip(np.abs(cs), 0.0, 1.0)
    c = bisect_monotone(lambda t: covariance_transform(p, t), mag, 0.0, 1.0)
    c = np.where(mag >= 1.0, 1.0, np.where(mag == 0.0, 0.0, c))
    out = np.sign(cs) * c
    return float(out) if np.ndim(out) == 0 else out


def sphere_covariance(latent, p):
    """Distance -> C_S callable for a unit-variance latent covariance model."""
    if abs(latent.total_sill - 1.0) > 1e-9:
        raise ValueError("latent model must have unit total sill")

    def cov(h):
        return covariance_transform(p, latent(h))
    return cov


def empirical_sphere_covariance(obs, lag, nlags, tol=None):
    """Mean inner product of orientation pairs per lag bin."""
    if len(obs) < 2:
        raise ValueError("need at least two observations")
    x = obs.orientations

    def dots():
        i, j = np.triu_indices(len(obs), 1)
        return np.einsum("ij,ij->i", x[i], x[j])
    return _binned_pair_stat(obs.locations, dots, lag, nlags, tol)


def empirical_sphere_variogram(obs, lag, nlags, tol=None):
    """``1/2 mean |s_i - s_j|^2`` per lag bin; equals ``1 - C_S`` bin by bin."""
    if len(obs) < 2:
        raise ValueError("need at least two observations")
    from scipy.spatial.distance import pdist
    x = obs.orientations
    return _binned_pair_stat(obs.locations, lambda: 0.5 * pdist(x, "sqeuclidean"),
                             lag, nlags, tol)


def grid_sphere_covariance(field, lag, nlags, tol=None):
    """Experimental C_S of a gridded orientation field (FFT based, lag 0 first)."""
    return gridded_covariance(field.values, field.domain, lag, nlags, tol)


def simulate_uniform_sphere_field(latent, domain, p, seed=None, method="auto"):
    """Unconditional S^{p-1} field: ``p`` latent Gaussian fields normalized cell-wise."""
    if p < 2:
        raise ValueError("p must be >= 2")
    if abs(latent.total_sill - 1.0) > 1e-9:
        raise ValueError("latent model must have unit total sill")
    x = simulate_gaussian_grid(latent, domain, seed, n_fields=p, method=method)
    x = np.moveaxis(x, 0, -1)
    return SphereField(domain, x / np.linalg.norm(x, axis=-1, keepdims=True))


def sphere_kriging_weights(latent, domain, obs, max_neighbors=50):
    """Simple kriging weights of every cell under the sphere covariance C_S."""
    return cell_kriging_weights(sphere_covariance(latent, obs.p), domain, obs.locations,
                                max_neighbors)


def conditional_simulate_sphere_field(latent, domain, obs, seed=None, max_neighbors=50,
                                      unconditional=None, eps=1e-10, max_iter=200,
                                      chunk=2048, method="auto", weights=None):
    """Condition an orientation field on observed orientations.

    At each cell the simple kriging weights ``lambda`` (computed with the
    sphere covariance C_S) define the stacked weights ``[1, lambda, -lambda]``
    over ``[S_s(u), s_1..s_N, S_s(u_1)..S_s(u_N)]``; the conditional value is
    their weighted Frechet mean. Observations are assigned to their nearest
    cell.

    Parameters
    ----------
    latent : CovarianceModel
        Covariance of the latent Gaussian components (unit total sill).
    domain : GridDomain
    obs : SphereObservations
    seed : int or Generator, optional
        Used when ``unconditional`` is not supplied.
    max_neighbors : int
        Nearest data used in each kriging system.
    unconditional : SphereField, optional
        Pre-computed unconditional realization to condition.
    weights : ndarray, optional
        Kriging weights (cells x data) from :func:`sphere_kriging_weights`,
        reusable across realizations.

    Raises
    ------
    ConvergenceError
        With the flat cell index when a Frechet mean fails to converge.
    """
    if unconditional is None:
        p = obs.p if obs is not None and len(obs) else None
        if p is None:
            raise ValueError("need p: pass observations or an unconditional field")
        unconditional = simulate_uniform_sphere_field(latent, domain, p, seed, method=method)
    base = unconditional.values.reshape(-1, unconditional.p)
    if obs is None or len(obs) == 0:
        return SphereField(domain, unconditional.values.copy())
    if obs.p != unconditional.p:
        raise ValueError("observation dimension differs from the field dimension")
    idx = snap_to_cells(domain, obs.locations)
    lam = weights
    if lam is None:
        lam = sphere_kriging_weights(latent, domain, obs, max_neighbors)
    k = min(len(obs), max_neighbors) if max_neighbors else len(obs)
    # per-cell support: indices of the k largest |weights|
    if k < len(obs):
        sup = np.argsort(-np.abs(lam), axis=1, kind="stable")[:, :k]
        sup.sort(axis=1)
    else:
        sup = np.broadcast_to(np.arange(len(obs)), (lam.shape[0], k))
    out = base.copy()
    s_obs = obs.orientations
    s_sim = base[idx]
    n_cells = base.shape[0]
    for start in range(0, n_cells, chunk):
        rows = np.arange(start, min(start + chunk, n_cells))
        sp = sup[rows]
        lw = np.take_along_axis(lam[rows], sp, axis=1)
        weights = np.concatenate([np.ones((rows.size, 1)), lw, -lw], axis=1)
        pts = np.concatenate([base[rows][:, None, :], s_obs[sp], s_sim[sp]], axis=1)
        try:
            out[rows] = frechet_mean(pts, weights, eps=eps, max_iter=max_iter,
                                     init="max_weight")
        except ConvergenceError as err:
            bad = int(np.argmax(np.atleast_1d(err.residual)))
            raise ConvergenceError(f"Frechet mean did not converge at cell {rows[bad]}",
                                   err.last_iterate, err.residual) from None
    return SphereField(domain, out.reshape(unconditional.values.shape))
