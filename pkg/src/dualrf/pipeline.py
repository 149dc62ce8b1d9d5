"""Mineral prospectivity workflow built on local SVMs and dual random fields.

Stages: ingest feature grids, binarize the geochemical response, fit one
local SVM per training location, study the spatial structure of the fitted
(normal, offset) pairs, calibrate the latent orientation range, simulate
conditional realizations of both fields, evaluate the resulting SVM random
field on the feature grids, and summarize the ensemble as E-type, variance,
feature-importance maps and a success-rate curve.

Zero decision values classify as +1 everywhere.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .anamorphosis import SphereTransform, fit_sphere_transform
from .gaussian import (CovarianceModel, GridDomain, MonotoneMap, SampleSet,
                       cell_kriging_weights, conditional_simulate_real, empirical_variogram,
                       normal_score_transform, simulate_gaussian_grid)
from .io import read_grid
from .sphere import geodesic_distance
from .spherefield import (SphereField, SphereObservations, conditional_simulate_sphere_field,
                          empirical_sphere_covariance, grid_sphere_covariance,
                          simulate_uniform_sphere_field, sphere_kriging_weights)
from .svm import (FeatureScaler, NeighborhoodSpec, TrainingSet, fit_all_locations,
                  standardize)

CONDITIONING_TOL = 1e-5


# ---------------------------------------------------------------- features

@dataclass
class FeatureStack:
    """``p`` co-registered rasters ``layers`` (p, ny, nx); ``mask`` marks invalid cells."""

    domain: GridDomain
    layers: np.ndarray
    names: list = field(default_factory=list)
    mask: np.ndarray = None

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=float)
        if self.layers.ndim == 2:
            self.layers = self.layers[None]
        if self.layers.shape[1:] != self.domain.shape:
            raise ValueError("layers do not match the domain shape")
        if not self.names:
            self.names = [f"f{k + 1}" for k in range(self.layers.shape[0])]
        bad = np.any(~np.isfinite(self.layers), axis=0)
        self.mask = bad if self.mask is None else (np.asarray(self.mask, dtype=bool) | bad)
        self.layers = np.where(self.mask[None], 0.0, self.layers)

    @property
    def p(self):
        return self.layers.shape[0]

    def sample(self, locations):
        """Feature vectors (N, p) at the cells holding ``locations``."""
        idx = self.domain.cell_index(locations)
        if np.any(idx < 0):
            raise ValueError(f"locations outside the feature grid at rows "
                             f"{np.flatnonzero(idx < 0)[:5].tolist()}")
        if np.any(self.mask.ravel()[idx]):
            raise ValueError("locations fall in masked feature cells")
        return self.layers.reshape(self.p, -1)[:, idx].T

    def standardized(self, scaler):
        """Cell-wise standardized features, shape (ny, nx, p); masked cells are 0."""
        z = scaler(np.moveaxis(self.layers, 0, -1))
        return np.where(self.mask[..., None], 0.0, z)


def _extent(domain):
    x0 = domain.origin[0] - domain.cell[0] / 2
    y0 = domain.origin[1] - domain.cell[1] / 2
    return np.array([x0, y0, x0 + domain.nx * domain.cell[0], y0 + domain.ny * domain.cell[1]])


def stack_grids(grids, names=None):
    """Align ``(values, domain, mask)`` triples on the coarsest lattice.

    Finer grids are resampled to the coarse cell centres by nearest
    neighbour; masks are combined by union. Extents must agree to within
    half a coarse cell.
    """
    if not grids:
        raise ValueError("no feature grids")
    areas = [g[1].cell[0] * g[1].cell[1] for g in grids]
    target = grids[int(np.argmax(areas))][1]
    ext = _extent(target)
    half = 0.5 * np.array([*target.cell, *target.cell])
    centres = target.coords()
    layers, mask = [], np.zeros(target.shape, dtype=bool)
    for k, (values, dom, m) in enumerate(grids):
        if np.any(np.abs(_extent(dom) - ext) > half + 1e-9):
            raise ValueError(f"grid {k} extent {_extent(dom).tolist()} is incompatible "
                             f"with {ext.tolist()}")
        idx = dom.cell_index(centres)
        if np.any(idx < 0):
            raise ValueError(f"grid {k} does not cover the common lattice")
        v = np.asarray(values, dtype=float).ravel()[idx].reshape(target.shape)
        mm = (np.zeros(dom.shape, dtype=bool) if m is None else np.asarray(m, dtype=bool))
        mask |= mm.ravel()[idx].reshape(target.shape) | ~np.isfinite(v)
        layers.append(v)
    return FeatureStack(target, np.array(layers), list(names or []), mask)


def ingest_grids(paths, names=None):
    """Read raster files (with JSON sidecars) into a :class:`FeatureStack`."""
    return stack_grids([read_grid(p) for p in paths], names)


def binarize_response(values, lo=100.0, hi=500.0):
    """Class labels from a grade: ``<= lo`` is -1, ``>= hi`` is +1, values between are dropped.

    Returns
    -------
    labels : ndarray of int, for the kept values
    keep : ndarray of bool, over the input
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    v = np.asarray(values, dtype=float)
    keep = (v <= lo) | (v >= hi)
    return np.where(v[keep] >= hi, 1, -1), keep


# ---------------------------------------------------------------- fitting

@dataclass
class FitResult:
    models: list
    rejected: list
    scaler: FeatureScaler


def fit_models(stack, sample_locations, sample_values, training_locations, lo=100.0,
               hi=500.0, spec=NeighborhoodSpec(), cost=1.0):
    """Binarize samples, standardize their features globally and fit local SVMs."""
    labels, keep = binarize_response(sample_values, lo, hi)
    locs = np.asarray(sample_locations, dtype=float)[keep]
    z, scaler = standardize(stack.sample(locs))
    models, rejected = fit_all_locations(training_locations, TrainingSet(locs, z, labels),
                                         spec, cost)
    return FitResult(models, rejected, scaler)


def model_arrays(models):
    """Locations (N, 2), unit normals (N, p) and offsets (N,) of fitted models."""
    locs = np.array([m.location for m in models], dtype=float)
    normals = np.array([m.normal for m in models], dtype=float)
    offsets = np.array([m.offset for m in models], dtype=float)
    return locs, normals, offsets


# ---------------------------------------------------------------- variography

@dataclass
class VariographyReport:
    sphere_cov: object          # LagTable of mean <s_i, s_j>
    offset_variogram: object    # LagTable in offset units
    score_variogram: object     # LagTable of offset normal scores
    component_cdfs: list        # per feature: (sorted values, cumulative probability)
    mean_inner: float           # mean inner product over all pairs


def run_variography(models, lag, nlags, tol=None):
    """Experimental structure of the fitted orientations and offsets."""
    if len(models) < 2:
        raise ValueError("need at least two models")
    locs, normals, offsets = model_arrays(models)
    obs = SphereObservations(locs, normals)
    scores, _ = _offset_scores(offsets)
    n = len(models)
    i, j = np.triu_indices(n, 1)
    cdfs = [(np.sort(normals[:, k]), np.arange(1, n + 1) / n) for k in range(normals.shape[1])]
    return VariographyReport(
        empirical_sphere_covariance(obs, lag, nlags, tol),
        empirical_variogram(SampleSet(locs, offsets), lag, nlags, tol),
        empirical_variogram(SampleSet(locs, scores), lag, nlags, tol),
        cdfs, float(np.mean(np.einsum("ij,ij->i", normals[i], normals[j]))))


def _offset_scores(offsets):
    offsets = np.asarray(offsets, dtype=float)
    if np.unique(offsets).size < 2:
        return np.zeros_like(offsets), None
    return normal_score_transform(offsets)


def fit_variogram_range(table, kind="exponential", bounds=(1.0, 1e3)):
    """Range of a unit-sill model ``1 - rho(h)`` fitted by pair-weighted least squares."""
    ok = table.npairs > 0
    if not np.any(ok):
        raise ValueError("no populated lag bins")
    h, g, w = table.h[ok], table.value[ok], table.npairs[ok]

    def loss(log_range):
        model = CovarianceModel(kind, math.exp(log_range))
        return float(np.sum(w * (g - (1.0 - model(h))) ** 2))

    res = optimize.minimize_scalar(loss, bounds=tuple(np.log(bounds)), method="bounded",
                                   options={"xatol": 1e-6})
    return CovarianceModel(kind, float(math.exp(res.x)))


# ---------------------------------------------------------------- latent calibration

@dataclass
class Calibration:
    model: CovarianceModel
    misfit: float
    lags: np.ndarray
    target: np.ndarray
    simulated: np.ndarray


def _simulated_cs(latent, domain, transform, lags, n_real, seed):
    """Ensemble-average C_S of backward-mapped unconditional fields at ``lags``."""
    lag = float(lags[0])
    out = np.zeros(lags.size)
    for r in range(n_real):
        # common random numbers: the same seeds for every candidate range
        f = simulate_uniform_sphere_field(latent, domain, transform.p, seed + r, method="fft")
        vals = transform.backward(f.values.reshape(-1, transform.p))
        t = grid_sphere_covariance(SphereField(domain, vals.reshape(f.values.shape)),
                                   lag, lags.size)
        out += t.value[1:]
    return out / n_real


def calibrate_latent(report, domain, transform, lag, kind="exponential", n_lags=3, n_real=4,
                     bounds=(1.0, 150.0), seed=0, iters=30):
    """Bisect the latent range so simulated C_S matches the experimental one.

    The ensemble C_S of backward-mapped unconditional fields increases with
    the latent range; the root of the summed residual over the first
    ``n_lags`` populated bins is found by bisection in log-range with common
    random numbers. Falls back to the nearer bound when the target lies
    outside the attainable interval.
    """
    t = report.sphere_cov
    ok = np.flatnonzero(t.npairs > 0)[:n_lags]
    if ok.size == 0:
        raise ValueError("no populated sphere covariance bins")
    lags = float(lag) * np.arange(1, ok.max() + 2)
    target = t.value[ok]

    exact = {math.log(bounds[0]): float(bounds[0]), math.log(bounds[1]): float(bounds[1])}

    def resid(log_range):
        # the bounds themselves are reported exactly
        model = CovarianceModel(kind, exact.get(log_range, math.exp(log_range)))
        sim = _simulated_cs(model, domain, transform, lags, n_real, seed)[ok]
        return sim - target, sim

    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    r_lo, s_lo = resid(lo)
    r_hi, s_hi = resid(hi)
    if r_lo.sum() >= 0:
        best, sim = lo, s_lo
    elif r_hi.sum() <= 0:
        best, sim = hi, s_hi
    else:
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            r_mid, s_mid = resid(mid)
            if r_mid.sum() < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-3:
                break
        best = 0.5 * (lo + hi)
        r, sim = resid(best)
    model = CovarianceModel(kind, exact.get(best, math.exp(best)))
    return Calibration(model, float(np.sum((sim - target) ** 2)), lags[ok], target, sim)


# ---------------------------------------------------------------- simulation

@dataclass
class Realization:
    orientation: SphereField
    offset: np.ndarray
    classification: np.ndarray
    seed: int


@dataclass
class EnsembleInputs:
    """Everything reused across realizations: transformed data and kriging weights."""

    domain: GridDomain
    transform: SphereTransform
    latent: CovarianceModel
    offset_model: CovarianceModel
    offset_map: MonotoneMap
    sphere_obs: SphereObservations
    offset_data: SampleSet
    sphere_weights: np.ndarray
    offset_weights: np.ndarray
    max_neighbors: int


def prepare_ensemble(models, transform, latent, offset_model, domain, max_neighbors=50):
    locs, normals, offsets = model_arrays(models)
    scores, omap = _offset_scores(offsets)
    if omap is None:
        raise ValueError("offsets are constant; nothing to simulate")
    obs = SphereObservations(locs, transform.forward(normals))
    data = SampleSet(locs, scores)
    return EnsembleInputs(
        domain, transform, latent, offset_model, omap, obs, data,
        sphere_kriging_weights(latent, domain, obs, max_neighbors),
        cell_kriging_weights(offset_model, domain, locs, max_neighbors), max_neighbors)


def simulate_one(inputs, seed, features=None, mask=None):
    """One conditional (orientation, offset) realization from ``seed``."""
    rng = np.random.default_rng(seed)
    dom = inputs.domain
    p = inputs.transform.p
    uncond = simulate_uniform_sphere_field(inputs.latent, dom, p, rng, method="fft")
    cond = conditional_simulate_sphere_field(inputs.latent, dom, inputs.sphere_obs,
                                             unconditional=uncond,
                                             max_neighbors=inputs.max_neighbors,
                                             weights=inputs.sphere_weights)
    back = inputs.transform.backward(cond.values.reshape(-1, p)).reshape(cond.values.shape)
    ns = simulate_gaussian_grid(inputs.offset_model, dom, rng, method="fft")
    ns = conditional_simulate_real(inputs.offset_model, dom, inputs.offset_data,
                                   unconditional=ns, weights=inputs.offset_weights)
    offset = inputs.offset_map.inverse(ns)
    orient = SphereField(dom, back)
    cls = None if features is None else _classify(back, offset, features, mask)
    return Realization(orient, offset, cls, int(seed))


def simulate_ensemble(models, transform, latent, offset_model, domain, nreal, seed0=0,
                      features=None, mask=None, max_neighbors=50, threads=1):
    """``nreal`` conditional realizations with seeds ``seed0, seed0 + 1, ...``.

    Kriging weights and transformed data are computed once. With
    ``features`` (ny, nx, p, standardized) each realization is also
    classified. Output order and values do not depend on ``threads``.
    """
    if nreal <= 0:
        return []
    inputs = prepare_ensemble(models, transform, latent, offset_model, domain, max_neighbors)
    seeds = [seed0 + i for i in range(nreal)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda s: simulate_one(inputs, s, features, mask), seeds))
    return [simulate_one(inputs, s, features, mask) for s in seeds]


def conditioning_error(realization, models):
    """Largest geodesic and absolute offset mismatch at the model locations."""
    locs, normals, offsets = model_arrays(models)
    idx = realization.orientation.domain.cell_index(locs)
    s = realization.orientation.at(idx)
    return (float(np.max(geodesic_distance(s, normals))),
            float(np.max(np.abs(realization.offset.ravel()[idx] - offsets))))


# ---------------------------------------------------------------- evaluation

def _classify(orientation, offset, features, mask=None):
    score = np.einsum("yxk,yxk->yx", orientation, features) + offset
    cls = np.where(score >= 0, 1, -1).astype(np.int8)
    if mask is not None:
        cls[np.asarray(mask, dtype=bool)] = 0
    return cls


def evaluate_svm_rf(realization, features, mask=None):
    """``sign(<S(u), z(u)> + B(u))`` per cell with sign(0) = +1; masked cells are 0.

    ``features`` are standardized with the training statistics, shape
    (ny, nx, p).
    """
    z = np.asarray(features, dtype=float)
    if z.shape != realization.orientation.values.shape:
        raise ValueError("feature and orientation dimensions differ")
    return _classify(realization.orientation.values, realization.offset, z, mask)


def _classes(realizations):
    if len(realizations) == 0:
        raise ValueError("need at least one realization")
    if isinstance(realizations[0], Realization):
        return np.array([r.classification for r in realizations])
    return np.asarray(realizations)


def etype_and_variance(realizations, estimator="unbiased"):
    """Per-cell probability of class +1 and its variance across realizations.

    Parameters
    ----------
    realizations : list of Realization, or array (n, ny, nx) of {-1, 0, +1}
        Class 0 marks masked cells, which come out NaN.
    estimator : {"unbiased", "population"}
        ``unbiased`` gives ``e (1 - e) n / (n - 1)`` (zero for ``n = 1``);
        ``population`` gives ``e (1 - e)``.
    """
    c = _classes(realizations)
    n = c.shape[0]
    e = np.mean((c + 1) / 2.0, axis=0)
    var = e * (1.0 - e)
    if estimator == "unbiased":
        var = var * n / (n - 1) if n > 1 else np.zeros_like(e)
    elif estimator != "population":
        raise ValueError(f"unknown estimator {estimator!r}")
    masked = np.any(c == 0, axis=0)
    return np.where(masked, np.nan, e), np.where(masked, np.nan, var)


def feature_importance_maps(realizations):
    """Mean normal component per feature (p, ny, nx) and mean offset (ny, nx)."""
    if len(realizations) == 0:
        raise ValueError("need at least one realization")
    comps = np.mean([r.orientation.values for r in realizations], axis=0)
    return np.moveaxis(comps, -1, 0), np.mean([r.offset for r in realizations], axis=0)


# ---------------------------------------------------------------- validation

@dataclass
class SuccessCurve:
    area: np.ndarray
    sites: np.ndarray
    resource: np.ndarray

    @property
    def auc(self):
        return float(np.trapezoid(self.sites, self.area))

    def capture_at(self, area_fraction):
        return float(np.interp(area_fraction, self.area, self.sites))


def success_rate_curve(etype, domain, site_locations, resources=None):
    """Cumulative share of sites (and resource) captured as cells are added by rank.

    Cells are ranked by decreasing E-type; equal values keep row-major cell
    order. Masked (NaN) cells are excluded from the area and sites outside
    the domain or in masked cells are ignored. The curve starts at
    (0, 0, 0) and ends at (1, 1, 1).
    """
    e = np.asarray(etype, dtype=float).ravel()
    locs = np.atleast_2d(np.asarray(site_locations, dtype=float))
    res = np.ones(locs.shape[0]) if resources is None else np.asarray(resources, dtype=float)
    idx = domain.cell_index(locs)
    inside = idx >= 0
    inside[inside] &= np.isfinite(e[idx[inside]])
    if not np.any(inside):
        raise ValueError("no validation site falls inside the valid domain")
    idx, res = idx[inside], res[inside]
    valid = np.flatnonzero(np.isfinite(e))
    order = valid[np.argsort(-e[valid], kind="stable")]
    rank = np.empty(e.size, dtype=int)
    rank[order] = np.arange(order.size)
    hits = np.bincount(rank[idx], minlength=order.size)
    mass = np.bincount(rank[idx], weights=res, minlength=order.size)
    area = np.r_[0.0, np.arange(1, order.size + 1) / order.size]
    sites = np.r_[0.0, np.cumsum(hits) / hits.sum()]
    total = mass.sum()
    resource = np.r_[0.0, np.cumsum(mass) / total] if total > 0 else sites.copy()
    sites[-1] = resource[-1] = 1.0
    return SuccessCurve(area, sites, resource)
