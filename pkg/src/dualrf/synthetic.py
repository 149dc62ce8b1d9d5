"""Synthetic prospectivity data with a known spatially varying decision rule.

The true rule at cell ``u`` is ``sign(<n(u), z(u)> + b(u))`` where the unit
normal ``n`` rotates along the geodesic between two orthogonal normals as
``x`` crosses the domain and ``b`` is a smooth negative offset, so positive
cells are a minority.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import CovarianceModel, GridDomain, simulate_gaussian_grid


@dataclass
class SyntheticDataset:
    domain: GridDomain
    features: np.ndarray        # (p, ny, nx)
    true_normal: np.ndarray     # (ny, nx, p)
    true_offset: np.ndarray     # (ny, nx)
    sample_locations: np.ndarray
    sample_values: np.ndarray   # ppm
    training_locations: np.ndarray
    site_locations: np.ndarray
    site_resources: np.ndarray

    @property
    def p(self):
        return self.features.shape[0]

    def true_class(self):
        z = np.moveaxis(self.features, 0, -1)
        score = np.einsum("yxk,yxk->yx", z, self.true_normal) + self.true_offset
        return np.where(score >= 0, 1, -1)


def make_synthetic(seed=0, nx=100, ny=100, p=3, feature_range=25.0, n_samples=3000,
                   n_training=60, n_sites=30, flip_rate=0.05, buffer=0.15):
    """Build a :class:`SyntheticDataset`.

    Parameters
    ----------
    feature_range : float
        Effective range (cells) of the exponential feature covariance.
    n_samples : int
        Geochemical samples drawn at distinct cells.
    buffer : float
        Samples whose true decision value lies within ``buffer`` of zero get
        ppm values strictly between the class thresholds.
    flip_rate : float
        Fraction of retained samples whose class is flipped.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    rng = np.random.default_rng(seed)
    domain = GridDomain(nx, ny)
    # correlated features: shared factor plus independent parts
    base = simulate_gaussian_grid(CovarianceModel("exponential", feature_range), domain,
                                  rng, n_fields=p + 1, method="fft")
    mix = 0.4
    feats = np.sqrt(1 - mix**2) * base[:p] + mix * base[p]
    feats = (feats - feats.mean(axis=(1, 2), keepdims=True)) / feats.std(axis=(1, 2),
                                                                          keepdims=True)
    xs = domain.x
    angle = 0.5 * np.pi * (xs - xs[0]) / max(xs[-1] - xs[0], 1.0)
    normal = np.zeros((ny, nx, p))
    normal[..., 0] = np.cos(angle)[None, :]
    normal[..., 1] = np.sin(angle)[None, :]
    yy = domain.y[:, None] / max(ny - 1, 1)
    offset = -1.0 + 0.25 * np.sin(2 * np.pi * yy) * np.ones((1, nx))

    z = np.moveaxis(feats, 0, -1)
    score = (np.einsum("yxk,yxk->yx", z, normal) + offset).ravel()
    coords = domain.coords()

    cells = rng.choice(domain.size, size=min(n_samples, domain.size), replace=False)
    s = score[cells]
    positive = s >= 0
    flip = rng.random(cells.size) < flip_rate
    positive = positive ^ flip
    ppm = np.where(positive, 500.0 + rng.lognormal(5.0, 0.8, cells.size),
                   100.0 * rng.uniform(0.05, 1.0, cells.size))
    mid = np.abs(s) < buffer
    ppm = np.where(mid, rng.uniform(100.0, 500.0, cells.size) + 1e-9, ppm)

    order = rng.permutation(domain.size)
    train_cells = order[:n_training]
    true_pos = np.flatnonzero(score >= 0)
    pool = np.setdiff1d(true_pos, train_cells)
    site_cells = rng.choice(pool, size=min(n_sites, pool.size), replace=False)
    return SyntheticDataset(domain, feats, normal, offset.reshape(ny, nx),
                            coords[cells], ppm, coords[train_cells], coords[site_cells],
                            rng.lognormal(2.0, 1.0, site_cells.size))
