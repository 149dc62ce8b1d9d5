"""Real-valued Gaussian random fields on 2-D grids.

Covariance models, unconditional simulation (dense Cholesky or circulant
embedding), simple kriging, conditioning by kriging of residuals,
variography and the normal-score transform.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist
from scipy.special import ndtri

KINDS = ("exponential", "spherical", "gaussian", "nugget")
DENSE_MAX_CELLS = 10_000
AUTO_DENSE_CELLS = 4096
DIAG_REG = 1e-10
EMBED_NEG_MASS = 1e-5
EMBED_MAX_SIDE = 2048


@dataclass(frozen=True)
class CovarianceModel:
    """Isotropic covariance ``C(h) = nugget*[h == 0] + sill*rho(h / range)``.

    ``range`` is the practical (effective) range: the exponential and
    gaussian structures fall to ``exp(-3) ~ 0.05`` of the sill there and the
    spherical one reaches zero.
    """

    kind: str = "exponential"
    range: float = 1.0
    sill: float = 1.0
    nugget: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if not self.range > 0 or not self.sill > 0 or self.nugget < 0:
            raise ValueError("need range > 0, sill > 0, nugget >= 0")

    @property
    def total_sill(self):
        return self.sill + self.nugget

    def structured(self, h):
        """Continuous part of the covariance (no nugget)."""
        h = np.abs(np.asarray(h, dtype=float))
        x = h / self.range
        if self.kind == "exponential":
            rho = np.exp(-3.0 * x)
        elif self.kind == "gaussian":
            rho = np.exp(-3.0 * x * x)
        elif self.kind == "spherical":
            rho = np.where(x < 1.0, 1.0 - 1.5 * x + 0.5 * x**3, 0.0)
        else:
            rho = np.where(h == 0, 1.0, 0.0)
        return self.sill * rho

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        return self.structured(h) + np.where(h == 0, self.nugget, 0.0)

    def with_range(self, new_range):
        return CovarianceModel(self.kind, float(new_range), self.sill, self.nugget)

    def to_dict(self):
        return {"kind": self.kind, "range": self.range, "sill": self.sill,
                "nugget": self.nugget}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["range"]), float(d.get("sill", 1.0)),
                   float(d.get("nugget", 0.0)))


def covariance_eval(model, h):
    if np.any(np.asarray(h) < 0):
        raise ValueError("lag distance must be non-negative")
    return model(h)


@dataclass(frozen=True)
class GridDomain:
    """Regular 2-D lattice; arrays over it have shape ``(ny, nx)``.

    ``origin`` is the centre of cell (0, 0) and ``cell`` the spacing.
    """

    nx: int
    ny: int
    origin: tuple = (0.0, 0.0)
    cell: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell")
        if self.cell[0] <= 0 or self.cell[1] <= 0:
            raise ValueError("cell sizes must be positive")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "cell", tuple(float(v) for v in self.cell))

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def x(self):
        return self.origin[0] + self.cell[0] * np.arange(self.nx)

    @property
    def y(self):
        return self.origin[1] + self.cell[1] * np.arange(self.ny)

    def coords(self):
        """Cell centres, shape (ny*nx, 2), row-major (y outer, x inner)."""
        xx, yy = np.meshgrid(self.x, self.y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_index(self, locations):
        """Flat index of the cell nearest to each location; -1 when outside."""
        loc = np.atleast_2d(np.asarray(locations, dtype=float))
        ix = np.rint((loc[:, 0] - self.origin[0]) / self.cell[0]).astype(int)
        iy = np.rint((loc[:, 1] - self.origin[1]) / self.cell[1]).astype(int)
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return np.where(inside, iy * self.nx + ix, -1)

    def to_dict(self):
        return {"nx": self.nx, "ny": self.ny, "origin": list(self.origin),
                "cell": list(self.cell)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["nx"]), int(d["ny"]), tuple(d.get("origin", (0.0, 0.0))),
                   tuple(d.get("cell", (1.0, 1.0))))


@dataclass
class SampleSet:
    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float)).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.locations.shape[0]:
            raise ValueError("locations and values must have equal lengths")
        if not np.all(np.isfinite(self.locations)):
            raise ValueError("non-finite coordinates")

    def __len__(self):
        return self.locations.shape[0]


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- simulation

@functools.lru_cache(maxsize=4)
def _dense_factor(model, domain):
    xy = domain.coords()
    n = xy.shape[0]
    cov = np.empty((n, n))
    for start in range(0, n, 1024):
        cov[start:start + 1024] = model.structured(cdist(xy[start:start + 1024], xy))
    cov[np.diag_indices_from(cov)] += DIAG_REG
    return linalg.cholesky(cov, lower=True, overwrite_a=True, check_finite=False)


@functools.lru_cache(maxsize=8)
def _circulant_sqrt(model, domain):
    ny, nx = domain.shape
    # long ranges on small grids need embeddings many times the grid size
    factors = [f for f in (2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64)
               if f <= 8 or f * max(nx, ny) <= EMBED_MAX_SIDE]
    for factor in factors:
        my, mx = factor * ny, factor * nx
        iy = np.minimum(np.arange(my), my - np.arange(my)) * domain.cell[1]
        ix = np.minimum(np.arange(mx), mx - np.arange(mx)) * domain.cell[0]
        h = np.sqrt(iy[:, None] ** 2 + ix[None, :] ** 2)
        lam = np.fft.fft2(model.structured(h)).real
        if lam.min() >= -1e-8 * lam.max():
            return np.sqrt(np.clip(lam, 0.0, None) / (my * mx))
    # approximate embedding: drop negative eigenvalues when their mass is negligible
    neg = -lam[lam < 0].sum() / lam.sum()
    if neg <= EMBED_NEG_MASS:
        return np.sqrt(np.clip(lam, 0.0, None) / (my * mx))
    raise ValueError("circulant embedding is not non-negative definite for this model "
                     f"(negative eigenvalue mass {neg:.2e})")


def simulate_gaussian_grid(model, domain, seed=None, n_fields=None, method="auto"):
    """Zero-mean stationary Gaussian field(s) with covariance ``model``.

    Parameters
    ----------
    model : CovarianceModel
    domain : GridDomain
    seed : int or numpy.random.Generator
    n_fields : int, optional
        Number of independent fields; output gains a leading axis when given.
    method : {"auto", "dense", "fft"}
        ``dense`` factorizes the full cell covariance (at most
        ``DENSE_MAX_CELLS`` cells); ``fft`` uses circulant embedding;
        ``auto`` picks dense up to ``AUTO_DENSE_CELLS`` cells.

    Returns
    -------
    ndarray, shape (ny, nx) or (n_fields, ny, nx)
    """
    rng = _rng(seed)
    k = 1 if n_fields is None else int(n_fields)
    if method == "auto":
        method = "dense" if domain.size <= AUTO_DENSE_CELLS else "fft"
    ny, nx = domain.shape
    if model.kind == "nugget":
        out = np.zeros((k, ny, nx))
    elif method == "dense":
        if domain.size > DENSE_MAX_CELLS:
            raise ValueError(f"{domain.size} cells is too many for dense factorization; "
                             "use method='fft' (spectral path)")
        chol = _dense_factor(model, domain)
        out = (chol @ rng.standard_normal((domain.size, k))).T.reshape(k, ny, nx)
    elif method == "fft":
        root = _circulant_sqrt(model, domain)
        out = np.empty((k, ny, nx))
        for i in range(k):
            xi = rng.standard_normal(root.shape) + 1j * rng.standard_normal(root.shape)
            out[i] = np.fft.fft2(root * xi).real[:ny, :nx]
    else:
        raise ValueError(f"unknown method {method!r}")
    white = model.nugget if model.kind != "nugget" else model.total_sill
    if white > 0:
        out = out + math.sqrt(white) * rng.standard_normal(out.shape)
    return out[0] if n_fields is None else out


# ---------------------------------------------------------------- kriging

def _duplicates(locs):
    tree = cKDTree(locs)
    pairs = sorted(tree.query_pairs(1e-12))
    return pairs


def simple_kriging_weights(cov, data_locs, targets, max_neighbors=None):
    """Simple kriging weights solving ``K lambda = k`` for each target.

    Parameters
    ----------
    cov : callable
        Covariance as a function of distance (a :class:`CovarianceModel` or
        any vectorized callable).
    data_locs : array_like, shape (N, 2)
    targets : array_like, shape (2,) or (M, 2)
    max_neighbors : int, optional
        Restrict each system to the nearest data; weights of excluded data
        are zero.

    Returns
    -------
    ndarray, shape (N,) for a single target, else (M, N)

    A target sitting on a datum receives that datum's unit weight vector.
    """
    locs = np.atleast_2d(np.asarray(data_locs, dtype=float))
    tgt = np.asarray(targets, dtype=float)
    single = tgt.ndim == 1
    tgt = np.atleast_2d(tgt)
    n = locs.shape[0]
    m = tgt.shape[0]
    out = np.zeros((m, n))
    if n == 0:
        return out[0] if single else out
    dup = _duplicates(locs)
    if dup:
        raise ValueError(f"singular kriging system: duplicated data locations {dup[:5]}")

    if max_neighbors is None or n <= max_neighbors:
        d = np.sqrt(((locs[:, None] - locs[None]) ** 2).sum(-1))
        kmat = cov(d)
        kmat[np.diag_indices(n)] += DIAG_REG
        try:
            fac = linalg.cho_factor(kmat, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise ValueError("singular kriging system after regularization") from None
        for start in range(0, m, 4096):
            t = tgt[start:start + 4096]
            rhs = cov(np.sqrt(((t[:, None] - locs[None]) ** 2).sum(-1)))
            out[start:start + 4096] = linalg.cho_solve(fac, rhs.T, check_finite=False).T
    else:
        k = int(max_neighbors)
        tree = cKDTree(locs)
        _, nbr = tree.query(tgt, k=k)
        nbr = np.sort(nbr, axis=1)
        for start in range(0, m, 512):
            idx = nbr[start:start + 512]
            pl = locs[idx]
            kmat = cov(np.sqrt(((pl[:, :, None] - pl[:, None]) ** 2).sum(-1)))
            kmat[:, np.arange(k), np.arange(k)] += DIAG_REG
            t = tgt[start:start + 512]
            rhs = cov(np.sqrt(((pl - t[:, None]) ** 2).sum(-1)))
            lam = np.linalg.solve(kmat, rhs[..., None])[..., 0]
            np.put_along_axis(out[start:start + 512], idx, lam, axis=1)

    # exact interpolation at data locations
    hit_d, hit_i = cKDTree(locs).query(tgt, k=1)
    on_datum = hit_d == 0
    if np.any(on_datum):
        out[on_datum] = 0.0
        out[on_datum, hit_i[on_datum]] = 1.0
    return out[0] if single else out


def snap_to_cells(domain, locations):
    """Flat cell indices for data locations; rejects outside or shared cells."""
    idx = domain.cell_index(locations)
    if np.any(idx < 0):
        raise ValueError(f"data outside the grid at rows {np.flatnonzero(idx < 0)[:5].tolist()}")
    uniq, counts = np.unique(idx, return_counts=True)
    if np.any(counts > 1):
        raise ValueError(f"several data fall in cell(s) {uniq[counts > 1][:5].tolist()}")
    return idx


def conditional_simulate_real(model, domain, data, seed=None, max_neighbors=50,
                              unconditional=None, method="auto", weights=None):
    """Condition a Gaussian simulation by simple kriging of its residuals at the data.

    ``X_cs(u) = X_s(u) + sum_a lambda_a(u) [x_a - X_s(u_a)]``. Data are
    assigned to their nearest cell and kriged from the cell centres, so the
    field reproduces each datum at its cell. ``weights`` (cells x data) may
    be precomputed with :func:`cell_kriging_weights` and reused across
    realizations.
    """
    if unconditional is None:
        unconditional = simulate_gaussian_grid(model, domain, seed, method=method)
    xs = np.array(unconditional, dtype=float)
    if data is None or len(data) == 0:
        return xs
    idx = snap_to_cells(domain, data.locations)
    resid = np.asarray(data.values, dtype=float) - xs.ravel()[idx]
    if weights is None:
        weights = cell_kriging_weights(model, domain, data.locations, max_neighbors)
    return xs + (weights @ resid).reshape(domain.shape)


def cell_kriging_weights(cov, domain, locations, max_neighbors=50):
    """Kriging weights of every cell centre from data snapped to their cells."""
    idx = snap_to_cells(domain, locations)
    cells = domain.coords()
    return simple_kriging_weights(cov, cells[idx], cells, max_neighbors=max_neighbors)


# ---------------------------------------------------------------- variography

class LagTable(NamedTuple):
    """Binned experimental statistic: mean pair distance, value and pair count."""

    h: np.ndarray
    value: np.ndarray
    npairs: np.ndarray


def lag_bins(distances, lag, nlags, tol=None):
    """Bin index ``k-1`` for distances within ``tol`` of ``k*lag``, k = 1..nlags; -1 otherwise."""
    tol = lag / 2.0 if tol is None else tol
    k = np.rint(distances / lag).astype(int)
    ok = (k >= 1) & (k <= nlags) & (np.abs(distances - k * lag) <= tol)
    return np.where(ok, k - 1, -1)


def _binned_pair_stat(locs, pair_value, lag, nlags, tol):
    dist = pdist(locs)
    vals = pair_value()
    b = lag_bins(dist, lag, nlags, tol)
    keep = b >= 0
    counts = np.bincount(b[keep], minlength=nlags)
    sums = np.bincount(b[keep], weights=vals[keep], minlength=nlags)
    hsum = np.bincount(b[keep], weights=dist[keep], minlength=nlags)
    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(counts > 0, sums / counts, np.nan)
        h = np.where(counts > 0, hsum / counts, lag * np.arange(1, nlags + 1))
    return LagTable(h, value, counts)


def empirical_variogram(data, lag, nlags, tol=None):
    """Omnidirectional semivariogram ``1/2 mean |x_i - x_j|^2`` per lag bin.

    Vector-valued samples use the squared Euclidean norm. Empty bins carry
    ``npairs = 0`` and a NaN value.
    """
    if len(data) < 2:
        raise ValueError("need at least two samples")
    x = data.values.reshape(len(data), -1)
    return _binned_pair_stat(data.locations, lambda: 0.5 * pdist(x, "sqeuclidean"),
                             lag, nlags, tol)


def empirical_covariance(data, lag, nlags, tol=None):
    """Non-centred covariance ``mean <x_i, x_j>`` per lag bin (known zero mean)."""
    if len(data) < 2:
        raise ValueError("need at least two samples")
    x = data.values.reshape(len(data), -1)

    def dots():
        i, j = np.triu_indices(len(data), 1)
        return np.einsum("ij,ij->i", x[i], x[j])
    return _binned_pair_stat(data.locations, dots, lag, nlags, tol)


def gridded_covariance(field, domain, lag, nlags, tol=None, mask=None):
    """Non-centred experimental covariance of gridded data via FFT.

    ``field`` has shape (ny, nx) or (ny, nx, k); for vector data the inner
    product over the last axis is averaged. Returns a :class:`LagTable`
    whose first entry is lag zero followed by ``nlags`` bins.
    """
    f = np.asarray(field, dtype=float)
    if f.ndim == 2:
        f = f[..., None]
    ny, nx, _ = f.shape
    valid = np.ones((ny, nx)) if mask is None else np.asarray(mask, dtype=float)
    f = f * valid[..., None]
    shp = (2 * ny, 2 * nx)
    spec = np.fft.rfft2(np.moveaxis(f, -1, 0), s=shp)
    prod = np.fft.irfft2((spec * spec.conj()).sum(0), s=shp)
    wspec = np.fft.rfft2(valid, s=shp)
    cnt = np.rint(np.fft.irfft2(wspec * wspec.conj(), s=shp))
    iy = np.fft.fftfreq(2 * ny, 1.0 / (2 * ny))
    ix = np.fft.fftfreq(2 * nx, 1.0 / (2 * nx))
    h = np.sqrt((iy[:, None] * domain.cell[1]) ** 2 + (ix[None, :] * domain.cell[0]) ** 2)
    zero = h == 0
    b = lag_bins(h, lag, nlags, tol)
    keep = (b >= 0) & (cnt > 0.5)
    counts = np.bincount(b[keep], weights=cnt[keep], minlength=nlags)
    sums = np.bincount(b[keep], weights=prod[keep], minlength=nlags)
    hs = np.bincount(b[keep], weights=(h * cnt)[keep], minlength=nlags)
    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(counts > 0, sums / counts, np.nan)
        hm = np.where(counts > 0, hs / counts, lag * np.arange(1, nlags + 1))
    c0 = prod[zero].sum() / cnt[zero].sum()
    # each unordered pair is seen at +h and -h
    return LagTable(np.r_[0.0, hm], np.r_[c0, value],
                    np.r_[cnt[zero].sum(), counts / 2].astype(np.int64))


# ---------------------------------------------------------------- normal scores

class MonotoneMap:
    """Strictly increasing piecewise-linear map with linear tails, and its inverse."""

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size < 2 or np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ValueError("monotone map needs >= 2 strictly increasing knots")
        self.x = x
        self.y = y

    @staticmethod
    def _interp(t, xp, fp):
        t = np.asarray(t, dtype=float)
        out = np.interp(t, xp, fp)
        lo_slope = (fp[1] - fp[0]) / (xp[1] - xp[0])
        hi_slope = (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
        out = np.where(t < xp[0], fp[0] + (t - xp[0]) * lo_slope, out)
        out = np.where(t > xp[-1], fp[-1] + (t - xp[-1]) * hi_slope, out)
        return out

    def __call__(self, t):
        return self._interp(t, self.x, self.y)

    def inverse(self, t):
        return self._interp(t, self.y, self.x)

    def to_dict(self):
        return {"x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["x"], d["y"])


def normal_scores(values):
    """Standard normal quantiles of mid-ranks ``(rank - 1/2) / N`` (ties averaged)."""
    v = np.asarray(values, dtype=float)
    n = v.size
    order = np.argsort(v, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(1, n + 1)
    uniq, inv = np.unique(v, return_inverse=True)
    mean_rank = np.bincount(inv, weights=ranks) / np.bincount(inv)
    return ndtri((mean_rank[inv] - 0.5) / n)


def normal_score_transform(values):
    """Gaussianize ``values`` by rank; returns ``(scores, table)``.

    ``table`` is a :class:`MonotoneMap` from data units to scores whose
    ``inverse`` back-transforms simulated values.
    """
    v = np.asarray(values, dtype=float).ravel()
    uniq = np.unique(v)
    if uniq.size < 2:
        raise ValueError("normal score transform needs at least two distinct values")
    scores = normal_scores(v)
    _, first = np.unique(v, return_index=True)
    return scores, MonotoneMap(uniq, scores[first])
