"""Map an empirical orientation distribution to the uniform law on S^{p-1} and back.

The chain is: log map at the geometric mean, coordinates in a fixed
orthonormal tangent basis, projection pursuit multivariate transform (PPMT)
to a standard Gaussian, then a radial quantile match of the Gaussian radius
onto the polar angle of the uniform law, and finally the exponential map.
Each stage is invertible, so :meth:`SphereTransform.backward` undoes
:meth:`SphereTransform.forward`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special as sps
from scipy.stats import chi2

from .gaussian import MonotoneMap, normal_score_transform
from .special import (bisect_monotone, sn_radial_cdf, sn_radial_sf, uniform_radial_cdf,
                      uniform_radial_ppf, uniform_radial_sf)
from .sphere import exp_map, frechet_mean, log_map, tangent_basis, unit

FORMAT_VERSION = 1
LEGENDRE_TERMS = 8
INDEX_FLOOR = 1e-3
# tangent radii are kept strictly inside the injectivity radius
MAX_RADIUS = np.pi - 1e-9


# ---------------------------------------------------------------- projection index

def legendre_index(z, terms=LEGENDRE_TERMS):
    """Friedman's Legendre projection index of each column of ``z``.

    With ``r = 2 Phi(z) - 1`` the index is ``sum_j (2j + 1)/2 * mean(P_j(r))^2``
    over Legendre polynomials ``j = 1..terms``; it vanishes for a standard
    normal projection.
    """
    r = 2.0 * sps.ndtr(np.asarray(z, dtype=float)) - 1.0
    prev = np.ones_like(r)
    cur = r
    total = np.zeros(r.shape[1:])
    for j in range(1, terms + 1):
        total += 0.5 * (2 * j + 1) * np.mean(cur, axis=0) ** 2
        prev, cur = cur, ((2 * j + 1) * r * cur - j * prev) / (j + 1)
    return total


def _candidate_directions(q, rng, n_random):
    eye = np.eye(q)
    dirs = [eye]
    if q > 1:
        i, j = np.triu_indices(q, 1)
        dirs += [(eye[i] + eye[j]) / np.sqrt(2), (eye[i] - eye[j]) / np.sqrt(2)]
    dirs.append(unit(rng.standard_normal((n_random, q))))
    return np.vstack(dirs)


def best_direction(y, rng, n_random=64):
    """Unit direction maximizing the projection index of ``y`` (N, q)."""
    q = y.shape[1]
    if q == 1:
        return np.ones(1), float(legendre_index(y)[0])
    cand = _candidate_directions(q, rng, n_random)
    scores = legendre_index(y @ cand.T)
    start = cand[np.argmax(scores)]

    def neg_index(a):
        n = np.linalg.norm(a)
        return 0.0 if n == 0 else -float(legendre_index(y @ (a / n))[()])

    fit = optimize.minimize(neg_index, start, method="Nelder-Mead",
                            options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 200 * q})
    theta = unit(fit.x) if -fit.fun > scores.max() else start
    return theta, float(legendre_index(y @ theta)[()])


# ---------------------------------------------------------------- PPMT

@dataclass
class PPMTState:
    """Fitted PPMT: marginal score tables, sphering, and projection steps."""

    marginals: list
    center: np.ndarray
    sphere: np.ndarray
    unsphere: np.ndarray
    directions: list = field(default_factory=list)
    maps: list = field(default_factory=list)

    @property
    def dim(self):
        return self.center.size

    def to_dict(self):
        return {
            "marginals": [m.to_dict() for m in self.marginals],
            "center": self.center.tolist(),
            "sphere": self.sphere.tolist(),
            "unsphere": self.unsphere.tolist(),
            "directions": [d.tolist() for d in self.directions],
            "maps": [m.to_dict() for m in self.maps],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([MonotoneMap.from_dict(m) for m in d["marginals"]],
                   np.asarray(d["center"]), np.asarray(d["sphere"]),
                   np.asarray(d["unsphere"]), [np.asarray(t) for t in d["directions"]],
                   [MonotoneMap.from_dict(m) for m in d["maps"]])

    def apply(self, x):
        """Forward transform of new points with the stored tables."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.column_stack([m(x[:, k]) for k, m in enumerate(self.marginals)])
        y = (y - self.center) @ self.sphere
        for theta, g in zip(self.directions, self.maps):
            proj = y @ theta
            y = y + np.outer(g(proj) - proj, theta)
        return y

    def invert(self, y):
        y = np.array(np.atleast_2d(y), dtype=float)
        for theta, g in zip(reversed(self.directions), reversed(self.maps)):
            proj = y @ theta
            y = y + np.outer(g.inverse(proj) - proj, theta)
        y = y @ self.unsphere + self.center
        return np.column_stack([m.inverse(y[:, k]) for k, m in enumerate(self.marginals)])


def ppmt_forward(points, iters=30, seed=0, threshold=None):
    """Gaussianize a point cloud by projection pursuit.

    Parameters
    ----------
    points : array_like, shape (N, q)
    iters : int
        Maximum number of projection pursuit steps.
    seed : int
        Seeds the random candidate directions.
    threshold : float, optional
        Stop once the best projection index falls below this value. Defaults
        to the larger of 1e-3 and the 99% quantile of the index for a normal
        sample of this size, ``chi2_J(0.99) / (2N)``.

    Returns
    -------
    y : ndarray, shape (N, q)
    state : PPMTState
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2:
        raise ValueError("points must be an (N, q) array")
    n, q = x.shape
    if n <= q:
        raise ValueError(f"need more than {q} points for a {q}-dimensional PPMT")
    marginals = []
    cols = []
    for k in range(q):
        if np.ptp(x[:, k]) == 0:
            raise ValueError(f"coordinate {k} is constant")
        scores, table = normal_score_transform(x[:, k])
        cols.append(scores)
        marginals.append(table)
    y = np.column_stack(cols)
    center = y.mean(axis=0)
    lam, vec = np.linalg.eigh(np.cov(y, rowvar=False).reshape(q, q))
    if lam.min() <= 1e-10 * lam.max():
        raise ValueError("degenerate point cloud: covariance is rank deficient")
    sphere = vec @ np.diag(lam ** -0.5) @ vec.T
    unsphere = vec @ np.diag(lam ** 0.5) @ vec.T
    y = (y - center) @ sphere
    state = PPMTState(marginals, center, sphere, unsphere)
    if threshold is None:
        threshold = max(INDEX_FLOOR, chi2.ppf(0.99, LEGENDRE_TERMS) / (2.0 * n))
    rng = np.random.default_rng(seed)
    for _ in range(iters):
        theta, index = best_direction(y, rng)
        if index < threshold:
            break
        proj = y @ theta
        scores, g = normal_score_transform(proj)
        y = y + np.outer(scores - proj, theta)
        state.directions.append(theta)
        state.maps.append(g)
    return y, state


def ppmt_backward(state, y):
    """Inverse of :func:`ppmt_forward` (exact at the training points)."""
    return state.invert(y)


# ---------------------------------------------------------------- radial laws

def _chi_cdf_sf(k, rho):
    half = 0.5 * np.asarray(rho, dtype=float) ** 2
    return sps.gammainc(k / 2.0, half), sps.gammaincc(k / 2.0, half)


def _chi_ppf(k, cdf, sf):
    lo = np.sqrt(2.0 * sps.gammaincinv(k / 2.0, np.clip(cdf, 0.0, 1.0)))
    hi = np.sqrt(2.0 * sps.gammainccinv(k / 2.0, np.clip(sf, 0.0, 1.0)))
    return np.where(cdf <= 0.5, lo, hi)


def _sn_ppf(p, cdf, sf):
    lo = bisect_monotone(lambda r: sn_radial_cdf(1.0, p, r), cdf, 0.0, np.pi)
    hi = bisect_monotone(lambda r: sn_radial_sf(1.0, p, r), sf, 0.0, np.pi, increasing=False)
    return np.where(cdf <= 0.5, lo, hi)


def gaussian_to_uniform_radius(p, rho, law="chi"):
    """Polar angle on S^{p-1} with the same probability as Gaussian radius ``rho``.

    ``law="chi"`` treats ``rho`` as the norm of a standard normal vector in
    the (p-1)-dimensional tangent space; ``law="sn"`` uses the radial law of
    the spherical normal with unit concentration instead.
    """
    rho = np.asarray(rho, dtype=float)
    if law == "chi":
        cdf, sf = _chi_cdf_sf(p - 1, rho)
    elif law == "sn":
        r = np.clip(rho, 0.0, np.pi)
        cdf, sf = sn_radial_cdf(1.0, p, r), sn_radial_sf(1.0, p, r)
    else:
        raise ValueError(f"unknown radial law {law!r}")
    return uniform_radial_ppf(p, cdf, sf)


def uniform_to_gaussian_radius(p, r, law="chi"):
    """Inverse of :func:`gaussian_to_uniform_radius`."""
    r = np.asarray(r, dtype=float)
    cdf, sf = uniform_radial_cdf(p, r), uniform_radial_sf(p, r)
    if law == "chi":
        return _chi_ppf(p - 1, cdf, sf)
    if law == "sn":
        return _sn_ppf(p, cdf, sf)
    raise ValueError(f"unknown radial law {law!r}")


# ---------------------------------------------------------------- sphere transform

def _rescale(coords, new_radius):
    radius = np.linalg.norm(coords, axis=1)
    safe = np.where(radius > 0, radius, 1.0)
    return coords * (np.where(radius > 0, new_radius / safe, 0.0))[:, None]


@dataclass
class SphereTransform:
    """Fitted orientation anamorphosis; see :func:`fit_sphere_transform`."""

    mean: np.ndarray
    basis: np.ndarray
    ppmt: PPMTState
    radial_law: str = "chi"

    @property
    def p(self):
        return self.mean.size

    def _coords(self, s):
        s = unit(np.atleast_2d(np.asarray(s, dtype=float)))
        if s.shape[1] != self.p:
            raise ValueError(f"expected {self.p}-dimensional orientations")
        return log_map(self.mean, s) @ self.basis

    def _point(self, coords):
        return exp_map(self.mean, coords @ self.basis.T)

    def forward(self, s):
        """Map orientations to their uniform-law images."""
        y = self.ppmt.apply(self._coords(s))
        r = gaussian_to_uniform_radius(self.p, np.linalg.norm(y, axis=1), self.radial_law)
        return self._point(_rescale(y, np.minimum(r, MAX_RADIUS)))

    def backward(self, s):
        """Map uniform-law orientations back to the data distribution."""
        c = self._coords(s)
        rho = uniform_to_gaussian_radius(self.p, np.linalg.norm(c, axis=1), self.radial_law)
        x = self.ppmt.invert(_rescale(c, rho))
        radius = np.linalg.norm(x, axis=1)
        return self._point(_rescale(x, np.minimum(radius, MAX_RADIUS)))

    def to_dict(self):
        return {"format": "dualrf.SphereTransform", "version": FORMAT_VERSION,
                "mean": self.mean.tolist(), "basis": self.basis.tolist(),
                "radial_law": self.radial_law, "ppmt": self.ppmt.to_dict()}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "dualrf.SphereTransform" or d.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported transform file")
        return cls(np.asarray(d["mean"]), np.asarray(d["basis"]),
                   PPMTState.from_dict(d["ppmt"]), d["radial_law"])

    def dumps(self):
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def fit_sphere_transform(obs, ppmt_iters=30, radial_law="chi", seed=0):
    """Fit the orientation anamorphosis on a sample of unit vectors.

    Parameters
    ----------
    obs : array_like, shape (N, p)
        Orientations; needs ``N >= p + 1`` and a full-rank tangent cloud.
    ppmt_iters : int
        Maximum projection pursuit steps.
    radial_law : {"chi", "sn"}
        Radial law of the Gaussian stage matched to the uniform polar angle.
    seed : int
        Seeds the projection pursuit direction search.
    """
    s = unit(np.asarray(obs, dtype=float))
    n, p = s.shape
    if p < 2:
        raise ValueError("p must be >= 2")
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} orientations, got {n}")
    mean = frechet_mean(s)
    basis = tangent_basis(mean)
    coords = log_map(mean, s) @ basis
    _, state = ppmt_forward(coords, iters=ppmt_iters, seed=seed)
    return SphereTransform(mean, basis, state, radial_law)
