"""Local soft-margin linear SVMs on spatial neighbourhoods.

Each training location gets its own hyperplane fitted on the nearest
samples; the normalized pair (unit normal, offset) is the observation of the
orientation and offset fields at that location.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class SVMConvergenceError(RuntimeError):
    def __init__(self, message, gap):
        super().__init__(message)
        self.gap = gap


class DegenerateSVMError(ValueError):
    """The optimal normal vanishes, so no hyperplane separates the classes at all."""


# below this the offset b / |v| is numerically meaningless
MIN_WEIGHT_NORM = 1e-6


@dataclass(frozen=True)
class TrainingPoint:
    location: tuple
    features: tuple
    label: int


@dataclass
class TrainingSet:
    """Columnar training samples: locations (N, 2), features (N, p), labels in {-1, +1}."""

    locations: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=float).reshape(len(self.locations), -1)
        self.labels = np.asarray(self.labels).astype(int).ravel()
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.locations))):
            raise ValueError("non-finite features or locations")
        if self.labels.size != len(self.locations):
            raise ValueError("labels and locations differ in length")

    def __len__(self):
        return self.labels.size

    def subset(self, idx):
        return TrainingSet(self.locations[idx], self.features[idx], self.labels[idx])

    def points(self):
        return [TrainingPoint(tuple(l), tuple(f), int(y))
                for l, f, y in zip(self.locations, self.features, self.labels)]

    @classmethod
    def from_points(cls, points):
        points = list(points)
        if not points:
            raise ValueError("no training points")
        return cls([p.location for p in points], [p.features for p in points],
                   [p.label for p in points])


@dataclass(frozen=True)
class NeighborhoodSpec:
    max_samples: int = 1500
    max_radius: float = np.inf
    min_positive: int = 5

    def __post_init__(self):
        if self.max_samples < 1 or not self.max_radius > 0 or self.min_positive < 1:
            raise ValueError("neighbourhood parameters must be positive")


@dataclass
class HyperplaneModel:
    """Oriented hyperplane ``<normal, z> + offset = 0`` with unit ``normal``."""

    normal: np.ndarray
    offset: float
    location: tuple = (np.nan, np.nan)
    diagnostics: dict = field(default_factory=dict)

    def decision(self, z):
        return np.asarray(z, dtype=float) @ self.normal + self.offset

    def predict(self, z):
        return np.where(self.decision(z) >= 0, 1, -1)


@dataclass(frozen=True)
class FeatureScaler:
    """Global z-scoring shared by every local fit."""

    mean: np.ndarray
    std: np.ndarray

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


def standardize(features):
    """Fit a :class:`FeatureScaler` on ``features`` (N, p) and apply it."""
    x = np.asarray(features, dtype=float)
    std = x.std(axis=0)
    if np.any(std == 0):
        raise ValueError(f"constant feature(s) {np.flatnonzero(std == 0).tolist()}")
    scaler = FeatureScaler(x.mean(axis=0), std)
    return scaler(x), scaler


# ---------------------------------------------------------------- neighbourhoods

@dataclass
class Neighborhood:
    indices: np.ndarray
    accepted: bool
    reason: str = ""


def select_neighborhood(train, center, spec):
    """Nearest samples to ``center`` within ``spec.max_radius``, at most ``spec.max_samples``.

    Ties in distance keep the input order. The result is rejected (with a
    reason) when it holds fewer than ``spec.min_positive`` positive or no
    negative samples.
    """
    if isinstance(train, (list, tuple)):
        train = TrainingSet.from_points(train)
    d = np.hypot(*(train.locations - np.asarray(center, dtype=float)).T)
    order = np.argsort(d, kind="stable")
    order = order[d[order] <= spec.max_radius][: spec.max_samples]
    labels = train.labels[order]
    npos = int(np.sum(labels > 0))
    if order.size == 0:
        return Neighborhood(order, False, "no samples within radius")
    if npos < spec.min_positive:
        return Neighborhood(order, False, f"{npos} positive samples < {spec.min_positive}")
    if npos == order.size:
        return Neighborhood(order, False, "no negative samples")
    return Neighborhood(order, True)


# ---------------------------------------------------------------- solver

def _optimal_bias(margin_free, y, cost):
    """Bias minimizing ``cost * sum max(0, 1 - y (f + b))``; midpoint of flat optima."""
    knots = y - margin_free
    pos = np.sort(knots[y > 0])
    neg = np.sort(knots[y < 0])
    pos_suffix = np.r_[np.cumsum(pos[::-1])[::-1], 0.0]
    neg_prefix = np.r_[0.0, np.cumsum(neg)]
    cand = np.sort(knots)
    ip = np.searchsorted(pos, cand, side="right")
    ineg = np.searchsorted(neg, cand, side="left")
    hinge = cost * ((pos_suffix[ip] - cand * (pos.size - ip))
                    + (cand * ineg - neg_prefix[ineg]))
    best = hinge.min()
    flat = cand[hinge <= best + 1e-12 * (1.0 + abs(best))]
    return 0.5 * (flat.min() + flat.max()), best


def primal_objective(v, b, z, y, cost):
    return 0.5 * float(v @ v) + cost * float(np.sum(np.maximum(0.0, 1.0 - y * (z @ v + b))))


def _solve_dual(z, y, cost, tol, max_iter, check_every):
    """SMO with second-order working-set selection on the dual with equality constraint."""
    n = y.size
    yz = y[:, None] * z
    diag = np.einsum("ij,ij->i", z, z)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a^T Q a - sum a
    v = np.zeros(z.shape[1])
    gap = np.inf
    for it in range(1, max_iter + 1):
        yg = -y * grad
        up = ((y > 0) & (alpha < cost)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < cost)) | ((y > 0) & (alpha > 0))
        i = np.flatnonzero(up)[np.argmax(yg[up])]
        m_up = yg[i]
        cand = low & (yg < m_up)
        if not cand.any() or m_up - yg[low].min() < 1e-12:
            gap, b = _gap(v, alpha, z, y, cost)
            return alpha, v, b, gap, it
        qi = yz @ yz[i]  # Q[i, :]
        bdiff = m_up - yg[cand]
        a = np.maximum(diag[i] + diag[cand] - 2.0 * (z[cand] @ z[i]), 1e-12)
        j = np.flatnonzero(cand)[np.argmin(-bdiff**2 / a)]
        qj = yz @ yz[j]
        # step along y_i e_i - y_j e_j, clipped to the box
        t = (m_up - yg[j]) / max(diag[i] + diag[j] - 2.0 * float(z[i] @ z[j]), 1e-12)
        t = min(t, cost - alpha[i] if y[i] > 0 else alpha[i],
                alpha[j] if y[j] > 0 else cost - alpha[j])
        dai, daj = y[i] * t, -y[j] * t
        alpha[i] = min(max(alpha[i] + dai, 0.0), cost)
        alpha[j] = min(max(alpha[j] + daj, 0.0), cost)
        grad += qi * dai + qj * daj
        v += yz[i] * dai + yz[j] * daj
        if it % check_every == 0:
            gap, b = _gap(v, alpha, z, y, cost)
            if gap <= tol:
                return alpha, v, b, gap, it
    gap, b = _gap(v, alpha, z, y, cost)
    if gap <= tol:
        return alpha, v, b, gap, max_iter
    raise SVMConvergenceError(f"SVM solver stopped after {max_iter} iterations "
                              f"with relative duality gap {gap:.3e}", gap)


def _gap(v, alpha, z, y, cost):
    b, _ = _optimal_bias(z @ v, y, cost)
    primal = primal_objective(v, b, z, y, cost)
    dual = float(alpha.sum()) - 0.5 * float(v @ v)
    return (primal - dual) / max(1.0, abs(primal)), b


def fit_linear_svm(points, labels=None, cost=1.0, tol=1e-6, max_iter=200_000, location=None):
    """Soft-margin linear SVM ``min 1/2 |v|^2 + C sum xi``, returned with a unit normal.

    Parameters
    ----------
    points : TrainingSet, list of TrainingPoint, or array (N, p)
        Features (standardized by the caller); with an array, pass ``labels``.
    labels : array_like, optional
    cost : float
        Penalty ``C`` on margin violations.
    tol : float
        Relative duality gap at which the solver stops.

    Returns
    -------
    HyperplaneModel
        ``normal = v / |v|`` and ``offset = b / |v|``, so the decision set is
        unchanged. Diagnostics hold the primal objective (unscaled), the
        duality gap, training accuracy and class counts.
    """
    if labels is None:
        train = points if isinstance(points, TrainingSet) else TrainingSet.from_points(points)
        z, y = train.features, train.labels.astype(float)
    else:
        z = np.atleast_2d(np.asarray(points, dtype=float))
        y = np.asarray(labels, dtype=float).ravel()
    if not cost > 0:
        raise ValueError("cost must be positive")
    npos, nneg = int(np.sum(y > 0)), int(np.sum(y < 0))
    if npos == 0 or nneg == 0:
        raise ValueError("SVM needs samples of both classes")
    alpha, v, b, gap, n_iter = _solve_dual(z, y, float(cost), tol, max_iter,
                                           check_every=max(10, y.size // 4))
    norm = float(np.linalg.norm(v))
    if norm <= MIN_WEIGHT_NORM:
        raise DegenerateSVMError(f"degenerate SVM solution: |v| = {norm:.3e}")
    pred = np.where(z @ v + b >= 0, 1, -1)
    diag = {"objective": primal_objective(v, b, z, y, cost), "duality_gap": gap,
            "n_iter": n_iter, "train_accuracy": float(np.mean(pred == y)),
            "n_pos": npos, "n_neg": nneg, "n_support": int(np.sum(alpha > 0)),
            "weight_norm": norm}
    loc = (np.nan, np.nan) if location is None else tuple(map(float, location))
    return HyperplaneModel(v / norm, b / norm, loc, diag)


def feature_importance(model):
    """Squared components of the unit normal; they sum to one."""
    s = np.asarray(model.normal if isinstance(model, HyperplaneModel) else model, dtype=float)
    return s * s


def fit_all_locations(training_locs, train, spec, cost=1.0):
    """Fit one local SVM per training location.

    Returns
    -------
    models : list of HyperplaneModel
    rejected : list of (location, reason)
    """
    if isinstance(train, (list, tuple)):
        if not train:
            raise ValueError("no training samples")
        train = TrainingSet.from_points(train)
    if len(train) == 0:
        raise ValueError("no training samples")
    models, rejected = [], []
    for loc in np.atleast_2d(np.asarray(training_locs, dtype=float)):
        nb = select_neighborhood(train, loc, spec)
        if not nb.accepted:
            rejected.append((tuple(loc), nb.reason))
            continue
        sub = train.subset(nb.indices)
        try:
            models.append(fit_linear_svm(sub, cost=cost, location=loc))
        except DegenerateSVMError as err:
            rejected.append((tuple(loc), str(err)))
    if not models:
        raise ValueError("no training location passed the neighbourhood requirements")
    return models, rejected


def nearest_index(points, targets):
    return cKDTree(points).query(targets, k=1)[1]
