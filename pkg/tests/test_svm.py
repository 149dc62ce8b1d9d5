import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_bias, svm_primal, svm_reference

from dualrf.svm import (DegenerateSVMError, FeatureScaler, HyperplaneModel, NeighborhoodSpec,
                        TrainingPoint, TrainingSet, feature_importance, fit_all_locations,
                        fit_linear_svm, select_neighborhood, standardize)


def noisy_problem(rng, n=200, p=7, noise=0.5):
    z = rng.standard_normal((n, p))
    y = np.where(z @ rng.standard_normal(p) + noise * rng.standard_normal(n) + 0.3 > 0, 1.0, -1.0)
    return z, y


def probe_grid(p, rng, n=2000):
    return 3 * rng.standard_normal((n, p))


# ---------------------------------------------------------------- single fits

def test_symmetric_two_point_problem():
    m = fit_linear_svm(np.array([[-1.0, 0.0], [1.0, 0.0]]), [-1, 1], cost=1e6)
    np.testing.assert_allclose(m.normal, [1.0, 0.0], atol=1e-9)
    assert m.offset == pytest.approx(0.0, abs=1e-9)
    # margin boundaries of the unscaled solution sit at x = +-1
    w = m.diagnostics["weight_norm"]
    assert w == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(m.decision([[1.0, 0.0], [-1.0, 0.0]]) * w, [1.0, -1.0], atol=1e-9)


def test_objective_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(5):
        z, y = noisy_problem(rng)
        ref, *_ = svm_reference(z, y, 1.0)
        m = fit_linear_svm(z, y, cost=1.0)
        assert abs(m.diagnostics["objective"] - ref) <= 1e-4 * ref
        assert m.diagnostics["duality_gap"] <= 1e-6


def test_scaling_with_cost_schedule_keeps_decisions():
    # scaling features by k and cost by 1/k^2 rescales the optimum exactly
    rng = np.random.default_rng(1)
    z, y = noisy_problem(rng, n=120, p=3)
    a = fit_linear_svm(z, y, cost=1.0, tol=1e-10)
    b = fit_linear_svm(10 * z, y, cost=0.01, tol=1e-10)
    probe = probe_grid(3, rng)
    margin = np.abs(a.decision(probe))
    keep = margin > 1e-6
    np.testing.assert_array_equal(a.predict(probe)[keep], b.predict(10 * probe)[keep])
    np.testing.assert_allclose(a.normal, b.normal, atol=1e-5)


def test_unit_normalization_preserves_decisions():
    rng = np.random.default_rng(2)
    z, y = noisy_problem(rng, n=150, p=4)
    m = fit_linear_svm(z, y)
    w = m.diagnostics["weight_norm"]
    probe = probe_grid(4, rng)
    raw = probe @ (m.normal * w) + m.offset * w
    np.testing.assert_array_equal(np.sign(raw), np.sign(m.decision(probe)))
    assert np.linalg.norm(m.normal) == pytest.approx(1.0, abs=1e-14)


def test_improves_on_zero_classifier():
    rng = np.random.default_rng(3)
    for _ in range(5):
        z, y = noisy_problem(rng, n=100, p=5, noise=2.0)
        m = fit_linear_svm(z, y)
        zero = svm_primal(np.zeros(5), brute_force_bias(np.zeros(100), y, 1.0), z, y, 1.0)
        assert m.diagnostics["objective"] <= zero + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 6))
def test_separable_problems_are_separated(seed, p):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(p)
    z = rng.standard_normal((80, p))
    f = z @ w / np.linalg.norm(w)
    z, f = z[np.abs(f) > 0.2], f[np.abs(f) > 0.2]
    y = np.sign(f)
    if len(np.unique(y)) < 2:
        return
    m = fit_linear_svm(z, y, cost=1e4)
    assert np.all(y * m.decision(z) > 0)
    assert m.diagnostics["train_accuracy"] == 1.0


def test_positive_class_on_positive_side():
    rng = np.random.default_rng(4)
    z, y = noisy_problem(rng, p=3, noise=0.1)
    m = fit_linear_svm(z, y)
    assert np.mean(m.predict(z) == y) > 0.9
    assert np.mean(m.decision(z[y > 0]) > 0) > 0.9


def test_fit_errors():
    with pytest.raises(ValueError, match="both classes"):
        fit_linear_svm(np.ones((4, 2)), [1, 1, 1, 1])
    with pytest.raises(ValueError):
        fit_linear_svm(np.eye(2), [-1, 1], cost=0.0)
    # identical features with opposite labels admit no separating normal
    with pytest.raises(DegenerateSVMError):
        fit_linear_svm(np.zeros((6, 3)), [1, -1, 1, -1, 1, -1])


def test_training_point_inputs():
    pts = [TrainingPoint((0.0, 0.0), (-1.0, 0.5), -1), TrainingPoint((1.0, 0.0), (1.0, 0.2), 1),
           TrainingPoint((2.0, 0.0), (-2.0, 0.1), -1), TrainingPoint((3.0, 0.0), (2.0, 0.3), 1)]
    m = fit_linear_svm(pts, cost=100.0)
    assert m.diagnostics["n_pos"] == 2
    assert m.diagnostics["train_accuracy"] == 1.0
    ts = TrainingSet.from_points(pts)
    assert ts.points() == pts
    with pytest.raises(ValueError):
        TrainingSet([[0.0, 0.0]], [[1.0]], [0])


def test_standardize():
    rng = np.random.default_rng(5)
    x = rng.normal([5, -3], [2, 0.1], (500, 2))
    z, sc = standardize(x)
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(0), 1, atol=1e-12)
    back = FeatureScaler.from_dict(sc.to_dict())
    np.testing.assert_array_equal(back(x), z)
    with pytest.raises(ValueError, match="constant"):
        standardize(np.c_[x, np.ones(500)])


# ---------------------------------------------------------------- importance

def test_feature_importance_examples():
    e3 = np.eye(5)[2]
    np.testing.assert_array_equal(feature_importance(HyperplaneModel(e3, 0.0)), e3)
    s = (np.eye(4)[0] + np.eye(4)[1]) / np.sqrt(2)
    np.testing.assert_allclose(feature_importance(s), [0.5, 0.5, 0, 0])


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=9).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_feature_importance_sums_to_one(v):
    s = np.asarray(v) / np.linalg.norm(v)
    imp = feature_importance(s)
    assert np.all((imp >= 0) & (imp <= 1))
    assert imp.sum() == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- neighbourhoods

def grid_training(n=50, p=2, seed=0):
    rng = np.random.default_rng(seed)
    loc = rng.uniform(0, 100, (n, 2))
    feats = rng.standard_normal((n, p))
    return TrainingSet(loc, feats, np.where(feats[:, 0] + 0.3 * rng.standard_normal(n) > 0, 1, -1))


def test_neighborhood_tiny_radius():
    ts = TrainingSet([[0.0, 0.0], [50.0, 50.0], [51.0, 50.0]], np.eye(3)[:, :2], [1, -1, -1])
    nb = select_neighborhood(ts, (0.0, 0.0), NeighborhoodSpec(10, 0.5, 1))
    np.testing.assert_array_equal(nb.indices, [0])
    assert not nb.accepted and "negative" in nb.reason
    nb = select_neighborhood(ts, (0.0, 0.0), NeighborhoodSpec(10, 0.5, 2))
    assert not nb.accepted and "positive" in nb.reason
    nb = select_neighborhood(ts, (200.0, 0.0), NeighborhoodSpec(10, 1.0, 1))
    assert not nb.accepted and nb.indices.size == 0


def test_neighborhood_truncates_to_nearest():
    rng = np.random.default_rng(6)
    loc = rng.uniform(0, 10, (2000, 2))
    ts = TrainingSet(loc, rng.standard_normal((2000, 1)), np.where(rng.random(2000) < .5, 1, -1))
    nb = select_neighborhood(ts, (5.0, 5.0), NeighborhoodSpec(1500, 100.0, 5))
    d = np.hypot(*(loc - 5.0).T)
    assert nb.indices.size == 1500
    np.testing.assert_array_equal(np.sort(nb.indices), np.sort(np.argsort(d, kind="stable")[:1500]))


def test_neighborhood_ties_keep_input_order():
    loc = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    ts = TrainingSet(loc, np.zeros((4, 1)), [1, 1, -1, -1])
    nb = select_neighborhood(ts, (0.0, 0.0), NeighborhoodSpec(2, 5.0, 1))
    np.testing.assert_array_equal(nb.indices, [0, 1])


def test_neighborhood_spec_validation():
    with pytest.raises(ValueError):
        NeighborhoodSpec(0, 1.0, 1)


# ---------------------------------------------------------------- all locations

def test_fit_all_locations_reports_rejections():
    ts = grid_training(200)
    locs = [[50.0, 50.0], [500.0, 500.0]]
    models, rejected = fit_all_locations(locs, ts, NeighborhoodSpec(60, 30.0, 3))
    assert len(models) == 1 and models[0].location == (50.0, 50.0)
    assert rejected[0][0] == (500.0, 500.0)
    with pytest.raises(ValueError):
        fit_all_locations(locs, [], NeighborhoodSpec())
    with pytest.raises(ValueError, match="no training location"):
        fit_all_locations([[500.0, 500.0]], ts, NeighborhoodSpec(60, 30.0, 3))


def _labelled(loc, feats, normal_at, rng):
    s = normal_at(loc)
    score = np.sum(feats * s, axis=1) + 0.05 * rng.standard_normal(len(feats))
    return np.where(score > 0, 1, -1)


def test_global_rule_recovered_everywhere():
    rng = np.random.default_rng(7)
    n, p = 3000, 3
    truth = np.array([0.6, -0.48, 0.64])
    loc = rng.uniform(0, 100, (n, 2))
    feats = rng.standard_normal((n, p))
    labels = _labelled(loc, feats, lambda _: truth, rng)
    train = TrainingSet(loc, feats, labels)
    centres = rng.uniform(10, 90, (12, 2))
    models, rejected = fit_all_locations(centres, train, NeighborhoodSpec(400, np.inf, 5), cost=10)
    assert not rejected
    angles = [np.rad2deg(np.arccos(np.clip(m.normal @ truth, -1, 1))) for m in models]
    assert max(angles) < 5


def test_two_half_domains_give_two_orthogonal_groups():
    rng = np.random.default_rng(8)
    n, p = 4000, 3
    left, right = np.eye(3)[0], np.eye(3)[1]
    loc = rng.uniform(0, 100, (n, 2))
    feats = rng.standard_normal((n, p))
    labels = np.where(loc[:, 0] < 50, _labelled(loc, feats, lambda _: left, rng),
                      _labelled(loc, feats, lambda _: right, rng))
    train = TrainingSet(loc, feats, labels)
    centres = np.r_[rng.uniform([5, 5], [35, 95], (6, 2)), rng.uniform([65, 5], [95, 95], (6, 2))]
    models, _ = fit_all_locations(centres, train, NeighborhoodSpec(300, 15.0, 5), cost=10)
    normals = np.array([m.normal for m in models])
    side = np.array([m.location[0] < 50 for m in models])
    sim = normals @ normals.T
    assert sim[np.ix_(side, side)].min() > 0.95
    assert sim[np.ix_(~side, ~side)].min() > 0.95
    assert np.abs(sim[np.ix_(side, ~side)]).max() < 0.2
