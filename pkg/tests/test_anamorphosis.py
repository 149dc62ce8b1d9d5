import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.spatial.distance import cdist

from dualrf.anamorphosis import (PPMTState, SphereTransform, best_direction,
                                 fit_sphere_transform, gaussian_to_uniform_radius,
                                 legendre_index, ppmt_backward, ppmt_forward,
                                 uniform_to_gaussian_radius)
from dualrf.gaussian import MonotoneMap
from dualrf.special import sample_spherical_normal, uniform_sphere_cdf
from dualrf.sphere import (CutLocusError, frechet_mean, geodesic_distance, log_map,
                           random_uniform, unit)

MU = unit(np.array([0.3, -0.2, 0.9]))


def energy_two_sample_pvalue(a, b, n_perm=300, seed=0):
    """Permutation p-value of the energy distance between two samples."""
    pooled = np.vstack([a, b])
    d = cdist(pooled, pooled)
    n = len(a)
    rng = np.random.default_rng(seed)

    def stat(idx):
        x, y = idx[:n], idx[n:]
        return 2 * d[np.ix_(x, y)].mean() - d[np.ix_(x, x)].mean() - d[np.ix_(y, y)].mean()
    base = np.arange(len(pooled))
    observed = stat(base)
    hits = sum(stat(rng.permutation(base)) >= observed for _ in range(n_perm))
    return (hits + 1) / (n_perm + 1)


def polar_ks(images, axis):
    cos = images @ axis
    return stats.kstest(cos, lambda s: 1 - uniform_sphere_cdf(images.shape[1], np.clip(s, -1, 1)))


# ---------------------------------------------------------------- projection index

def test_legendre_index_small_for_normal_large_otherwise():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((5000, 1))
    assert legendre_index(z)[0] < 5e-3
    assert legendre_index(rng.exponential(size=(5000, 1)) - 1)[0] > 0.05
    assert legendre_index(np.r_[rng.normal(-2, 0.3, 2500), rng.normal(2, 0.3, 2500)][:, None])[0] > 0.05


def test_best_direction_finds_bimodal_axis():
    rng = np.random.default_rng(1)
    y = rng.standard_normal((3000, 3))
    y[:, 1] = np.where(rng.random(3000) < 0.5, -1.0, 1.0) + 0.2 * rng.standard_normal(3000)
    theta, index = best_direction(y, rng)
    assert abs(theta[1]) > 0.95
    assert index > 0.05


# ---------------------------------------------------------------- PPMT

def test_ppmt_normal_input_stays_normal():
    x = np.random.default_rng(2).standard_normal((1500, 3))
    y, state = ppmt_forward(x)
    assert len(state.directions) <= 1
    for k in range(3):
        assert stats.kstest(y[:, k], "norm").pvalue > 0.01
        assert stats.ks_2samp(y[:, k], x[:, k]).pvalue > 0.01


def banana(n, rng):
    a = rng.standard_normal(n)
    return np.column_stack([a, 0.5 * a ** 2 + 0.3 * rng.standard_normal(n)])


def test_ppmt_gaussianizes_banana():
    rng = np.random.default_rng(3)
    x = banana(1000, rng)
    y, state = ppmt_forward(x)
    assert len(state.directions) >= 1
    for k in range(2):
        assert stats.kstest(y[:, k], "norm").pvalue > 0.01
    assert abs(np.corrcoef(y, rowvar=False)[0, 1]) < 0.1
    # joint normality: two-sample energy test against a fresh normal sample
    assert energy_two_sample_pvalue(y[:400], rng.standard_normal((400, 2))) > 0.01
    # the raw banana is far from normal under the same test
    raw = (x - x.mean(0)) / x.std(0)
    assert energy_two_sample_pvalue(raw[:400], rng.standard_normal((400, 2))) <= 0.01


def test_ppmt_round_trip_on_training_points():
    rng = np.random.default_rng(4)
    x = np.column_stack([rng.gamma(2.0, size=800), rng.uniform(-3, 1, 800), rng.normal(size=800)])
    x[:, 2] += x[:, 0] ** 1.5
    y, state = ppmt_forward(x)
    np.testing.assert_allclose(ppmt_backward(state, y), x, atol=1e-8)
    np.testing.assert_allclose(state.apply(x), y, atol=1e-10)


def test_ppmt_round_trip_off_training_points():
    rng = np.random.default_rng(5)
    _, state = ppmt_forward(banana(600, rng))
    z = 2.5 * rng.standard_normal((500, 2))
    np.testing.assert_allclose(state.apply(state.invert(z)), z, atol=1e-8)


def test_ppmt_errors():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((50, 2))
    x[:, 1] = 4.0
    with pytest.raises(ValueError, match="constant"):
        ppmt_forward(x)
    with pytest.raises(ValueError):
        ppmt_forward(rng.standard_normal((2, 2)))
    y = rng.standard_normal((100, 2))
    y[:, 1] = y[:, 0] * 3
    with pytest.raises(ValueError, match="degenerate"):
        ppmt_forward(y)


def test_ppmt_state_dict_round_trip():
    rng = np.random.default_rng(7)
    _, state = ppmt_forward(banana(300, rng))
    back = PPMTState.from_dict(state.to_dict())
    probe = banana(50, rng)
    np.testing.assert_array_equal(back.apply(probe), state.apply(probe))


# ---------------------------------------------------------------- radial maps

@pytest.mark.parametrize("law", ["chi", "sn"])
@pytest.mark.parametrize("p", [3, 7])
def test_radial_maps_monotone_and_inverse(law, p):
    rho = np.linspace(0, 4.0 if law == "chi" else np.pi - 1e-3, 400)
    r = gaussian_to_uniform_radius(p, rho, law)
    assert r[0] == 0.0
    assert np.all(np.diff(r) > 0)
    assert np.all(r < np.pi)
    np.testing.assert_allclose(uniform_to_gaussian_radius(p, r, law), rho, atol=1e-8)


def test_radial_map_unknown_law():
    with pytest.raises(ValueError):
        gaussian_to_uniform_radius(3, 1.0, "vmf")


def test_chi_law_maps_gaussian_cloud_to_uniform_polar_angle():
    # a standard normal tangent cloud, radially remapped, is uniform on S^2
    rng = np.random.default_rng(8)
    y = rng.standard_normal((20000, 2))
    r = gaussian_to_uniform_radius(3, np.linalg.norm(y, axis=1))
    assert stats.kstest(np.cos(r), lambda s: 1 - uniform_sphere_cdf(3, np.clip(s, -1, 1))).pvalue > 0.01


# ---------------------------------------------------------------- sphere transform

@pytest.fixture(scope="module")
def sn_transform():
    x = sample_spherical_normal(MU, 1.0, 3000, np.random.default_rng(9))
    return x, fit_sphere_transform(x)


def test_sn_sample_needs_no_projection_pursuit(sn_transform):
    x, t = sn_transform
    assert len(t.ppmt.directions) == 0
    assert polar_ks(t.forward(x), t.mean).pvalue > 0.01


def test_uniform_input_stays_uniform():
    x = random_uniform(3000, 3, np.random.default_rng(10))
    t = fit_sphere_transform(x)
    img = t.forward(x)
    for axis in (t.mean, np.eye(3)[2], np.eye(3)[0]):
        assert polar_ks(img, axis).pvalue > 0.01


def test_tight_cluster_spreads_and_restores():
    x = sample_spherical_normal(MU, 100.0, 2000, np.random.default_rng(11))
    t = fit_sphere_transform(x)
    img = t.forward(x)
    assert polar_ks(img, t.mean).pvalue > 0.01
    assert np.max(geodesic_distance(t.backward(img), x)) < 1e-6


def test_round_trips_off_training(sn_transform):
    x, t = sn_transform
    rng = np.random.default_rng(12)
    reach = np.max(geodesic_distance(x, t.mean))
    s = sample_spherical_normal(MU, 0.5, 3000, rng)
    inside = geodesic_distance(s, t.mean) <= reach
    assert np.max(geodesic_distance(t.backward(t.forward(s[inside])), s[inside])) < 1e-6
    u = random_uniform(1000, 3, rng)
    u = u[geodesic_distance(u, -t.mean) > 1e-3]
    assert np.max(geodesic_distance(t.forward(t.backward(u)), u)) < 1e-6
    # far outliers are pushed next to the antipode but stay well defined
    img = t.forward(s[~inside])
    np.testing.assert_allclose(np.linalg.norm(img, axis=1), 1.0, atol=1e-12)
    assert np.all(geodesic_distance(t.backward(img), s[~inside]) < 1e-3)


def test_mean_is_fixed_by_radial_stage(sn_transform):
    x, t = sn_transform
    # exact for an identity Gaussianization
    eye = PPMTState([MonotoneMap([-1.0, 1.0], [-1.0, 1.0])] * 2, np.zeros(2), np.eye(2), np.eye(2))
    bare = SphereTransform(t.mean, t.basis, eye)
    np.testing.assert_allclose(bare.forward(t.mean)[0], t.mean, atol=1e-15)
    np.testing.assert_allclose(bare.backward(t.mean)[0], t.mean, atol=1e-15)
    # the fitted marginal maps move the origin only by sampling noise
    assert geodesic_distance(t.forward(t.mean)[0], t.mean) < 0.1


def test_forward_shifts_radially(sn_transform):
    x, t = sn_transform
    s = x[:200]
    y = t.ppmt.apply(log_map(t.mean, s) @ t.basis)
    img = log_map(t.mean, t.forward(s)) @ t.basis
    cos = np.sum(unit(y) * unit(img), axis=1)
    np.testing.assert_allclose(cos, 1.0, atol=1e-10)


def test_backward_of_uniform_matches_training_distribution():
    rng = np.random.default_rng(13)
    a = np.abs(rng.standard_normal(3000))
    x = unit(np.column_stack([np.cos(a), np.sin(a) * 0.3 + 0.1 * rng.standard_normal(3000),
                              np.sin(a)]))
    t = fit_sphere_transform(x)
    back = t.backward(random_uniform(400, 3, rng))
    assert energy_two_sample_pvalue(back, x[:400]) > 0.01


def test_centering_is_stable():
    # the fitted centre tracks the true mean, and uniform images pulled back
    # are centred where the data are
    rng = np.random.default_rng(14)
    x = sample_spherical_normal(MU, 4.0, 800, rng)
    t = fit_sphere_transform(x)
    assert np.rad2deg(geodesic_distance(t.mean, MU)) < 5
    back = t.backward(t.forward(x))
    assert np.rad2deg(geodesic_distance(frechet_mean(back), MU)) < 5
    pulled = t.backward(random_uniform(800, 3, rng))
    assert np.rad2deg(geodesic_distance(frechet_mean(pulled), MU)) < 5


def test_higher_dimension_round_trip():
    rng = np.random.default_rng(15)
    mu = unit(np.ones(7))
    x = sample_spherical_normal(mu, 3.0, 1500, rng)
    t = fit_sphere_transform(x)
    img = t.forward(x)
    assert polar_ks(img, t.mean).pvalue > 0.01
    assert np.max(geodesic_distance(t.backward(img), x)) < 1e-6


def test_antipodal_input_raises(sn_transform):
    _, t = sn_transform
    with pytest.raises(CutLocusError):
        t.forward(-t.mean)


def test_fit_errors():
    with pytest.raises(ValueError, match="at least"):
        fit_sphere_transform(random_uniform(3, 3, np.random.default_rng(0)))
    # all on one great circle through the mean: rank-deficient tangent cloud
    a = np.linspace(-1, 1, 50)
    with pytest.raises(ValueError):
        fit_sphere_transform(np.column_stack([np.sin(a), np.zeros(50), np.cos(a)]))


def test_transform_serialization(sn_transform):
    x, t = sn_transform
    back = SphereTransform.loads(t.dumps())
    np.testing.assert_array_equal(back.forward(x[:100]), t.forward(x[:100]))
    bad = t.dumps().replace('"version": 1', '"version": 99')
    with pytest.raises(ValueError, match="unsupported"):
        SphereTransform.loads(bad)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2, 3, 4]))
def test_round_trip_property(seed, p):
    rng = np.random.default_rng(seed)
    x = sample_spherical_normal(unit(rng.standard_normal(p)), rng.uniform(0.5, 20), 300, rng)
    t = fit_sphere_transform(x, ppmt_iters=5)
    assert np.max(geodesic_distance(t.backward(t.forward(x)), x)) < 1e-6
