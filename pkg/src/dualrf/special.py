"""Special functions and radial distribution functions on the hypersphere."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sps

from .sphere import exp_map, tangent_basis, unit

_SERIES_TOL = 1e-17
_MAX_TERMS = 5000


class QuadratureError(RuntimeError):
    pass


def gamma_fn(x):
    """Gamma function on the positive real axis."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("gamma_fn is defined here for x > 0 only")
    if arr.ndim == 0:
        return math.gamma(float(arr))
    return sps.gamma(arr)


def _is_nonpos_int(x):
    return x <= 0 and float(x).is_integer()


def _series(a, b, c, z):
    """Plain Gauss series; converges quickly for |z| <= 1/2."""
    z = np.asarray(z, dtype=float)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for n in range(_MAX_TERMS):
        term = term * ((a + n) * (b + n) / ((c + n) * (n + 1.0))) * z
        total = total + term
        if np.all(np.abs(term) <= _SERIES_TOL * np.maximum(np.abs(total), 1e-300)):
            return total
    raise ArithmeticError("hypergeometric series did not converge")


def _near_one(a, b, c, w):
    """2F1(a, b; c; 1 - w) for 0 < w <= 1/2 via the 1 - z connection formulas."""
    m = c - a - b
    if not float(m).is_integer():
        first = (math.gamma(c) * math.gamma(m) * sps.rgamma(c - a) * sps.rgamma(c - b)
                 * _series(a, b, 1.0 - m, w))
        second = (math.gamma(c) * math.gamma(-m) * sps.rgamma(a) * sps.rgamma(b)
                  * w**m * _series(c - a, c - b, 1.0 + m, w))
        return first + second
    m = int(m)
    if m < 0:
        # Euler: F(a,b;c;z) = (1-z)^{c-a-b} F(c-a, c-b; c; z)
        return w**m * _near_one(c - a, c - b, c, w)
    lw = np.log(w)
    if m == 0:
        pref = math.gamma(a + b) * sps.rgamma(a) * sps.rgamma(b)
        coef = 1.0
        total = np.zeros_like(w)
        wn = np.ones_like(w)
        for n in range(_MAX_TERMS):
            if n:
                coef *= (a + n - 1) * (b + n - 1) / (n * n)
                wn = wn * w
            bracket = 2 * sps.digamma(n + 1) - sps.digamma(a + n) - sps.digamma(b + n) - lw
            t = coef * bracket * wn
            total = total + t
            if n > 2 and np.all(np.abs(t) <= _SERIES_TOL * np.maximum(np.abs(total), 1e-300)):
                return pref * total
        raise ArithmeticError("logarithmic connection series did not converge")
    # m >= 1
    finite = np.zeros_like(w)
    coef = 1.0
    wn = np.ones_like(w)
    for n in range(m):
        if n:
            coef *= (a + n - 1) * (b + n - 1) / (n * (1 - m + n - 1))
            wn = wn * w
        finite = finite + coef * wn
    finite *= math.gamma(m) * math.gamma(a + b + m) * sps.rgamma(a + m) * sps.rgamma(b + m)

    pref = math.gamma(a + b + m) * sps.rgamma(a) * sps.rgamma(b)
    if pref == 0.0:
        return finite
    coef = 1.0 / math.factorial(m)
    wn = np.ones_like(w)
    total = np.zeros_like(w)
    for n in range(_MAX_TERMS):
        if n:
            coef *= (a + m + n - 1) * (b + m + n - 1) / (n * (n + m))
            wn = wn * w
        bracket = (lw - sps.digamma(n + 1) - sps.digamma(n + m + 1)
                   + sps.digamma(a + n + m) + sps.digamma(b + n + m))
        t = coef * bracket * wn
        total = total + t
        if n > 2 and np.all(np.abs(t) <= _SERIES_TOL * np.maximum(np.abs(total), 1e-300)):
            # (z - 1)^m = (-w)^m
            return finite - (-1.0) ** m * w**m * pref * total
    raise ArithmeticError("logarithmic connection series did not converge")


def hyp2f1(a, b, c, z):
    """Gauss hypergeometric function 2F1(a, b; c; z) for real z in [-1, 1].

    Regions: direct series for ``|z| <= 1/2``; Pfaff's transformation onto
    ``z/(z-1)`` for ``z < -1/2``; the ``1 - z`` connection formulas (with
    their logarithmic form when ``c - a - b`` is an integer) for
    ``1/2 < z < 1``; Gauss's summation at ``z = 1``. Terminating series are
    summed directly for any ``z``.

    Raises
    ------
    ValueError
        ``c`` a non-positive integer, ``|z| > 1``, or ``z = 1`` with
        ``c - a - b <= 0`` (divergent).
    """
    a, b, c = float(a), float(b), float(c)
    if _is_nonpos_int(c):
        raise ValueError("c must not be a non-positive integer")
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if np.any(np.abs(z) > 1.0) or np.any(~np.isfinite(z)):
        raise ValueError("hyp2f1 is implemented for real z in [-1, 1]")

    if _is_nonpos_int(a) or _is_nonpos_int(b):
        out = _series(a, b, c, z)
        return float(out[0]) if scalar else out

    out = np.empty_like(z)
    small = np.abs(z) <= 0.5
    neg = z < -0.5
    high = (z > 0.5) & (z < 1.0)
    one = z == 1.0
    if small.any():
        out[small] = _series(a, b, c, z[small])
    if neg.any():
        zz = z[neg]
        out[neg] = (1.0 - zz) ** (-a) * _series(a, c - b, c, zz / (zz - 1.0))
    if high.any():
        out[high] = _near_one(a, b, c, 1.0 - z[high])
    if one.any():
        if c - a - b <= 0:
            raise ValueError("2F1 diverges at z = 1 when c - a - b <= 0")
        out[one] = _gauss_sum(a, b, c)
    return float(out[0]) if scalar else out


def _gauss_sum(a, b, c):
    """2F1(a, b; c; 1) = Gamma(c) Gamma(c-a-b) / (Gamma(c-a) Gamma(c-b))."""
    if min(c, c - a - b, c - a, c - b) > 0:
        return math.exp(math.lgamma(c) + math.lgamma(c - a - b)
                        - math.lgamma(c - a) - math.lgamma(c - b))
    return math.gamma(c) * math.gamma(c - a - b) * sps.rgamma(c - a) * sps.rgamma(c - b)


def _area_ratio(p):
    # A_{p-2} / A_{p-1} = Gamma(p/2) / (sqrt(pi) Gamma((p-1)/2))
    return math.exp(math.lgamma(p / 2) - math.lgamma((p - 1) / 2)) / math.sqrt(math.pi)


def uniform_sphere_cdf(p, s):
    """Probability that a uniform point on S^{p-1} has elevation at least ``s``.

    ``s`` is the coordinate along the pole; the function decreases from 1 at
    ``s = -1`` to 0 at ``s = 1`` and equals the radial CDF evaluated at the
    polar angle ``arccos(s)``.
    """
    p = int(p)
    if p < 2:
        raise ValueError("p must be >= 2")
    s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
    val = 0.5 - _area_ratio(p) * s * hyp2f1(0.5, (3.0 - p) / 2.0, 1.5, s * s)
    return np.clip(val, 0.0, 1.0)


def _cap(p, r):
    """P(theta <= r) for r in [0, pi/2], switching to the cosine form near pi/2."""
    a = (p - 1) / 2.0
    s2 = np.sin(r) ** 2
    c2 = np.cos(r) ** 2
    return np.where(s2 <= 0.5, 0.5 * sps.betainc(a, 0.5, s2),
                    0.5 - 0.5 * sps.betainc(0.5, a, c2))


def uniform_radial_cdf(p, r):
    """P(theta <= r) for the polar angle of a uniform point on S^{p-1}.

    Evaluated through the regularized incomplete beta function so both tails
    keep relative precision (see :func:`uniform_radial_sf`).
    """
    r = np.clip(np.asarray(r, dtype=float), 0.0, np.pi)
    cap = _cap(p, np.minimum(r, np.pi - r))
    return np.where(r <= np.pi / 2, cap, 1.0 - cap)


def uniform_radial_sf(p, r):
    """P(theta > r), i.e. ``uniform_radial_cdf(p, pi - r)``."""
    return uniform_radial_cdf(p, np.pi - np.asarray(r, dtype=float))


def uniform_radial_ppf(p, q, sf=None):
    """Polar angle with ``uniform_radial_cdf(p, r) = q``.

    Passing the complementary probability ``sf = 1 - q`` as well keeps
    precision in the upper tail.
    """
    q = np.asarray(q, dtype=float)
    sf = 1.0 - q if sf is None else np.asarray(sf, dtype=float)
    a = (p - 1) / 2.0
    upper = q > 0.5
    tail = np.clip(np.where(upper, sf, q), 0.0, 0.5)
    # the cap probability of the half sphere containing r
    t = 2.0 * tail
    mid = 1.0 - t
    with np.errstate(invalid="ignore"):
        r_lo = np.arcsin(np.sqrt(sps.betaincinv(a, 0.5, np.minimum(t, 0.5))))
        r_hi = np.arccos(np.sqrt(sps.betaincinv(0.5, a, np.clip(mid, 0.0, 1.0))))
    r = np.where(t <= 0.5, r_lo, r_hi)
    return np.where(upper, np.pi - r, r)


def uniform_radial_pdf(p, r):
    r = np.asarray(r, dtype=float)
    return np.sin(r) ** (p - 2) / (math.sqrt(math.pi) * math.exp(
        math.lgamma((p - 1) / 2) - math.lgamma(p / 2)))


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre01(n):
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = ((x + 1) / 2, w / 2)
    return _GL_CACHE[n]


def _integrate(f, lo, hi, tol=1e-12, n0=32, n_max=2048):
    """Vectorized Gauss-Legendre on [lo, hi], doubling the order until stable."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    lo, hi = np.broadcast_arrays(lo, hi)
    span = hi - lo
    prev = None
    n = n0
    while n <= n_max:
        x, w = _gauss_legendre01(n)
        t = lo[..., None] + span[..., None] * x
        val = span * np.sum(w * f(t), axis=-1)
        if prev is not None and np.all(np.abs(val - prev) <= tol * np.maximum(1.0, np.abs(val))):
            return val
        prev = val
        n *= 2
    raise QuadratureError("Gauss-Legendre quadrature did not converge")


def _sn_kernel(kappa, p):
    def f(t):
        return np.exp(-0.5 * kappa * t * t) * np.sin(t) ** (p - 2)
    return f


def _sn_norm(kappa, p):
    return float(_integrate(_sn_kernel(kappa, p), 0.0, np.pi))


@dataclass(frozen=True)
class SphericalNormalParams:
    """Spherical normal law: density proportional to exp(-kappa d(x, mu)^2 / 2)."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        object.__setattr__(self, "mu", unit(self.mu))

    @property
    def p(self):
        return self.mu.shape[-1]

    def radial_cdf(self, r):
        return sn_radial_cdf(self.kappa, self.p, r)

    def sample(self, n, rng):
        return sample_spherical_normal(self.mu, self.kappa, n, rng)


def sn_radial_cdf(kappa, p, r):
    """P(|Log_mu(x)| <= r) for x spherical-normal with concentration ``kappa``.

    Radial density ``exp(-kappa t^2/2) sin(t)^{p-2}`` on [0, pi], i.e. the
    tangent-space Gaussian weight times the exponential-map Jacobian
    ``(sin t / t)^{p-2}`` times the polar volume ``t^{p-2}``.
    ``kappa`` may also be a :class:`SphericalNormalParams`.
    """
    if isinstance(kappa, SphericalNormalParams):
        kappa = kappa.kappa
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r > np.pi)):
        raise ValueError("r must lie in [0, pi]")
    f = _sn_kernel(kappa, p)
    num = _integrate(f, np.zeros_like(r), r)
    return np.clip(num / _sn_norm(kappa, p), 0.0, 1.0)


def sn_radial_sf(kappa, p, r):
    """Complement of :func:`sn_radial_cdf`, integrated directly over [r, pi]."""
    r = np.asarray(r, dtype=float)
    f = _sn_kernel(kappa, p)
    num = _integrate(f, r, np.full_like(r, np.pi))
    return np.clip(num / _sn_norm(kappa, p), 0.0, 1.0)


def sn_radial_pdf(kappa, p, r):
    return _sn_kernel(kappa, p)(np.asarray(r, dtype=float)) / _sn_norm(kappa, p)


def sample_spherical_normal(mu, kappa, n, rng):
    """Rejection sampler for the spherical normal law.

    Tangent vectors are proposed from N(0, I/kappa) in the tangent space at
    ``mu`` and accepted with probability ``(sin r / r)^{p-2}`` (and ``r < pi``),
    which turns the Gaussian radial law into the spherical one.
    """
    mu = unit(mu)
    p = mu.shape[-1]
    basis = tangent_basis(mu)
    out = np.empty((0, p))
    while out.shape[0] < n:
        m = max(2 * (n - out.shape[0]), 64)
        v = rng.standard_normal((m, p - 1)) / math.sqrt(kappa)
        r = np.linalg.norm(v, axis=1)
        ratio = np.where(r > 0, np.sinc(r / np.pi), 1.0) ** (p - 2)
        keep = (r < np.pi) & (rng.random(m) < ratio)
        out = np.vstack([out, exp_map(mu, v[keep] @ basis.T)])
    return out[:n]


def fisher_inner_product_pdf(p, rho, r):
    """Density of <S(u), S(u+h)> for latent correlation ``rho``.

    This is Fisher's density of the sample correlation coefficient with
    ``L = p + 1`` bivariate normal pairs.
    """
    rho = float(rho)
    if not abs(rho) < 1:
        raise ValueError("|rho| must be < 1")
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) >= 1):
        raise ValueError("|r| must be < 1")
    logc = (math.log(p - 1) + math.lgamma(p) - 0.5 * math.log(2 * math.pi)
            - math.lgamma(p + 0.5) + 0.5 * p * math.log1p(-rho * rho))
    body = ((1 - r * r) ** ((p - 3) / 2.0) / (1 - rho * r) ** (p - 0.5))
    return math.exp(logc) * body * hyp2f1(0.5, 0.5, p + 0.5, 0.5 * (rho * r + 1.0))


def bisect_monotone(func, target, lo, hi, increasing=True, max_iter=200):
    """Vectorized bisection for ``func(x) = target`` on [lo, hi].

    Runs until the bracket collapses to adjacent floats, which is far below
    the 1e-12 argument tolerance the callers need.
    """
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        done = (mid <= lo) | (mid >= hi)
        if np.all(done):
            break
        f = func(mid)
        go_right = (f < target) if increasing else (f > target)
        lo = np.where(go_right & ~done, mid, lo)
        hi = np.where(~go_right & ~done, mid, hi)
    return 0.5 * (lo + hi)
