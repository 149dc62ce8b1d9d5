"""Closed-form sphere covariance against a Monte Carlo estimate.

Prints covariance_transform(p, c) next to the sample mean of <s1, s2> for
normalized correlated Gaussian pairs.

    python3 demos/covariance_transform.py
"""
import numpy as np

from dualrf.sphere import unit
from dualrf.spherefield import covariance_transform, inverse_covariance_transform


def monte_carlo(p, c, n, rng):
    x = rng.standard_normal((n, p))
    y = c * x + np.sqrt(1 - c * c) * rng.standard_normal((n, p))
    v = np.sum(unit(x) * unit(y), axis=1)
    return v.mean(), v.std(ddof=1) / np.sqrt(n)


def main():
    rng = np.random.default_rng(0)
    print(f"{'p':>2} {'c':>4} {'C_S(c)':>9} {'MC':>9} {'SE':>8} {'c back':>7}")
    for p in (1, 2, 3, 7):
        for c in (0.1, 0.5, 0.9):
            cs = covariance_transform(p, c)
            mc, se = monte_carlo(p, c, 200_000, rng)
            print(f"{p:>2} {c:>4} {cs:9.5f} {mc:9.5f} {se:8.5f} {inverse_covariance_transform(p, cs):7.4f}")


if __name__ == "__main__":
    main()
