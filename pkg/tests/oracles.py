"""Independent high-precision reference values built on mpmath.

Nothing here imports the package under test.
"""
import mpmath

mpmath.mp.dps = 50


def bessel_i(order, x):
    return float(mpmath.besseli(order, x))


def tmcc_probabilities(lam, count):
    """Exact P_n for n < count, from the defining series."""
    x = mpmath.mpf(abs(lam))
    i0 = mpmath.besseli(0, 2 * x)
    return [float(x ** (2 * n) / mpmath.factorial(n) ** 2 / i0) for n in range(count)]


def series_moments(lam, terms=400):
    """(sum n P_n, sum n^2 P_n) summed directly over the pmf."""
    x = mpmath.mpf(abs(lam))
    i0 = mpmath.besseli(0, 2 * x)
    m1 = m2 = mpmath.mpf(0)
    for n in range(1, terms):
        p = x ** (2 * n) / mpmath.factorial(n) ** 2 / i0
        m1 += n * p
        m2 += n * n * p
    return float(m1), float(m2)


def chi2_sf(x, dof):
    """Regularized upper incomplete gamma Q(dof/2, x/2)."""
    return float(mpmath.gammainc(mpmath.mpf(dof) / 2, mpmath.mpf(x) / 2, mpmath.inf, regularized=True))
