"""Quadrature module tests: frozen oracle values, properties, failure modes.

Oracle values were computed with mpmath at 30 significant digits; the
in-test erfc oracle is mpmath's arbitrary-precision implementation, fully
independent of the math.erfc path under test.
"""

import math

import mpmath
import numpy as np
import pytest

from nanodetect.model import QuadratureSpec
from nanodetect.quadrature import (
    Interval,
    NonConvergence,
    erfc,
    integrate_1d,
    integrate_2d_tensor,
    integrate_semi_infinite_radial,
)

SPEC = QuadratureSpec()

# mpmath, dps=30
SQRT_PI_OVER_2 = 0.8862269254527580  # sqrt(pi)/2
GAUSS_SECOND_MOMENT = 1.2533141373155003  # sqrt(pi/2)
ERFC_0_15653 = 0.8248068028588745


def test_polynomial():
    res = integrate_1d(lambda x: x * x, Interval(0.0, 1.0), SPEC)
    assert res.value == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert res.est_error >= 0


def test_constant():
    res = integrate_1d(lambda x: 1.0, Interval(0.0, 1.0), SPEC)
    assert res.value == pytest.approx(1.0, rel=1e-13)


def test_truncated_gaussian():
    # e^{-x^2} on [0, 10] carries all but ~1e-44 of the half-line mass
    res = integrate_1d(lambda x: np.exp(-x * x), Interval(0.0, 10.0), SPEC)
    assert res.value == pytest.approx(SQRT_PI_OVER_2, rel=1e-10)


def test_semi_infinite_exponential():
    res = integrate_semi_infinite_radial(lambda x: np.exp(-x), 1.0, SPEC)
    assert res.value == pytest.approx(1.0, rel=1e-9)


def test_semi_infinite_gaussian_moment():
    res = integrate_semi_infinite_radial(lambda x: x * x * np.exp(-x * x / 2.0), 1.0, SPEC)
    assert res.value == pytest.approx(GAUSS_SECOND_MOMENT, rel=1e-9)


def test_semi_infinite_zero():
    res = integrate_semi_infinite_radial(lambda x: np.zeros_like(x), 1.0, SPEC)
    assert res.value == 0.0


def test_2d_area():
    res = integrate_2d_tensor(lambda y, u: np.ones_like(u), Interval(0, 1), Interval(-1, 1), SPEC)
    assert res.value == pytest.approx(2.0, rel=1e-12)


def test_2d_odd_symmetry():
    res = integrate_2d_tensor(lambda y, u: y * u, Interval(0, 1), Interval(-1, 1), SPEC)
    assert abs(res.value) < 1e-12


def test_2d_polynomial():
    res = integrate_2d_tensor(lambda y, u: y * y + 0.0 * u, Interval(0, 10), Interval(-1, 1), SPEC)
    assert res.value == pytest.approx(2000.0 / 3.0, rel=1e-12)


def test_erfc_trivial():
    assert erfc(0.0) == 1.0
    assert erfc(-8.0) == pytest.approx(2.0, abs=1e-12)


def test_erfc_frozen():
    assert erfc(0.15653) == pytest.approx(ERFC_0_15653, rel=1e-12)


def test_erfc_against_high_precision_oracle():
    mpmath.mp.dps = 40
    for z in np.linspace(-6.0, 6.0, 121):
        ref = float(mpmath.erfc(mpmath.mpf(float(z))))
        assert erfc(float(z)) == pytest.approx(ref, rel=1e-12), z
    # beyond |z| = 6 only absolute accuracy down to the underflow floor matters
    for z in (8.0, 15.0, 26.0):
        ref = float(mpmath.erfc(mpmath.mpf(z)))
        assert abs(erfc(z) - ref) < 1e-300 + 1e-12 * ref


def test_linearity_on_random_polynomials():
    rng = np.random.default_rng(1234)
    iv = Interval(-1.0, 2.0)
    for _ in range(20):
        cf = rng.normal(size=4)
        cg = rng.normal(size=4)
        alpha, beta = rng.normal(size=2)
        f = lambda x: np.polyval(cf, x)
        g = lambda x: np.polyval(cg, x)
        h = lambda x: alpha * np.polyval(cf, x) + beta * np.polyval(cg, x)
        lhs = integrate_1d(h, iv, SPEC).value
        rhs = alpha * integrate_1d(f, iv, SPEC).value + beta * integrate_1d(g, iv, SPEC).value
        tol = 2.0 * max(SPEC.abs_tol, SPEC.rel_tol * abs(lhs)) + 1e-12 * abs(lhs)
        assert abs(lhs - rhs) <= tol


def test_deterministic_bit_identical():
    f = lambda x: np.exp(-x) * np.sin(3 * x) ** 2
    a = integrate_1d(f, Interval(0.0, 4.0), SPEC)
    b = integrate_1d(f, Interval(0.0, 4.0), SPEC)
    assert a.value == b.value and a.est_error == b.est_error and a.evaluations == b.evaluations
    c = integrate_semi_infinite_radial(lambda x: np.exp(-x), 1.0, SPEC)
    d = integrate_semi_infinite_radial(lambda x: np.exp(-x), 1.0, SPEC)
    assert (c.value, c.est_error, c.evaluations) == (d.value, d.est_error, d.evaluations)


def test_est_error_bounds_true_error_for_polynomials():
    # 31-node Gauss is exact for degree <= 61; est_error must cover the
    # (roundoff-level) true error for the whole family
    rng = np.random.default_rng(99)
    for deg in (5, 17, 30, 45, 61):
        coeffs = rng.normal(size=deg + 1)
        poly = np.polynomial.Polynomial(coeffs)
        exact = (poly.integ()(1.0) - poly.integ()(0.0))
        res = integrate_1d(lambda x: poly(x), Interval(0.0, 1.0), SPEC)
        slack = 1e-12 * (1.0 + abs(exact))  # roundoff floor
        assert abs(res.value - exact) <= res.est_error + slack


def test_nonconvergence_carries_partial_result():
    spec = QuadratureSpec(rel_tol=1e-14, abs_tol=1e-16, max_depth=3)
    f = lambda x: (x > 1.0 / 3.0).astype(float)
    with pytest.raises(NonConvergence) as exc:
        integrate_1d(f, Interval(0.0, 1.0), spec)
    err = exc.value
    assert 0.0 < err.value < 1.0
    assert err.est_error > 0 and err.evaluations > 0


def test_semi_infinite_nonconvergence_on_heavy_tail():
    spec = QuadratureSpec(max_depth=2)
    with pytest.raises(NonConvergence):
        integrate_semi_infinite_radial(lambda x: 1.0 / (1.0 + x) ** 1.05, 1.0, spec)


def test_interval_rejects_degenerate():
    with pytest.raises(ValueError):
        Interval(1.0, 1.0)
    with pytest.raises(ValueError):
        Interval(2.0, 1.0)
    with pytest.raises(ValueError):
        Interval(0.0, math.inf)
