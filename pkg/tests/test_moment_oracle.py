"""The scalar linear second-moment oracle, derived symbolically then checked by MC."""

import numpy as np
import sympy as sp_

from spdelab.stability import mc_second_moment


def derive_moment_rate():
    x, a, b, lam, c, m = sp_.symbols("x a b lambda c m", real=True)
    psi = x**2
    dpsi, d2psi = sp_.diff(psi, x), sp_.diff(psi, x, 2)
    drift = dpsi * a * x
    trace = sp_.Rational(1, 2) * lam * (b * x) ** 2 * d2psi
    jump = m * (psi.subs(x, x + c * x) - psi - dpsi * c * x)
    rate = sp_.simplify((drift + trace + jump) / psi)
    return rate, (a, b, lam, c, m)


def test_moment_ode_is_linear_with_the_expected_rate():
    rate, (a, b, lam, c, m) = derive_moment_rate()
    assert sp_.simplify(rate - (2 * a + b**2 * lam + c**2 * m)) == 0
    # E X(t)^2 solves y' = rate * y, hence x0^2 exp(rate t)
    t, y0 = sp_.symbols("t y0", positive=True)
    y = sp_.Function("y")
    sol = sp_.dsolve(sp_.Eq(y(t).diff(t), rate * y(t)), ics={y(0): y0})
    assert sp_.simplify(sol.rhs - y0 * sp_.exp(rate * t)) == 0


def test_mc_matches_oracle_small(scalar_model):
    space, q, levy, coeffs = scalar_model
    rate, syms = derive_moment_rate()
    r = float(rate.subs(dict(zip(syms, (-1.0, 0.5, 1.0, 0.3, 2.0)))))
    assert r == -1.57
    curve = mc_second_moment(space, coeffs, q, levy, [1.0], 0.5, 200, 2000, 31)
    z = (curve.estimate[-1] - np.exp(r * 0.5)) / curve.stderr[-1]
    assert abs(z) < 3
