import numpy as np
import pytest
from dataclasses import replace

from spdelab.noise import LevyMeasureSpec, QWienerSpec, make_noise_batch, make_noise_path, uniform_grid
from spdelab.solver import (BlowUpError, CoefficientSet, PicardDivergenceError, Scheme, SolverError,
                            audit_assumptions, growth_quantity, linear_coefficients, picard_solve,
                            simulate_path, step_mild, sup_sq_distance, yosida_convergence_study,
                            zero_coefficients)
from spdelab.spectral import SpectralSpace, semigroup_diag

from conftest import smooth_x0


def test_step_without_coefficients_is_the_semigroup(heat, heat_noise):
    q, lv = heat_noise
    x = smooth_x0()
    out = step_mild(heat, zero_coefficients(32, 32), lv, x, 1e-3, np.ones(32), [3])
    np.testing.assert_array_equal(out, semigroup_diag(heat, 1e-3) * x)


def test_heat_mode_decays_exactly(heat, heat_noise):
    q, lv = heat_noise
    noise = make_noise_path(q, lv, uniform_grid(0.3, 300), 0)
    p = simulate_path(heat, zero_coefficients(32, 32), lv, heat.basis(0), noise)
    np.testing.assert_allclose(p.X[-1, 0], np.exp(-np.pi**2 * 0.3), rtol=1e-13)
    assert np.all(p.X[:, 1:] == 0)


def test_scalar_step_matches_hand_computation():
    sp = SpectralSpace.constant(1, 0.0)
    q = QWienerSpec([0.7])
    lv = LevyMeasureSpec.single([1.5], 2.0)
    a, b, x, dt, dw, n = -0.8, 0.4, 2.0, 0.01, 0.05, 2
    co = linear_coefficients(1, q, lv, a=a, G=b, c=1.0)
    got = step_mild(sp, co, lv, [x], dt, [dw], [n])[0]
    v = 1.5
    expected = x + a * x * dt + b * x * dw + n * v * x - dt * 2.0 * v * x
    assert got == pytest.approx(expected, rel=1e-15)


def test_yosida_with_zero_spectrum_is_the_mild_scheme():
    sp = SpectralSpace.constant(2, 0.0)
    q = QWienerSpec([1.0, 0.5])
    lv = LevyMeasureSpec.single([1.0], 3.0)
    co = linear_coefficients(2, q, lv, a=-0.5, G=0.3, c=0.2)
    noise = make_noise_batch(q, lv, uniform_grid(1.0, 200), 4, 3)
    m = simulate_path(sp, co, lv, [1.0, -1.0], noise, Scheme.mild())
    y = simulate_path(sp, co, lv, [1.0, -1.0], noise, Scheme.yosida(7.0))
    np.testing.assert_array_equal(m.states, y.states)


def test_seed_determinism(scalar_model):
    sp, q, lv, co = scalar_model
    t = uniform_grid(1.0, 100)
    a = simulate_path(sp, co, lv, [1.0], make_noise_path(q, lv, t, 1))
    b = simulate_path(sp, co, lv, [1.0], make_noise_path(q, lv, t, 1))
    c = simulate_path(sp, co, lv, [1.0], make_noise_path(q, lv, t, 2))
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.X, c.X)


def test_coefficients_see_only_left_endpoints(scalar_model):
    sp, q, lv, co = scalar_model
    seen = []
    spy = replace(co, F=lambda X: (seen.append(np.array(X)), co.F(X))[1])
    p = simulate_path(sp, spy, lv, [1.0], make_noise_path(q, lv, uniform_grid(1.0, 20), 3))
    np.testing.assert_array_equal(np.stack(seen)[:, 0], p.X[:-1])


def test_blow_up_is_reported():
    sp = SpectralSpace.constant(1, 0.0)
    q = QWienerSpec([1.0])
    lv = LevyMeasureSpec.empty()
    bad = CoefficientSet(F=lambda X: 1e10 * X**3, B=lambda X: np.zeros(X.shape + (1,)),
                         f=lambda V, X: np.zeros(X.shape[:-1] + (0, 1)), dim=1, k_dim=1,
                         growth_l=1.0, lipschitz_K=1.0)
    with pytest.raises(BlowUpError) as e:
        simulate_path(sp, bad, lv, [1.0], make_noise_path(q, lv, uniform_grid(1.0, 50), 0))
    assert e.value.step >= 1 and e.value.paths == [0]


def test_dimension_mismatch_rejected(heat, heat_noise):
    q, lv = heat_noise
    co = linear_coefficients(32, q, lv, a=-1.0)
    with pytest.raises(SolverError):
        step_mild(heat, co, lv, np.zeros(32), 1e-3, np.zeros(3), [0])
    with pytest.raises(SolverError):
        step_mild(heat, co, lv, np.zeros(32), 0.0, np.zeros(32), [0])
    other = QWienerSpec([1.0])
    with pytest.raises(SolverError):
        simulate_path(heat, co, lv, np.zeros(32), make_noise_path(other, lv, uniform_grid(1.0, 4), 0))
    with pytest.raises(SolverError):
        Scheme("yosida_strong")


def test_picard_trivial_and_contracting(scalar_model, heat, heat_noise):
    q, lv = heat_noise
    noise = make_noise_batch(q, lv, uniform_grid(0.1, 100), 0, 2)
    p = picard_solve(heat, zero_coefficients(32, 32), lv, smooth_x0(), noise, 3)
    assert p.picard_distances[1] == 0.0
    ref = simulate_path(heat, zero_coefficients(32, 32), lv, smooth_x0(), noise)
    np.testing.assert_allclose(p.states, ref.states, rtol=1e-13, atol=1e-16)

    sp, q1, lv1, co = scalar_model
    noise = make_noise_batch(q1, lv1, uniform_grid(0.2, 200), 1, 4)
    d = picard_solve(sp, co, lv1, [1.0], noise, 8).picard_distances
    ratios = np.array(d[1:]) / np.array(d[:-1])
    assert np.all(ratios < 1)


def test_picard_divergence_flagged():
    sp = SpectralSpace.constant(1, 0.0)
    q = QWienerSpec([1.0])
    lv = LevyMeasureSpec.empty()
    co = linear_coefficients(1, q, lv, a=60.0)
    noise = make_noise_path(q, lv, uniform_grid(1.0, 100), 0)
    with pytest.raises(PicardDivergenceError):
        picard_solve(sp, co, lv, [1.0], noise, 4)


def test_picard_and_exponential_euler_agree_as_dt_shrinks(heat, heat_noise):
    q, lv = heat_noise
    co = linear_coefficients(32, q, lv, a=-1.0, G=0.4, c=0.5)
    fine = make_noise_batch(q, lv, uniform_grid(0.1, 800), 2, 4)
    diffs = []
    for f in (8, 4, 2, 1):
        nb = fine.coarsen(f) if f > 1 else fine
        pic = picard_solve(heat, co, lv, smooth_x0(), nb, 12)
        ee = simulate_path(heat, co, lv, smooth_x0(), nb)
        diffs.append(np.max(np.abs(pic.states - ee.states)))
    assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_scheme_consistency_order(scalar_model):
    # multiplicative Euler has strong order exactly 1/2, so the fitted slope
    # is compared with 0.5 up to Monte-Carlo scatter
    sp, q, lv, co = scalar_model
    fine = make_noise_batch(q, lv, uniform_grid(1.0, 1024), 5, 2000)
    levels = (64, 32, 16, 8, 4, 2)
    paths = {f: simulate_path(sp, co, lv, [1.0], fine.coarsen(f)) for f in levels}
    errs = []
    for f in levels[:-1]:
        c, d = paths[f].states, paths[f // 2].states[:, ::2]
        errs.append(np.sqrt(np.mean(np.max((c - d) ** 2, axis=(1, 2)))))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    order = np.polyfit(np.log2(levels[:-1]), np.log2(errs), 1)[0]
    assert order >= 0.45, order


def test_a3_audit(heat, heat_noise):
    q, lv = heat_noise
    co = linear_coefficients(32, q, lv, a=-1.0, G=0.4, G0=0.1, c=0.5, F0=0.2)
    assert audit_assumptions(co, q, lv, samples=1000).passed
    tight = replace(co, growth_l=co.growth_l / 10)
    assert not audit_assumptions(tight, q, lv, samples=1000).passed
    x = np.random.default_rng(0).standard_normal((10, 32))
    assert np.all(growth_quantity(co, q, lv, x) <= co.growth_l * (1 + np.sum(x**2, axis=1)))


def test_convergence_study_trivial_cases(heat, heat_noise):
    q, lv = heat_noise
    zero = yosida_convergence_study(heat, zero_coefficients(32, 32), q, lv, smooth_x0(), 0.1, 50,
                                    [10, 100], 5, 0)
    assert zero.sup_errors == [0.0, 0.0] and zero.verdict == "exact"
    flat = SpectralSpace.constant(32, 0.0)
    co = linear_coefficients(32, q, lv, a=-1.0, G=0.4, c=0.5)
    flat_rep = yosida_convergence_study(flat, co, q, lv, smooth_x0(), 0.1, 50, [10, 100], 5, 0)
    assert flat_rep.sup_errors == [0.0, 0.0]
    with pytest.raises(SolverError):
        yosida_convergence_study(heat, co, q, lv, smooth_x0(), 0.1, 50, [100, 10], 5, 0)


def test_convergence_study_heat_trend(heat, heat_noise):
    q, lv = heat_noise
    co = linear_coefficients(32, q, lv, a=-1.0, G=0.4, c=0.5)
    rep = yosida_convergence_study(heat, co, q, lv, smooth_x0(), 0.2, 200, [10, 100, 1000], 40, 3)
    assert rep.strictly_decreasing
    assert len(rep.n_values) == len(rep.sup_errors) == len(rep.stderrs)


def test_trajectory_csv(scalar_model):
    sp, q, lv, co = scalar_model
    p = simulate_path(sp, co, lv, [1.0], make_noise_path(q, lv, uniform_grid(1.0, 4), 0))
    lines = p.to_csv().splitlines()
    assert lines[0] == "t,coeff1" and len(lines) == 6
    assert float(lines[-1].split(",")[1]) == p.X[-1, 0]


def test_sup_distance_zero_on_itself(scalar_model):
    sp, q, lv, co = scalar_model
    p = simulate_path(sp, co, lv, [1.0], make_noise_batch(q, lv, uniform_grid(1.0, 4), 0, 2))
    np.testing.assert_array_equal(sup_sq_distance(p, p), [0.0, 0.0])
