"""Acceptance criteria 1-10 at their stated sizes and tolerances."""

import time
from pathlib import Path

import numpy as np
import pytest

from spdelab import cli, ito
from spdelab.config import bundled_scenarios, load_scenario
from spdelab.noise import LevyMeasureSpec, QWienerSpec, isometry_audit, make_noise_batch, uniform_grid
from spdelab.solver import linear_coefficients, simulate_path, yosida_convergence_study, zero_coefficients
from spdelab.spectral import SpectralSpace, resolvent_apply, semigroup_diag, yosida_A, yosida_R
from spdelab.stability import (certify_stability, example4_lyapunov, example4_setup, lyapunov_audit,
                               mc_second_moment, weak_generator_limit)

from conftest import smooth_x0

pytestmark = pytest.mark.acceptance

N_VALUES = [10.0, 1e2, 1e3, 1e4]


def _rel(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / max(1e-300, float(np.max(np.abs(b)))))


def _heat_model():
    space = SpectralSpace.heat_dirichlet(32)
    k = np.arange(1, 33, dtype=float)
    q = QWienerSpec(1.0 / k**2)
    lv = LevyMeasureSpec.single([1.0], 1.0)
    return space, q, lv, linear_coefficients(32, q, lv, a=-1.0, G=0.4, c=0.5)


def _scalar_model():
    space = SpectralSpace.constant(1, 0.0)
    q = QWienerSpec([1.0])
    lv = LevyMeasureSpec.single([0.3], 2.0)
    return space, q, lv, linear_coefficients(1, q, lv, a=-1.0, G=0.5, c=1.0)


def test_c01_operator_algebra(criterion):
    t0 = time.perf_counter()
    space = SpectralSpace.heat_dirichlet(32)
    rng = np.random.default_rng(1)
    # dense oracle: the same operator written in a random orthonormal basis
    Q, _ = np.linalg.qr(rng.standard_normal((32, 32)))
    A = Q @ np.diag(space.eigenvalues) @ Q.T
    v = rng.standard_normal(32)
    c = Q.T @ v
    I = np.eye(32)
    errs = {"semigroup law": max(
        _rel(semigroup_diag(space, t + s), semigroup_diag(space, t) * semigroup_diag(space, s))
        for t, s in [(0.01, 0.02), (0.1, 0.3), (1e-4, 0.5)])}
    lam, mu = 10.0, 250.0
    Rl, Rm = resolvent_apply(space, lam, c), resolvent_apply(space, mu, c)
    errs["resolvent identity"] = _rel(Rl - Rm, (mu - lam) * resolvent_apply(space, lam, Rm))
    for n in N_VALUES:
        dense_res = np.linalg.solve(n * I - A, v)
        errs[f"R(n) n={n:g}"] = _rel(Q @ resolvent_apply(space, n, c), dense_res)
        errs[f"R_n n={n:g}"] = _rel(Q @ yosida_R(space, n, c), n * dense_res)
        errs[f"A_n n={n:g}"] = _rel(Q @ yosida_A(space, n, c), A @ (n * dense_res))
        errs[f"A_n = n^2 R(n) - n n={n:g}"] = _rel(yosida_A(space, n, c),
                                                  n * n * resolvent_apply(space, n, c) - n * c)
    y = smooth_x0()
    gaps = [float(np.linalg.norm(yosida_R(space, n, y) - y)) for n in N_VALUES]
    for n, g in zip(N_VALUES, gaps):
        closed = float(np.linalg.norm(space.eigenvalues / (n - space.eigenvalues) * y))
        errs[f"|(R_n - I)x| closed form n={n:g}"] = abs(g - closed) / closed
    far = float(np.linalg.norm(yosida_R(space, 1e12, y) - y))
    worst = max(errs.values())
    elapsed = time.perf_counter() - t0
    checks = {f"{k} <= 1e-12": e <= 1e-12 for k, e in errs.items()}
    checks["|(R_n - I)x| strictly decreasing"] = all(b < a for a, b in zip(gaps, gaps[1:]))
    checks["|(R_n - I)x| tends to 0 (n = 1e12)"] = far < 1e-7 * np.linalg.norm(y)
    criterion(1, "operator algebra", checks, elapsed, 1.0,
              f"max rel err {worst:.2e}, |(R_n-I)x| = {', '.join(f'{g:.2e}' for g in gaps)}")


def test_c02_cprm_isometry(criterion):
    t0 = time.perf_counter()
    rep = isometry_audit(LevyMeasureSpec.single([1.0], 2.0), 0.5, 100_000, seed=2024)
    elapsed = time.perf_counter() - t0
    z = (rep.empirical - 1.0) / rep.stderr
    criterion(2, "compensated Poisson isometry",
              {"theoretical second moment is 1.0": rep.theoretical == 1.0, "|z| < 4": abs(z) < 4},
              elapsed, 10.0, f"E q^2 = {rep.empirical:.5f} +- {rep.stderr:.5f}, z = {z:.2f}")


def test_c03_yosida_convergence(criterion):
    t0 = time.perf_counter()
    space, q, lv, co = _heat_model()
    rep = yosida_convergence_study(space, co, q, lv, smooth_x0(), 0.5, 500, N_VALUES, 200, 7)
    elapsed = time.perf_counter() - t0
    criterion(3, "Yosida approximants converge",
              {"strictly decreasing": rep.strictly_decreasing,
               "first/last CIs disjoint": rep.endpoints_separated},
              elapsed, 120.0, "E sup|X_n - X|^2 = " + ", ".join(f"{e:.3e}" for e in rep.sup_errors))


def test_c04_strong_ito_residual(criterion):
    t0 = time.perf_counter()
    heat = SpectralSpace.heat_dirichlet(32)
    q = QWienerSpec(np.ones(32))
    lv = LevyMeasureSpec.empty()
    z = zero_coefficients(32, 32)
    det_path = simulate_path(heat, z, lv, smooth_x0(), make_noise_batch(q, lv, uniform_grid(0.5, 500), 0, 1))
    det = ito.ito_residual_strong(heat, z, q, lv, ito.quadratic(), det_path)
    space, qs, ls, co = _scalar_model()
    fine = make_noise_batch(qs, ls, uniform_grid(0.5, 1000), 11, 1000)
    coarse_rep = ito.ito_residual_strong(space, co, qs, ls, ito.quadratic(),
                                         simulate_path(space, co, ls, [1.0], fine.coarsen(2)))
    fine_rep = ito.ito_residual_strong(space, co, qs, ls, ito.quadratic(),
                                       simulate_path(space, co, ls, [1.0], fine))
    elapsed = time.perf_counter() - t0
    criterion(4, "strong Ito residual",
              {"deterministic |residual| < 1e-8": abs(det.residual[0]) < 1e-8,
               "scalar mean within 3 stderr (dt = 5e-4)": abs(fine_rep.z) < 3,
               "RMS decreasing under dt -> dt/2": fine_rep.rms < coarse_rep.rms},
              elapsed, 60.0,
              f"deterministic {det.residual[0]:.2e}; dt=1e-3 z={coarse_rep.z:.2f} rms={coarse_rep.rms:.4g}; "
              f"dt=5e-4 z={fine_rep.z:.2f} rms={fine_rep.rms:.4g}")


def test_c05_mild_ito_formula(criterion):
    t0 = time.perf_counter()
    space, q, lv, co = _heat_model()
    reps = ito.ito_residual_mild(space, co, q, lv, ito.quadratic(), smooth_x0(), 0.5, 500,
                                 [10.0, 1e2, 1e3], 200, 5)
    elapsed = time.perf_counter() - t0
    criterion(5, "mild Ito formula", {"|residual_n| decreasing in n": ito.mild_trend(reps)}, elapsed, 120.0,
              "mean |residual_n| = " + ", ".join(f"{r.mean_abs:.3e}" for r in reps))


def test_c06_cross_formula_coherence(criterion):
    t0 = time.perf_counter()
    space, q, lv, co = _heat_model()
    path = simulate_path(space, co, lv, smooth_x0(), make_noise_batch(q, lv, uniform_grid(0.2, 200), 6, 50))
    bump = ito.with_generator_closure(space, ito.gaussian_bump(0.5))
    strong = ito.ito_residual_strong(space, co, q, lv, bump, path)
    ichi = ito.ichikawa_residual(space, co, q, lv, bump, path)
    flat = SpectralSpace.constant(4, 0.0)
    q4 = QWienerSpec(np.ones(4))
    lv2 = LevyMeasureSpec([[1.0], [-0.5]], [1.0, 3.0])
    jc = linear_coefficients(4, q4, lv2, a=-0.7, c=0.6, F0=0.1)
    jp = simulate_path(flat, jc, lv2, [1.0, -0.5, 0.25, 2.0], make_noise_batch(q4, lv2, uniform_grid(1.0, 500), 6, 50))
    s = ito.ito_residual_strong(flat, jc, q4, lv2, ito.quadratic(), jp)
    m = ito.semigroup_mild_residual(flat, jc, lv2, ito.quadratic(), jp)
    rel = float(np.max(np.abs(s.rhs - m.rhs) / np.abs(s.rhs)))
    elapsed = time.perf_counter() - t0
    criterion(6, "cross-formula coherence",
              {"Ichikawa rhs == strong rhs bit-for-bit": np.array_equal(ichi.rhs, strong.rhs),
               "semigroup formula (A = 0) vs strong <= 1e-12 relative": rel <= 1e-12,
               "same lhs": np.array_equal(s.lhs, m.lhs)},
              elapsed, None, f"semigroup/strong max rel diff {rel:.2e}")


def test_c07_moment_oracle(criterion):
    t0 = time.perf_counter()
    space, q, lv, co = _scalar_model()
    curve = mc_second_moment(space, co, q, lv, [1.0], 1.0, 1000, 10_000, 77)
    rate = 2 * -1.0 + 0.5**2 * 1.0 + 0.3**2 * 2.0
    checks, parts = {}, []
    for t in (0.25, 0.5, 1.0):
        i = int(round(t * 1000))
        zt = (curve.estimate[i] - np.exp(rate * t)) / curve.stderr[i]
        checks[f"t={t}: |z| < 3"] = abs(zt) < 3
        parts.append(f"t={t} z={zt:.2f}")
    elapsed = time.perf_counter() - t0
    criterion(7, "second-moment oracle", checks, elapsed, 60.0, f"rate {rate:g}; " + ", ".join(parts))


def test_c08_example4(criterion):
    t0 = time.perf_counter()
    space, q, lv, co = example4_setup(1.0)
    ls = example4_lyapunov(1.0)
    x0 = np.zeros(32)
    x0[:2] = [1.0, 0.5]
    rep = certify_stability(space, co, q, lv, ls, x0, 1.0, 1000, 1000, 2024)
    _, _, _, co10 = example4_setup(10.0)
    neg = lyapunov_audit(space, co10, q, lv, ls)
    elapsed = time.perf_counter() - t0
    criterion(8, "heat example stability, l = 1",
              {"constants c3 = 2 pi^2 - 3, k3 = 3": np.isclose(ls.c3, 2 * np.pi**2 - 3) and ls.k3 == 3,
               "audit passes": rep.audit.passed,
               "moment curve under bound + M within 3 stderr": rep.passed,
               "fitted decay rate > 0": rep.fitted_decay_rate > 0,
               "l = 10 audit fails": not neg.passed,
               "l = 10 counterexample reported": neg.counterexample is not None},
              elapsed, 120.0,
              f"decay rate {rep.fitted_decay_rate:.3f}, M = {ls.M:.4f}, max excess {np.max(rep.excess):.3e}, "
              f"l=10 margin {neg.worst_margin:.3g}")


def test_c09_weak_generator(criterion):
    t0 = time.perf_counter()
    heat = SpectralSpace.heat_dirichlet(32)
    x = np.zeros(32)
    x[:3] = [1.0, 0.5, 0.25]
    det = weak_generator_limit(heat, zero_coefficients(32, 32), QWienerSpec(np.ones(32)), LevyMeasureSpec.empty(),
                               ito.quadratic(), x, [1e-3 / 2**i for i in range(4)], 1, 0)
    space, q, lv, co = _scalar_model()
    sto = weak_generator_limit(space, co, q, lv, ito.quadratic(), [1.0], [0.2 / 2**i for i in range(5)],
                               20_000, 9)
    elapsed = time.perf_counter() - t0
    criterion(9, "weak generator limit",
              {"deterministic order >= 0.9 over three halvings": min(det.observed_orders) >= 0.9,
               "stochastic gap decreasing to noise floor": sto.decreasing_to_floor},
              elapsed, 60.0,
              "orders " + ", ".join(f"{o:.3f}" for o in det.observed_orders) + "; gaps "
              + ", ".join(f"{g:.2e}/{f:.1e}" for g, f in zip(sto.gaps, sto.noise_floors)))


def test_c10_reproducibility(criterion, tmp_path):
    t0 = time.perf_counter()
    checks = {}
    for name, path in bundled_scenarios().items():
        study = load_scenario(path).study
        cmd = {v: k for k, v in cli.COMMANDS.items()}[study]
        outs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            code = cli.main([cmd, str(path), "--out", str(out)])
            checks[f"{name} run {run} exit 0"] = code == 0
            outs.append(out)
        csvs = sorted(p.name for p in outs[0].glob("*.csv"))
        checks[f"{name} writes CSV"] = bool(csvs)
        checks[f"{name} CSVs byte-identical"] = all(
            (outs[0] / c).read_bytes() == (outs[1] / c).read_bytes() for c in csvs)
    elapsed = time.perf_counter() - t0
    criterion(10, "bundled scenarios reproduce byte-for-byte", checks, elapsed, None,
              f"{len(bundled_scenarios())} scenarios")
