import numpy as np
import pytest

from spdelab.noise import (LevyMeasureSpec, NoiseBatch, NoiseError, NoisePath, QWienerSpec,
                           cprm_integral, isometry_audit, make_noise_batch, make_noise_path,
                           sample_jump_counts, sample_jump_stream, sample_wiener_increments,
                           uniform_grid, wiener_covariance_audit)


def test_qwiener_basics():
    q = QWienerSpec.from_config({"q_eigenvalues": "inverse_square", "k_dim": 4})
    assert q.k_dim == 4
    assert q.trace == pytest.approx(1 + 1 / 4 + 1 / 9 + 1 / 16)
    with pytest.raises(NoiseError):
        QWienerSpec([-1.0])
    with pytest.raises(NoiseError):
        QWienerSpec.from_config({"q_eigenvalues": [1.0, 2.0], "k_dim": 3})
    assert QWienerSpec.from_config(q.to_config()).k_dim == 4


def test_levy_validation():
    with pytest.raises(NoiseError, match="atom 1: mass"):
        LevyMeasureSpec([[1.0], [2.0]], [1.0, -1.0])
    with pytest.raises(NoiseError, match="nonzero"):
        LevyMeasureSpec([[0.0]], [1.0])
    with pytest.raises(NoiseError, match="mark has dimension"):
        LevyMeasureSpec.from_config({"mark_dim": 2, "atoms": [{"mark": [1.0], "mass": 1.0}]})
    lv = LevyMeasureSpec.from_config({"atoms": [{"mark": [2.0], "mass": 0.5}]})
    assert lv.levy_integral() == pytest.approx(0.5)
    assert LevyMeasureSpec.empty().n_atoms == 0


def test_wiener_covariance():
    q = QWienerSpec([1.0, 0.25, 0.1])
    rep = wiener_covariance_audit(q, 0.01, 50000, seed=3)
    assert rep.passed, rep.to_dict()


def test_isometry_and_negative_control():
    lv = LevyMeasureSpec.single([1.0], 2.0)
    good = isometry_audit(lv, 0.5, 100000, seed=4)
    assert good.passed and good.theoretical == 1.0
    bad = isometry_audit(lv, 0.5, 100000, seed=4, corrupt_compensator=True)
    assert not bad.passed
    with pytest.raises(NoiseError):
        isometry_audit(lv, 0.5, 10)


def test_jump_stream_on_half_open_interval():
    lv = LevyMeasureSpec([[1.0], [-1.0]], [3.0, 1.0])
    ev = sample_jump_stream(lv, 2.0, np.random.SeedSequence(5))
    times = [t for t, _ in ev]
    assert times == sorted(times)
    assert all(0 < t <= 2.0 for t in times)
    counts = sample_jump_counts(lv, 2.0, 20000, np.random.SeedSequence(6))
    np.testing.assert_allclose(counts.mean(axis=0), [6.0, 2.0], rtol=0.05)


def test_cprm_integral_events_and_counts_agree():
    lv = LevyMeasureSpec([[1.0], [2.0]], [1.0, 0.5])
    g = lambda m: m[0] ** 2
    ev = [(0.1, 0), (0.2, 1), (0.3, 1)]
    counts = np.array([[1, 2]])
    assert cprm_integral(lv, ev, 1.0, g) == pytest.approx(1 + 8 - (1 + 2))
    assert cprm_integral(lv, counts, 1.0, g)[0] == pytest.approx(6.0)


def test_seeded_paths_are_reproducible_and_independent():
    q = QWienerSpec([1.0, 0.5])
    lv = LevyMeasureSpec.single([1.0], 5.0)
    t = uniform_grid(1.0, 50)
    a = make_noise_path(q, lv, t, 9, 0)
    b = make_noise_path(q, lv, t, 9, 0)
    c = make_noise_path(q, lv, t, 9, 1)
    np.testing.assert_array_equal(a.dW, b.dW)
    np.testing.assert_array_equal(a.jump_times, b.jump_times)
    assert not np.array_equal(a.dW, c.dW)
    # the Wiener stream does not depend on the jump specification
    d = make_noise_path(q, LevyMeasureSpec.single([2.0], 0.1), t, 9, 0)
    np.testing.assert_array_equal(a.dW, d.dW)


def test_step_counts_and_coarsen():
    q = QWienerSpec([1.0])
    lv = LevyMeasureSpec.single([1.0], 20.0)
    p = make_noise_path(q, lv, uniform_grid(1.0, 40), 1, 0)
    assert p.step_counts().sum() == len(p.jump_times)
    steps = p.jump_steps()
    assert np.all(p.t_grid[steps] < p.jump_times) and np.all(p.jump_times <= p.t_grid[steps + 1])
    c = p.coarsen(4)
    assert c.M == 10
    np.testing.assert_allclose(c.dW.sum(), p.dW.sum(), rtol=1e-12)
    assert c.step_counts().sum() == p.step_counts().sum()
    assert p.truncate(20).M == 20
    with pytest.raises(NoiseError):
        p.coarsen(3)


def test_event_on_grid_node_belongs_to_the_step_it_closes():
    p = NoisePath(np.array([0.0, 0.5, 1.0]), np.zeros((2, 1)), np.array([0.5, 1.0]),
                  np.array([0, 0]), 1)
    np.testing.assert_array_equal(p.step_counts()[:, 0], [1, 1])


def test_serialisation_round_trip(tmp_path):
    q = QWienerSpec([1.0, 0.3])
    lv = LevyMeasureSpec.single([1.0], 4.0)
    p = make_noise_path(q, lv, uniform_grid(0.5, 10), 12, 3)
    back = NoisePath.from_csv(p.to_csv())
    np.testing.assert_array_equal(back.dW, p.dW)
    np.testing.assert_array_equal(back.jump_times, p.jump_times)
    np.testing.assert_array_equal(back.t_grid, p.t_grid)
    p.save_npz(tmp_path / "p.npz")
    z = NoisePath.load_npz(tmp_path / "p.npz")
    assert (z.seed, z.index) == (12, 3)
    np.testing.assert_array_equal(z.dW, p.dW)


def test_batch_and_validation():
    q = QWienerSpec([1.0])
    lv = LevyMeasureSpec.single([1.0], 1.0)
    b = make_noise_batch(q, lv, uniform_grid(1.0, 10), 0, 5)
    assert b.dW.shape == (5, 10, 1) and b.counts.shape == (5, 10, 1)
    assert b.coarsen(2).M == 5
    with pytest.raises(NoiseError):
        NoiseBatch.from_paths([b.paths[0], make_noise_path(q, lv, uniform_grid(1.0, 20), 0, 0)])
    with pytest.raises(NoiseError):
        sample_wiener_increments(q, [0.0, 0.0], 1)
    with pytest.raises(NoiseError):
        NoisePath(np.array([0.0, 1.0]), np.zeros((1, 1)), np.array([0.0]), np.array([0]), 1)
