import numpy as np
import pytest

from mflab.data import (BinaryLabels, DataModel, Empirical, GaussianMixture, RegressionLabels,
                        UniformBall, UniformSphere, admissible, constant_probability,
                        difference_quotients, first_moment, halfspace_probability, zero_target)


def test_sphere_samples_have_unit_norm():
    model = DataModel(UniformSphere(2), BinaryLabels(constant_probability(0.5)), seed=0)
    b = model.sample(100_000, stream=1)
    assert abs(np.mean(np.linalg.norm(b.xs, axis=1)) - 1) <= 1e-12


def test_ball_samples_inside_radius():
    b = DataModel(UniformBall(3, 2.0), BinaryLabels(constant_probability(0.5))).sample(10_000)
    r = np.linalg.norm(b.xs, axis=1)
    assert r.max() <= 2.0
    assert np.mean(r**3) == pytest.approx(8 / 2, rel=0.05)


def test_deterministic_labels():
    b = DataModel(UniformSphere(2), BinaryLabels(constant_probability(1.0))).sample(1000)
    assert np.all(b.ys == 1)


def test_gaussian_second_moment():
    b = DataModel(GaussianMixture.standard(2), RegressionLabels(zero_target)).sample(100_000, 3)
    assert np.mean(np.sum(b.xs**2, axis=1)) == pytest.approx(2.0, abs=0.05)


def test_reproducible_streams():
    model = DataModel(GaussianMixture.standard(3), BinaryLabels(constant_probability(0.3)), seed=9)
    a, b, c = model.sample(100, 4), model.sample(100, 4), model.sample(100, 5)
    assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ys, b.ys)
    assert not np.array_equal(a.xs, c.xs)


def test_validation():
    with pytest.raises(ValueError):
        UniformSphere(2, radius=0)
    with pytest.raises(ValueError):
        GaussianMixture([[0, 0], [1, 1]], [1, 1], [0.5, 0.6])
    with pytest.raises(ValueError):
        RegressionLabels(zero_target, "cauchy")
    with pytest.raises(ValueError):
        BinaryLabels(constant_probability(1.5)).probability(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        DataModel(Empirical([[0.0, 0.0]]), RegressionLabels(zero_target)).sample(5, strict=True)


def test_halfspace_probability():
    lam = halfspace_probability(0.8, 0.2)
    assert np.allclose(lam(np.array([[1.0, 0], [-1.0, 0], [0.0, 1]])), [0.8, 0.2, 0.2])


def test_first_moment_examples():
    sphere = DataModel(UniformSphere(2), BinaryLabels(constant_probability(1.0)))
    assert first_moment(sphere, 10_000) == pytest.approx(2.0, abs=1e-2)
    point = DataModel(Empirical([[0.0, 0.0]]), RegressionLabels(zero_target))
    assert first_moment(point, 100) == 0
    gauss = DataModel(GaussianMixture.standard(2), RegressionLabels(zero_target))
    assert first_moment(gauss, 200_000) == pytest.approx(np.sqrt(np.pi / 2), abs=0.01)


def test_binary_mean_label_converges_at_root_n_rate():
    model = DataModel(UniformSphere(2), BinaryLabels(halfspace_probability(0.8, 0.2)), seed=5)
    expected = 0.0  # E[2 lam - 1] with lam 0.8 / 0.2 on the two halves
    for n in (1_000, 10_000, 100_000):
        errs = [abs(np.mean(model.sample(n, s).ys) - expected) for s in range(20)]
        assert np.sqrt(np.mean(np.square(errs))) <= 3.0 / np.sqrt(n)


def test_gaussian_passes_admissibility():
    rep = admissible(DataModel(GaussianMixture.standard(2), RegressionLabels(zero_target), seed=1),
                     pairs=32, n=100_000)
    assert rep.verdict == "pass"
    assert rep.variation < 3


def test_sphere_d3_passes_admissibility():
    rep = admissible(DataModel(UniformSphere(3), RegressionLabels(zero_target), seed=1),
                     pairs=32, n=100_000)
    assert rep.verdict == "pass"


def test_empirical_fails_admissibility(rng):
    model = DataModel(Empirical(rng.standard_normal((10, 2))), RegressionLabels(zero_target))
    rep = admissible(model, pairs=32)
    assert rep.verdict == "fail"
    # below the scale of the point cloud the worst quotient is (flipped mass) / delta
    assert rep.decade_growth[-1] == pytest.approx(10.0, rel=1e-9)


def test_quotients_shared_pairs_and_shapes():
    model = DataModel(GaussianMixture.standard(2), RegressionLabels(zero_target))
    q = difference_quotients(model, 8, 5000, deltas=(0.5, 0.05))
    assert q.shape == (2,) and np.all(q >= 0)
    with pytest.raises(ValueError):
        difference_quotients(model, 8, 5000, deltas=(2.5,))
