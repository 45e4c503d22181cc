import numpy as np
import pytest

from mflab.data import Batch
from mflab.diagnostics import (ConvergenceReport, convergence_report, exponential_slope,
                               log_slope, mbr_gap, refined_bound_excess, sard_probe,
                               sublinear_bound_excess, write_verdict)
from mflab.field import PotentialField, cone_sphere_grid
from mflab.flow import TrajectoryRecord
from mflab.loss import LossModel
from mflab.params import init_omni


def make_record(t, risk, N, sup_g, se=0.01, frozen=False):
    rec = TrajectoryRecord()
    for i, ti in enumerate(t):
        rec.append(t=float(ti), risk=float(risk[i]), N=float(N[i]), sup_g=float(sup_g[i]),
                   sup_V=2 * float(sup_g[i]), mink_drift=0.0, cone_violations=0,
                   dissipation=0.0, barron=0.0, risk_se=se, mean_potential=0.0, frozen=frozen)
    return rec


T = np.linspace(0, 10, 21)


def test_converging_verdict():
    rec = make_record(T, 0.33 + 0.3 * np.exp(-T), 1.3 + 0.1 * T, 0.1 * np.exp(-0.5 * T))
    rep = convergence_report(rec, 0.3251, 0.001)
    assert rep.verdict == "converging-to-MBR"
    assert rep.sup_g_trend == pytest.approx(-0.5)
    assert rep.thresholds["gap_sigmas"] == 3.0


def test_stalled_verdict():
    rec = make_record(T, 0.6 + 0 * T, 1.3 + 0 * T, 0.1 + 0 * T)
    assert convergence_report(rec, 0.3251, 0.001).verdict == "stalled"


def test_growing_moments_verdict():
    rec = make_record(T, 0.69 + 0 * T, 1.33 * np.exp(0.5 * T), 0.1 + 0 * T)
    assert convergence_report(rec, 0.5, 0.001).verdict == "growing-moments"


def test_zero_time_record_is_inconclusive():
    rec = make_record([0.0], [0.6], [1.3], [0.1])
    assert convergence_report(rec, 0.5).verdict == "inconclusive"


def test_stalled_never_with_small_gap():
    rng = np.random.default_rng(0)
    for _ in range(200):
        risk = 0.5 + rng.uniform(0, 0.1) * np.exp(-rng.uniform(0, 1) * T)
        rec = make_record(T, risk, 1.3 + 0.1 * T, rng.uniform(0.01, 0.1, size=len(T)))
        rep = convergence_report(rec, 0.5, 0.01)
        assert not (rep.verdict == "stalled" and rep.risk_gap <= 3 * rep.gap_sigma)


def test_report_is_deterministic_and_validates_thresholds():
    rec = make_record(T, 0.6 + 0 * T, 1.3 + 0 * T, 0.1 + 0 * T)
    assert convergence_report(rec, 0.3).rows() == convergence_report(rec, 0.3).rows()
    with pytest.raises(ValueError):
        convergence_report(rec, 0.3, bogus=1)


def test_mbr_gap_series():
    rec = make_record(T, 0.4 + 0 * T, 1 + 0 * T, 1 + 0 * T, se=0.03)
    gap, sigma = mbr_gap(rec, 0.3, 0.04)
    assert np.allclose(gap, 0.1) and np.allclose(sigma, 0.05)


def test_bounds_detect_violations():
    ok = make_record(T, 0.6 - 0.01 * T, 1.5 - 0.5 * np.exp(-T), 0 * T + 1)
    assert np.max(sublinear_bound_excess(ok)) <= 0
    assert refined_bound_excess(ok) <= 0
    bad = make_record(T, 0.6 + 0 * T, np.exp(T), 0 * T + 1)
    assert np.max(sublinear_bound_excess(bad)) > 0
    assert refined_bound_excess(bad) > 0


def test_exponential_slope_only_on_frozen_segment():
    rec = make_record(T, 0 * T + 0.6, 2 * np.exp(0.3 * T), 0 * T + 1, frozen=True)
    assert exponential_slope(rec) == pytest.approx(0.3)
    live = make_record(T, 0 * T + 0.6, 2 * np.exp(0.3 * T), 0 * T + 1)
    assert np.isnan(exponential_slope(live))
    assert np.isnan(log_slope([1.0], [1.0]))


def test_write_verdict(tmp_path):
    write_verdict(tmp_path / "v.txt", "stalled")
    assert (tmp_path / "v.txt").read_text() == "verdict=stalled\n"
    with pytest.raises(ValueError):
        write_verdict(tmp_path / "v.txt", "great")


def test_report_csv(tmp_path):
    rep = ConvergenceReport(0.5, 0.01, 0.02, 0.01, -0.1, 5.0, -1.0, "inconclusive", {"a": 1.0})
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "key,value" and lines[-1] == "verdict,inconclusive"


@pytest.fixture
def sphere_field(rng):
    X = rng.standard_normal((400, 2))
    y = np.where(rng.random(400) < 0.8, 1.0, -1.0)
    return PotentialField.build(init_omni(64, 2, 0), Batch(X, y), LossModel("softplus"))


def test_sard_identity_and_histogram(sphere_field):
    grid = cone_sphere_grid(1000, 2, 1)
    rep = sard_probe(sphere_field, grid, bins=10)
    assert rep.bin_counts.sum() == len(grid)
    assert rep.identity_max <= 1e-8 * sphere_field.residual_sup
    assert np.isfinite(rep.identity_residuals).sum() > 900


def test_sard_perfect_fit(sphere_field):
    zero = PotentialField(sphere_field.batch, np.zeros(len(sphere_field.batch)))
    rep = sard_probe(zero, cone_sphere_grid(200, 2, 1))
    assert np.all(rep.values == 0) and rep.identity_max == 0


def test_sard_sign_flip_and_linearity(sphere_field):
    grid = cone_sphere_grid(300, 2, 2)
    flipped = grid * [-1, 1, 1, 1]
    rep, rep_f = sard_probe(sphere_field, grid), sard_probe(sphere_field, flipped)
    assert np.allclose(rep_f.values, -rep.values)
    rep2 = sard_probe(sphere_field.scaled(2.0), grid)
    assert np.allclose(rep2.tangential_norms, 2 * rep.tangential_norms)


def test_sard_multiplier_vanishes_on_cone_boundary(sphere_field):
    # on the unit sphere a^2 = 1/2 is exactly the light cone, where grad^S_a g = 0
    grid = cone_sphere_grid(200, 2, 3)
    grid[:, 0] = np.sign(grid[:, 0]) * np.linalg.norm(grid[:, 1:], axis=1)
    grid /= np.linalg.norm(grid, axis=1, keepdims=True)
    V = sphere_field.potential_grad(grid)
    tang_a = V[:, 0] - grid[:, 0] * np.sum(grid * V, axis=1)
    assert np.allclose(grid[:, 0] ** 2, 0.5)
    assert np.max(np.abs(tang_a)) <= 1e-12


def test_sard_validates_grid(sphere_field):
    with pytest.raises(ValueError):
        sard_probe(sphere_field, [[2.0, 0, 0, 0]])
    with pytest.raises(ValueError):
        sard_probe(sphere_field, [[1.0, 0, 0, 0]])
