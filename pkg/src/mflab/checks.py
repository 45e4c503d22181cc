"""Invariant suite run by ``mflab check``: every property at reduced size, one result per check."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import diagnostics, flow, loss, params
from .config import ExperimentConfig
from .data import BinaryLabels, constant_probability
from .field import PotentialField, cone_sphere_grid, realize_array
from .flow import BatchField, FlowConfig


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: value={self.value:.3e} tol={self.tolerance:.3e} {self.detail}".rstrip()


def _kink_free_points(fld: PotentialField, d: int, k: int, rng, tol: float = 1e-8) -> np.ndarray:
    pts = rng.standard_normal((4 * k, d + 2))
    ok = diagnostics.kink_free(fld, pts, tol)
    return pts[ok][:k]


class Suite:
    """Checks share one data model, one initial ensemble and one field, all derived from the config."""

    def __init__(self, cfg: ExperimentConfig, perturb: float = 0.0, m: int = 128,
                 n: int = 512, seed_stream: int = 77):
        self.cfg = cfg
        self.perturb = perturb
        self.d = cfg.dim
        self.rng = np.random.default_rng([cfg.model.seed, seed_stream])
        self.e0 = params.init_omni(m, self.d, cfg.init_seed)
        self.batch = cfg.model.sample(n, 11)
        self.field = PotentialField.build(self.e0, self.batch, cfg.loss, cfg.activation,
                                          perturb=perturb)
        self.rsup = max(self.field.residual_sup, 1e-300)

    # field identities ---------------------------------------------------------------------
    def euler_identity(self) -> CheckResult:
        pts = _kink_free_points(self.field, self.d, 500, self.rng)
        g = self.field.potential(pts)
        V = self.field.potential_grad(pts)
        err = np.abs(g - 0.5 * np.sum(pts * V, axis=1)) / ((1 + np.sum(pts**2, axis=1)) * self.rsup)
        return CheckResult("euler_identity", bool(np.max(err) <= 1e-10), float(np.max(err)), 1e-10)

    def tangency(self) -> CheckResult:
        pts = _kink_free_points(self.field, self.d, 500, self.rng)
        pts[:, 0] = np.linalg.norm(pts[:, 1:], axis=1) * np.sign(pts[:, 0])
        V = self.field.potential_grad(pts)
        J = pts.copy()
        J[:, 0] *= -1
        err = np.abs(np.sum(V * J, axis=1)) / (np.linalg.norm(pts, axis=1) * self.rsup)
        return CheckResult("tangency", bool(np.max(err) <= 1e-8), float(np.max(err)), 1e-8)

    def gradient_fd(self) -> CheckResult:
        h = 1e-5
        pts = _kink_free_points(self.field, self.d, 300, self.rng, tol=1e-3)
        V = self.field.potential_grad(pts)
        fd = np.empty_like(pts)
        for k in range(pts.shape[1]):
            E = np.zeros(pts.shape[1])
            E[k] = h
            fd[:, k] = (self.field.potential(pts + E) - self.field.potential(pts - E)) / (2 * h)
        err = np.max(np.linalg.norm(fd - V, axis=1) / np.maximum(np.linalg.norm(V, axis=1), 1e-12))
        return CheckResult("gradient_fd", bool(err <= 1e-6), float(err), 1e-6)

    def homogeneity_degrees(self) -> CheckResult:
        pts = self.rng.standard_normal((100, self.d + 2))
        g1, g2 = self.field.potential(pts), self.field.potential(2 * pts)
        V1, V2 = self.field.potential_grad(pts), self.field.potential_grad(2 * pts)
        err = max(np.max(np.abs(g2 - 4 * g1)), np.max(np.abs(V2 - 2 * V1))) / self.rsup
        return CheckResult("homogeneity_degrees", bool(err <= 1e-10), float(err), 1e-10)

    # parameter space ----------------------------------------------------------------------
    def init_in_cone(self) -> CheckResult:
        worst = float(np.min(params.minkowski_norms(self.e0.theta)))
        return CheckResult("init_in_cone", worst >= -1e-12, worst, 0.0)

    def sphere_round_trip(self) -> CheckResult:
        back = params.reparametrize_minimizer(params.sphere_project(self.e0))
        X = self.cfg.model.sample(1000, 12).xs
        err = np.max(np.abs(realize_array(self.e0.theta, X) - realize_array(back.theta, X)))
        tol = 1e-10 * (1 + params.second_moment(self.e0))
        return CheckResult("sphere_round_trip", bool(err <= tol), float(err), tol)

    # dynamics -----------------------------------------------------------------------------
    def dN_dt(self) -> CheckResult:
        """One small step on a fixed batch: ``(N1 - N0)/dt`` against ``-4 mean g``."""
        dt = 1e-4
        cfg = FlowConfig(dt=dt, T=1.0, integrator="rk4")
        builder = BatchField(self.batch, self.cfg.loss, self.cfg.activation, self.perturb)
        e1 = flow.step(self.e0, cfg, builder)
        e2 = flow.step(e1, cfg, builder)
        N0, N1, N2 = (params.second_moment(e) for e in (self.e0, e1, e2))
        plain = PotentialField.build(self.e0, self.batch, self.cfg.loss, self.cfg.activation)
        predicted = -4.0 * float(np.mean(plain.potential(self.e0.theta)))
        err = abs((N1 - N0) / dt - predicted)
        # forward-difference truncation dt/2 |N''| with N'' from the second step
        curvature = abs(N2 - 2.0 * N1 + N0) / dt**2
        tol = 3.0 * 0.5 * dt * curvature + 1e-8 * (abs(predicted) + 1e-3)
        return CheckResult("dN_dt_identity", bool(err <= tol), err, tol)

    def _short_run(self, dt: float, T: float = 1.0, record_every: int = 1):
        cfg = FlowConfig(dt=dt, T=T, integrator="rk4", batch_size=256, eval_size=1024,
                         record_every=record_every, perturb_gradient=self.perturb)
        grid = cone_sphere_grid(64, self.d, 0)
        return flow.run(self.e0, cfg, self.cfg.model, self.cfg.loss, grid, self.cfg.activation)

    def minkowski_order(self) -> CheckResult:
        drifts = [self._short_run(dt, record_every=10**6).mink_drift[-1] for dt in (0.2, 0.1, 0.05)]
        ratios = [drifts[i] / max(drifts[i + 1], 1e-300) for i in range(2)]
        ok = min(ratios) >= 12 or max(drifts) < 1e-13
        return CheckResult("minkowski_drift_ratio", bool(ok), float(min(ratios)), 12.0,
                           "ratios=" + ",".join(f"{r:.1f}" for r in ratios))

    def moment_bounds(self) -> List[CheckResult]:
        rec = self._short_run(0.05, T=3.0, record_every=5)
        simple = float(np.max(diagnostics.sublinear_bound_excess(rec)))
        refined = diagnostics.refined_bound_excess(rec)
        risk = rec.array("risk")
        se = np.array(rec.risk_se)
        rise = float(np.max(np.diff(risk) - 3.0 * (se[1:] + se[:-1] + 0.05)))
        cone = int(max(rec.cone_violations))
        return [CheckResult("sublinear_bound", simple <= 0, simple, 0.0),
                CheckResult("refined_bound", refined <= 0, refined, 0.0),
                CheckResult("risk_monotone", rise <= 0, rise, 0.0),
                CheckResult("cone_preserved", cone == 0, float(cone), 0.0)]

    # diagnostics --------------------------------------------------------------------------
    def sard_identity(self) -> CheckResult:
        grid = cone_sphere_grid(1000, self.d, 3)
        rep = diagnostics.sard_probe(self.field, grid)
        val = rep.identity_max / self.rsup
        return CheckResult("sphere_identity", bool(val <= 1e-8), val, 1e-8)

    def mbr_oracle(self) -> CheckResult:
        lm = loss.LossModel("softplus")
        worst = 0.0
        for lam in (0.1, 0.5, 0.9):
            labels = BinaryLabels(constant_probability(lam))
            closed = np.log(lam / (1 - lam))
            worst = max(worst, abs(loss.minimize_augmented(lm, labels, np.zeros(self.d)) - closed))
        return CheckResult("mbr_closed_form", worst <= 1e-6, worst, 1e-6)

    def run_all(self) -> List[CheckResult]:
        out: List[CheckResult] = []
        singles: List[Callable[[], CheckResult]] = [
            self.init_in_cone, self.sphere_round_trip, self.euler_identity, self.tangency,
            self.gradient_fd, self.homogeneity_degrees, self.dN_dt, self.minkowski_order,
            self.sard_identity, self.mbr_oracle]
        for fn in singles:
            out.append(fn())
        out.extend(self.moment_bounds())
        return out


def run_checks(cfg: ExperimentConfig, perturb: float = 0.0) -> List[CheckResult]:
    return Suite(cfg, perturb).run_all()
