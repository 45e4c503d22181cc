"""Time integration of the particle system ``d theta_i / dt = -V(pi_t; theta_i)``.

A field builder turns a stage position array into a velocity array.  Two
builders are provided: :class:`BatchField` recomputes residuals from the stage
ensemble on a fixed batch (the live dynamics), :class:`FrozenField` keeps the
residual profile of a snapshot (the frozen-potential experiments).  Plain
callables ``theta -> V`` are accepted too.

With ``gating="step"`` the ReLU gates ``1{w.x + b > 0}`` are evaluated once at
the start of a step and reused by every stage.  Residuals are still recomputed
per stage.  Each stage velocity is then exactly tangent to the Minkowski level
set, so the Minkowski norm is a quadratic invariant of a smooth ODE on every
step and its drift shrinks at the integrator's full order.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Union

import numpy as np

from .data import Batch, DataModel
from .field import (RELU, ActivationSpec, PotentialField, _augment, _gated, cutoff_factor,
                    probe_sup, risk_with_error)
from .loss import LossModel
from .params import Ensemble, barron_estimate, minkowski_norms

INTEGRATORS = ("euler", "rk4")
BATCH_MODES = ("fresh", "fixed_pool")
GATINGS = ("step", "stage")

# stream indices; step k of a fresh run draws stream STEP_STREAM + k
EVAL_STREAM = 1
POOL_STREAM = 2
STEP_STREAM = 1000

TRAJECTORY_COLUMNS = ["t", "risk", "N", "sup_g", "sup_V", "mink_drift",
                      "cone_violations", "dissipation", "barron"]


class NonFiniteStateError(FloatingPointError):
    """An update produced NaN or infinite coordinates; ``theta`` holds the last finite state."""

    def __init__(self, message: str, theta: np.ndarray, t: float = float("nan")):
        super().__init__(message)
        self.theta = theta
        self.t = t


@dataclass(frozen=True)
class FlowConfig:
    dt: float
    T: float
    integrator: str = "rk4"
    batch_size: int = 1024
    batch_mode: str = "fresh"
    pool_size: int = 4096
    record_every: int = 10
    freeze_field: Optional[float] = None
    eval_size: int = 8192
    gating: str = "step"
    cone_tol: float = 1e-9
    perturb_gradient: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0 and self.dt < self.T):
            raise ValueError("need 0 < dt < T")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.batch_mode not in BATCH_MODES:
            raise ValueError(f"batch_mode must be one of {BATCH_MODES}")
        if self.gating not in GATINGS:
            raise ValueError(f"gating must be one of {GATINGS}")
        if self.batch_size < 1 or self.pool_size < 1 or self.eval_size < 2:
            raise ValueError("batch_size and pool_size must be >= 1, eval_size >= 2")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.freeze_field is not None and self.freeze_field < 0:
            raise ValueError("freeze_field snapshot time must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


# --------------------------------------------------------------------------- field builders

class BatchField:
    """Live velocity on a fixed batch: residuals follow the positions they are evaluated at."""

    def __init__(self, batch: Batch, loss: LossModel, activation: ActivationSpec = RELU,
                 perturb: float = 0.0):
        self.batch = batch
        self.loss = loss
        self.activation = activation
        self.perturb = perturb
        self._Xa = _augment(batch.xs)

    def gates(self, theta: np.ndarray) -> np.ndarray:
        return self._Xa @ theta[:, 1:].T > 0

    def snapshot(self, theta: np.ndarray, gates: Optional[np.ndarray] = None) -> PotentialField:
        return PotentialField.build(theta, self.batch, self.loss, self.activation, gates,
                                    self.perturb)

    def velocity(self, theta: np.ndarray, gates: Optional[np.ndarray] = None) -> np.ndarray:
        Z = self._Xa @ theta[:, 1:].T
        S, slope = _gated(Z, self.activation.leak, gates)
        a = theta[:, 0]
        n, m = Z.shape
        if self.activation.cutoff:
            eta, grad_eta = cutoff_factor(theta)
            f = S @ (a * eta) / m
        else:
            f = S @ a / m
        r = self.loss.d1(f, self.batch.ys)
        plain_a = (r @ S) / n
        plain_wb = ((r[:, None] * self._Xa).T @ slope).T / n
        V = np.empty_like(theta)
        if self.activation.cutoff:
            V[:, 0] = eta * plain_a
            V[:, 1:] = (eta * a)[:, None] * plain_wb
            V += (a * plain_a)[:, None] * grad_eta
        else:
            V[:, 0] = plain_a
            V[:, 1:] = a[:, None] * plain_wb
        if self.perturb:
            V += self.perturb * theta
        return V


class FrozenField:
    """Velocity of a fixed residual profile, independent of the moving ensemble."""

    def __init__(self, potential_field: PotentialField):
        self.field = potential_field

    def gates(self, theta: np.ndarray) -> np.ndarray:
        return self.field.gates(theta)

    def snapshot(self, theta: np.ndarray, gates: Optional[np.ndarray] = None) -> PotentialField:
        return self.field

    def velocity(self, theta: np.ndarray, gates: Optional[np.ndarray] = None) -> np.ndarray:
        return self.field.potential_grad(theta, gates)


FieldBuilder = Union[BatchField, FrozenField, Callable[[np.ndarray], np.ndarray]]


def _velocity_fn(builder: FieldBuilder, theta0: np.ndarray, gating: str):
    if not hasattr(builder, "velocity"):
        return builder
    gates = builder.gates(theta0) if gating == "step" else None
    return lambda th: builder.velocity(th, gates)


def step(e: Ensemble, cfg: FlowConfig, field_builder: FieldBuilder) -> Ensemble:
    """Advance all particles by ``cfg.dt``; ``m0`` is carried over unchanged."""
    theta = e.theta
    V = _velocity_fn(field_builder, theta, cfg.gating)
    dt = cfg.dt
    with np.errstate(invalid="ignore", over="ignore"):
        if cfg.integrator == "euler":
            new = theta - dt * V(theta)
        else:
            k1 = V(theta)
            k2 = V(theta - 0.5 * dt * k1)
            k3 = V(theta - 0.5 * dt * k2)
            k4 = V(theta - dt * k3)
            new = theta - (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(new)):
        bad = int(np.sum(~np.all(np.isfinite(new), axis=1)))
        raise NonFiniteStateError(f"non-finite update in {bad} particle(s)", np.array(theta))
    return e.with_theta(new)


def dissipation(e: Union[Ensemble, np.ndarray], potential_field) -> float:
    """``(1/m) sum_i |V(theta_i)|^2``, the instantaneous risk decay rate."""
    theta = e.theta if isinstance(e, Ensemble) else np.asarray(e, dtype=float)
    V = potential_field.potential_grad(theta)
    return float(np.mean(np.sum(V * V, axis=1)))


# --------------------------------------------------------------------------- experiment loop

@dataclass
class TrajectoryRecord:
    times: List[float] = field(default_factory=list)
    risk: List[float] = field(default_factory=list)
    N: List[float] = field(default_factory=list)
    sup_g: List[float] = field(default_factory=list)
    sup_V: List[float] = field(default_factory=list)
    mink_drift: List[float] = field(default_factory=list)
    cone_violations: List[int] = field(default_factory=list)
    dissipation: List[float] = field(default_factory=list)
    barron: List[float] = field(default_factory=list)
    risk_se: List[float] = field(default_factory=list)
    mean_potential: List[float] = field(default_factory=list)
    frozen: List[bool] = field(default_factory=list)
    final: Optional[Ensemble] = None
    aborted: bool = False
    message: str = ""

    def __len__(self) -> int:
        return len(self.times)

    def append(self, **row) -> None:
        if self.times and not row["t"] > self.times[-1]:
            raise ValueError("record times must be strictly increasing")
        self.times.append(row.pop("t"))
        for key, value in row.items():
            getattr(self, key).append(value)

    def array(self, name: str) -> np.ndarray:
        return np.asarray(self.times if name == "t" else getattr(self, name), dtype=float)

    def rows(self):
        cols = [self.array(c) for c in TRAJECTORY_COLUMNS]
        for i in range(len(self)):
            yield [int(c[i]) if name == "cone_violations" else c[i]
                   for name, c in zip(TRAJECTORY_COLUMNS, cols)]

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_COLUMNS)
            for row in self.rows():
                writer.writerow([v if isinstance(v, int) else f"{v:.17g}" for v in row])


def read_trajectory_csv(path: Union[str, Path]) -> TrajectoryRecord:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: unexpected trajectory header {header}")
        rec = TrajectoryRecord()
        for row in reader:
            vals = dict(zip(header, row))
            rec.append(t=float(vals["t"]), risk=float(vals["risk"]), N=float(vals["N"]),
                       sup_g=float(vals["sup_g"]), sup_V=float(vals["sup_V"]),
                       mink_drift=float(vals["mink_drift"]),
                       cone_violations=int(vals["cone_violations"]),
                       dissipation=float(vals["dissipation"]), barron=float(vals["barron"]),
                       risk_se=float("nan"), mean_potential=float("nan"), frozen=False)
    return rec


def _record(rec: TrajectoryRecord, t: float, e: Ensemble, cfg: FlowConfig, lm: LossModel,
            spec: ActivationSpec, eval_batch: Batch, grid: np.ndarray,
            frozen: Optional[PotentialField]) -> None:
    theta = e.theta
    r, se = risk_with_error(theta, spec, lm, eval_batch)
    diag = frozen if frozen is not None else PotentialField.build(theta, eval_batch, lm, spec)
    sup_g, sup_V = probe_sup(diag, grid)
    mink = minkowski_norms(theta)
    rec.append(t=t, risk=r, N=float(np.mean(np.sum(theta**2, axis=1))), sup_g=sup_g, sup_V=sup_V,
               mink_drift=float(np.max(np.abs(mink - e.m0))),
               cone_violations=int(np.sum(mink < -cfg.cone_tol)),
               dissipation=dissipation(theta, diag), barron=barron_estimate(e), risk_se=se,
               mean_potential=float(np.mean(diag.potential(theta))), frozen=frozen is not None)


def run(e0: Ensemble, cfg: FlowConfig, model: DataModel, lm: LossModel, grid: np.ndarray,
        activation: ActivationSpec = RELU, frozen_field: Optional[PotentialField] = None,
        raise_on_nonfinite: bool = False) -> TrajectoryRecord:
    """Integrate from ``e0`` to ``cfg.T`` and record diagnostics every ``record_every`` steps.

    Risk, probe sups and potentials are measured on one evaluation batch held
    fixed for the whole run.  Once ``t >= cfg.freeze_field`` the driving field
    is frozen: ``frozen_field`` if given, otherwise the live field at that time
    on its step batch.  Diagnostics of a frozen segment refer to the frozen field.
    A non-finite update stops the run with ``rec.aborted`` set, unless
    ``raise_on_nonfinite``.
    """
    if e0.dim != model.dim:
        raise ValueError(f"ensemble dimension {e0.dim} does not match data dimension {model.dim}")
    eval_batch = model.sample(cfg.eval_size, EVAL_STREAM)
    pool = model.sample(cfg.pool_size, POOL_STREAM) if cfg.batch_mode == "fixed_pool" else None
    rec = TrajectoryRecord()
    e = e0
    frozen: Optional[PotentialField] = None
    n_steps = cfg.n_steps
    for k in range(n_steps + 1):
        t = k * cfg.dt
        batch = pool if pool is not None else model.sample(cfg.batch_size, STEP_STREAM + k)
        if frozen is None and cfg.freeze_field is not None and t >= cfg.freeze_field - 1e-12:
            frozen = frozen_field if frozen_field is not None else PotentialField.build(
                e, batch, lm, activation)
            if cfg.perturb_gradient:
                frozen = PotentialField(frozen.batch, frozen.residuals, frozen.activation,
                                        frozen.loss, frozen.ensemble, cfg.perturb_gradient)
        if k % cfg.record_every == 0 or k == n_steps:
            _record(rec, t, e, cfg, lm, activation, eval_batch, grid, frozen)
        if k == n_steps:
            break
        builder = FrozenField(frozen) if frozen is not None else BatchField(
            batch, lm, activation, cfg.perturb_gradient)
        try:
            e = step(e, cfg, builder)
        except NonFiniteStateError as err:
            err.t = t
            if raise_on_nonfinite:
                raise
            rec.aborted = True
            rec.message = f"t={t:.6g}: {err}"
            e = e.with_theta(err.theta)
            break
    rec.final = e
    return rec
