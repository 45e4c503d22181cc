"""Realization, risk and velocity potential of an ensemble of (leaky) ReLU neurons.

Vectorized kernels take ``theta`` as an ``(m, d + 2)`` array and inputs ``X`` as
``(n, d)``.  The single-particle functions :func:`activation` and
:func:`grad_activation` wrap them for :class:`~mflab.params.Particle` objects.

``gates`` is an optional ``(n, m)`` boolean array standing in for
``w.x + b > 0``.  Passing the gates computed at the start of an integration
step keeps ``sigma(z) = sigma'(z) z`` exact at every stage of that step.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .data import Batch
from .loss import LossModel
from .params import Ensemble, Particle


@dataclass(frozen=True)
class ActivationSpec:
    leak: float = 0.0
    cutoff: bool = False

    def __post_init__(self):
        if not 0.0 <= self.leak < 1.0:
            raise ValueError("leak must lie in [0, 1)")


RELU = ActivationSpec()


def _as_theta(p) -> np.ndarray:
    if isinstance(p, Particle):
        return p.as_vector()[None, :]
    if isinstance(p, Ensemble):
        return p.theta
    return np.array(p, dtype=float, ndmin=2)


def _augment(X: np.ndarray) -> np.ndarray:
    X = np.array(X, dtype=float, ndmin=2)
    return np.column_stack([X, np.ones(X.shape[0])])


def smoothstep_cutoff(z):
    """C^2 cutoff: 1 for ``z <= 0``, 0 for ``z >= 1/2``, nonincreasing in between."""
    u = np.clip(2.0 * np.asarray(z, dtype=float), 0.0, 1.0)
    return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def smoothstep_cutoff_deriv(z):
    u = np.clip(2.0 * np.asarray(z, dtype=float), 0.0, 1.0)
    return -60.0 * u**2 * (1.0 - u) ** 2


def cutoff_factor(theta: np.ndarray):
    """``eta(q)`` and ``grad eta(q)`` with ``q = (a^2 - |w|^2 - b^2) / |theta|^2``.

    Both vanish consistently at ``theta = 0``.
    """
    a = theta[:, 0]
    s = np.sum(theta[:, 1:] ** 2, axis=1)
    Q = a**2 + s
    safe = np.where(Q > 0, Q, 1.0)
    q = np.where(Q > 0, (a**2 - s) / safe, -1.0)
    eta = smoothstep_cutoff(q)
    deta = smoothstep_cutoff_deriv(q)
    grad_q = np.empty_like(theta)
    grad_q[:, 0] = 2.0 * a * (Q - (a**2 - s)) / safe**2
    grad_q[:, 1:] = -2.0 * theta[:, 1:] * ((Q + (a**2 - s)) / safe**2)[:, None]
    grad_q[Q == 0] = 0.0
    return eta, deta[:, None] * grad_q


def preactivations(theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``(n, m)`` array of ``w_i . x_j + b_i``."""
    return _augment(X) @ theta[:, 1:].T


def _gated(Z: np.ndarray, leak: float, gates: Optional[np.ndarray]):
    G = (Z > 0) if gates is None else gates
    slope = G.astype(float) if leak == 0.0 else np.where(G, 1.0, leak)
    return slope * Z, slope


def neuron_outputs(theta: np.ndarray, X: np.ndarray, spec: ActivationSpec = RELU,
                   gates: Optional[np.ndarray] = None) -> np.ndarray:
    """``(n, m)`` array of ``phi(theta_i; x_j)``."""
    S, _ = _gated(preactivations(theta, X), spec.leak, gates)
    scale = theta[:, 0]
    if spec.cutoff:
        scale = scale * cutoff_factor(theta)[0]
    return S * scale


def realize_array(theta: np.ndarray, X: np.ndarray, spec: ActivationSpec = RELU,
                  gates: Optional[np.ndarray] = None) -> np.ndarray:
    S, _ = _gated(preactivations(theta, X), spec.leak, gates)
    scale = theta[:, 0]
    if spec.cutoff:
        scale = scale * cutoff_factor(theta)[0]
    return S @ scale / theta.shape[0]


def potential_array(theta: np.ndarray, X: np.ndarray, r: np.ndarray,
                    spec: ActivationSpec = RELU, gates: Optional[np.ndarray] = None) -> np.ndarray:
    """``g(theta_k) = mean_j r_j phi(theta_k; x_j)`` for every row of ``theta``."""
    S, _ = _gated(preactivations(theta, X), spec.leak, gates)
    scale = theta[:, 0]
    if spec.cutoff:
        scale = scale * cutoff_factor(theta)[0]
    return scale * (r @ S) / len(r)


def potential_grad_array(theta: np.ndarray, X: np.ndarray, r: np.ndarray,
                         spec: ActivationSpec = RELU,
                         gates: Optional[np.ndarray] = None) -> np.ndarray:
    """``V(theta_k) = mean_j r_j grad_theta phi(theta_k; x_j)`` as a ``(k, d + 2)`` array."""
    Xa = _augment(X)
    Z = Xa @ theta[:, 1:].T
    S, slope = _gated(Z, spec.leak, gates)
    n = len(r)
    a = theta[:, 0]
    plain_a = (r @ S) / n
    plain_wb = ((r[:, None] * Xa).T @ slope).T / n
    V = np.empty_like(theta)
    if spec.cutoff:
        eta, grad_eta = cutoff_factor(theta)
        V[:, 0] = eta * plain_a
        V[:, 1:] = (eta * a)[:, None] * plain_wb
        V += (a * plain_a)[:, None] * grad_eta
    else:
        V[:, 0] = plain_a
        V[:, 1:] = a[:, None] * plain_wb
    return V


# --------------------------------------------------------------------------- particle API

def activation(spec: ActivationSpec, p: Particle, x) -> float:
    return float(neuron_outputs(_as_theta(p), np.atleast_2d(x), spec)[0, 0])


def grad_activation(spec: ActivationSpec, p: Particle, x) -> np.ndarray:
    return potential_grad_array(_as_theta(p), np.atleast_2d(x), np.ones(1), spec)[0]


def realize(e: Union[Ensemble, np.ndarray], spec: ActivationSpec, x):
    """Network output ``f(x) = (1/m) sum_i phi(theta_i; x)``; scalar for a single input."""
    x = np.asarray(x, dtype=float)
    out = realize_array(_as_theta(e), np.atleast_2d(x), spec)
    return float(out[0]) if x.ndim == 1 else out


def risk(e: Union[Ensemble, np.ndarray], spec: ActivationSpec, lm: LossModel, batch: Batch) -> float:
    return float(np.mean(lm.eval(realize_array(_as_theta(e), batch.xs, spec), batch.ys)))


def risk_with_error(e, spec: ActivationSpec, lm: LossModel, batch: Batch) -> tuple[float, float]:
    """Batch risk and its Monte-Carlo standard error."""
    losses = lm.eval(realize_array(_as_theta(e), batch.xs, spec), batch.ys)
    n = len(losses)
    se = float(np.std(losses, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return float(np.mean(losses)), se


class PotentialField:
    """Velocity potential ``g = delta R / delta pi`` of a frozen ensemble on a batch.

    The residuals ``r_j = d1(f(x_j), y_j)`` are computed once; evaluating ``g``
    or ``V = grad g`` at any set of particles is then a pure function.
    ``perturb`` adds ``perturb * theta`` to ``V`` (test-harness fault injection).
    """

    def __init__(self, batch: Batch, residuals: np.ndarray, activation: ActivationSpec = RELU,
                 loss: Optional[LossModel] = None, ensemble: Optional[Ensemble] = None,
                 perturb: float = 0.0):
        residuals = np.asarray(residuals, dtype=float).reshape(-1)
        if residuals.shape[0] != len(batch):
            raise ValueError("one residual per batch sample required")
        self.batch = batch
        self.residuals = residuals
        self.residuals.flags.writeable = False
        self.activation = activation
        self.loss = loss
        self.ensemble = ensemble
        self.perturb = perturb

    @classmethod
    def build(cls, ensemble: Union[Ensemble, np.ndarray], batch: Batch, loss: LossModel,
              activation: ActivationSpec = RELU, gates: Optional[np.ndarray] = None,
              perturb: float = 0.0) -> "PotentialField":
        theta = _as_theta(ensemble)
        f = realize_array(theta, batch.xs, activation, gates)
        ens = ensemble if isinstance(ensemble, Ensemble) else None
        return cls(batch, loss.d1(f, batch.ys), activation, loss, ens, perturb)

    def scaled(self, c: float) -> "PotentialField":
        return PotentialField(self.batch, c * self.residuals, self.activation, self.loss,
                              self.ensemble, self.perturb)

    @property
    def residual_sup(self) -> float:
        return float(np.max(np.abs(self.residuals)))

    def gates(self, theta) -> np.ndarray:
        return preactivations(_as_theta(theta), self.batch.xs) > 0

    def potential(self, p, gates: Optional[np.ndarray] = None):
        g = potential_array(_as_theta(p), self.batch.xs, self.residuals, self.activation, gates)
        return float(g[0]) if isinstance(p, Particle) else g

    def potential_grad(self, p, gates: Optional[np.ndarray] = None) -> np.ndarray:
        theta = _as_theta(p)
        V = potential_grad_array(theta, self.batch.xs, self.residuals, self.activation, gates)
        if self.perturb:
            V = V + self.perturb * theta
        return V[0] if isinstance(p, Particle) else V


def probe_sup(field: PotentialField, grid: np.ndarray) -> tuple[float, float]:
    """Sup over grid directions of ``|g|`` and ``|V|``."""
    grid = np.array(grid, dtype=float, ndmin=2)
    if grid.shape[0] < 1:
        raise ValueError("probe grid is empty")
    g = field.potential(grid)
    V = field.potential_grad(grid)
    return float(np.max(np.abs(g))), float(np.max(np.linalg.norm(V, axis=1)))


# --------------------------------------------------------------------------- probe grids

def cone_sphere_grid(size: int, d: int, seed: int) -> np.ndarray:
    """Uniform random unit vectors of the closed cone ``a^2 <= |w|^2 + b^2`` in ``R^{d+2}``."""
    rng = np.random.default_rng(seed)
    out = []
    have = 0
    while have < size:
        z = rng.standard_normal((2 * (size - have) + 8, d + 2))
        z = z[z[:, 0] ** 2 <= np.sum(z[:, 1:] ** 2, axis=1)]
        out.append(z)
        have += len(z)
    z = np.concatenate(out)[:size]
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def load_grid_csv(path: Union[str, Path]) -> np.ndarray:
    grid = np.loadtxt(path, delimiter=",", ndmin=2)
    norms = np.linalg.norm(grid, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-9):
        raise ValueError(f"{path}: probe directions must be unit vectors")
    if np.any(-grid[:, 0] ** 2 + np.sum(grid[:, 1:] ** 2, axis=1) < -1e-12):
        raise ValueError(f"{path}: probe directions must lie in the closed cone")
    return grid / norms[:, None]


def save_grid_csv(grid: np.ndarray, path: Union[str, Path]) -> None:
    np.savetxt(path, grid, delimiter=",", fmt="%.17g")
