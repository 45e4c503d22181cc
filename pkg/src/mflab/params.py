"""Parameter space of two-layer networks: particles, ensembles and the cone geometry.

A neuron is ``theta = (a, w, b)`` with output weight ``a``, inner weight ``w``
and bias ``b``.  Ensembles store all particles as one ``(m, d + 2)`` array with
columns ``[a, w_1, ..., w_d, b]``; :class:`Particle` is the single-neuron view.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np


def minkowski_norms(theta: np.ndarray) -> np.ndarray:
    """Row-wise ``-a**2 + |w|**2 + b**2`` for an ``(m, d + 2)`` array."""
    theta = np.atleast_2d(theta)
    return -theta[:, 0] ** 2 + np.sum(theta[:, 1:] ** 2, axis=1)


@dataclass(frozen=True)
class Particle:
    a: float
    w: np.ndarray
    b: float
    m0: float = field(default=np.nan)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        if not (np.isfinite(self.a) and np.isfinite(self.b) and np.all(np.isfinite(w))):
            raise ValueError("particle coordinates must be finite")
        if np.isnan(self.m0):
            object.__setattr__(self, "m0", -self.a**2 + float(w @ w) + self.b**2)

    @classmethod
    def from_vector(cls, theta: Sequence[float], m0: float = np.nan) -> "Particle":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[0], theta[1:-1], theta[-1], m0)

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.a], self.w, [self.b]])


class Ensemble:
    """Empirical parameter measure ``(1/m) sum_i delta_{theta_i}`` with uniform weights.

    ``m0`` holds the Minkowski norm of each particle at creation; it is carried
    unchanged through :func:`mflab.flow.step` so drift can be audited at any time.
    """

    def __init__(self, theta: np.ndarray, m0: np.ndarray | None = None, seed: int | None = None):
        theta = np.array(theta, dtype=float, ndmin=2)
        if theta.shape[0] < 1 or theta.shape[1] < 3:
            raise ValueError(f"theta must have shape (m >= 1, d + 2 >= 3), got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("ensemble contains non-finite coordinates")
        self.theta = theta
        self.theta.flags.writeable = False
        if m0 is None:
            m0 = minkowski_norms(theta)
        self.m0 = np.array(m0, dtype=float).reshape(-1)
        if self.m0.shape[0] != theta.shape[0]:
            raise ValueError("m0 must have one entry per particle")
        self.m0.flags.writeable = False
        self.seed = seed

    @classmethod
    def from_particles(cls, particles: Iterable[Particle], seed: int | None = None) -> "Ensemble":
        particles = list(particles)
        if not particles:
            raise ValueError("an ensemble needs at least one particle")
        dims = {p.dim for p in particles}
        if len(dims) != 1:
            raise ValueError(f"particles have mixed dimensions {sorted(dims)}")
        theta = np.stack([p.as_vector() for p in particles])
        return cls(theta, np.array([p.m0 for p in particles]), seed)

    def with_theta(self, theta: np.ndarray) -> "Ensemble":
        """New ensemble at positions ``theta`` keeping the creation-time ``m0``."""
        return Ensemble(theta, self.m0, self.seed)

    @property
    def m(self) -> int:
        return self.theta.shape[0]

    @property
    def dim(self) -> int:
        return self.theta.shape[1] - 2

    @property
    def particles(self) -> List[Particle]:
        return [Particle.from_vector(t, m0) for t, m0 in zip(self.theta, self.m0)]

    def __len__(self) -> int:
        return self.m

    def __repr__(self) -> str:
        return f"Ensemble(m={self.m}, d={self.dim}, seed={self.seed})"


def minkowski(p: Particle) -> float:
    return -p.a**2 + float(p.w @ p.w) + p.b**2


def in_cone(p: Particle, tol: float = 0.0) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return minkowski(p) >= -tol


def sym_flip(p: Particle) -> Particle:
    return Particle(-p.a, p.w.copy(), p.b)


def init_omni(m: int, d: int, seed: int) -> Ensemble:
    """Omni-directional initialization: ``a ~ U[-1, 1]``, ``(w, b) ~ U(S^d)``.

    Every particle satisfies ``a**2 <= 1 = |w|**2 + b**2``, so the ensemble lies
    in the closed cone.  The sphere is sampled by normalizing Gaussian vectors.
    """
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, size=m)
    wb = rng.standard_normal((m, d + 1))
    wb /= np.linalg.norm(wb, axis=1, keepdims=True)
    return Ensemble(np.column_stack([a, wb]), seed=seed)


def second_moment(e: Ensemble) -> float:
    return float(np.mean(np.sum(e.theta**2, axis=1)))


def barron_estimate(e: Ensemble) -> float:
    """Path-norm upper estimate ``(1/m) sum |a_i| (|w_i| + |b_i|)``."""
    a = np.abs(e.theta[:, 0])
    return float(np.mean(a * (np.linalg.norm(e.theta[:, 1:-1], axis=1) + np.abs(e.theta[:, -1]))))


def cap_mass(e: Ensemble, direction: np.ndarray, cos_angle: float) -> float:
    """Fraction of particles in the open cone ``{theta . u > cos_angle |theta|}``."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    norms = np.linalg.norm(e.theta, axis=1)
    return float(np.mean(e.theta @ u > cos_angle * norms))


@dataclass
class SphereMeasure:
    """Finite measure on the unit sphere of parameter space, as atoms with masses."""

    directions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.directions = np.array(self.directions, dtype=float, ndmin=2)
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if self.masses.size == 0:
            self.directions = self.directions.reshape(0, self.directions.shape[-1])
            return
        if self.directions.shape[0] != self.masses.shape[0]:
            raise ValueError("one mass per direction required")
        if np.any(self.masses < 0):
            raise ValueError("masses must be nonnegative")
        if not np.allclose(np.linalg.norm(self.directions, axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("directions must have unit norm")

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def __len__(self) -> int:
        return self.masses.shape[0]


def sphere_project(e: Ensemble) -> SphereMeasure:
    """Push ``|theta|^2 * pi`` forward to the unit sphere; zero particles carry no atom."""
    norms = np.linalg.norm(e.theta, axis=1)
    keep = norms > 0
    return SphereMeasure(e.theta[keep] / norms[keep, None], norms[keep] ** 2 / e.m)


def reparametrize_minimizer(s: SphereMeasure, dim: int | None = None) -> Ensemble:
    """Uniform-weight ensemble whose realization equals that of ``s``.

    Atom ``(u_k, mu_k)`` of a ``K``-atom measure becomes the particle
    ``u_k * sqrt(K * mu_k)``; two-homogeneity of the activation turns the
    ``1/K`` weight back into ``mu_k``.  The empty measure maps to the single
    zero particle, which needs ``dim`` when ``s`` carries no direction.
    """
    if len(s) == 0 or s.total_mass == 0:
        if dim is None:
            if s.directions.shape[-1] < 3:
                raise ValueError("dim is required to realize the empty measure")
            dim = s.directions.shape[-1] - 2
        return Ensemble(np.zeros((1, dim + 2)))
    k = len(s)
    theta = s.directions * np.sqrt(k * s.masses)[:, None]
    return Ensemble(theta)


def ensemble_header(d: int) -> List[str]:
    return ["a"] + [f"w_{i}" for i in range(1, d + 1)] + ["b", "m0"]


def write_ensemble_csv(e: Ensemble, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ensemble_header(e.dim))
        for row, m0 in zip(e.theta, e.m0):
            writer.writerow([f"{v:.17g}" for v in row] + [f"{m0:.17g}"])


def read_ensemble_csv(path: str | Path, seed: int | None = None) -> Ensemble:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 3
        if d < 1 or header != ensemble_header(d):
            raise ValueError(f"{path}: unexpected ensemble header {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row])
    if rows.size == 0:
        raise ValueError(f"{path}: no particles")
    return Ensemble(rows[:, :-1], rows[:, -1], seed)
