"""Data distributions: input laws, conditional label models and the admissibility estimator.

All randomness flows from ``numpy.random.default_rng([seed, stream])``, so a
``(seed, stream, n)`` triple always reproduces the same batch bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ADMISSIBLE_STREAM = 104729
FIRST_MOMENT_STREAM = 15485863
DEFAULT_DELTAS = (1e-1, 1e-2, 1e-3)


def _unit_rows(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    z = rng.standard_normal((n, k))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


# --------------------------------------------------------------------------- input laws

@dataclass(frozen=True)
class GaussianMixture:
    means: np.ndarray
    scales: np.ndarray
    weights: np.ndarray
    kind: str = field(default="gaussian_mixture", init=False)

    def __post_init__(self):
        means = np.array(self.means, dtype=float, ndmin=2)
        scales = np.asarray(self.scales, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (means.shape[0] == scales.shape[0] == weights.shape[0]):
            raise ValueError("mixture needs one mean, scale and weight per component")
        if np.any(scales < 0) or np.any(weights < 0):
            raise ValueError("mixture scales and weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {weights.sum()}, not 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def standard(cls, d: int) -> "GaussianMixture":
        return cls(np.zeros((1, d)), [1.0], [1.0])

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def bounded(self) -> bool:
        return bool(np.all(self.scales == 0))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + self.scales[comp, None] * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class UniformSphere:
    dim: int
    radius: float = 1.0
    kind: str = field(default="uniform_sphere", init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    bounded = True

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.radius * _unit_rows(rng, n, self.dim)


@dataclass(frozen=True)
class UniformBall:
    dim: int
    radius: float = 1.0
    kind: str = field(default="uniform_ball", init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    bounded = True

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = _unit_rows(rng, n, self.dim)
        r = self.radius * rng.random(n) ** (1.0 / self.dim)
        return u * r[:, None]


@dataclass(frozen=True)
class Empirical:
    points: np.ndarray
    kind: str = field(default="empirical", init=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        if pts.shape[0] < 1:
            raise ValueError("empirical law needs at least one point")
        object.__setattr__(self, "points", pts)

    bounded = True

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.points[rng.integers(0, len(self.points), size=n)]


# --------------------------------------------------------------------------- label models

def constant_probability(p: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda X: np.full(np.atleast_2d(X).shape[0], float(p))


def halfspace_probability(pos: float, neg: float, axis: int = 0) -> Callable[[np.ndarray], np.ndarray]:
    """``pos`` where ``x[axis] > 0``, ``neg`` elsewhere."""
    return lambda X: np.where(np.atleast_2d(X)[:, axis] > 0, float(pos), float(neg))


@dataclass(frozen=True)
class BinaryLabels:
    """``y = +1`` with probability ``lam(x)``, ``y = -1`` otherwise."""

    lam: Callable[[np.ndarray], np.ndarray]
    kind: str = field(default="binary", init=False)

    def probability(self, X: np.ndarray) -> np.ndarray:
        p = np.asarray(self.lam(X), dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("label probability outside [0, 1]")
        return p

    def sample(self, rng: np.random.Generator, X: np.ndarray) -> np.ndarray:
        return np.where(rng.random(X.shape[0]) < self.probability(X), 1.0, -1.0)

    def conditional_atoms(self, x: np.ndarray):
        lam = float(self.probability(np.atleast_2d(x))[0])
        return np.array([1.0, -1.0]), np.array([lam, 1.0 - lam])


NOISES = ("none", "gaussian", "laplace", "uniform")


@dataclass(frozen=True)
class RegressionLabels:
    """``y = target(x) + scale * noise`` with a symmetric noise law."""

    target: Callable[[np.ndarray], np.ndarray]
    noise: str = "none"
    scale: float = 0.0
    kind: str = field(default="regression", init=False)

    def __post_init__(self):
        if self.noise not in NOISES:
            raise ValueError(f"unknown noise {self.noise!r}; expected one of {NOISES}")
        if self.scale < 0:
            raise ValueError("noise scale must be nonnegative")

    symmetric_noise = True

    def sample(self, rng: np.random.Generator, X: np.ndarray) -> np.ndarray:
        y = np.asarray(self.target(X), dtype=float).reshape(-1)
        n = X.shape[0]
        if self.noise == "none" or self.scale == 0:
            return y
        if self.noise == "gaussian":
            eps = rng.standard_normal(n)
        elif self.noise == "laplace":
            eps = rng.laplace(size=n)
        else:
            eps = rng.uniform(-1.0, 1.0, size=n)
        return y + self.scale * eps

    def conditional_atoms(self, x: np.ndarray):
        if self.noise != "none" and self.scale != 0:
            raise ValueError("conditional law of noisy regression labels is not atomic")
        return np.asarray(self.target(np.atleast_2d(x)), dtype=float).reshape(-1)[:1], np.array([1.0])


def zero_target(X: np.ndarray) -> np.ndarray:
    return np.zeros(np.atleast_2d(X).shape[0])


def linear_target(coef: Sequence[float], intercept: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    coef = np.asarray(coef, dtype=float)
    return lambda X: np.atleast_2d(X) @ coef + intercept


# --------------------------------------------------------------------------- data model

@dataclass
class Batch:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        self.xs = np.array(self.xs, dtype=float, ndmin=2)
        self.ys = np.asarray(self.ys, dtype=float).reshape(-1)
        if self.xs.shape[0] != self.ys.shape[0] or self.ys.shape[0] < 1:
            raise ValueError("batch needs equal, nonzero numbers of inputs and labels")

    def __len__(self) -> int:
        return self.ys.shape[0]


@dataclass
class DataModel:
    input_law: object
    label_model: object
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.input_law.dim

    @property
    def bounded(self) -> bool:
        """Compact support of inputs; labels are bounded unless regression noise is unbounded."""
        if not self.input_law.bounded:
            return False
        lm = self.label_model
        return lm.kind == "binary" or lm.noise in ("none", "uniform") or lm.scale == 0

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])

    def sample(self, n: int, stream: int = 0, strict: bool = False) -> Batch:
        if n < 1:
            raise ValueError("n must be at least 1")
        if strict and self.input_law.kind == "empirical":
            raise ValueError("empirical input laws are excluded in strict admissibility mode")
        rng = self.rng(stream)
        xs = self.input_law.sample(rng, n)
        return Batch(xs, self.label_model.sample(rng, xs))


def first_moment(model: DataModel, n: int, stream: int = FIRST_MOMENT_STREAM) -> float:
    """Monte-Carlo estimate of ``E[|x| + |y|]``."""
    batch = model.sample(n, stream)
    return float(np.mean(np.linalg.norm(batch.xs, axis=1) + np.abs(batch.ys)))


# --------------------------------------------------------------------------- admissibility

@dataclass
class AdmissibilityReport:
    deltas: np.ndarray
    ratio_max: np.ndarray
    variation: float
    growth_per_decade: float
    verdict: str

    def rows(self):
        return [(float(d), float(r)) for d, r in zip(self.deltas, self.ratio_max)]

    @property
    def decade_growth(self) -> np.ndarray:
        """Growth of ``ratio_max`` between consecutive deltas, normalized to one decade."""
        span = np.log10(self.deltas[:-1] / self.deltas[1:])
        return (self.ratio_max[1:] / self.ratio_max[:-1]) ** (1.0 / span)


def _quadrature(law, rng: np.random.Generator, n: int):
    if law.kind == "empirical":
        pts = law.points
        return pts, np.full(len(pts), 1.0 / len(pts))
    return law.sample(rng, n), np.full(n, 1.0 / n)


def difference_quotients(model: DataModel, pairs: int, n: int,
                         deltas: Sequence[float] = DEFAULT_DELTAS,
                         stream: int = ADMISSIBLE_STREAM) -> np.ndarray:
    """Max over random pairs of the weighted L1 distance between half-space indicators,
    divided by the distance of the normals, for each ``delta``.

    Each base hyperplane passes through ``d`` points drawn from the input law,
    which is where concentrated laws are worst.  Its unit normal ``(w, b)`` is
    moved along a great circle of ``S^d`` in a random tangent direction so that
    the chord length is exactly ``delta``.  The same pairs serve every delta.
    """
    if pairs < 1 or n < 1:
        raise ValueError("pairs and n must be positive")
    if any(d <= 0 or d >= 2 for d in deltas):
        raise ValueError("deltas must lie in (0, 2)")
    rng = model.rng(stream)
    law = model.input_law
    d = law.dim
    X, wts = _quadrature(law, rng, n)
    Xa = np.column_stack([X, np.ones(len(X))])
    wts = wts * np.sqrt(1.0 + np.sum(X**2, axis=1))

    base = np.empty((pairs, d + 1))
    for k in range(pairs):
        anchors = np.column_stack([law.sample(rng, d), np.ones(d)])
        # normal of the hyperplane through the anchors: null vector of the augmented rows
        _, sv, vt = np.linalg.svd(anchors)
        if sv[-1] > 1e-12 * sv[0]:
            candidate = vt[-1]
        else:
            candidate = rng.standard_normal(d + 1)
        base[k] = candidate / np.linalg.norm(candidate)
    v = rng.standard_normal(base.shape)
    v -= np.sum(v * base, axis=1, keepdims=True) * base
    v /= np.linalg.norm(v, axis=1, keepdims=True)

    ind0 = (Xa @ base.T) > 0
    out = np.empty(len(deltas))
    for k, delta in enumerate(deltas):
        angle = 2.0 * np.arcsin(delta / 2.0)
        pert = np.cos(angle) * base + np.sin(angle) * v
        flipped = ind0 != ((Xa @ pert.T) > 0)
        out[k] = np.max(wts @ flipped) / delta
    return out


def admissible(model: DataModel, pairs: int = 64, n: int = 200_000,
               deltas: Sequence[float] = DEFAULT_DELTAS,
               stream: int = ADMISSIBLE_STREAM) -> AdmissibilityReport:
    """Delta-sweep estimate of the half-space Lipschitz condition.

    ``pass`` when the max quotient varies by less than 3x across the sweep,
    ``fail`` when it grows at least 5x per decade of delta (roughly like
    ``1/delta``), ``inconclusive`` otherwise.  The verdict is advisory.
    """
    deltas = np.sort(np.asarray(deltas, dtype=float))[::-1]
    q = difference_quotients(model, pairs, n, deltas, stream)
    lo, hi = q.min(), q.max()
    variation = float(hi / lo) if lo > 0 else float("inf")
    decades = np.log10(deltas[0] / deltas[-1])
    if decades > 0 and q[0] > 0:
        growth = float((q[-1] / q[0]) ** (1.0 / decades))
    else:
        growth = float("nan")
    if variation < 3.0:
        verdict = "pass"
    elif growth >= 5.0:
        verdict = "fail"
    else:
        verdict = "inconclusive"
    return AdmissibilityReport(deltas, q, variation, growth, verdict)
