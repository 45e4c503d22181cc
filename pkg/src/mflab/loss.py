"""Convex losses with bounded derivative, their clipped versions and Bayes-optimal predictors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

KINDS = ("huber", "pseudo_huber", "softplus", "power")

# golden-section bracket and tolerance for augmented losses without a closed form
SEARCH_BRACKET = (-50.0, 50.0)
SEARCH_TOL = 1e-8


class MBRNotAttainedError(ValueError):
    """The Bayes-optimal predictor is infinite on a set of positive probability."""


@dataclass(frozen=True)
class LossModel:
    kind: str
    p: Optional[float] = None
    clip: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "power":
            if self.p is None or not 1 < self.p < np.inf:
                raise ValueError("power loss requires p in (1, inf)")
        elif self.p is not None:
            raise ValueError(f"{self.kind} loss takes no exponent")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip level S must be positive")

    @property
    def lipschitz(self) -> Optional[float]:
        """Uniform bound on ``|d1|``, or ``None`` when the derivative is unbounded."""
        if self.kind in ("huber", "pseudo_huber", "softplus"):
            return 1.0
        return None

    # plain loss and derivative in the first slot
    def raw(self, y, yp):
        r = np.subtract(y, yp, dtype=float)
        if self.kind == "huber":
            ar = np.abs(r)
            return np.where(ar < 1.0, 0.5 * r * r, ar - 0.5)
        if self.kind == "pseudo_huber":
            return np.sqrt(r * r + 1.0) - 1.0
        if self.kind == "softplus":
            return np.logaddexp(0.0, -np.multiply(y, yp, dtype=float))
        return np.abs(r) ** self.p / self.p

    def raw_d1(self, y, yp):
        r = np.subtract(y, yp, dtype=float)
        if self.kind == "huber":
            return np.clip(r, -1.0, 1.0)
        if self.kind == "pseudo_huber":
            return r / np.sqrt(r * r + 1.0)
        if self.kind == "softplus":
            yp = np.asarray(yp, dtype=float)
            return -yp * expit(-np.multiply(y, yp, dtype=float))
        return np.sign(r) * np.abs(r) ** (self.p - 1.0)

    def clip_eval(self, y, yp):
        """Loss continued affinely beyond ``|y| = S`` with the boundary slope."""
        if self.clip is None:
            raise ValueError("clip_eval needs a loss with clip level S")
        S = self.clip
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, -S, S)
        return self.raw(yc, yp) + self.raw_d1(yc, yp) * (y - yc)

    def clip_d1(self, y, yp):
        if self.clip is None:
            raise ValueError("clip_d1 needs a loss with clip level S")
        return self.raw_d1(np.clip(np.asarray(y, dtype=float), -self.clip, self.clip), yp)

    def eval(self, y, yp):
        """Loss value; the clipped loss when a clip level is set."""
        return self.raw(y, yp) if self.clip is None else self.clip_eval(y, yp)

    def d1(self, y, yp):
        return self.raw_d1(y, yp) if self.clip is None else self.clip_d1(y, yp)

    def __call__(self, y, yp):
        return self.eval(y, yp)


def augmented_loss(lm: LossModel, label_model, x) -> Callable[[float], float]:
    """``alpha -> E[loss(alpha, y) | x]`` for label models with a finite conditional law."""
    atoms, weights = label_model.conditional_atoms(x)

    def L(alpha: float) -> float:
        return float(np.dot(weights, lm.eval(alpha, atoms)))

    return L


def minimize_augmented(lm: LossModel, label_model, x) -> float:
    """Golden-section search of the augmented loss on a fixed bracket."""
    L = augmented_loss(lm, label_model, x)
    res = minimize_scalar(L, bracket=SEARCH_BRACKET, method="golden", tol=SEARCH_TOL)
    return float(np.clip(res.x, *SEARCH_BRACKET))


def bayes_optimal(lm: LossModel, label_model) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    """Pointwise minimizer ``f*`` of the augmented loss, or ``None`` if unsupported.

    Closed forms: log-odds for softplus with binary labels, the regression
    target for symmetric noise.  Binary labels with the other losses fall back
    to a numerical search per input.  Evaluating ``f*`` raises
    :class:`MBRNotAttainedError` where softplus meets a deterministic label.
    """
    kind = getattr(label_model, "kind", None)
    if kind == "binary":
        if lm.kind == "softplus":
            def f_star(X):
                lam = label_model.probability(np.atleast_2d(X))
                if np.any((lam <= 0.0) | (lam >= 1.0)):
                    raise MBRNotAttainedError(
                        "MBR not attained by finite f*: label probability is 0 or 1")
                return np.log(lam / (1.0 - lam))
            return f_star

        def f_search(X):
            X = np.atleast_2d(X)
            return np.array([minimize_augmented(lm, label_model, x) for x in X])
        return f_search
    if kind == "regression":
        if lm.kind == "softplus" or not label_model.symmetric_noise:
            return None
        return lambda X: label_model.target(np.atleast_2d(X))
    return None


def mbr_estimate(lm: LossModel, model, n: int, stream: int = 7919) -> tuple[float, float]:
    """Monte-Carlo minimum Bayes risk ``E[loss(f*(x), y)]`` with its standard error."""
    f_star = bayes_optimal(lm, model.label_model)
    if f_star is None:
        raise ValueError(f"no Bayes-optimal predictor for {lm.kind} with {model.label_model.kind} labels")
    batch = model.sample(n, stream)
    losses = lm.eval(f_star(batch.xs), batch.ys)
    se = float(np.std(losses, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return float(np.mean(losses)), se
