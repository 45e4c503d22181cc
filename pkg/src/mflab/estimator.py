"""scikit-learn style estimators trained by the particle gradient flow on a fixed dataset."""
from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Batch
from .field import ActivationSpec, realize_array
from .flow import BatchField, FlowConfig, step
from .loss import LossModel
from .params import init_omni


class _MeanFieldBase(BaseEstimator):
    def __init__(self, n_particles=256, loss="pseudo_huber", leak=0.0, dt=0.05, max_time=20.0,
                 integrator="rk4", batch_size=None, random_state=0):
        self.n_particles = n_particles
        self.loss = loss
        self.leak = leak
        self.dt = dt
        self.max_time = max_time
        self.integrator = integrator
        self.batch_size = batch_size
        self.random_state = random_state

    def _train(self, X, y):
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        seed = 0 if self.random_state is None else int(self.random_state)
        spec = ActivationSpec(self.leak)
        lm = LossModel(self.loss)
        cfg = FlowConfig(dt=self.dt, T=self.max_time, integrator=self.integrator)
        self.n_features_in_ = X.shape[1]
        e = init_omni(self.n_particles, X.shape[1], seed)
        full = Batch(X, y)
        rng = np.random.default_rng([seed, 1])
        risks = []
        for _ in range(cfg.n_steps):
            batch = full
            if self.batch_size is not None and self.batch_size < len(full):
                idx = rng.choice(len(full), self.batch_size, replace=False)
                batch = Batch(X[idx], y[idx])
            e = step(e, cfg, BatchField(batch, lm, spec))
            risks.append(float(np.mean(lm.eval(realize_array(e.theta, X, spec), y))))
        self.ensemble_ = e
        self.activation_ = spec
        self.risk_curve_ = np.array(risks)
        return self

    def _decision(self, X):
        check_is_fitted(self, "ensemble_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return realize_array(self.ensemble_.theta, X, self.activation_)


class MeanFieldRegressor(RegressorMixin, _MeanFieldBase):
    """Two-layer ReLU network ``f(x) = (1/m) sum_i a_i relu(w_i.x + b_i)`` fit by the particle flow."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.loss == "softplus":
            raise ValueError("softplus is a classification loss; use MeanFieldClassifier")
        return self._train(X, y.astype(float))

    def predict(self, X):
        return self._decision(X)


class MeanFieldClassifier(ClassifierMixin, _MeanFieldBase):
    """Binary classifier trained with the softplus loss on labels mapped to +-1."""

    def __init__(self, n_particles=256, loss="softplus", leak=0.0, dt=0.05, max_time=20.0,
                 integrator="rk4", batch_size=None, random_state=0):
        super().__init__(n_particles, loss, leak, dt, max_time, integrator, batch_size,
                         random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"binary targets required, got {len(self.classes_)} classes")
        return self._train(X, np.where(codes == 1, 1.0, -1.0))

    def decision_function(self, X):
        return self._decision(X)

    def predict_proba(self, X):
        p = expit(self._decision(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self._decision(X) > 0).astype(int)]
