import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mflab.estimator import MeanFieldClassifier, MeanFieldRegressor


@pytest.fixture
def xor_free_data(rng):
    X = rng.uniform(-1, 1, size=(300, 2))
    return X, np.maximum(X[:, 0], 0) - 0.5 * np.maximum(-X[:, 1], 0)


def test_regressor_fits_relu_target(xor_free_data):
    X, y = xor_free_data
    est = MeanFieldRegressor(n_particles=128, max_time=20, dt=0.1).fit(X, y)
    assert est.risk_curve_[-1] < est.risk_curve_[0]
    assert est.score(X, y) > 0.8
    assert est.predict(X).shape == (300,)


def test_get_params_and_clone():
    est = MeanFieldRegressor(n_particles=7, dt=0.2)
    params = est.get_params()
    assert params["n_particles"] == 7 and params["dt"] == 0.2
    assert clone(est).get_params() == params


def test_classifier_labels_and_proba(rng):
    X = rng.standard_normal((200, 2))
    y = np.where(X[:, 0] + 0.2 * X[:, 1] > 0, "pos", "neg")
    clf = MeanFieldClassifier(n_particles=64, max_time=10, dt=0.1).fit(X, y)
    assert set(clf.predict(X)) <= {"pos", "neg"}
    assert clf.score(X, y) > 0.9
    proba = clf.predict_proba(X)
    assert np.allclose(proba.sum(axis=1), 1)


def test_minibatch_fit_is_seeded(xor_free_data):
    X, y = xor_free_data
    a = MeanFieldRegressor(n_particles=16, max_time=1, batch_size=32, random_state=3).fit(X, y)
    b = MeanFieldRegressor(n_particles=16, max_time=1, batch_size=32, random_state=3).fit(X, y)
    assert np.array_equal(a.predict(X), b.predict(X))


def test_validation(rng):
    with pytest.raises(NotFittedError):
        MeanFieldRegressor().predict(np.zeros((2, 2)))
    X = rng.standard_normal((20, 2))
    est = MeanFieldRegressor(n_particles=4, max_time=0.5, dt=0.1).fit(X, X[:, 0])
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MeanFieldRegressor().fit(X, np.full(20, np.nan))
    with pytest.raises(ValueError):
        MeanFieldClassifier(max_time=0.5).fit(X, np.arange(20) % 3)
    with pytest.raises(ValueError):
        MeanFieldRegressor(loss="softplus").fit(X, X[:, 0])
