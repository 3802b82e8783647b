import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from voltpolicy import ProxyMasker, VoltVarPolicy, ZeroPolicy
from voltpolicy.scenarios import ScenarioError
from voltpolicy.validation import check_theta_matrix


@pytest.fixture(scope="module")
def small(splits):
    train, test = splits
    return train.subset(np.arange(40)), test.subset(np.arange(10))


@pytest.fixture(scope="module")
def fitted(feeder, small):
    return VoltVarPolicy(feeder=feeder, epochs=1, seed=3).fit(small[0])


def test_params_round_trip():
    est = VoltVarPolicy(formulation="chance", alpha=0.3, epochs=2)
    params = est.get_params()
    assert params["alpha"] == 0.3 and params["init_scale"] == "he"
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(alpha=0.7)
    assert twin.alpha == 0.7 and est.alpha == 0.3


def test_predict_shapes(feeder, fitted, small):
    _, test = small
    Q = fitted.predict(test)
    assert Q.shape == (10, 5)
    np.testing.assert_array_equal(fitted.predict(test.theta_matrix), Q)
    np.testing.assert_array_equal(fitted.predict(test.phi), Q)
    S = fitted.setpoints(test)
    assert S.shape == (10, 36)
    np.testing.assert_array_equal(S[:, feeder.controlled_buses - 1], Q)
    assert np.count_nonzero(S[:, np.setdiff1d(np.arange(36), feeder.controlled_buses - 1)]) == 0
    assert fitted.n_features_in_ == 108 and len(fitted.log_) == 1
    with pytest.raises(ValueError):
        fitted.predict(np.zeros((2, 7)))


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        VoltVarPolicy().predict(np.zeros((1, 108)))


def test_fit_validates_inputs(feeder, small):
    X = small[0].theta_matrix.copy()
    X[0, 0] = -1.0
    with pytest.raises(ValueError):
        VoltVarPolicy(feeder=feeder, epochs=0).fit(X)
    with pytest.raises(ValueError):
        VoltVarPolicy(feeder=feeder, epochs=0).fit(np.zeros((0, 108)))
    with pytest.raises(ScenarioError):
        VoltVarPolicy(feeder=feeder, epochs=0, metered_buses=[1, 2, 3]).fit(small[0])
    with pytest.raises(ValueError):
        check_theta_matrix(np.full((1, 6), np.nan))


def test_fit_accepts_arrays(feeder, small):
    a = VoltVarPolicy(feeder=feeder, epochs=1, seed=1).fit(small[0])
    b = VoltVarPolicy(feeder=feeder, epochs=1, seed=1).fit(small[0].theta_matrix)
    np.testing.assert_array_equal(a.predict(small[1]), b.predict(small[1]))


def test_save_load_round_trip(tmp_path, feeder, fitted, small):
    fitted.save(tmp_path / "ckpt.json", tag="unit")
    back = VoltVarPolicy.load(tmp_path / "ckpt.json", feeder)
    np.testing.assert_array_equal(back.predict(small[1]), fitted.predict(small[1]))
    assert back.metadata_["tag"] == "unit"
    assert back.get_params()["seed"] == 3


def test_masked_policy(feeder, small):
    mask = feeder.solar_buses.tolist()
    est = VoltVarPolicy(feeder=feeder, epochs=1, metered_buses=mask).fit(small[0])
    assert est.net_.layer_dims[0] == 3 * len(mask)
    assert est.predict(small[1]).shape == (10, 5)


def test_proxy_masker(small):
    X = small[0].theta_matrix
    out = ProxyMasker([1, 3]).fit_transform(X)
    np.testing.assert_array_equal(out, X[:, [0, 2, 36, 38, 72, 74]])
    np.testing.assert_array_equal(ProxyMasker().fit_transform(X), X)


def test_zero_policy(feeder, small):
    np.testing.assert_array_equal(ZeroPolicy(feeder).setpoints(small[1]), np.zeros((10, 36)))
