"""scikit-learn style front end for policy training."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from .feeder import FeederModel, bundled_feeder_path, load_feeder
from .policy import init_weights, load_checkpoint, save_checkpoint
from .scenarios import MeterMask, ScenarioSet, apply_mask
from .training import PolicyController, TrainConfig, train
from .validation import check_scenarios, check_theta_matrix

__all__ = ["ProxyMasker", "VoltVarPolicy", "ZeroPolicy", "resolve_feeder"]


def resolve_feeder(feeder) -> FeederModel:
    if feeder is None:
        return load_feeder(bundled_feeder_path())
    if isinstance(feeder, FeederModel):
        return feeder
    return load_feeder(feeder)


class ProxyMasker(TransformerMixin, BaseEstimator):
    """Select the metered columns of flattened grid conditions.

    Parameters
    ----------
    metered_buses : sequence of int or None
        1-based bus ids; ``None`` keeps every bus.
    """

    def __init__(self, metered_buses=None):
        self.metered_buses = metered_buses

    def fit(self, X, y=None):
        X = check_theta_matrix(X)
        self.n_buses_ = X.shape[1] // 3
        if self.metered_buses is None:
            self.mask_ = MeterMask.full(self.n_buses_)
        else:
            self.mask_ = MeterMask(tuple(self.metered_buses))
        self.mask_.validate(self.n_buses_)
        self.columns_ = self.mask_.columns(self.n_buses_)
        return self

    def transform(self, X):
        check_is_fitted(self, "columns_")
        X = check_theta_matrix(X, n_buses=self.n_buses_)
        return X[:, self.columns_]


class VoltVarPolicy(BaseEstimator):
    """DNN reactive-power policy trained by stochastic primal-dual updates.

    ``fit`` takes grid conditions (a :class:`ScenarioSet` or an
    ``(n, 3N)`` array laid out as ``[p_c, q_c, p_g]``); ``predict`` returns
    setpoints of the controlled inverters and accepts either full grid
    conditions or already-masked proxies.

    Parameters
    ----------
    feeder : FeederModel, path or None
        ``None`` selects the bundled 37-bus feeder.
    formulation : {"averaged", "chance"}
    alpha : float
        Violation probability of the chance formulation.
    epochs : int or None
        Defaults to 15 (averaged) or 20 (chance).
    gradient_mode : {"analytic", "zeroth_order"}
    metered_buses : sequence of int or None
        Buses visible to the policy; must include every controlled inverter.
    init_scale : {"he", "unit"}
        ``"unit"`` draws N(0, 1) weights, which saturates the tanh output
        layer for standardized inputs; ``"he"`` scales by ``sqrt(2/fan_in)``.
    standardize : bool
        Standardize proxy inputs with training-set mean and deviation.
    """

    def __init__(
        self,
        feeder=None,
        formulation="averaged",
        alpha=0.5,
        epochs=None,
        lr_w=1e-3,
        lr_t=1e-3,
        mu_lambda0=None,
        gradient_mode="analytic",
        epsilon=0.1,
        sigma_delta=1.0,
        zo_samples=1,
        metered_buses=None,
        hidden_sizes=None,
        init_scale="he",
        standardize=True,
        max_pf_iter=20,
        recourse_budget=10,
        seed=0,
    ):
        self.feeder = feeder
        self.formulation = formulation
        self.alpha = alpha
        self.epochs = epochs
        self.lr_w = lr_w
        self.lr_t = lr_t
        self.mu_lambda0 = mu_lambda0
        self.gradient_mode = gradient_mode
        self.epsilon = epsilon
        self.sigma_delta = sigma_delta
        self.zo_samples = zo_samples
        self.metered_buses = metered_buses
        self.hidden_sizes = hidden_sizes
        self.init_scale = init_scale
        self.standardize = standardize
        self.max_pf_iter = max_pf_iter
        self.recourse_budget = recourse_budget
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            formulation=self.formulation,
            alpha=self.alpha,
            epochs=self.epochs,
            lr_w=self.lr_w,
            lr_t=self.lr_t,
            mu_lambda0=self.mu_lambda0,
            gradient_mode=self.gradient_mode,
            epsilon=self.epsilon,
            sigma_delta=self.sigma_delta,
            zo_samples=self.zo_samples,
            seed=self.seed,
            max_pf_iter=self.max_pf_iter,
            recourse_budget=self.recourse_budget,
        )

    def _build_controller(self, feeder: FeederModel, mask: MeterMask, phi) -> PolicyController:
        n = feeder.n_buses
        controlled = feeder.controlled_buses
        mask.validate(n, controlled)
        metered = list(mask.metered_buses)
        m = len(metered)
        pg_cols = np.array([2 * m + metered.index(b) for b in controlled], dtype=int)
        hidden = self.hidden_sizes or (3 * n, 2 * n)
        dims = [3 * m, *hidden, controlled.size]
        net = init_weights(dims, self.seed, scale=self.init_scale)
        mean = scale = None
        if self.standardize:
            scaler = StandardScaler().fit(phi)
            mean, scale = scaler.mean_, scaler.scale_
        return PolicyController(net, controlled - 1, feeder.s_max, pg_cols, n, mean, scale)

    def fit(self, X, y=None, *, callback=None):
        """Train on scenarios ``X`` in their stored order. ``y`` is ignored."""
        feeder = resolve_feeder(self.feeder)
        config = self._train_config()
        data = check_scenarios(X, feeder.n_buses)
        if len(data) == 0:
            raise ValueError("cannot fit on an empty scenario set")
        if self.metered_buses is None:
            mask = MeterMask.full(feeder.n_buses)
        else:
            mask = MeterMask(tuple(self.metered_buses))
        data = apply_mask(data, mask, feeder.controlled_buses)
        controller = self._build_controller(feeder, mask, data.phi)

        trainer, log = train(controller, feeder, data, config, callback=callback)
        self.feeder_ = feeder
        self.mask_ = mask
        self.controller_ = controller
        self.trainer_ = trainer
        self.dual_ = trainer.dual
        self.log_ = log
        self.config_ = config
        self.n_features_in_ = 3 * feeder.n_buses
        return self

    def _proxy(self, X):
        check_is_fitted(self, "controller_")
        if isinstance(X, ScenarioSet):
            return apply_mask(X, self.mask_, self.feeder_.controlled_buses).phi
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.feeder_.n_buses
        m = len(self.mask_)
        if X.shape[1] == 3 * n:
            return X[:, self.mask_.columns(n)]
        if X.shape[1] == 3 * m:
            return X
        raise ValueError(f"expected {3 * n} (grid conditions) or {3 * m} (proxy) features, got {X.shape[1]}")

    def predict(self, X) -> np.ndarray:
        """Setpoints of the controlled inverters, shape ``(n, C)``."""
        phi = self._proxy(X)
        return self.controller_.forward(phi)

    def setpoints(self, X) -> np.ndarray:
        """Setpoints expanded to all buses, shape ``(n, N)``."""
        return self.controller_.expand(self.predict(X))

    @property
    def net_(self):
        check_is_fitted(self, "controller_")
        return self.controller_.net

    def save(self, path, **extra) -> None:
        check_is_fitted(self, "controller_")
        c = self.controller_
        save_checkpoint(
            path,
            c.net,
            params=self.get_params(deep=False) | {"feeder": self.feeder_.name},
            metered_buses=list(self.mask_.metered_buses),
            controlled_buses=(c.controlled + 1).tolist(),
            s_max=c.s_max,
            input_mean=c.input_mean,
            input_scale=c.input_scale,
            epochs_trained=len(self.log_),
            lambda_low=self.dual_.lambda_low,
            lambda_high=self.dual_.lambda_high,
            t_low=self.dual_.t_low,
            t_high=self.dual_.t_high,
            **extra,
        )

    @classmethod
    def load(cls, path, feeder=None) -> "VoltVarPolicy":
        net, meta = load_checkpoint(path)
        params = dict(meta["params"])
        params.pop("feeder", None)
        est = cls(feeder=feeder, **{k: v for k, v in params.items() if k in cls._get_param_names()})
        fdr = resolve_feeder(feeder)
        controlled = np.array(meta["controlled_buses"], dtype=int)
        if not np.array_equal(controlled, fdr.controlled_buses):
            raise ValueError("checkpoint controlled buses do not match the feeder")
        mask = MeterMask(tuple(meta["metered_buses"]))
        metered = list(mask.metered_buses)
        m = len(metered)
        pg_cols = np.array([2 * m + metered.index(b) for b in controlled], dtype=int)
        mean = None if meta["input_mean"] is None else np.array(meta["input_mean"])
        scale = None if meta["input_scale"] is None else np.array(meta["input_scale"])
        est.feeder_ = fdr
        est.mask_ = mask
        est.controller_ = PolicyController(
            net, controlled - 1, np.array(meta["s_max"]), pg_cols, fdr.n_buses, mean, scale
        )
        est.metadata_ = meta
        est.n_features_in_ = 3 * fdr.n_buses
        return est


class ZeroPolicy:
    """No reactive compensation: every inverter runs at unity power factor."""

    def __init__(self, feeder: FeederModel):
        self.feeder_ = feeder

    def setpoints(self, X) -> np.ndarray:
        n = len(X) if isinstance(X, ScenarioSet) else np.atleast_2d(X).shape[0]
        return np.zeros((n, self.feeder_.n_buses))

