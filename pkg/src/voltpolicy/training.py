"""Stochastic primal-dual training of inverter policies.

One scenario per iteration. Each step

1. evaluates the policy and solves the power flow at the resulting setpoints,
2. forms the adjoint of the sampled Lagrangian w.r.t. the policy outputs
   from analytic or two-point (zeroth-order) sensitivities and takes an Adam
   step on the weights (and on the CVaR offsets ``t`` for the chance
   formulation),
3. re-evaluates the *updated* policy on the same scenario and takes a
   projected dual ascent step with the fresh voltages.

Scenarios whose power flow does not converge are skipped (recourse).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .feeder import FeederModel
from .policy import Adam, PolicyNetwork, forward, vjp
from .powerflow import GridConditions, PowerFlowSolution, SensitivityUnavailable, sensitivities, solve
from .scenarios import ScenarioSet

__all__ = [
    "TrainConfig",
    "DualState",
    "PolicyController",
    "Trainer",
    "StepResult",
    "TrainingLog",
    "TrainingAborted",
    "RecourseEvent",
    "indicator",
    "hinge_constraints",
    "two_point_estimate",
    "zeroth_order_sensitivities",
    "averaged_step",
    "chance_step",
    "train",
]

logger = logging.getLogger(__name__)

FORMULATIONS = ("averaged", "chance")
GRADIENT_MODES = ("analytic", "zeroth_order")
DEFAULT_EPOCHS = {"averaged": 15, "chance": 20}
# The chance hinge values are a few mV on the bundled feeder; mu_0 = 1 leaves
# the multipliers far below the loss gradient within 20 epochs.
DEFAULT_MU_LAMBDA = {"averaged": 10.0, "chance": 100.0}


class TrainingAborted(RuntimeError):
    """Raised when recourse keeps failing or parameters turn non-finite."""


class RecourseEvent(RuntimeError):
    """A power-flow evaluation needed by the step did not converge."""


@dataclass
class TrainConfig:
    formulation: str = "averaged"
    alpha: float = 0.5
    epochs: int | None = None
    lr_w: float = 1e-3
    lr_t: float = 1e-3
    mu_lambda0: float | None = None
    gradient_mode: str = "analytic"
    epsilon: float = 0.1
    sigma_delta: float = 1.0
    zo_samples: int = 1
    seed: int = 0
    max_pf_iter: int = 20
    pf_tol: float = 1e-8
    recourse_budget: int = 10
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        aliases = {"avg": "averaged", "cc": "chance", "zeroth-order": "zeroth_order", "zo": "zeroth_order"}
        self.formulation = aliases.get(self.formulation, self.formulation)
        self.gradient_mode = aliases.get(self.gradient_mode, self.gradient_mode)
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.formulation == "chance" and not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.formulation]
        if self.mu_lambda0 is None:
            self.mu_lambda0 = DEFAULT_MU_LAMBDA[self.formulation]
        for name in ("lr_w", "lr_t", "mu_lambda0", "epsilon", "sigma_delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.zo_samples < 1 or self.recourse_budget < 1:
            raise ValueError("epochs >= 0, zo_samples >= 1 and recourse_budget >= 1 required")
        self.adam_betas = tuple(self.adam_betas)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DualState:
    lambda_low: np.ndarray
    lambda_high: np.ndarray
    t_low: np.ndarray
    t_high: np.ndarray
    mu0: float
    k: int = 0

    @classmethod
    def zeros(cls, n: int, mu0: float) -> "DualState":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n), mu0)

    def next_step_size(self) -> float:
        self.k += 1
        return self.mu0 / np.sqrt(self.k)


@dataclass
class PolicyController:
    """A network plus the wiring between scenarios and network inputs.

    Attributes
    ----------
    net : PolicyNetwork
    controlled : ndarray of int
        0-based positions of controlled inverters within buses 1..N.
    s_max : ndarray
        Inverter ratings in ``controlled`` order.
    pg_columns : ndarray of int
        Columns of the raw proxy vector holding the controlled inverters'
        solar output (fed to the output scaling).
    input_mean, input_scale : ndarray
        Standardization applied to the proxy before the first layer.
    """

    net: PolicyNetwork
    controlled: np.ndarray
    s_max: np.ndarray
    pg_columns: np.ndarray
    n_buses: int
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def features(self, phi) -> np.ndarray:
        x = np.asarray(phi, dtype=float)
        if self.input_mean is not None:
            x = (x - self.input_mean) / self.input_scale
        return x

    def forward(self, phi, return_cache=False):
        phi = np.asarray(phi, dtype=float)
        return forward(
            self.net, self.features(phi), phi[..., self.pg_columns], self.s_max, return_cache=return_cache
        )

    def expand(self, q_ctrl) -> np.ndarray:
        """Place controlled setpoints into a length-N vector (or rows of one)."""
        q_ctrl = np.asarray(q_ctrl, dtype=float)
        out = np.zeros(q_ctrl.shape[:-1] + (self.n_buses,))
        out[..., self.controlled] = q_ctrl
        return out


@dataclass
class StepResult:
    loss: float
    v: np.ndarray
    q: np.ndarray
    q_next: np.ndarray
    v_next: np.ndarray
    step_size: float


def indicator(x) -> np.ndarray:
    """Unit step with ``1(0) = 1``."""
    return (np.asarray(x) >= 0).astype(float)


def hinge_constraints(t_low, t_high, v, v_min, v_max, alpha):
    """Sampled CVaR constraint values ``(g_low, g_high)``."""
    g_low = np.maximum(t_low + v_min - v, 0.0) - alpha * t_low
    g_high = np.maximum(t_high + v - v_max, 0.0) - alpha * t_high
    return g_low, g_high


def two_point_estimate(func, q, epsilon, delta):
    """``(f(q + eps d) - f(q - eps d)) / (2 eps)`` times ``d^T``.

    Scalar ``f`` yields a vector; vector ``f`` yields a rank-one matrix.
    """
    q = np.asarray(q, dtype=float)
    delta = np.asarray(delta, dtype=float)
    diff = (np.asarray(func(q + epsilon * delta)) - np.asarray(func(q - epsilon * delta))) / (2 * epsilon)
    return np.multiply.outer(diff, delta)


def zeroth_order_sensitivities(
    feeder: FeederModel, theta: GridConditions, q, epsilon: float, delta, **solve_kw
):
    """Two-query estimates ``(dl_dq_hat, dv_dq_hat)`` from the power flow alone.

    Raises
    ------
    RecourseEvent
        If either perturbed power flow fails to converge.
    """
    q = np.asarray(q, dtype=float)
    delta = np.asarray(delta, dtype=float)
    sols = []
    for sign in (1.0, -1.0):
        sol = solve(feeder, theta, q + sign * epsilon * delta, **solve_kw)
        if not sol.converged:
            raise RecourseEvent("perturbed power flow diverged")
        sols.append(sol)
    scale = 1.0 / (2 * epsilon)
    dl = (sols[0].losses - sols[1].losses) * scale * delta
    dv = np.outer((sols[0].v - sols[1].v) * scale, delta)
    return dl, dv


class Trainer:
    """Owns the mutable training state for one policy."""

    def __init__(self, controller: PolicyController, feeder: FeederModel, config: TrainConfig):
        self.controller = controller
        self.feeder = feeder
        self.config = config
        n = feeder.n_buses
        self.dual = DualState.zeros(n, config.mu_lambda0)
        b1, b2 = config.adam_betas
        self.adam_w = Adam(config.lr_w, b1, b2, config.adam_eps)
        self.adam_t = Adam(config.lr_t, b1, b2, config.adam_eps)
        self.rng = np.random.default_rng(config.seed)
        self.v_min = feeder.v_min
        self.v_max = feeder.v_max
        self._last_solution: PowerFlowSolution | None = None
        self.recourse_events = 0
        self.steps = 0

    # -- power flow helpers ------------------------------------------------

    def _solve(self, theta, q_full, u0=None) -> PowerFlowSolution:
        """Solve from ``u0`` (flat start if None); on failure retry warm from
        the previous scenario's solution, then flat."""
        cfg = self.config
        starts = [u0]
        if self._last_solution is not None:
            starts.append(self._last_solution.u_bar)
        if u0 is not None:
            starts.append(None)
        for start in starts:
            sol = solve(self.feeder, theta, q_full, tol=cfg.pf_tol, max_iter=cfg.max_pf_iter, u0=start)
            if sol.converged:
                return sol
        raise RecourseEvent("power flow diverged")

    def _sensitivities(self, theta, q_full, sol):
        cfg = self.config
        if cfg.gradient_mode == "analytic":
            try:
                s = sensitivities(self.feeder, sol)
            except SensitivityUnavailable as exc:
                raise RecourseEvent(str(exc)) from exc
            return s.dl_dq, s.dv_dq
        n = self.feeder.n_buses
        ctrl = self.controller.controlled
        dl = np.zeros(n)
        dv = np.zeros((n, n))
        for _ in range(cfg.zo_samples):
            delta = np.zeros(n)
            delta[ctrl] = self.rng.normal(0.0, cfg.sigma_delta, size=ctrl.size)
            a, b = zeroth_order_sensitivities(
                self.feeder, theta, q_full, cfg.epsilon, delta,
                tol=cfg.pf_tol, max_iter=cfg.max_pf_iter, u0=sol.u_bar,
            )
            dl += a
            dv += b
        return dl / cfg.zo_samples, dv / cfg.zo_samples

    # -- one iteration ---------------------------------------------------------

    def step(self, phi, theta: GridConditions) -> StepResult:
        """One primal-dual iteration; raises RecourseEvent to request a skip."""
        cfg = self.config
        ctl = self.controller
        dual = self.dual
        ctrl = ctl.controlled

        q, cache = ctl.forward(phi, return_cache=True)
        q_full = ctl.expand(q)
        sol = self._solve(theta, q_full)
        v = sol.v
        dl_dq, dv_dq = self._sensitivities(theta, q_full, sol)

        if cfg.formulation == "averaged":
            weight_v = dual.lambda_high - dual.lambda_low
        else:
            ind_low = indicator(dual.t_low + self.v_min - v)
            ind_high = indicator(dual.t_high + v - self.v_max)
            weight_v = ind_high * dual.lambda_high - ind_low * dual.lambda_low
            grad_t = [
                (ind_low - cfg.alpha) * dual.lambda_low,
                (ind_high - cfg.alpha) * dual.lambda_high,
            ]
        adjoint = dl_dq[ctrl] + dv_dq[:, ctrl].T @ weight_v
        grads = vjp(ctl.net, cache, adjoint)
        if not self.adam_w.step(ctl.net.params, grads):
            raise TrainingAborted(f"non-finite weight gradient at step {self.steps}")
        ctl.net.touch()
        if cfg.formulation == "chance":
            self.adam_t.step([dual.t_low, dual.t_high], grad_t)

        # dual ascent with the updated weights
        q_next = ctl.forward(phi)
        sol_next = self._solve(theta, ctl.expand(q_next), u0=sol.u_bar)
        v_next = sol_next.v
        mu = dual.next_step_size()
        if cfg.formulation == "averaged":
            dual.lambda_low = np.maximum(dual.lambda_low + mu * (self.v_min - v_next), 0.0)
            dual.lambda_high = np.maximum(dual.lambda_high + mu * (v_next - self.v_max), 0.0)
        else:
            g_low, g_high = hinge_constraints(
                dual.t_low, dual.t_high, v_next, self.v_min, self.v_max, cfg.alpha
            )
            dual.lambda_low = np.maximum(dual.lambda_low + mu * g_low, 0.0)
            dual.lambda_high = np.maximum(dual.lambda_high + mu * g_high, 0.0)

        self._last_solution = sol
        self.steps += 1
        return StepResult(sol.losses, v, q, q_next, v_next, mu)


def averaged_step(trainer: Trainer, phi, theta) -> StepResult | None:
    """Averaged-formulation iteration; ``None`` when the sample is skipped."""
    if trainer.config.formulation != "averaged":
        raise ValueError("trainer is not configured for the averaged formulation")
    try:
        return trainer.step(phi, theta)
    except RecourseEvent:
        trainer.recourse_events += 1
        return None


def chance_step(trainer: Trainer, phi, theta) -> StepResult | None:
    """CVaR chance-constrained iteration; ``None`` when the sample is skipped."""
    if trainer.config.formulation != "chance":
        raise ValueError("trainer is not configured for the chance formulation")
    try:
        return trainer.step(phi, theta)
    except RecourseEvent:
        trainer.recourse_events += 1
        return None


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    COLUMNS = ("epoch", "step", "loss", "max_lambda_low", "max_lambda_high", "violations", "recourse_events")

    def append(self, **row):
        self.rows.append({c: row[c] for c in self.COLUMNS})

    def __len__(self):
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.header.items():
            buf.write(f"# {key}: {value}\n")
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def train(
    controller: PolicyController,
    feeder: FeederModel,
    dataset: ScenarioSet,
    config: TrainConfig,
    *,
    trainer: Trainer | None = None,
    callback=None,
):
    """Run ``config.epochs`` sweeps over ``dataset`` in its stored order.

    Returns ``(trainer, log)``; the controller's network is trained in place.
    ``callback(trainer, epoch)`` runs after every epoch.
    """
    trainer = trainer or Trainer(controller, feeder, config)
    log = TrainingLog(header={
        "formulation": config.formulation,
        "gradient_mode": config.gradient_mode,
        "adam": trainer.adam_w.state_dict(),
        "seed": config.seed,
        "dataset": dataset.digest(),
    })
    step_fn = averaged_step if config.formulation == "averaged" else chance_step
    phi = dataset.phi
    v_min, v_max = feeder.v_min, feeder.v_max

    for epoch in range(1, config.epochs + 1):
        losses = []
        violations = 0
        recourse_start = trainer.recourse_events
        consecutive = 0
        for i in range(len(dataset)):
            res = step_fn(trainer, phi[i], dataset.theta(i))
            if res is None:
                consecutive += 1
                if consecutive > config.recourse_budget:
                    raise TrainingAborted(
                        f"epoch {epoch}: {consecutive} consecutive power-flow failures"
                    )
                continue
            consecutive = 0
            losses.append(res.loss)
            violations += int(np.sum((res.v < v_min - 1e-9) | (res.v > v_max + 1e-9)))
        if not all(np.all(np.isfinite(p)) for p in controller.net.params):
            raise TrainingAborted(f"epoch {epoch}: non-finite parameters")
        d = trainer.dual
        log.append(
            epoch=epoch,
            step=trainer.steps,
            loss=float(np.mean(losses)) if losses else float("nan"),
            max_lambda_low=float(d.lambda_low.max()),
            max_lambda_high=float(d.lambda_high.max()),
            violations=violations,
            recourse_events=trainer.recourse_events - recourse_start,
        )
        logger.info("epoch %d: loss %.5f violations %d", epoch, log.rows[-1]["loss"], violations)
        if callback is not None:
            callback(trainer, epoch)
    return trainer, log
