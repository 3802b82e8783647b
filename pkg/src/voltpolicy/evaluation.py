"""Evaluation harness: policy sweeps, per-scenario OPF baseline, timing."""
from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .feeder import FeederModel
from .policy import reactive_headroom
from .powerflow import GridConditions, SensitivityUnavailable, sensitivities, solve
from .scenarios import ScenarioSet

__all__ = [
    "EvalReport",
    "OPFResult",
    "evaluate_policy",
    "deterministic_opf",
    "opf_sweep",
    "timing_comparison",
    "violation_probabilities",
    "eval_threads",
]

VIOLATION_TOL = 1e-9
DEVIATION_DEFINITION = "v - 1.0 p.u."


def eval_threads() -> int:
    """Worker cap from ``VOLTPOLICY_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("VOLTPOLICY_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def violation_probabilities(v, v_min, v_max, tol=VIOLATION_TOL):
    """Per-bus sample frequencies ``(low, high, either)`` of limit violations."""
    v = np.atleast_2d(v)
    if v.shape[0] == 0:
        z = np.zeros(v.shape[1])
        return z, z.copy(), z.copy()
    low = v < v_min - tol
    high = v > v_max + tol
    return low.mean(axis=0), high.mean(axis=0), (low | high).mean(axis=0)


@dataclass
class EvalReport:
    strategy: str
    scenario_index: np.ndarray
    timestamps: np.ndarray
    losses: np.ndarray
    voltages: np.ndarray
    setpoints: np.ndarray
    divergent: list
    v_min: np.ndarray
    v_max: np.ndarray
    wall_clock: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def n_evaluated(self) -> int:
        return self.losses.shape[0]

    @property
    def mean_loss(self) -> float:
        return float(self.losses.mean()) if self.n_evaluated else float("nan")

    @property
    def mean_voltage(self) -> np.ndarray:
        return self.voltages.mean(axis=0)

    def violation_probability(self, kind: str = "either") -> np.ndarray:
        low, high, either = violation_probabilities(self.voltages, self.v_min, self.v_max)
        return {"low": low, "high": high, "either": either}[kind]

    @property
    def deviation(self) -> np.ndarray:
        return self.voltages - 1.0

    def deviation_quantiles(self, qs=(0.0, 0.25, 0.5, 0.75, 1.0)) -> np.ndarray:
        """Per-bus quantiles of ``v - 1``, shape ``(len(qs), N)``."""
        return np.quantile(self.deviation, qs, axis=0)

    def radar_pairs(self, kind="either"):
        p = self.violation_probability(kind)
        return [(int(b + 1), float(p[b])) for b in range(p.size)]

    def to_dict(self, include_timing: bool = True) -> dict:
        low, high, either = violation_probabilities(self.voltages, self.v_min, self.v_max)
        doc = {
            "strategy": self.strategy,
            "n_scenarios": int(self.n_evaluated + len(self.divergent)),
            "n_divergent": len(self.divergent),
            "divergent": [int(i) for i in self.divergent],
            "mean_loss": self.mean_loss,
            "losses": self.losses.tolist(),
            "scenario_index": self.scenario_index.tolist(),
            "timestamps": self.timestamps.tolist(),
            "voltages": self.voltages.tolist(),
            "mean_voltage": self.mean_voltage.tolist() if self.n_evaluated else [],
            "v_min": np.broadcast_to(self.v_min, self.voltages.shape[1:]).tolist(),
            "v_max": np.broadcast_to(self.v_max, self.voltages.shape[1:]).tolist(),
            "violation_probability": {"low": low.tolist(), "high": high.tolist(), "either": either.tolist()},
            "metadata": dict(self.metadata, deviation=DEVIATION_DEFINITION),
        }
        if include_timing:
            doc["wall_clock_s"] = self.wall_clock
        return doc


def _sweep(feeder, dataset, Q, strategy, threads, metadata):
    t0 = time.perf_counter()

    def run(i):
        sol = solve(feeder, dataset.theta(i), Q[i])
        return sol if sol.converged else None

    sols = _map(run, range(len(dataset)), threads)
    ok = [i for i, s in enumerate(sols) if s is not None]
    bad = [i for i, s in enumerate(sols) if s is None]
    n = feeder.n_buses
    report = EvalReport(
        strategy=strategy,
        scenario_index=np.array(ok, dtype=int),
        timestamps=dataset.timestamps[ok] if ok else np.zeros(0, dtype=int),
        losses=np.array([sols[i].losses for i in ok]),
        voltages=np.array([sols[i].v for i in ok]).reshape(len(ok), n),
        setpoints=np.asarray(Q)[ok].reshape(len(ok), n),
        divergent=bad,
        v_min=feeder.v_min,
        v_max=feeder.v_max,
        metadata=dict(metadata, dataset=dataset.digest()),
    )
    report.wall_clock = time.perf_counter() - t0
    return report


def evaluate_policy(policy, feeder: FeederModel, dataset: ScenarioSet, *, strategy=None, threads=None, metadata=None):
    """Apply ``policy`` to every scenario and solve the resulting power flows.

    ``policy`` is anything with ``setpoints(dataset) -> (n, N)`` (a fitted
    :class:`~voltpolicy.estimator.VoltVarPolicy` or a ``ZeroPolicy``), or
    ``None`` for no compensation. Divergent scenarios are listed in
    ``report.divergent``, never dropped silently.
    """
    if len(dataset) == 0:
        raise ValueError("empty scenario set")
    if dataset.n_buses != feeder.n_buses:
        raise ValueError("scenario set and feeder disagree on N")
    if policy is None:
        Q = np.zeros((len(dataset), feeder.n_buses))
        strategy = strategy or "no_compensation"
    else:
        Q = np.asarray(policy.setpoints(dataset), dtype=float)
        strategy = strategy or type(policy).__name__
    if Q.shape != (len(dataset), feeder.n_buses):
        raise ValueError(f"policy returned setpoints of shape {Q.shape}")
    report = _sweep(feeder, dataset, Q, strategy, threads or eval_threads(), metadata or {})
    if report.n_evaluated == 0:
        raise RuntimeError("power flow diverged on every scenario")
    return report


# -- per-scenario OPF baseline ------------------------------------------------

@dataclass
class OPFResult:
    q: np.ndarray
    losses: float
    v: np.ndarray
    feasible: bool
    converged: bool
    iterations: int
    objective_trace: list = field(default_factory=list)  # one list per subproblem


def deterministic_opf(
    feeder: FeederModel,
    theta: GridConditions,
    *,
    tol_v: float = 1e-4,
    rho: float = 1e2,
    rho_max: float = 1e8,
    outer_iter: int = 30,
    inner_iter: int = 200,
    q0=None,
) -> OPFResult:
    """Loss-minimizing setpoints for one scenario under hard voltage limits.

    Augmented-Lagrangian method: each subproblem minimizes
    ``loss + (rho/2) * sum([y/rho + g]_+^2)`` over the inverter capability
    box with L-BFGS-B (projected quasi-Newton steps), using the analytic
    sensitivities for gradients. Accepted iterates never increase the
    subproblem objective (up to power-flow round-off); ``objective_trace`` holds one list of merit
    values per subproblem, starting at its initial point.

    The result is flagged infeasible when voltages end outside their limits
    by more than ``tol_v``.
    """
    ctrl = feeder.controlled_buses - 1
    n = feeder.n_buses
    bound = reactive_headroom(feeder.s_max, theta.p_g[ctrl])
    v_min, v_max = feeder.v_min, feeder.v_max
    q = np.zeros(ctrl.size) if q0 is None else np.clip(np.asarray(q0, dtype=float), -bound, bound)
    y_low = np.zeros(n)
    y_high = np.zeros(n)
    trace = []
    cache = {}
    warm = {"u": None}

    def expand(qc):
        full = np.zeros(n)
        full[ctrl] = qc
        return full

    def evaluate(qc):
        key = qc.tobytes()
        if key not in cache:
            sol = solve(feeder, theta, expand(qc), u0=warm["u"])
            if not sol.converged:
                sol = solve(feeder, theta, expand(qc))
            if sol.converged:
                warm["u"] = sol.u_bar
            cache.clear()
            cache[key] = sol
        return cache[key]

    def merit_and_grad(qc):
        sol = evaluate(qc)
        if not sol.converged:
            raise _PowerFlowFailure
        v = sol.v
        a = np.maximum(y_high / rho + v - v_max, 0.0)
        b = np.maximum(y_low / rho + v_min - v, 0.0)
        f = sol.losses + 0.5 * rho * (a @ a + b @ b)
        s = sensitivities(feeder, sol)
        w = rho * (a - b)
        return f, s.dl_dq[ctrl] + s.dv_dq[:, ctrl].T @ w

    sol = evaluate(q)
    if not sol.converged:
        return OPFResult(q, float("nan"), sol.v, False, False, 0)
    total = 0
    converged = False
    prev_viol = np.inf
    box = list(zip(-bound, bound))
    if not np.any(bound > 0):
        outer_iter = 0
    for _ in range(outer_iter):
        sub = [merit_and_grad(q)[0]]
        try:
            res = optimize.minimize(
                merit_and_grad, q, jac=True, method="L-BFGS-B", bounds=box,
                options={"maxiter": inner_iter, "ftol": 1e-15, "gtol": 1e-10},
                callback=lambda xk: sub.append(merit_and_grad(xk)[0]),
            )
        except (_PowerFlowFailure, SensitivityUnavailable):
            break
        trace.append(sub)
        total += int(res.get("nit", 0))
        if res.fun <= sub[0]:
            q = np.clip(res.x, -bound, bound)
        sol = evaluate(q)
        v = sol.v
        viol = max(float(np.max(v - v_max)), float(np.max(v_min - v)), 0.0)
        y_high = np.maximum(y_high + rho * (v - v_max), 0.0)
        y_low = np.maximum(y_low + rho * (v_min - v), 0.0)
        if viol <= 0.1 * tol_v and res.success:
            converged = True
            break
        if viol > 0.25 * prev_viol:
            rho = min(rho * 10.0, rho_max)
        prev_viol = viol
    sol = evaluate(q)
    v = sol.v
    feasible = bool(np.all(v <= v_max + tol_v) and np.all(v >= v_min - tol_v))
    return OPFResult(q, sol.losses, v, feasible, converged, total, trace)


class _PowerFlowFailure(RuntimeError):
    pass


def opf_sweep(feeder: FeederModel, dataset: ScenarioSet, *, threads=None, metadata=None) -> EvalReport:
    """Per-scenario deterministic OPF over a dataset, as an :class:`EvalReport`."""
    threads = threads or eval_threads()
    ctrl = feeder.controlled_buses - 1
    t0 = time.perf_counter()
    results = _map(lambda i: deterministic_opf(feeder, dataset.theta(i)), range(len(dataset)), threads)
    elapsed = time.perf_counter() - t0
    n = feeder.n_buses
    ok = [i for i, r in enumerate(results) if np.isfinite(r.losses)]
    bad = [i for i, r in enumerate(results) if not np.isfinite(r.losses)]
    Q = np.zeros((len(ok), n))
    for row, i in enumerate(ok):
        Q[row, ctrl] = results[i].q
    report = EvalReport(
        strategy="deterministic_opf",
        scenario_index=np.array(ok, dtype=int),
        timestamps=dataset.timestamps[ok] if ok else np.zeros(0, dtype=int),
        losses=np.array([results[i].losses for i in ok]),
        voltages=np.array([results[i].v for i in ok]).reshape(len(ok), n),
        setpoints=Q,
        divergent=bad,
        v_min=feeder.v_min,
        v_max=feeder.v_max,
        metadata=dict(
            metadata or {},
            dataset=dataset.digest(),
            infeasible=[int(i) for i in ok if not results[i].feasible],
        ),
    )
    report.wall_clock = elapsed
    return report


def timing_comparison(policy, feeder: FeederModel, dataset: ScenarioSet):
    """Wall-clock ``(t_dnn, t_opf)``: forward passes only vs. an OPF per scenario."""
    if len(dataset) == 0:
        return 0.0, 0.0
    t0 = time.perf_counter()
    for i in range(len(dataset)):
        policy.predict(dataset.theta_matrix[i : i + 1])
    t_dnn = time.perf_counter() - t0
    t0 = time.perf_counter()
    for i in range(len(dataset)):
        deterministic_opf(feeder, dataset.theta(i))
    t_opf = time.perf_counter() - t0
    return t_dnn, t_opf


# -- serialization ---------------------------------------------------------------

def write_report(path, reports: dict, *, include_timing=True, extra=None) -> None:
    doc = {"strategies": {k: r.to_dict(include_timing) for k, r in reports.items()}}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def plot_extracts(reports: dict) -> dict:
    """CSV text for loss timelines, per-bus deviation quantiles and radar pairs.

    Strategies are written in name order.
    """
    reports = dict(sorted(reports.items()))
    out = {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "timestamp_index", "mean_loss"])
    for name, r in reports.items():
        for t in np.unique(r.timestamps):
            w.writerow([name, int(t), repr(float(r.losses[r.timestamps == t].mean()))])
    out["losses_timeline.csv"] = buf.getvalue()

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "bus", "min", "q1", "median", "q3", "max"])
    for name, r in reports.items():
        qs = r.deviation_quantiles()
        for b in range(qs.shape[1]):
            w.writerow([name, b + 1] + [repr(float(x)) for x in qs[:, b]])
    out["deviation_quantiles.csv"] = buf.getvalue()

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "bus", "violation_probability"])
    for name, r in reports.items():
        for bus, p in r.radar_pairs():
            w.writerow([name, bus, repr(p)])
    out["radar.csv"] = buf.getvalue()
    return out


__all__ += ["write_report", "plot_extracts"]
