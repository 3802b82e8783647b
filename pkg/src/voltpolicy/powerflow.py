"""Rectangular-coordinate AC power flow and inverse-function sensitivities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .feeder import FeederModel

__all__ = [
    "GridConditions",
    "PowerFlowSolution",
    "Sensitivities",
    "SensitivityUnavailable",
    "flat_start",
    "solve",
    "injection_jacobian",
    "sensitivities",
]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 20


class SensitivityUnavailable(RuntimeError):
    """The injection Jacobian is singular (or the solution did not converge)."""


@dataclass(frozen=True)
class GridConditions:
    """Loads and solar generation at buses 1..N, in p.u."""

    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray

    def __post_init__(self):
        for name in ("p_c", "q_c", "p_g"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.p_c.shape
        if self.q_c.shape != n or self.p_g.shape != n or len(n) != 1:
            raise ValueError("p_c, q_c and p_g must be 1-D vectors of equal length")

    @classmethod
    def zeros(cls, n: int) -> "GridConditions":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n))

    @property
    def n_buses(self) -> int:
        return self.p_c.shape[0]


@dataclass
class PowerFlowSolution:
    u_bar: np.ndarray
    losses: float
    iterations: int
    converged: bool
    residual: float
    jacobian: np.ndarray | None = None

    @property
    def n_buses(self) -> int:
        return self.u_bar.shape[0] // 2 - 1

    @property
    def u(self) -> np.ndarray:
        """Rectangular state without the two substation entries."""
        n = self.n_buses
        return np.concatenate([self.u_bar[1 : n + 1], self.u_bar[n + 2 :]])

    @property
    def v(self) -> np.ndarray:
        n = self.n_buses
        return np.hypot(self.u_bar[1 : n + 1], self.u_bar[n + 2 :])

    @property
    def v_complex(self) -> np.ndarray:
        n = self.n_buses
        return self.u_bar[: n + 1] + 1j * self.u_bar[n + 1 :]


@dataclass(frozen=True)
class Sensitivities:
    """Derivatives of voltage magnitudes and losses w.r.t. reactive injections."""

    dv_dq: np.ndarray
    dl_dq: np.ndarray


def flat_start(n_buses: int) -> np.ndarray:
    u_bar = np.zeros(2 * n_buses + 2)
    u_bar[: n_buses + 1] = 1.0
    return u_bar


def _state_rows(n: int) -> np.ndarray:
    """Indices of p_1..p_N, q_1..q_N inside the 2N+2 injection vector."""
    return np.r_[1 : n + 1, n + 2 : 2 * n + 2]


def _jacobian(feeder: FeederModel, u_bar: np.ndarray) -> np.ndarray:
    idx = _state_rows(feeder.n_buses)
    return feeder.injection_gradients(u_bar)[np.ix_(idx, idx)]


def solve(
    feeder: FeederModel,
    theta: GridConditions,
    q_g,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    u0: np.ndarray | None = None,
) -> PowerFlowSolution:
    """Newton-Raphson power flow with the substation fixed at ``1 + 0j``.

    Parameters
    ----------
    feeder : FeederModel
    theta : GridConditions
    q_g : array_like, shape (N,)
        Inverter reactive injections; zero at buses without inverters.
    tol : float
        Infinity-norm bound on the injection mismatch.
    max_iter : int
    u0 : ndarray, optional
        Initial ``u_bar``; flat start when omitted. The substation entries
        are overwritten.

    Returns
    -------
    PowerFlowSolution
        ``converged`` is False when the mismatch is still above ``tol``
        after ``max_iter`` updates or the Jacobian turns singular.
    """
    n = feeder.n_buses
    q_g = np.asarray(q_g, dtype=float)
    if theta.n_buses != n or q_g.shape != (n,):
        raise ValueError(f"grid conditions and setpoints must have length {n}")
    spec = np.concatenate([theta.p_g - theta.p_c, q_g - theta.q_c])
    idx = _state_rows(n)

    u_bar = flat_start(n) if u0 is None else np.array(u0, dtype=float)
    u_bar[0], u_bar[n + 1] = 1.0, 0.0

    iterations = 0
    while True:
        mismatch = feeder.injections(u_bar)[idx] - spec
        residual = float(np.max(np.abs(mismatch))) if n else 0.0
        if not np.isfinite(residual):
            break
        if residual < tol:
            J = _jacobian(feeder, u_bar)
            return PowerFlowSolution(u_bar, feeder.losses(u_bar), iterations, True, residual, J)
        if iterations >= max_iter:
            break
        J = _jacobian(feeder, u_bar)
        try:
            with np.errstate(all="raise"):
                step = linalg.solve(J, mismatch, check_finite=False)
        except (linalg.LinAlgError, FloatingPointError):
            break
        u_bar[idx] -= step
        iterations += 1
    return PowerFlowSolution(u_bar, float("nan"), iterations, False, residual)


def injection_jacobian(feeder: FeederModel, solution: PowerFlowSolution) -> np.ndarray:
    """2N x 2N Jacobian of ``(p_1..p_N, q_1..q_N)`` w.r.t. ``u``.

    Row ``i`` is ``2 u_bar^T M_i`` with the substation columns dropped.
    """
    if solution.jacobian is not None:
        return solution.jacobian
    return _jacobian(feeder, solution.u_bar)


def sensitivities(feeder: FeederModel, solution: PowerFlowSolution) -> Sensitivities:
    """Voltage and loss sensitivities to reactive injections at a solution.

    The reactive columns of the inverse injection Jacobian give ``du/dq``;
    magnitudes and losses follow by the chain rule.

    Raises
    ------
    SensitivityUnavailable
        If the solution did not converge or the Jacobian is singular.
    """
    if not solution.converged:
        raise SensitivityUnavailable("power flow did not converge")
    n = feeder.n_buses
    J = injection_jacobian(feeder, solution)
    rhs = np.zeros((2 * n, n))
    rhs[n:, :] = np.eye(n)
    try:
        with np.errstate(all="raise"):
            lu = linalg.lu_factor(J, check_finite=False)
            du_dq = linalg.lu_solve(lu, rhs, check_finite=False)
    except (linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        raise SensitivityUnavailable(f"singular injection Jacobian: {exc}") from exc
    if not np.all(np.isfinite(du_dq)) or np.any(np.abs(np.diag(lu[0])) < 1e-14):
        raise SensitivityUnavailable("singular injection Jacobian")

    u_bar = solution.u_bar
    re, im = u_bar[1 : n + 1], u_bar[n + 2 :]
    v = np.hypot(re, im)
    # dv_n/du is sparse: only the real and imaginary parts of bus n
    dv_dq = (re / v)[:, None] * du_dq[:n] + (im / v)[:, None] * du_dq[n:]

    grad_l = feeder.loss_gradient(u_bar)[_state_rows(n)]
    dl_dq = grad_l @ du_dq
    return Sensitivities(dv_dq, dl_dq)
