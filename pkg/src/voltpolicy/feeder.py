"""Single-phase radial feeder model.

Loads a feeder description from JSON, builds the bus admittance matrix and
the real symmetric matrices ``M_i`` that express every nodal power injection
as a quadratic form of the rectangular voltage vector::

    u_bar = [Re(v_0), ..., Re(v_N), Im(v_0), ..., Im(v_N)]
    s_i   = u_bar @ M_i @ u_bar

Injection coordinates are ordered ``p_0, ..., p_N, q_0, ..., q_N``, i.e. the
same layout as ``u_bar`` itself.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
from scipy import sparse

__all__ = [
    "Bus",
    "Line",
    "FeederModel",
    "FeederError",
    "load_feeder",
    "feeder_from_dict",
    "admittance_matrix",
    "build_injection_matrices",
    "line_losses",
    "bundled_feeder_path",
]


class FeederError(ValueError):
    """Raised for malformed or physically invalid feeder descriptions."""


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float = 0.97
    v_max: float = 1.03
    s_max: float | None = None
    has_load: bool = False
    has_solar: bool = False
    has_inverter_control: bool = False


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float

    @property
    def impedance(self) -> complex:
        return complex(self.r, self.x)


@dataclass(frozen=True, eq=False)
class FeederModel:
    """Immutable feeder with precomputed admittance and injection matrices.

    Attributes
    ----------
    buses : tuple of Bus
        Ordered by id; ``buses[0]`` is the substation.
    lines : tuple of Line
    base_mva, base_kv : float
    Y : ndarray, complex, shape (N+1, N+1)
    M : tuple of scipy.sparse.csr_matrix, length 2N+2
        ``M[i]`` for ``p_i`` (i <= N) and ``M[N+1+i]`` for ``q_i``.
    """

    buses: tuple
    lines: tuple
    base_mva: float
    base_kv: float
    name: str = ""
    Y: np.ndarray = field(init=False, repr=False)
    M: tuple = field(init=False, repr=False)
    _M_stack: sparse.csr_matrix = field(init=False, repr=False)
    _M_loss: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Y = admittance_matrix(len(self.buses), self.lines)
        M = build_injection_matrices(Y)
        dim = 2 * len(self.buses)
        loss = np.zeros((dim, dim))
        for Mi in M[: len(self.buses)]:
            loss += Mi.toarray()
        Y.setflags(write=False)
        loss.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "M", tuple(M))
        object.__setattr__(self, "_M_stack", sparse.vstack(M, format="csr"))
        object.__setattr__(self, "_M_loss", loss)

    @property
    def n_buses(self) -> int:
        """Number of non-substation buses, N."""
        return len(self.buses) - 1

    @property
    def v_min(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses[1:]])

    @property
    def v_max(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses[1:]])

    @property
    def controlled_buses(self) -> np.ndarray:
        """Ids of inverter-controlled buses, ascending."""
        return np.array([b.id for b in self.buses if b.has_inverter_control], dtype=int)

    @property
    def solar_buses(self) -> np.ndarray:
        return np.array([b.id for b in self.buses if b.has_solar], dtype=int)

    @property
    def load_buses(self) -> np.ndarray:
        return np.array([b.id for b in self.buses if b.has_load], dtype=int)

    @property
    def s_max(self) -> np.ndarray:
        """Apparent-power ratings of the controlled inverters (controlled-bus order)."""
        return np.array([b.s_max for b in self.buses if b.has_inverter_control], dtype=float)

    def injections(self, u_bar: np.ndarray) -> np.ndarray:
        """All 2N+2 quadratic-form injections ``u_bar @ M_i @ u_bar``."""
        dim = u_bar.shape[0]
        Mu = (self._M_stack @ u_bar).reshape(-1, dim)
        return Mu @ u_bar

    def injection_gradients(self, u_bar: np.ndarray) -> np.ndarray:
        """Rows ``2 u_bar^T M_i`` for all 2N+2 injections (full columns)."""
        dim = u_bar.shape[0]
        return 2.0 * (self._M_stack @ u_bar).reshape(-1, dim)

    def losses(self, u_bar: np.ndarray) -> float:
        """Ohmic losses as the sum of all active injections."""
        return float(u_bar @ self._M_loss @ u_bar)

    def loss_gradient(self, u_bar: np.ndarray) -> np.ndarray:
        return 2.0 * (self._M_loss @ u_bar)


def admittance_matrix(n_nodes: int, lines) -> np.ndarray:
    """Dense complex bus admittance matrix of a shunt-free network."""
    Y = np.zeros((n_nodes, n_nodes), dtype=complex)
    for ln in lines:
        if ln.r == 0.0 and ln.x == 0.0:
            raise FeederError(f"line {ln.from_bus}-{ln.to_bus} has zero impedance")
        y = 1.0 / ln.impedance
        i, j = ln.from_bus, ln.to_bus
        Y[i, j] -= y
        Y[j, i] -= y
        Y[i, i] += y
        Y[j, j] += y
    return Y


def build_injection_matrices(Y) -> list:
    """Real symmetric matrices ``M_i`` with ``s_i = u_bar^T M_i u_bar``.

    Parameters
    ----------
    Y : array_like, complex, shape (n, n)
        Bus admittance matrix.

    Returns
    -------
    list of scipy.sparse.csr_matrix
        ``2n`` matrices of size ``2n x 2n``: active injections first, then
        reactive injections, bus order as in ``Y``.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise FeederError(f"admittance matrix must be square, got shape {Y.shape}")
    n = Y.shape[0]
    G, B = Y.real, Y.imag
    out_p, out_q = [], []
    for k in range(n):
        # s_k = (e_k + j f_k) * conj(sum_m Y_km (e_m + j f_m))
        #   p_k = e_k (G e - B f)_k + f_k (G f + B e)_k
        #   q_k = f_k (G e - B f)_k - e_k (G f + B e)_k
        A_p = sparse.lil_matrix((2 * n, 2 * n))
        A_q = sparse.lil_matrix((2 * n, 2 * n))
        nz = np.flatnonzero(Y[k])
        for m in nz:
            g, b = G[k, m], B[k, m]
            A_p[k, m] += g
            A_p[k, n + m] -= b
            A_p[n + k, n + m] += g
            A_p[n + k, m] += b
            A_q[n + k, m] += g
            A_q[n + k, n + m] -= b
            A_q[k, n + m] -= g
            A_q[k, m] -= b
        A_p = A_p.tocsr()
        A_q = A_q.tocsr()
        out_p.append(((A_p + A_p.T) * 0.5).tocsr())
        out_q.append(((A_q + A_q.T) * 0.5).tocsr())
    return out_p + out_q


def line_losses(feeder: FeederModel, v: np.ndarray) -> float:
    """Total ``sum r |I|^2`` over lines for complex bus voltages ``v``."""
    total = 0.0
    for ln in feeder.lines:
        current = (v[ln.from_bus] - v[ln.to_bus]) / ln.impedance
        total += ln.r * abs(current) ** 2
    return total


def _parse_bus(raw: dict) -> Bus:
    flags = raw.get("flags", {})
    if isinstance(flags, list):
        flags = {name: True for name in flags}
    try:
        bus_id = int(raw["id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FeederError(f"bus entry without a valid id: {raw!r}") from exc
    s_max = raw.get("s_max")
    return Bus(
        id=bus_id,
        v_min=float(raw.get("v_min", 0.97)),
        v_max=float(raw.get("v_max", 1.03)),
        s_max=None if s_max is None else float(s_max),
        has_load=bool(flags.get("load", False)),
        has_solar=bool(flags.get("solar", False)),
        has_inverter_control=bool(flags.get("inverter", False)),
    )


def feeder_from_dict(data: dict, name: str = "") -> FeederModel:
    """Validate a parsed feeder document and build the model."""
    try:
        base_mva = float(data["base_mva"])
        base_kv = float(data["base_kv"])
        raw_buses = data["buses"]
        raw_lines = data["lines"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FeederError(f"feeder document missing required key: {exc}") from exc

    buses = [_parse_bus(b) for b in raw_buses]
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise FeederError(f"duplicate bus id(s): {dup}")
    buses.sort(key=lambda b: b.id)
    if [b.id for b in buses] != list(range(len(buses))):
        raise FeederError("bus ids must be contiguous 0..N")
    if len(buses) < 2:
        raise FeederError("feeder needs a substation and at least one bus")

    sub = buses[0]
    if sub.has_load or sub.has_solar or sub.has_inverter_control:
        raise FeederError("bus 0 is the substation and cannot host load or inverters")
    for b in buses[1:]:
        if not 0.0 < b.v_min < b.v_max:
            raise FeederError(f"bus {b.id}: need 0 < v_min < v_max")
        if b.has_inverter_control:
            if b.s_max is None:
                raise FeederError(f"inverter bus {b.id} missing s_max")
            if b.s_max <= 0:
                raise FeederError(f"inverter bus {b.id}: s_max must be positive")

    lines = []
    for raw in raw_lines:
        try:
            ln = Line(int(raw["from"]), int(raw["to"]), float(raw["r_pu"]), float(raw["x_pu"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FeederError(f"malformed line entry {raw!r}") from exc
        for end in (ln.from_bus, ln.to_bus):
            if not 0 <= end < len(buses):
                raise FeederError(f"line references unknown bus {end}")
        if ln.r < 0:
            raise FeederError(f"line {ln.from_bus}-{ln.to_bus}: negative resistance")
        if ln.r == 0.0 and ln.x == 0.0:
            raise FeederError(f"line {ln.from_bus}-{ln.to_bus} has zero impedance")
        lines.append(ln)

    graph = nx.Graph()
    graph.add_nodes_from(range(len(buses)))
    graph.add_edges_from((ln.from_bus, ln.to_bus) for ln in lines)
    if not nx.is_connected(graph):
        raise FeederError("feeder graph is disconnected")

    return FeederModel(tuple(buses), tuple(lines), base_mva, base_kv, name=name)


def load_feeder(path) -> FeederModel:
    """Read and validate a feeder JSON file.

    Raises
    ------
    FeederError
        On parse errors, duplicate ids, disconnected graphs, missing
        inverter ratings or degenerate line impedances.
    """
    path = Path(path)
    if not path.is_file():
        raise FeederError(f"feeder file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FeederError(f"{path}: not valid JSON ({exc})") from exc
    return feeder_from_dict(data, name=path.stem)


def bundled_feeder_path() -> Path:
    return Path(__file__).parent / "data" / "ieee37_single_phase.json"
