"""Scenario datasets of grid conditions and their metered proxies.

A dataset is stored column-wise in :class:`ScenarioSet` (arrays of shape
``(n_scenarios, N)``); iterating over it yields :class:`Scenario` rows.
Proxy vectors ``phi`` are laid out as ``[p_c[mask], q_c[mask], p_g[mask]]``
with the mask sorted ascending, so the full mask reproduces the flattened
grid conditions ``[p_c, q_c, p_g]``.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .powerflow import GridConditions

__all__ = [
    "Scenario",
    "ScenarioSet",
    "MeterMask",
    "BaseProfiles",
    "ScenarioError",
    "generate_dataset",
    "split",
    "apply_mask",
    "load_profiles",
    "save_profiles",
    "synthetic_profiles",
    "read_scenarios",
    "write_scenarios",
    "bundled_profiles_path",
]

WINDOW = 240
PF_RANGE = (0.9, 1.0)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    theta: GridConditions
    phi: np.ndarray
    timestamp: int


@dataclass(frozen=True)
class MeterMask:
    """Buses (1-based ids) whose loads and generation are telemetered."""

    metered_buses: tuple

    def __post_init__(self):
        buses = tuple(sorted({int(b) for b in self.metered_buses}))
        if not buses or buses[0] < 1:
            raise ScenarioError("metered buses must be non-empty ids >= 1")
        object.__setattr__(self, "metered_buses", buses)

    @classmethod
    def full(cls, n_buses: int) -> "MeterMask":
        return cls(tuple(range(1, n_buses + 1)))

    def __len__(self):
        return len(self.metered_buses)

    def validate(self, n_buses: int, controlled=()) -> None:
        if self.metered_buses[-1] > n_buses:
            raise ScenarioError(f"mask references bus {self.metered_buses[-1]} > N={n_buses}")
        missing = sorted(set(int(c) for c in controlled) - set(self.metered_buses))
        if missing:
            raise ScenarioError(f"mask omits controlled inverter bus(es) {missing}")

    def columns(self, n_buses: int) -> np.ndarray:
        """Column indices of ``phi`` inside the flattened ``[p_c, q_c, p_g]``."""
        idx = np.asarray(self.metered_buses) - 1
        return np.concatenate([idx, idx + n_buses, idx + 2 * n_buses])


@dataclass(frozen=True)
class ScenarioSet:
    p_c: np.ndarray
    q_c: np.ndarray
    p_g: np.ndarray
    timestamps: np.ndarray
    mask: MeterMask | None = None

    def __post_init__(self):
        for name in ("p_c", "q_c", "p_g"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=int))
        if not (self.p_c.shape == self.q_c.shape == self.p_g.shape):
            raise ScenarioError("p_c, q_c, p_g must share a shape")
        if self.timestamps.shape != (self.p_c.shape[0],):
            raise ScenarioError("one timestamp per scenario required")

    def __len__(self):
        return self.p_c.shape[0]

    @property
    def n_buses(self) -> int:
        return self.p_c.shape[1]

    @property
    def theta_matrix(self) -> np.ndarray:
        """Flattened grid conditions ``[p_c, q_c, p_g]``, shape (n, 3N)."""
        return np.hstack([self.p_c, self.q_c, self.p_g])

    @property
    def phi(self) -> np.ndarray:
        mask = self.mask or MeterMask.full(self.n_buses)
        return self.theta_matrix[:, mask.columns(self.n_buses)]

    @classmethod
    def from_theta_matrix(cls, X, timestamps=None, mask=None) -> "ScenarioSet":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] % 3:
            raise ScenarioError("theta matrix must have 3N columns")
        n = X.shape[1] // 3
        ts = np.arange(X.shape[0]) if timestamps is None else timestamps
        return cls(X[:, :n], X[:, n : 2 * n], X[:, 2 * n :], ts, mask)

    def theta(self, i: int) -> GridConditions:
        return GridConditions(self.p_c[i], self.q_c[i], self.p_g[i])

    def subset(self, index) -> "ScenarioSet":
        index = np.asarray(index)
        return ScenarioSet(
            self.p_c[index], self.q_c[index], self.p_g[index], self.timestamps[index], self.mask
        )

    def __getitem__(self, i: int) -> Scenario:
        row = np.concatenate([self.p_c[i], self.q_c[i], self.p_g[i]])
        if self.mask is not None:
            row = row[self.mask.columns(self.n_buses)]
        return Scenario(self.theta(i), row, int(self.timestamps[i]))

    def __iter__(self):
        phi = self.phi
        for i in range(len(self)):
            yield Scenario(self.theta(i), phi[i], int(self.timestamps[i]))

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.p_c, self.q_c, self.p_g, self.timestamps):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class BaseProfiles:
    """Forecast time series at one-minute resolution, shape (T, N) each."""

    p_c: np.ndarray
    p_g: np.ndarray

    @property
    def n_points(self) -> int:
        return self.p_c.shape[0]


def generate_dataset(
    profiles: BaseProfiles, noise_sigma_ratio: float = 0.1, replicas: int = 5, seed: int = 0
) -> ScenarioSet:
    """Noisy replicas of the base forecast.

    Zero-mean Gaussian noise with per-bus standard deviation
    ``noise_sigma_ratio * mean(forecast)`` is added to active load and solar
    generation, negative values are clipped, and reactive loads follow from
    lagging power factors drawn uniformly in [0.9, 1.0] per point.

    Returns ``replicas * T`` scenarios, replica-major.
    """
    if profiles.n_points == 0 or profiles.p_c.size == 0:
        raise ScenarioError("empty base profiles")
    if noise_sigma_ratio < 0:
        raise ScenarioError("noise_sigma_ratio must be nonnegative")
    if replicas < 1:
        raise ScenarioError("replicas must be >= 1")
    rng = np.random.default_rng(seed)
    T, n = profiles.p_c.shape
    sig_c = noise_sigma_ratio * profiles.p_c.mean(axis=0)
    sig_g = noise_sigma_ratio * profiles.p_g.mean(axis=0)

    p_c = np.tile(profiles.p_c, (replicas, 1))
    p_g = np.tile(profiles.p_g, (replicas, 1))
    p_c = np.maximum(p_c + rng.standard_normal(p_c.shape) * sig_c, 0.0)
    p_g = np.maximum(p_g + rng.standard_normal(p_g.shape) * sig_g, 0.0)
    pf = rng.uniform(*PF_RANGE, size=p_c.shape)
    q_c = p_c * np.tan(np.arccos(pf))
    ts = np.tile(np.arange(T), replicas)
    return ScenarioSet(p_c, q_c, p_g, ts)


def split(dataset: ScenarioSet, train_fraction: float = 0.8, shuffle_seed: int = 0):
    """First ``train_fraction`` of scenarios (shuffled) for training, rest for testing.

    The training part always keeps at least one scenario and so does the
    test part.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ScenarioError("train_fraction must lie in (0, 1)")
    n = len(dataset)
    if n < 2:
        raise ScenarioError("need at least two scenarios to split")
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    order = np.random.default_rng(shuffle_seed).permutation(n_train)
    return dataset.subset(order), dataset.subset(np.arange(n_train, n))


def apply_mask(dataset: ScenarioSet, mask: MeterMask, controlled=()) -> ScenarioSet:
    """Attach a meter mask; ``phi`` then holds only metered buses."""
    mask.validate(dataset.n_buses, controlled)
    return ScenarioSet(dataset.p_c, dataset.q_c, dataset.p_g, dataset.timestamps, mask)


# -- synthetic base profiles --------------------------------------------------

def synthetic_profiles(
    peak_load,
    solar_buses,
    *,
    solar_peak_ratio: float = 2.0,
    start_hour: float = 12.0,
    n_points: int = WINDOW,
    seed: int = 2011,
) -> BaseProfiles:
    """Smooth diurnal load and clear-sky solar curves for a control window.

    Parameters
    ----------
    peak_load : array_like, shape (N,)
        Per-bus benchmark (daily peak) active load in p.u.
    solar_buses : array_like of int
        1-based ids of buses with rooftop solar.
    solar_peak_ratio : float
        Daily solar peak as a multiple of the bus benchmark load.
    """
    rng = np.random.default_rng(seed)
    peak_load = np.asarray(peak_load, dtype=float)
    n = peak_load.shape[0]
    hours = start_hour + np.arange(n_points) / 60.0

    # residential afternoon: shallow trough rising towards the evening peak
    day = np.linspace(0, 24, 24 * 60, endpoint=False)
    load_day = 0.3 + 0.5 * np.exp(-((day - 19.5) / 2.5) ** 2) + 0.25 * np.exp(-((day - 8.0) / 2.0) ** 2)
    load_day /= load_day.max()
    base_load = np.interp(hours, day, load_day)

    p_c = np.empty((n_points, n))
    for j in range(n):
        phase = rng.uniform(0, 2 * np.pi, size=3)
        wiggle = sum(
            a * np.sin(2 * np.pi * hours / per + ph)
            for a, per, ph in zip((0.06, 0.04, 0.03), (3.0, 1.1, 0.4), phase)
        )
        p_c[:, j] = peak_load[j] * np.clip(base_load + wiggle, 0.05, 1.0)

    p_g = np.zeros((n_points, n))
    for b in np.asarray(solar_buses, dtype=int):
        j = b - 1
        noon = 13.0 + rng.uniform(-0.2, 0.2)
        clear = np.clip(np.cos(np.pi * (hours - noon) / 13.0), 0.0, None) ** 1.2
        haze = 1.0 - 0.05 * (1 + np.sin(2 * np.pi * hours / rng.uniform(0.5, 1.5) + rng.uniform(0, 6.3)))
        p_g[:, j] = solar_peak_ratio * peak_load[j] * clear * haze
    return BaseProfiles(p_c, p_g)


def save_profiles(profiles: BaseProfiles, path) -> None:
    n = profiles.p_c.shape[1]
    header = ["minute"] + [f"p_c_{i}" for i in range(1, n + 1)] + [f"p_g_{i}" for i in range(1, n + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(profiles.n_points):
            w.writerow([t] + [repr(float(x)) for x in profiles.p_c[t]] + [repr(float(x)) for x in profiles.p_g[t]])


def load_profiles(path) -> BaseProfiles:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"profiles file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ScenarioError(f"{path}: no profile rows")
    header = rows[0]
    n = sum(1 for h in header if h.startswith("p_c_"))
    if n == 0 or len(header) != 1 + 2 * n:
        raise ScenarioError(f"{path}: unexpected header")
    data = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return BaseProfiles(data[:, :n], data[:, n:])


def write_scenarios(dataset: ScenarioSet, path) -> None:
    """CSV with ``timestamp_index, p_c_1..N, q_c_1..N, p_g_1..N`` per row."""
    n = dataset.n_buses
    cols = ["timestamp_index"] + [f"{k}_{i}" for k in ("p_c", "q_c", "p_g") for i in range(1, n + 1)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    X = dataset.theta_matrix
    for t, row in zip(dataset.timestamps, X):
        w.writerow([int(t)] + [repr(float(x)) for x in row])
    Path(path).write_text(buf.getvalue())


def read_scenarios(path) -> ScenarioSet:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "timestamp_index" or (len(rows[0]) - 1) % 3:
        raise ScenarioError(f"{path}: not a scenario file")
    if len(rows) == 1:
        n = (len(rows[0]) - 1) // 3
        return ScenarioSet(np.zeros((0, n)), np.zeros((0, n)), np.zeros((0, n)), np.zeros(0, dtype=int))
    body = np.array([[float(x) for x in r] for r in rows[1:]])
    return ScenarioSet.from_theta_matrix(body[:, 1:], timestamps=body[:, 0].astype(int))


def bundled_profiles_path() -> Path:
    return Path(__file__).parent / "data" / "base_profiles.csv"
