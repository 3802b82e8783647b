import numpy as np
import pytest

from voltpolicy import bundled_feeder_path, generate_dataset, load_feeder, load_profiles, split
from voltpolicy.feeder import feeder_from_dict
from voltpolicy.scenarios import bundled_profiles_path


def two_bus_dict(r=0.01, x=0.02, s_max=1.0, inverter=True):
    return {
        "base_mva": 1.0,
        "base_kv": 4.8,
        "buses": [
            {"id": 0},
            {"id": 1, "s_max": s_max, "flags": {"load": True, "solar": inverter, "inverter": inverter}},
        ],
        "lines": [{"from": 0, "to": 1, "r_pu": r, "x_pu": x}],
    }


def two_bus_closed_form(r, x, p, q):
    """|V| and losses of a 2-bus feeder (V0 = 1) serving net load p + jq at bus 1.

    |V|^4 + (2(rp + xq) - 1)|V|^2 + (r^2 + x^2)(p^2 + q^2) = 0, high-voltage root.
    """
    b = 1.0 - 2.0 * (r * p + x * q)
    v2 = 0.5 * (b + np.sqrt(b * b - 4.0 * (r * r + x * x) * (p * p + q * q)))
    return np.sqrt(v2), r * (p * p + q * q) / v2


@pytest.fixture(scope="session")
def feeder():
    return load_feeder(bundled_feeder_path())


@pytest.fixture
def two_bus():
    return feeder_from_dict(two_bus_dict(), name="two_bus")


@pytest.fixture(scope="session")
def dataset():
    return generate_dataset(load_profiles(bundled_profiles_path()), 0.1, 5, seed=0)


@pytest.fixture(scope="session")
def splits(dataset):
    return split(dataset, 0.8, shuffle_seed=0)


def random_conditions(feeder, rng, scale=1.0):
    """Random operating point around the bundled envelope."""
    from voltpolicy import GridConditions

    n = feeder.n_buses
    p_c = rng.uniform(0.0, 0.08, n) * scale
    q_c = p_c * rng.uniform(0.0, 0.48, n)
    p_g = np.zeros(n)
    solar = feeder.solar_buses - 1
    p_g[solar] = rng.uniform(0.0, 0.15, solar.size) * scale
    q_g = np.zeros(n)
    ctrl = feeder.controlled_buses - 1
    q_g[ctrl] = rng.uniform(-1, 1, ctrl.size) * 0.5 * feeder.s_max
    return GridConditions(p_c, q_c, p_g), q_g


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
