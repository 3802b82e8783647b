"""Regenerate the bundled feeder and base profiles.

Writes ``src/voltpolicy/data/ieee37_single_phase.json`` and
``src/voltpolicy/data/base_profiles.csv``.

Single-phase, positive-sequence approximation of the IEEE 37-node test
feeder. Node 799 is the substation (bus 0); the regulator is removed and
the 709-775 transformer is modelled as a series impedance. Bus numbering
is a depth-first walk of the feeder tree. Cable impedances use the self
impedance of each underground configuration (ohm/mile); lengths in feet.

Benchmark loads are the IEEE 37-node spot loads (kW summed over phases)
times LOAD_SCALE; nodes without a spot load get DEFAULT_KW. Bus 1 carries
no load. Inverter ratings are S_MAX_RATIO times the peak solar output.

Usage: python tools/make_bundled_data.py
"""
import json
from pathlib import Path

import numpy as np

from voltpolicy.scenarios import save_profiles, synthetic_profiles

BASE_KV = 4.8
BASE_MVA = 1.0

# ohm per mile, configuration self impedance
CONFIG = {
    721: (0.2926, 0.1973),
    722: (0.4751, 0.2973),
    723: (1.2936, 0.6713),
    724: (2.0952, 0.7758),
}

# (from, to, feet, config)
SEGMENTS = [
    (799, 701, 1850, 721),
    (701, 702, 960, 722),
    (702, 705, 400, 724),
    (702, 713, 360, 723),
    (702, 703, 1320, 722),
    (703, 727, 240, 724),
    (703, 730, 600, 723),
    (704, 714, 80, 724),
    (704, 720, 800, 723),
    (705, 742, 320, 724),
    (705, 712, 240, 724),
    (706, 725, 280, 724),
    (707, 724, 760, 724),
    (707, 722, 120, 724),
    (708, 733, 320, 723),
    (708, 732, 320, 724),
    (709, 731, 600, 723),
    (709, 708, 320, 723),
    (710, 735, 200, 724),
    (710, 736, 1280, 724),
    (711, 741, 400, 723),
    (711, 740, 200, 724),
    (713, 704, 520, 723),
    (714, 718, 520, 724),
    (720, 707, 920, 724),
    (720, 706, 600, 723),
    (727, 744, 280, 723),
    (730, 709, 200, 723),
    (733, 734, 560, 723),
    (734, 737, 640, 723),
    (734, 710, 520, 724),
    (737, 738, 400, 723),
    (738, 711, 400, 723),
    (744, 728, 200, 724),
    (744, 729, 280, 724),
]
# 709-775 transformer: 500 kVA, R = 0.09 %, X = 1.81 % on its own rating
XFMR = (709, 775, 0.0009 * BASE_MVA / 0.5, 0.0181 * BASE_MVA / 0.5)

# bus numbering (depth-first from the substation)
ORDER = [
    799, 701, 702, 705, 742, 712, 713, 704, 714, 718, 720, 706, 725, 707, 722,
    724, 703, 730, 709, 708, 733, 734, 737, 738, 711, 740, 741, 710, 735, 736,
    732, 731, 775, 727, 744, 728, 729,
]
SOLAR = {5, 9, 12, 15, 18, 19, 20, 22, 24, 25, 27, 30, 31, 33, 35, 36}
INVERTER = {12, 20, 22, 24, 25}
SPOT_KW = {
    701: 630, 712: 85, 713: 85, 714: 38, 718: 85, 720: 85, 722: 161, 724: 42,
    725: 42, 727: 42, 728: 126, 729: 42, 730: 85, 731: 85, 732: 42, 733: 85,
    734: 42, 735: 85, 736: 42, 737: 140, 738: 126, 740: 85, 741: 42, 742: 93,
    744: 42,
}
DEFAULT_KW = 40
LOAD_SCALE = 2.0
SOLAR_PEAK_RATIO = 2.0
S_MAX_RATIO = 1.3
DATA = Path(__file__).resolve().parents[1] / "src" / "voltpolicy" / "data"


def benchmark_loads():
    """Per-bus benchmark active load in p.u. for buses 1..N."""
    kw = np.array([SPOT_KW.get(node, DEFAULT_KW) for node in ORDER[1:]], dtype=float)
    kw[0] = 0.0
    return LOAD_SCALE * kw / 1000.0 / BASE_MVA


def build(peak_solar):
    index = {node: i for i, node in enumerate(ORDER)}
    z_base = BASE_KV**2 / BASE_MVA
    lines = []
    for a, b, feet, cfg in SEGMENTS:
        r, x = CONFIG[cfg]
        miles = feet / 5280.0
        lines.append(
            {"from": index[a], "to": index[b], "r_pu": r * miles / z_base, "x_pu": x * miles / z_base}
        )
    a, b, r, x = XFMR
    lines.append({"from": index[a], "to": index[b], "r_pu": r, "x_pu": x})
    lines.sort(key=lambda ln: (ln["from"], ln["to"]) if ln["from"] < ln["to"] else (ln["to"], ln["from"]))

    buses = [{"id": 0, "name": "799", "v_min": 0.97, "v_max": 1.03, "flags": {}}]
    for i, node in enumerate(ORDER[1:], start=1):
        flags = {"load": i >= 2, "solar": i in SOLAR, "inverter": i in INVERTER}
        bus = {"id": i, "name": str(node), "v_min": 0.97, "v_max": 1.03, "flags": flags}
        if i in INVERTER:
            bus["s_max"] = round(S_MAX_RATIO * float(peak_solar[i - 1]), 4)
        buses.append(bus)
    return {
        "name": "ieee37_single_phase",
        "description": "Positive-sequence single-phase approximation of the IEEE 37-node feeder; "
        "regulator removed, transformer 709-775 as series impedance.",
        "base_mva": BASE_MVA,
        "base_kv": BASE_KV,
        "buses": buses,
        "lines": lines,
    }


if __name__ == "__main__":
    profiles = synthetic_profiles(benchmark_loads(), sorted(SOLAR), solar_peak_ratio=SOLAR_PEAK_RATIO)
    feeder = build(profiles.p_g.max(axis=0))
    (DATA / "ieee37_single_phase.json").write_text(json.dumps(feeder, indent=1) + "\n")
    save_profiles(profiles, DATA / "base_profiles.csv")
    print(f"wrote {DATA}")
