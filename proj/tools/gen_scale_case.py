#!/usr/bin/env python3
"""Writes the 30-bus scale case: IEEE 30-bus transmission data, an approximate
34-bus feeder, a synthetic 123-bus feeder, the integrated file and its config.

Usage: gen_scale_case.py OUTPUT_DIR
"""

import json
import math
import random
import sys
from pathlib import Path

# bus: id, type, Pd, Qd, Gs, Bs, area, Vm, Va, baseKV, zone, Vmax, Vmin
IEEE30_LOADS = {
    2: (21.7, 12.7), 3: (2.4, 1.2), 4: (7.6, 1.6), 5: (94.2, 19.0), 7: (22.8, 10.9),
    8: (30.0, 30.0), 10: (5.8, 2.0), 12: (11.2, 7.5), 14: (6.2, 1.6), 15: (8.2, 2.5),
    16: (3.5, 1.8), 17: (9.0, 5.8), 18: (3.2, 0.9), 19: (9.5, 3.4), 20: (2.2, 0.7),
    21: (17.5, 11.2), 23: (3.2, 1.6), 24: (8.7, 6.7), 26: (3.5, 2.3), 29: (2.4, 0.9),
    30: (10.6, 1.9),
}
IEEE30_SHUNTS = {10: 19.0, 24: 4.3}
# gen: bus, Pg, Qg, Vg
IEEE30_GENS = [(1, 260.2, -16.1, 1.06), (2, 40.0, 50.0, 1.045), (5, 0.0, 37.0, 1.01),
               (8, 0.0, 37.3, 1.01), (11, 0.0, 16.2, 1.082), (13, 0.0, 10.6, 1.071)]
# branch: from, to, r, x, b, ratio
IEEE30_BRANCHES = [
    (1, 2, 0.0192, 0.0575, 0.0528, 0), (1, 3, 0.0452, 0.1652, 0.0408, 0),
    (2, 4, 0.0570, 0.1737, 0.0368, 0), (3, 4, 0.0132, 0.0379, 0.0084, 0),
    (2, 5, 0.0472, 0.1983, 0.0418, 0), (2, 6, 0.0581, 0.1763, 0.0374, 0),
    (4, 6, 0.0119, 0.0414, 0.0090, 0), (5, 7, 0.0460, 0.1160, 0.0204, 0),
    (6, 7, 0.0267, 0.0820, 0.0170, 0), (6, 8, 0.0120, 0.0420, 0.0090, 0),
    (6, 9, 0.0, 0.2080, 0.0, 0.978), (6, 10, 0.0, 0.5560, 0.0, 0.969),
    (9, 11, 0.0, 0.2080, 0.0, 0), (9, 10, 0.0, 0.1100, 0.0, 0),
    (4, 12, 0.0, 0.2560, 0.0, 0.932), (12, 13, 0.0, 0.1400, 0.0, 0),
    (12, 14, 0.1231, 0.2559, 0.0, 0), (12, 15, 0.0662, 0.1304, 0.0, 0),
    (12, 16, 0.0945, 0.1987, 0.0, 0), (14, 15, 0.2210, 0.1997, 0.0, 0),
    (16, 17, 0.0524, 0.1923, 0.0, 0), (15, 18, 0.1073, 0.2185, 0.0, 0),
    (18, 19, 0.0639, 0.1292, 0.0, 0), (19, 20, 0.0340, 0.0680, 0.0, 0),
    (10, 20, 0.0936, 0.2090, 0.0, 0), (10, 17, 0.0324, 0.0845, 0.0, 0),
    (10, 21, 0.0348, 0.0749, 0.0, 0), (10, 22, 0.0727, 0.1499, 0.0, 0),
    (21, 22, 0.0116, 0.0236, 0.0, 0), (15, 23, 0.1000, 0.2020, 0.0, 0),
    (22, 24, 0.1150, 0.1790, 0.0, 0), (23, 24, 0.1320, 0.2700, 0.0, 0),
    (24, 25, 0.1885, 0.3292, 0.0, 0), (25, 26, 0.2544, 0.3800, 0.0, 0),
    (25, 27, 0.1093, 0.2087, 0.0, 0), (28, 27, 0.0, 0.3960, 0.0, 0.968),
    (27, 29, 0.2198, 0.4153, 0.0, 0), (27, 30, 0.3202, 0.6027, 0.0, 0),
    (29, 30, 0.2399, 0.4533, 0.0, 0), (8, 28, 0.0636, 0.2000, 0.0428, 0),
    (6, 28, 0.0169, 0.0599, 0.0130, 0),
]

DG_POWER_FACTOR = 0.9


def write_ieee30(path):
    lines = ["function mpc = case_ieee30", "mpc.version = '2';", "mpc.baseMVA = 100;", "",
             "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in range(1, 31):
        kind = 3 if b == 1 else 1
        pd, qd = IEEE30_LOADS.get(b, (0.0, 0.0))
        bs = IEEE30_SHUNTS.get(b, 0.0)
        kv = 132 if b <= 8 else 33
        lines.append(f"\t{b}\t{kind}\t{pd}\t{qd}\t0\t{bs}\t1\t1\t0\t{kv}\t1\t1.06\t0.94;")
    lines += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for bus, pg, qg, vg in IEEE30_GENS:
        lines.append(f"\t{bus}\t{pg}\t{qg}\t100\t-100\t{vg}\t100\t1\t300\t0;")
    lines += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax", "mpc.branch = ["]
    for f, t, r, x, b, ratio in IEEE30_BRANCHES:
        lines.append(f"\t{f}\t{t}\t{r}\t{x}\t{b}\t0\t0\t0\t{ratio}\t0\t1\t-360\t360;")
    lines += ["];", ""]
    path.write_text("\n".join(lines))


def dg_q(p):
    return p * math.tan(math.acos(DG_POWER_FACTOR))


# Approximate 34-node feeder: (from, to, length in feet, lateral flag).
F34_SEGMENTS = [
    (800, 802, 2580, 0), (802, 806, 1730, 0), (806, 808, 32230, 0), (808, 810, 5804, 1),
    (808, 812, 37500, 0), (812, 814, 29730, 0), (814, 850, 10, 0), (850, 816, 310, 0),
    (816, 818, 1710, 1), (818, 820, 48150, 1), (820, 822, 13740, 1), (816, 824, 10210, 0),
    (824, 826, 3030, 1), (824, 828, 840, 0), (828, 830, 20440, 0), (830, 854, 520, 0),
    (854, 856, 23330, 1), (854, 852, 36830, 0), (852, 832, 10, 0), (832, 888, 10, 0),
    (888, 890, 10560, 0), (832, 858, 4900, 0), (858, 864, 1620, 1), (858, 834, 5830, 0),
    (834, 842, 280, 0), (842, 844, 1350, 0), (844, 846, 3640, 0), (846, 848, 530, 0),
    (834, 860, 2020, 0), (860, 836, 2680, 0), (836, 840, 860, 0), (836, 862, 280, 0),
    (862, 838, 4860, 1),
]
# kW, kvar (spot plus lumped distributed loads, three phases summed).
F34_LOADS = {
    802: (55, 29), 806: (55, 29), 808: (16, 8), 810: (16, 8), 818: (34, 17), 820: (135, 70),
    822: (135, 70), 824: (5, 2), 826: (40, 20), 828: (4, 2), 830: (48, 23), 832: (7, 3),
    834: (16, 8), 836: (61, 32), 838: (28, 14), 840: (47, 31), 842: (9, 5), 844: (432, 329),
    846: (25, 12), 848: (71, 53), 856: (4, 2), 858: (49, 25), 860: (174, 106), 862: (28, 14),
    864: (2, 1), 890: (450, 225),
}
F34_DG = {848: 150.0, 890: 120.0}


def write_feeder34(path):
    base_mva = 10.0
    kv = 24.9
    zbase = kv * kv / base_mva
    buses, seen = [], set()
    for f, t, _, _ in F34_SEGMENTS:
        for b in (f, t):
            if b not in seen:
                seen.add(b)
                pl, ql = F34_LOADS.get(b, (0.0, 0.0))
                gp = F34_DG.get(b, 0.0)
                buses.append({"id": b, "base_kv": kv, "load_p": pl / 1000.0 / base_mva,
                              "load_q": ql / 1000.0 / base_mva, "gen_p": gp / 1000.0 / base_mva,
                              "gen_q": dg_q(gp) / 1000.0 / base_mva})
    branches = []
    for f, t, feet, lateral in F34_SEGMENTS:
        miles = feet / 5280.0
        r_mi, x_mi = (1.9, 1.4) if lateral else (1.0, 1.0)
        if (f, t) == (888, 890):
            r, x = 0.38, 0.82
        else:
            # Short regulator and connector segments get a minimum length.
            miles = max(miles, 0.01)
            r, x = r_mi * miles / zbase, x_mi * miles / zbase
        branches.append({"from": f, "to": t, "r": round(r, 8), "x": round(x, 8),
                         "b_sh": round(5.0e-6 * miles * zbase, 10)})
    doc = {"format_version": 1, "name": "feeder34", "base_mva": base_mva, "slack_bus": 800,
           "buses": buses, "branches": branches}
    path.write_text(json.dumps(doc, indent=1) + "\n")


def write_feeder123(path, seed=123):
    rng = random.Random(seed)
    base_mva = 5.0
    kv = 4.16
    zbase = kv * kv / base_mva
    n = 123
    parent = {}
    depth = {1: 0}
    # Preferential growth along a main trunk with laterals.
    for b in range(2, n + 1):
        if b <= 20:
            p = b - 1
        else:
            candidates = [c for c in range(1, b) if depth[c] < 24]
            p = rng.choice(candidates[-30:] if rng.random() < 0.6 else candidates)
        parent[b] = p
        depth[b] = depth[p] + 1
    buses = [{"id": 1, "base_kv": kv}]
    for b in range(2, n + 1):
        loaded = rng.random() < 0.7
        p_kw = rng.uniform(10.0, 40.0) if loaded else 0.0
        pf = rng.uniform(0.88, 0.97)
        q_kvar = p_kw * math.tan(math.acos(pf))
        dg = rng.uniform(20.0, 60.0) if rng.random() < 0.08 else 0.0
        buses.append({"id": b, "base_kv": kv, "load_p": round(p_kw / 1000.0 / base_mva, 8),
                      "load_q": round(q_kvar / 1000.0 / base_mva, 8),
                      "gen_p": round(dg / 1000.0 / base_mva, 8),
                      "gen_q": round(dg_q(dg) / 1000.0 / base_mva, 8)})
    branches = []
    for b in range(2, n + 1):
        length_mi = rng.uniform(0.02, 0.08)
        r = 0.306 * 1.6 * length_mi / zbase
        x = 0.627 * 1.6 * length_mi / zbase
        branches.append({"from": parent[b], "to": b, "r": round(r, 8), "x": round(x, 8), "b_sh": 0.0})
    doc = {"format_version": 1, "name": "feeder123", "base_mva": base_mva, "slack_bus": 1,
           "buses": buses, "branches": branches}
    path.write_text(json.dumps(doc, indent=1) + "\n")


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/t30")
    out.mkdir(parents=True, exist_ok=True)
    write_ieee30(out / "case_ieee30.m")
    write_feeder34(out / "feeder34.json")
    write_feeder123(out / "feeder123.json")
    integrated = {
        "format_version": 1,
        "name": "t30",
        "transmission": {"path": "case_ieee30.m", "format": "matpower"},
        "feeders": [{"path": "feeder34.json"}, {"path": "feeder123.json"}],
        "boundary_links": [
            {"transmission_bus": 9, "feeder": 0, "feeder_bus": 800},
            {"transmission_bus": 7, "feeder": 1, "feeder_bus": 1},
        ],
        "placement": {
            "transmission": "default",
            "feeders": ["default", "default"],
            "boundary": [[{"type": "scada_injection", "bus": 9}], [{"type": "scada_injection", "bus": 7}]],
        },
    }
    (out / "t30.json").write_text(json.dumps(integrated, indent=2) + "\n")
    (out / "t30.toml").write_text(
        "[experiment]\ncase = \"t30.json\"\ntrials = 200\nseed = 7\noutput = \"out/t30\"\n\n"
        "[noise]\nmax_err_pmu_mag = 0.01\nmax_err_pmu_ang = 0.01\nmax_err_scada = 0.02\n"
        "max_err_pseudo = 0.30\n\n[tolerances]\neps_d = 1e-4\neps_c = 1e-8\n\n"
        "[toggles]\ncoordination = true\nupdate = true\n")


if __name__ == "__main__":
    main()
