"""Randomized small-network generator shared by the test suite.

Networks follow the physical ranges of the randomized soundness campaign:
N in {2, 3, 4} inverters, per-phase line impedance magnitudes 0.3..10 ohm
with R/X ratios 0.3..3, loads 0..150% of the local inverter rating at
lagging power factor, droop percentages 0.1..10, one shared filter time
constant.  Lines may be unbalanced (per-phase scatter plus mutual
coupling); with some probability a passive bus (optionally loaded) is
spliced into a line to exercise the Kron reduction path.
"""

import json

import numpy as np

from gridcert import parse_network

OMEGA0 = 2 * np.pi * 60.0
V_NOM = 277.0


def _line_matrices(rng, zmag, rx, unbalance=0.15):
    """Symmetric 3x3 R (ohm) and L (henry) with per-phase scatter and mutuals."""
    r = zmag / np.hypot(1.0, 1.0 / rx)
    x = r / rx
    scat = 1.0 + unbalance * rng.uniform(-1, 1, 3)
    R = np.diag(r * scat)
    X = np.diag(x * scat)
    gamma = rng.uniform(0.0, 0.35)
    for i in range(3):
        for k in range(i + 1, 3):
            R[i, k] = R[k, i] = gamma * 0.3 * r
            X[i, k] = X[k, i] = gamma * x
    return R, X / OMEGA0


def _edges(rng, n):
    if n == 2:
        return [(0, 1)]
    if n == 3:
        return [(0, 1), (1, 2)] + ([(0, 2)] if rng.random() < 0.4 else [])
    base = [(0, 1), (1, 2), (2, 3)]
    style = rng.random()
    if style < 0.33:
        base = [(0, 1), (0, 2), (0, 3)]  # star
    elif style < 0.5:
        base = base + [(3, 0)]  # ring
    return base


def random_network(rng, n=None, loads=True, passive=True, path=None):
    """Write a random network JSON and parse it; returns the NetworkModel."""
    n = int(n if n is not None else rng.integers(2, 5))
    tau = float(rng.uniform(0.005, 0.05))
    ratings = rng.uniform(5e3, 5e4, n)
    buses = [{"id": f"b{i}", "kind": "inverter", "nominal_voltage": V_NOM} for i in range(n)]
    lines = []
    for i, k in _edges(rng, n):
        R, L = _line_matrices(rng, rng.uniform(0.3, 10.0), rng.uniform(0.3, 3.0))
        if passive and rng.random() < 0.3:
            mid = f"m{i}{k}"
            buses.append({"id": mid, "kind": "passive", "nominal_voltage": V_NOM})
            for a, b in ((f"b{i}", mid), (mid, f"b{k}")):
                Rh, Lh = R / 2, L / 2
                lines.append({"from": a, "to": b, "R": Rh.tolist(), "L": Lh.tolist()})
        else:
            lines.append({"from": f"b{i}", "to": f"b{k}", "R": R.tolist(), "L": L.tolist()})
    load_list = []
    if loads:
        for i in range(n):
            frac = rng.uniform(0.0, 1.5)
            if frac < 0.05:
                continue
            S = frac * ratings[i]
            pf = rng.uniform(0.8, 0.995)
            P, Q = S * pf, S * np.sqrt(1 - pf**2)
            shares = rng.dirichlet(np.ones(3))
            phases = {
                p: {"P": float(P * s), "Q": float(Q * s)}
                for p, s in zip("abc", shares)
                if P * s > 1.0
            }
            if phases:
                load_list.append({"bus": f"b{i}", "phases": phases})
        # occasionally hang a load on a passive bus
        passive_ids = [b["id"] for b in buses if b["kind"] == "passive"]
        if passive_ids and rng.random() < 0.5:
            bid = passive_ids[int(rng.integers(len(passive_ids)))]
            S = rng.uniform(1e3, 2e4)
            load_list.append({"bus": bid, "phases": {"a": {"P": 0.9 * S, "Q": 0.3 * S}}})
    inverters = [
        {
            "bus": f"b{i}",
            "rating": float(ratings[i]),
            "mp_percent": float(rng.uniform(0.1, 10.0)),
            "mq_percent": float(rng.uniform(0.1, 10.0)),
            "tau": tau,
        }
        for i in range(n)
    ]
    doc = {
        "schema": "gridcert-network/1",
        "name": f"random-{n}",
        "frequency_hz": 60.0,
        "buses": buses,
        "lines": lines,
        "loads": load_list,
        "inverters": inverters,
    }
    if path is None:
        import tempfile

        path = tempfile.mktemp(suffix=".json")
    with open(path, "w") as f:
        json.dump(doc, f)
    return parse_network(path)
