"""Network description: buses, lines, loads, inverters.

Conventions used throughout the package:

* Voltages are line-to-neutral RMS volts, powers are three-phase totals in
  watts/vars unless a quantity is explicitly per phase (load entries are per
  phase).
* Phase sets are subsets of "abc"; 3x3 element matrices always use row/column
  order (a, b, c) with zero rows/columns for absent phases.
* Droop percentages convert to SI gains as

      m_p = (mp_percent/100) * omega0 / rating      [rad/s per W]
      m_q = (mq_percent/100) * V_set  / rating      [V per var]

  i.e. full rated power moves frequency (voltage) by mp% (mq%) of nominal.
* Loads given as P/Q are converted to constant series impedances at the bus
  nominal voltage: Z = |V|^2 / (P - jQ) per loaded phase.

A network file is a versioned JSON document (schema "gridcert-network/1"),
optionally referencing a conductor library (schema "gridcert-conductors/1")
that maps conductor names to per-mile 3x3 R/X matrices. See the shipped
two-bus example for the worked format.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

PHASES = "abc"
FEET_PER_MILE = 5280.0
DEFAULT_FREQ_HZ = 60.0


def phase_indices(phases: str) -> list[int]:
    return [PHASES.index(p) for p in phases]


def _check_phases(phases, where):
    if not phases or any(p not in PHASES for p in phases):
        raise ValidationError(f"{where}: phases must be a non-empty subset of 'abc', got {phases!r}")
    if len(set(phases)) != len(phases):
        raise ValidationError(f"{where}: repeated phase in {phases!r}")
    return "".join(p for p in PHASES if p in phases)


def _as_matrix3(entry, where):
    M = np.asarray(entry, dtype=float)
    if M.shape != (3, 3):
        raise ValidationError(f"{where}: expected a 3x3 matrix, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class BusSpec:
    id: str
    kind: str  # "inverter" | "passive"
    nominal_voltage: float  # line-to-neutral RMS volts
    phases: str = PHASES


@dataclass(frozen=True)
class PhaseImpedance:
    """Series R (ohm) and L (henry) 3x3 matrices of one element, plus its phases."""

    R: np.ndarray
    L: np.ndarray
    phases: str

    def z_at(self, omega0: float) -> np.ndarray:
        return self.R + 1j * omega0 * self.L


@dataclass(frozen=True)
class LineSpec:
    from_bus: str
    to_bus: str
    impedance: PhaseImpedance
    conductor: str | None = None
    length_ft: float | None = None


@dataclass(frozen=True)
class LoadSpec:
    bus: str
    impedance: PhaseImpedance
    powers: dict | None = None  # per-phase {"P": W, "Q": var} when given that way
    capacitive: bool = False  # any equivalent L entry < 0


@dataclass(frozen=True)
class InverterSpec:
    bus: str
    rating: float  # W
    mp_percent: float
    mq_percent: float
    tau: float  # s
    P_set: float = 0.0  # W (three-phase)
    Q_set: float = 0.0  # var
    V_set: float | None = None  # volts l-n RMS; defaults to bus nominal
    omega0: float = 2 * math.pi * DEFAULT_FREQ_HZ

    def m_p(self) -> float:
        return (self.mp_percent / 100.0) * self.omega0 / self.rating

    def m_q(self) -> float:
        return (self.mq_percent / 100.0) * self.V_set / self.rating


def load_to_impedance(powers: dict, v_nom: float, omega0: float, bus: str = "?") -> PhaseImpedance:
    """Convert per-phase P/Q (W, var) at nominal voltage to series R/L matrices.

    Per phase Z = |v_nom|^2 / (P - jQ); L = Im(Z)/omega0.  Q < 0 (capacitive)
    yields a negative L entry; the caller flags it.  P <= 0 is rejected.
    """
    R = np.zeros((3, 3))
    L = np.zeros((3, 3))
    phases = ""
    for p in PHASES:
        if p not in powers:
            continue
        entry = powers[p]
        P, Q = float(entry["P"]), float(entry.get("Q", 0.0))
        if P <= 0.0:
            raise ValidationError(f"load at bus {bus}, phase {p}: P must be > 0, got {P}")
        Z = v_nom**2 / (P - 1j * Q)
        k = PHASES.index(p)
        R[k, k] = Z.real
        L[k, k] = Z.imag / omega0
        phases += p
    if not phases:
        raise ValidationError(f"load at bus {bus}: no phase entries")
    return PhaseImpedance(R=R, L=L, phases=phases)


def _impedance_from_entry(entry, phases, omega0, where) -> tuple[PhaseImpedance, dict | None, bool]:
    """Resolve a load's per-phase dict into a PhaseImpedance.

    Entries are either {"P":, "Q":} or {"R":, "L":} per phase; the two styles
    cannot be mixed within one load.
    """
    styles = {("P" in v) for v in entry.values()}
    if len(styles) != 1:
        raise ValidationError(f"{where}: mix of P/Q and R/L phase entries")
    if styles == {True}:
        return None, entry, False  # caller converts with bus voltage
    R = np.zeros((3, 3))
    L = np.zeros((3, 3))
    got = ""
    for p, v in entry.items():
        k = PHASES.index(p)
        R[k, k] = float(v["R"])
        L[k, k] = float(v.get("L", 0.0))
        got += p
    got = "".join(p for p in PHASES if p in got)
    return PhaseImpedance(R=R, L=L, phases=got), None, bool((np.diag(L) < 0).any())


@dataclass(frozen=True)
class ConductorLibrary:
    """Named conductor types with per-mile 3x3 R and X (at system frequency) matrices."""

    entries: dict  # name -> {"R": 3x3 ohm/mile, "X": 3x3 ohm/mile, "description": str}

    def names(self) -> list[str]:
        return sorted(self.entries)

    def line_matrices(self, name: str, length_ft: float, phases: str, omega0: float):
        if name not in self.entries:
            raise ValidationError(f"unknown conductor type {name!r}; library has {self.names()}")
        miles = length_ft / FEET_PER_MILE
        Rm = self.entries[name]["R"]
        Xm = self.entries[name]["X"]
        idx = phase_indices(phases)
        R = np.zeros((3, 3))
        L = np.zeros((3, 3))
        for a in idx:
            for b in idx:
                R[a, b] = Rm[a, b] * miles
                L[a, b] = Xm[a, b] * miles / omega0
        return R, L


def parse_conductors(path) -> ConductorLibrary:
    raw = _read_json(path)
    if raw.get("schema") != "gridcert-conductors/1":
        raise ValidationError(f"{path}: unsupported conductor library schema {raw.get('schema')!r}")
    entries = {}
    for name, ent in raw["conductors"].items():
        entries[name] = {
            "R": _as_matrix3(ent["R"], f"conductor {name} R"),
            "X": _as_matrix3(ent["X"], f"conductor {name} X"),
            "description": ent.get("description", ""),
        }
    return ConductorLibrary(entries=entries)


@dataclass(frozen=True)
class NetworkModel:
    """Validated, immutable network description.

    ``inverter_buses`` fixes the bus ordering used by every N x N matrix in
    the package; it follows the file order of the bus list.
    """

    name: str
    buses: tuple
    lines: tuple
    loads: tuple
    inverters: tuple
    omega0: float
    s_base: float
    v_base: float

    @property
    def bus_ids(self) -> list[str]:
        return [b.id for b in self.buses]

    @property
    def inverter_buses(self) -> list[str]:
        inv = {iv.bus for iv in self.inverters}
        return [b.id for b in self.buses if b.id in inv]

    @property
    def passive_buses(self) -> list[str]:
        inv = {iv.bus for iv in self.inverters}
        return [b.id for b in self.buses if b.id not in inv]

    def bus(self, bus_id: str) -> BusSpec:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def inverter(self, bus_id: str) -> InverterSpec:
        for iv in self.inverters:
            if iv.bus == bus_id:
                return iv
        raise KeyError(bus_id)

    def line_between(self, i: str, k: str) -> LineSpec:
        for ln in self.lines:
            if {ln.from_bus, ln.to_bus} == {i, k}:
                return ln
        raise KeyError(f"no line between {i} and {k}")

    # --- derived variants used by sweeps and comparisons -------------------

    def without_loads(self) -> "NetworkModel":
        return dataclasses.replace(self, loads=())

    def with_droops(self, mp_percent=None, mq_percent=None) -> "NetworkModel":
        """Override droop percentages; scalars apply to every inverter,
        dicts {bus_id: value} apply selectively."""

        def pick(value, bus, current):
            if value is None:
                return current
            if isinstance(value, dict):
                return float(value.get(bus, current))
            return float(value)

        new = tuple(
            dataclasses.replace(
                iv,
                mp_percent=pick(mp_percent, iv.bus, iv.mp_percent),
                mq_percent=pick(mq_percent, iv.bus, iv.mq_percent),
            )
            for iv in self.inverters
        )
        return dataclasses.replace(self, inverters=new)

    def with_setpoints(self, p_set=None, q_set=None, v_set=None) -> "NetworkModel":
        def pick(d, bus, current):
            if d is None:
                return current
            return float(d.get(bus, current))

        new = tuple(
            dataclasses.replace(
                iv,
                P_set=pick(p_set, iv.bus, iv.P_set),
                Q_set=pick(q_set, iv.bus, iv.Q_set),
                V_set=pick(v_set, iv.bus, iv.V_set),
            )
            for iv in self.inverters
        )
        return dataclasses.replace(self, inverters=new)

    def with_rating(self, bus_id: str, multiplier: float) -> "NetworkModel":
        new = tuple(
            dataclasses.replace(iv, rating=iv.rating * multiplier) if iv.bus == bus_id else iv
            for iv in self.inverters
        )
        return dataclasses.replace(self, inverters=new)

    def with_line_conductor(self, i: str, k: str, conductor: str, library: ConductorLibrary) -> "NetworkModel":
        """Replace the direct line between buses i,k with the same length of a
        different conductor type (used by conductor-type scenarios)."""
        target = self.line_between(i, k)
        if target.length_ft is None:
            raise ValidationError(
                f"line {i}-{k} has explicit R/L matrices, not a conductor reference; cannot swap type"
            )
        R, L = library.line_matrices(conductor, target.length_ft, target.impedance.phases, self.omega0)
        new_imp = PhaseImpedance(R=R, L=L, phases=target.impedance.phases)
        new_line = dataclasses.replace(target, impedance=new_imp, conductor=conductor)
        lines = tuple(new_line if ln is target else ln for ln in self.lines)
        return dataclasses.replace(self, lines=lines)

    def with_scaled_impedances(self, alpha: float) -> "NetworkModel":
        """Scale every line and load R and L by alpha (sensitivity studies)."""
        lines = tuple(
            dataclasses.replace(
                ln,
                impedance=PhaseImpedance(
                    R=alpha * ln.impedance.R, L=alpha * ln.impedance.L, phases=ln.impedance.phases
                ),
            )
            for ln in self.lines
        )
        loads = tuple(
            dataclasses.replace(
                ld,
                impedance=PhaseImpedance(
                    R=alpha * ld.impedance.R, L=alpha * ld.impedance.L, phases=ld.impedance.phases
                ),
                powers=None,
            )
            for ld in self.loads
        )
        return dataclasses.replace(self, lines=lines, loads=loads)


def _read_json(path):
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{p}: invalid JSON ({e})") from e


def _require(cond, msg):
    if not cond:
        raise ValidationError(msg)


def parse_network(path, conductors=None) -> NetworkModel:
    """Parse and validate a network JSON file.

    ``conductors`` may be a path to a conductor library file or a
    ConductorLibrary; it is required when any line references a conductor
    type by name.
    """
    raw = _read_json(path)
    if raw.get("schema") != "gridcert-network/1":
        raise ValidationError(f"{path}: unsupported network schema {raw.get('schema')!r}")
    if conductors is None and "conductor_library" in raw:
        conductors = Path(path).parent / raw["conductor_library"]
    if conductors is not None and not isinstance(conductors, ConductorLibrary):
        conductors = parse_conductors(conductors)

    freq = float(raw.get("frequency_hz", DEFAULT_FREQ_HZ))
    omega0 = 2 * math.pi * freq

    buses = []
    seen = set()
    for ent in raw.get("buses", []):
        bid = str(ent["id"])
        _require(bid not in seen, f"duplicate bus id {bid!r}")
        seen.add(bid)
        kind = ent.get("kind", "passive")
        _require(kind in ("inverter", "passive"), f"bus {bid}: unknown kind {kind!r}")
        phases = _check_phases(ent.get("phases", PHASES), f"bus {bid}")
        v = float(ent["nominal_voltage"])
        _require(v > 0, f"bus {bid}: nominal_voltage must be > 0")
        if kind == "inverter":
            _require(phases == PHASES, f"inverter bus {bid} must have all three phases")
        buses.append(BusSpec(id=bid, kind=kind, nominal_voltage=v, phases=phases))
    _require(len(buses) >= 2, "a network needs at least 2 buses")
    by_id = {b.id: b for b in buses}

    lines = []
    seen_pairs = set()
    for n, ent in enumerate(raw.get("lines", [])):
        where = f"line[{n}]"
        f, t = str(ent["from"]), str(ent["to"])
        _require(f in by_id, f"{where}: endpoint {f!r} is not a bus")
        _require(t in by_id, f"{where}: endpoint {t!r} is not a bus")
        _require(f != t, f"{where}: self-loop at {f!r}")
        pair = frozenset((f, t))
        _require(pair not in seen_pairs, f"{where}: duplicate line between {f} and {t}")
        seen_pairs.add(pair)
        phases = _check_phases(ent.get("phases", PHASES), where)
        for end in (f, t):
            _require(
                set(phases) <= set(by_id[end].phases),
                f"{where}: phase(s) {phases!r} not present at bus {end}",
            )
        conductor = ent.get("conductor")
        length_ft = float(ent["length_ft"]) if "length_ft" in ent else None
        if conductor is not None:
            _require(length_ft is not None, f"{where}: conductor reference needs length_ft")
            _require(conductors is not None, f"{where}: conductor {conductor!r} given but no library loaded")
            R, L = conductors.line_matrices(conductor, length_ft, phases, omega0)
        else:
            R = _as_matrix3(ent["R"], f"{where} R")
            L = _as_matrix3(ent["L"], f"{where} L")
        _require(np.allclose(R, R.T, rtol=1e-9, atol=0), f"{where}: R matrix must be symmetric")
        _require(np.allclose(L, L.T, rtol=1e-9, atol=0), f"{where}: L matrix must be symmetric")
        idx = phase_indices(phases)
        off = [i for i in range(3) if i not in idx]
        for M, nm in ((R, "R"), (L, "L")):
            _require(
                not off or (np.abs(M[off, :]).max() == 0 and np.abs(M[:, off]).max() == 0),
                f"{where}: {nm} has entries on absent phases",
            )
        z = (R + 1j * omega0 * L)[np.ix_(idx, idx)]
        if abs(np.linalg.det(z)) < 1e-30:
            raise ValidationError(f"{where}: impedance matrix is singular at omega0 on phases {phases!r}")
        lines.append(
            LineSpec(
                from_bus=f,
                to_bus=t,
                impedance=PhaseImpedance(R=R, L=L, phases=phases),
                conductor=conductor,
                length_ft=length_ft,
            )
        )

    loads = []
    seen_load = set()
    for n, ent in enumerate(raw.get("loads", [])):
        where = f"load[{n}]"
        bid = str(ent["bus"])
        _require(bid in by_id, f"{where}: bus {bid!r} does not exist")
        _require(bid not in seen_load, f"{where}: second load at bus {bid}; merge the phase entries")
        seen_load.add(bid)
        entry = ent["phases"]
        _require(isinstance(entry, dict) and entry, f"{where}: 'phases' must be a non-empty mapping")
        got = _check_phases("".join(entry), where)
        _require(set(got) <= set(by_id[bid].phases), f"{where}: load phases {got!r} not present at bus {bid}")
        imp, powers, capacitive = _impedance_from_entry(entry, got, omega0, where)
        if powers is not None:
            imp = load_to_impedance(powers, by_id[bid].nominal_voltage, omega0, bus=bid)
            capacitive = bool((np.diag(imp.L) < 0).any())
        idx = phase_indices(imp.phases)
        z = imp.z_at(omega0)[np.ix_(idx, idx)]
        if abs(np.linalg.det(z)) < 1e-30:
            raise ValidationError(f"{where}: equivalent impedance singular on loaded phases")
        loads.append(LoadSpec(bus=bid, impedance=imp, powers=powers, capacitive=capacitive))

    inverters = []
    seen_inv = set()
    for n, ent in enumerate(raw.get("inverters", [])):
        where = f"inverter[{n}]"
        bid = str(ent["bus"])
        _require(bid in by_id, f"{where}: bus {bid!r} does not exist")
        _require(by_id[bid].kind == "inverter", f"{where}: bus {bid} is not an inverter bus")
        _require(bid not in seen_inv, f"{where}: duplicate inverter at bus {bid}")
        seen_inv.add(bid)
        rating = float(ent["rating"])
        mp = float(ent["mp_percent"])
        mq = float(ent["mq_percent"])
        tau = float(ent["tau"])
        _require(rating > 0, f"{where}: rating must be > 0")
        _require(mp > 0 and mq > 0, f"{where}: droop percentages must be > 0")
        _require(tau > 0, f"{where}: tau must be > 0")
        inverters.append(
            InverterSpec(
                bus=bid,
                rating=rating,
                mp_percent=mp,
                mq_percent=mq,
                tau=tau,
                P_set=float(ent.get("P_set", 0.0)),
                Q_set=float(ent.get("Q_set", 0.0)),
                V_set=float(ent.get("V_set", by_id[bid].nominal_voltage)),
                omega0=omega0,
            )
        )
    inv_bus_ids = {iv.bus for iv in inverters}
    for b in buses:
        if b.kind == "inverter":
            _require(b.id in inv_bus_ids, f"bus {b.id} is marked 'inverter' but has no inverter entry")
    _require(len(inverters) >= 1, "network has no inverters")

    # Connectivity over the line graph (loads do not connect buses).
    adj = {b.id: set() for b in buses}
    for ln in lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    if lines:
        stack = [buses[0].id]
        reached = set()
        while stack:
            v = stack.pop()
            if v in reached:
                continue
            reached.add(v)
            stack.extend(adj[v] - reached)
        _require(reached == set(by_id), f"network is not connected; unreachable buses {sorted(set(by_id) - reached)}")

    v_nom = {by_id[iv.bus].nominal_voltage for iv in inverters}
    _require(
        max(v_nom) - min(v_nom) <= 1e-9 * max(v_nom),
        "all inverter buses must share one nominal voltage (no transformers are modeled)",
    )
    v_base = v_nom.pop()
    s_base = float(raw.get("power_base_va", sum(iv.rating for iv in inverters)))
    _require(s_base > 0, "power_base_va must be > 0")

    taus = {iv.tau for iv in inverters}
    _require(
        max(taus) - min(taus) <= 1e-12 * max(taus),
        "all inverters must share one filter time constant tau (the reduced model has a single tau)",
    )

    return NetworkModel(
        name=str(raw.get("name", Path(path).stem)),
        buses=tuple(buses),
        lines=tuple(lines),
        loads=tuple(loads),
        inverters=tuple(inverters),
        omega0=omega0,
        s_base=s_base,
        v_base=v_base,
    )
