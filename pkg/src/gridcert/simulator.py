"""Time-domain dynamic-phasor simulation of the full electromagnetic model.

States are the inverter terminal quantities (delta, omega, v) plus the
complex three-phase dynamic-phasor currents of every line and every
inductive load branch:

    delta_i' = omega_i - omega0
    tau * omega_i' = omega0 - omega_i + m_p,i (P_set,i - P_i)
    tau * v_i'     = V_set,i - v_i + m_q,i (Q_set,i - Q_i)
    L_e I_e' = V_from - V_to - (R_e + j omega0 L_e) I_e        (lines)
    L_l I_l' = V_bus - (R_l + j omega0 L_l) I_l                (loads, L_l > 0)

P_i + j Q_i = sum_phases V_i,p * conj(I_i,p) with I_i the total current the
inverter injects (loads at the bus plus incident line currents).  Inverter
terminal voltages are balanced: V_i = v_i * exp(j delta_i) * [1, t, t^2].

Passive buses carry no states; their voltages solve the phase-wise current
balance.  Where every attachment is inductive the balance is enforced in
differentiated form (sum of attached I' = 0), which is linear in the
unknown voltages with a constant coefficient matrix; a load phase with
non-positive equivalent inductance (unity-pf or capacitive) is simulated
quasi-statically as I = Z^-1 V and contributes V = -Z * sum(I) instead.
Either way the model reduces to an explicit ODE, integrated with an
implicit, stiffly accurate, adaptive-step scheme (the electromagnetic L/R
time constants make it stiff).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lu_factor, lu_solve

from .errors import BracketError, NumericalError, ValidationError
from .network import NetworkModel, phase_indices

T_ROT = np.exp(-2j * np.pi / 3)
BAL = np.array([1.0 + 0j, T_ROT, T_ROT**2])


@dataclass(frozen=True)
class Disturbance:
    time: float
    bus: str
    quantity: str  # "P_set" | "Q_set" | "load_scale"
    delta: float  # p.u. of the inverter rating for setpoints; fractional for load_scale

    def __post_init__(self):
        q = self.quantity.replace("-", "_")
        if q not in ("P_set", "Q_set", "load_scale"):
            raise ValidationError(f"unknown disturbance quantity {self.quantity!r}")
        object.__setattr__(self, "quantity", q)


@dataclass(frozen=True)
class SolverOptions:
    rtol: float = 1e-7
    atol_scale: float = 1e-9
    method: str = "Radau"
    max_step: float = math.inf
    output_dt: float = 1e-3


@dataclass
class Trajectory:
    t: np.ndarray
    delta: np.ndarray  # (K, N) rad
    omega: np.ndarray  # (K, N) rad/s
    v: np.ndarray  # (K, N) volts
    P_f: np.ndarray  # (K, N) W
    Q_f: np.ndarray  # (K, N) var
    bus_ids: tuple
    t_last_disturbance: float
    diverged: bool = False
    final_state: np.ndarray | None = None


class _Element:
    """One dynamic branch: a line (two ends) or an inductive load (one end)."""

    __slots__ = ("slot", "rows_f", "rows_t", "Linv", "L", "Z")

    def __init__(self, slot, rows_f, rows_t, L, Z):
        self.slot = slot
        self.rows_f = rows_f
        self.rows_t = rows_t
        self.L = L
        self.Linv = np.linalg.inv(L)
        self.Z = Z

    @property
    def n(self):
        return len(self.rows_f)

    def ends(self):
        yield 1.0, self.rows_f
        if self.rows_t is not None:
            yield -1.0, self.rows_t


class _Structures:
    """Precomputed linear maps for one network configuration.

    With c the stacked complex dynamic currents and Vi the stacked inverter
    phase voltages:  c' = Acc c + Acv Vi,  I_inj = Jc c + Jv Vi, and the
    passive-bus voltages are Vp = Pc c + Pv Vi.
    """

    def __init__(self, model: NetworkModel, load_scale: dict | None = None):
        self.model = model
        om = model.omega0
        scale = dict(load_scale or {})
        inv_ids = model.inverter_buses
        self.inv_ids = inv_ids
        ninv = len(inv_ids)
        inv_set = set(inv_ids)

        # --- (bus, phase) voltage slots -------------------------------------
        present = {b.id: set() for b in model.buses}
        for ln in model.lines:
            for p in ln.impedance.phases:
                present[ln.from_bus].add(p)
                present[ln.to_bus].add(p)
        for ld in model.loads:
            for p in ld.impedance.phases:
                present[ld.bus].add(p)
        rows = []
        for b in model.buses:
            ph = "abc" if b.id in inv_set else "".join(p for p in "abc" if p in present[b.id])
            rows.extend((b.id, p) for p in ph)
        self.row_of = {bp: i for i, bp in enumerate(rows)}
        nrows = len(rows)
        inv_rows = [self.row_of[(b, p)] for b in inv_ids for p in "abc"]
        inv_row_set = set(inv_rows)
        pas_rows = [i for i in range(nrows) if i not in inv_row_set]
        self.inv_rows, self.pas_rows = inv_rows, pas_rows

        # --- elements ---------------------------------------------------------
        self.elements: list[_Element] = []
        self.alg: list[tuple[int, complex]] = []  # (voltage row, Z) quasi-static load phases
        slot = 0
        for ln in model.lines:
            idx = phase_indices(ln.impedance.phases)
            L = ln.impedance.L[np.ix_(idx, idx)]
            if np.linalg.eigvalsh((L + L.T) / 2).min() <= 0:
                raise ValidationError(
                    f"line {ln.from_bus}-{ln.to_bus}: inductance matrix must be positive definite for simulation"
                )
            R = ln.impedance.R[np.ix_(idx, idx)]
            rf = [self.row_of[(ln.from_bus, p)] for p in ln.impedance.phases]
            rt = [self.row_of[(ln.to_bus, p)] for p in ln.impedance.phases]
            self.elements.append(_Element(slot, rf, rt, L, R + 1j * om * L))
            slot += len(rf)
        for ld in model.loads:
            s = float(scale.get(ld.bus, 1.0))  # admittance multiplier
            for p in ld.impedance.phases:
                k = phase_indices(p)[0]
                Rp = ld.impedance.R[k, k] / s
                Lp = ld.impedance.L[k, k] / s
                row = self.row_of[(ld.bus, p)]
                if Lp > 0:
                    self.elements.append(
                        _Element(slot, [row], None, np.array([[Lp]]), np.array([[Rp + 1j * om * Lp]]))
                    )
                    slot += 1
                else:
                    self.alg.append((row, Rp + 1j * om * Lp))
        self.n_cur = slot
        alg_rows = {r for r, _ in self.alg}

        # --- passive-bus voltage solve:  Mv @ V_all = Mc @ c -------------------
        pas_index = {r: j for j, r in enumerate(pas_rows)}
        Mv = np.zeros((len(pas_rows), nrows), dtype=complex)
        Mc = np.zeros((len(pas_rows), self.n_cur), dtype=complex)
        for r, Z in self.alg:
            if r in pas_index:
                Mv[pas_index[r], r] = 1.0  # V_r = -Z * sum(sigma I), filled below
        for el in self.elements:
            LZ = el.Linv @ el.Z
            for sgn, rr in el.ends():
                for a, r in enumerate(rr):
                    if r not in pas_index:
                        continue
                    j = pas_index[r]
                    if r in alg_rows:
                        # quasi-static row: V_r + Z_l * (sum sigma I)_r = 0
                        Zl = dict(self.alg)[r]
                        Mc[j, el.slot + a] += -sgn * Zl
                        continue
                    # differentiated balance: sum sigma [Linv (Vf - Vt - Z I)]_a = 0
                    for b in range(el.n):
                        Mv[j, el.rows_f[b]] += sgn * el.Linv[a, b]
                        if el.rows_t is not None:
                            Mv[j, el.rows_t[b]] -= sgn * el.Linv[a, b]
                        Mc[j, el.slot + b] += sgn * LZ[a, b]
        if pas_rows:
            lu = lu_factor(Mv[:, pas_rows])
            self.Pc = lu_solve(lu, Mc)
            self.Pv = lu_solve(lu, -Mv[:, inv_rows])
        else:
            self.Pc = np.zeros((0, self.n_cur), dtype=complex)
            self.Pv = np.zeros((0, 3 * ninv), dtype=complex)

        # --- current dynamics: c' = Acc c + Acv Vi ------------------------------
        Acc = np.zeros((self.n_cur, self.n_cur), dtype=complex)
        W = np.zeros((self.n_cur, nrows), dtype=complex)
        for el in self.elements:
            sl = slice(el.slot, el.slot + el.n)
            Acc[sl, sl] = -el.Linv @ el.Z
            for b in range(el.n):
                W[sl, el.rows_f[b]] += el.Linv[:, b]
                if el.rows_t is not None:
                    W[sl, el.rows_t[b]] -= el.Linv[:, b]
        self.Acc = Acc + W[:, pas_rows] @ self.Pc
        self.Acv = W[:, inv_rows] + W[:, pas_rows] @ self.Pv

        # --- injected inverter current: I_inj = Jc c + Jv Vi --------------------
        inv_pos = {r: j for j, r in enumerate(inv_rows)}
        Jc = np.zeros((3 * ninv, self.n_cur), dtype=complex)
        Jv = np.zeros((3 * ninv, 3 * ninv), dtype=complex)
        for el in self.elements:
            for sgn, rr in el.ends():
                for a, r in enumerate(rr):
                    if r in inv_pos:
                        Jc[inv_pos[r], el.slot + a] += sgn
        for r, Z in self.alg:
            if r in inv_pos:
                Jv[inv_pos[r], inv_pos[r]] += 1.0 / Z
        self.Jc, self.Jv = Jc, Jv

        # --- inverter parameters -------------------------------------------------
        invs = [model.inverter(b) for b in inv_ids]
        self.m_p = np.array([iv.m_p() for iv in invs])
        self.m_q = np.array([iv.m_q() for iv in invs])
        self.tau = np.array([iv.tau for iv in invs])
        self.P_set = np.array([iv.P_set for iv in invs])
        self.Q_set = np.array([iv.Q_set for iv in invs])
        self.V_set = np.array([iv.V_set for iv in invs])
        self.rating = np.array([iv.rating for iv in invs])
        self.omega0 = om
        self.ninv = ninv
        self.n_state = 3 * ninv + 2 * self.n_cur
        i_base = model.s_base / (3 * model.v_base)
        self.scales = np.concatenate(
            [
                np.ones(ninv),
                np.full(ninv, om),
                np.full(ninv, model.v_base),
                np.full(2 * self.n_cur, max(i_base, 1e-9)),
            ]
        )

    # --- state packing ----------------------------------------------------------

    def unpack(self, x):
        n = self.ninv
        c = x[3 * n : 3 * n + self.n_cur] + 1j * x[3 * n + self.n_cur :]
        return x[:n], x[n : 2 * n], x[2 * n : 3 * n], c

    def pack(self, d, w, v, c):
        return np.concatenate([d, w, v, c.real, c.imag])

    def inverter_voltages(self, d, v):
        return ((v * np.exp(1j * d))[:, None] * BAL[None, :]).reshape(-1)

    def powers(self, d, v, c):
        Vi = self.inverter_voltages(d, v)
        I = self.Jc @ c + self.Jv @ Vi
        S = (Vi.reshape(-1, 3) * np.conj(I.reshape(-1, 3))).sum(axis=1)
        return S.real, S.imag, Vi

    def rhs(self, t, x):
        d, w, v, c = self.unpack(x)
        P, Q, Vi = self.powers(d, v, c)
        cdot = self.Acc @ c + self.Acv @ Vi
        ddot = w - self.omega0
        wdot = (self.omega0 - w + self.m_p * (self.P_set - P)) / self.tau
        vdot = (self.V_set - v + self.m_q * (self.Q_set - Q)) / self.tau
        return self.pack(ddot, wdot, vdot, cdot)

    # --- quasi-steady phasor solve --------------------------------------------

    def _phasor_solve(self, d, v, domega):
        """Powers, element currents and bus voltages at frequency omega0 + domega."""
        om_off = 1j * domega
        nrows = len(self.inv_rows) + len(self.pas_rows)
        Y = np.zeros((nrows, nrows), dtype=complex)
        for el in self.elements:
            y = np.linalg.inv(el.Z + om_off * el.L)
            f = np.ix_(el.rows_f, el.rows_f)
            Y[f] += y
            if el.rows_t is not None:
                t_ = np.ix_(el.rows_t, el.rows_t)
                ft = np.ix_(el.rows_f, el.rows_t)
                tf = np.ix_(el.rows_t, el.rows_f)
                Y[t_] += y
                Y[ft] -= y
                Y[tf] -= y
        for r, Z in self.alg:
            Y[r, r] += 1.0 / Z

        Vi = self.inverter_voltages(d, v)
        V = np.zeros(nrows, dtype=complex)
        V[self.inv_rows] = Vi
        if self.pas_rows:
            Ypp = Y[np.ix_(self.pas_rows, self.pas_rows)]
            Ypi = Y[np.ix_(self.pas_rows, self.inv_rows)]
            V[self.pas_rows] = np.linalg.solve(Ypp, -Ypi @ Vi)
        I_inj = (Y @ V)[self.inv_rows]
        S = (Vi.reshape(-1, 3) * np.conj(I_inj.reshape(-1, 3))).sum(axis=1)
        c = np.zeros(self.n_cur, dtype=complex)
        for el in self.elements:
            dV = V[el.rows_f] - (V[el.rows_t] if el.rows_t is not None else 0.0)
            c[el.slot : el.slot + el.n] = np.linalg.solve(el.Z + om_off * el.L, dV)
        return S.real, S.imag, c, V


def solve_equilibrium(st: _Structures, newton_tol: float = 1e-10, max_iter: int = 60):
    """Quasi-steady state: angles, voltages and the common frequency offset.

    Solves  m_p,i (P_set,i - P_i) = domega  together with the voltage droop
    relations by damped Newton iteration from the flat start.  The offset is
    zero when the setpoints are consistent with an exact equilibrium at
    omega0 (the shipped fixtures are generated that way); otherwise the
    returned state is the drooped relative equilibrium whose phasors rotate
    at domega.
    """
    n = st.ninv
    om0 = st.omega0
    vb = float(np.mean(st.V_set))

    def split(u):
        d = np.concatenate([[0.0], u[: n - 1]])
        v = u[n - 1 : 2 * n - 1] * vb
        domega = u[2 * n - 1] * om0
        return d, v, domega

    def F(u):
        d, v, domega = split(u)
        P, Q, _, _ = st._phasor_solve(d, v, domega)
        fp = (st.m_p * (st.P_set - P) - domega) / om0
        fv = (st.V_set - v + st.m_q * (st.Q_set - Q)) / vb
        return np.concatenate([fp, fv])

    u = np.concatenate([np.zeros(n - 1), np.ones(n), [0.0]])
    f = F(u)
    converged = False
    for _ in range(max_iter):
        nf = np.linalg.norm(f, np.inf)
        if nf < newton_tol:
            converged = True
            break
        J = np.empty((len(f), len(u)))
        h = 1e-7
        for j in range(len(u)):
            up = u.copy()
            up[j] += h
            J[:, j] = (F(up) - f) / h
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"singular Jacobian in quasi-steady initialization: {e}") from e
        lam = 1.0
        for _ in range(40):
            u_new = u + lam * step
            f_new = F(u_new)
            if np.linalg.norm(f_new, np.inf) < nf * (1 - 1e-4 * lam) + 1e-15:
                break
            lam *= 0.5
        u, f = u_new, f_new
    if not converged and np.linalg.norm(f, np.inf) >= newton_tol:
        raise NumericalError(
            f"quasi-steady initialization did not converge (residual {np.linalg.norm(f, np.inf):.3e})"
        )
    d, v, domega = split(u)
    _, _, c, _ = st._phasor_solve(d, v, domega)
    x0 = st.pack(d, np.full(n, om0 + domega), v, c)
    return x0, {"domega": float(domega), "residual": float(np.linalg.norm(f, np.inf))}


def equilibrium_residual(st: _Structures, x0: np.ndarray) -> float:
    """max |xdot| at x0 in per-unit rates (angles vs rad, omega vs omega0, ...)."""
    xd = st.rhs(0.0, x0)
    return float(np.max(np.abs(xd) / st.scales))


def build_structures(model: NetworkModel, load_scale: dict | None = None) -> _Structures:
    return _Structures(model, load_scale)


def simulate(
    model: NetworkModel,
    disturbances=(),
    horizon: float = 5.0,
    droops=None,
    opts: SolverOptions = SolverOptions(),
) -> Trajectory:
    """Integrate the dynamic-phasor model from its quasi-steady state.

    ``droops`` optionally overrides droop percentages (dict with
    "mp_percent"/"mq_percent" as in NetworkModel.with_droops).  Disturbances
    are applied as setpoint or load-admittance steps at their scheduled
    times.  A solver failure (step-size underflow during blow-up) flags the
    trajectory as diverged instead of raising.
    """
    if droops is not None:
        model = model.with_droops(**droops)
    dists = sorted(
        (d if isinstance(d, Disturbance) else Disturbance(**d) for d in disturbances), key=lambda d: d.time
    )
    t_last = max((d.time for d in dists), default=0.0)
    if dists and horizon <= t_last:
        raise ValidationError(f"horizon {horizon} must exceed the last disturbance time {t_last}")

    st = _Structures(model)
    x0, _ = solve_equilibrium(st)

    times = [0.0] + [d.time for d in dists] + [horizon]
    t_out: list[float] = []
    rows: list[np.ndarray] = []
    powers: list[tuple] = []
    load_scale: dict[str, float] = {}
    x = x0
    diverged = False
    for seg, (t0, t1) in enumerate(zip(times[:-1], times[1:])):
        if t1 > t0 and not diverged:
            n_pts = max(2, int(round((t1 - t0) / opts.output_dt)) + 1)
            t_eval = np.linspace(t0, t1, n_pts)
            with np.errstate(over="ignore", invalid="ignore"):
                sol = solve_ivp(
                    st.rhs,
                    (t0, t1),
                    x,
                    method=opts.method,
                    t_eval=t_eval,
                    rtol=opts.rtol,
                    atol=opts.atol_scale * st.scales,
                    max_step=opts.max_step,
                )
            ys = sol.y.T if sol.y.size else np.empty((0, st.n_state))
            for ti, xi in zip(sol.t, ys):
                if not np.all(np.isfinite(xi)):
                    diverged = True
                    break
                t_out.append(float(ti))
                rows.append(xi)
                d, w, v, c = st.unpack(xi)
                P, Q, _ = st.powers(d, v, c)
                powers.append((d.copy(), w.copy(), v.copy(), P, Q))
            if not sol.success or not np.all(np.isfinite(sol.y)):
                diverged = True
            else:
                x = sol.y[:, -1]
        if seg < len(dists) and not diverged:
            d = dists[seg]
            if d.quantity in ("P_set", "Q_set"):
                try:
                    iv = model.inverter(d.bus)
                except KeyError:
                    raise ValidationError(f"disturbance bus {d.bus!r} has no inverter")
                j = st.inv_ids.index(d.bus)
                if d.quantity == "P_set":
                    st.P_set = st.P_set.copy()
                    st.P_set[j] += d.delta * iv.rating
                else:
                    st.Q_set = st.Q_set.copy()
                    st.Q_set[j] += d.delta * iv.rating
            else:  # load_scale: admittance multiplier steps to (1 + delta)
                if not any(ld.bus == d.bus for ld in model.loads):
                    raise ValidationError(f"disturbance bus {d.bus!r} has no load to scale")
                load_scale[d.bus] = load_scale.get(d.bus, 1.0) * (1.0 + d.delta)
                new_st = _Structures(model, load_scale)
                if new_st.n_state != st.n_state:
                    raise ValidationError(
                        f"load_scale at {d.bus} changed the load's dynamic/quasi-static split"
                    )
                new_st.P_set, new_st.Q_set = st.P_set, st.Q_set
                st = new_st

    K = len(t_out)
    N = st.ninv
    traj = Trajectory(
        t=np.asarray(t_out),
        delta=np.array([p[0] for p in powers]).reshape(K, N),
        omega=np.array([p[1] for p in powers]).reshape(K, N),
        v=np.array([p[2] for p in powers]).reshape(K, N),
        P_f=np.array([p[3] for p in powers]).reshape(K, N),
        Q_f=np.array([p[4] for p in powers]).reshape(K, N),
        bus_ids=tuple(st.inv_ids),
        t_last_disturbance=t_last,
        diverged=diverged,
        final_state=None if diverged else x,
    )
    return traj


GROWTH_RATIO = 1.025
DECAY_RATIO = 0.975


def classify(traj: Trajectory, quiet_level: float = 1e-7) -> str:
    """'stable' | 'unstable' | 'marginal' from the post-disturbance frequency envelope.

    The last 40% of the post-disturbance window is split in half and the
    worst |omega - final-window mean| envelope of the two halves compared:
    decay below DECAY_RATIO is stable, growth above GROWTH_RATIO unstable,
    the band between them marginal.  A diverged trajectory is unstable, and
    an envelope below ``quiet_level`` (relative) counts as stable.
    """
    if traj.diverged:
        return "unstable"
    t0 = traj.t_last_disturbance
    t_end = traj.t[-1]
    if t_end - t0 < 2.0:
        raise ValidationError("classification needs >= 2 s of trajectory after the last disturbance")
    w0 = t_end - 0.4 * (t_end - t0)
    sel = traj.t >= w0
    tw = traj.t[sel]
    ww = traj.omega[sel]
    tail = traj.t >= (t_end - 0.1 * (t_end - t0))
    wbar = traj.omega[tail].mean(axis=0)
    dev = np.abs(ww - wbar[None, :]).max(axis=1)
    mid = tw <= (w0 + (tw[-1] - w0) / 2)
    e1 = dev[mid].max() if mid.any() else 0.0
    e2 = dev[~mid].max() if (~mid).any() else 0.0
    scale = max(np.abs(wbar).max(), 1.0)
    if max(e1, e2) < quiet_level * scale:
        return "stable"
    if e1 == 0.0:
        return "unstable"
    ratio = e2 / e1
    if ratio >= GROWTH_RATIO:
        return "unstable"
    if ratio <= DECAY_RATIO:
        return "stable"
    return "marginal"


def sim_boundary(
    model: NetworkModel,
    pair,
    bracket,
    disturbances,
    horizon: float = 5.0,
    tol: float = 0.05,
    opts: SolverOptions = SolverOptions(),
    transcript: list | None = None,
) -> float:
    """Largest stable P-f droop (mp_percent) on the pair axis, by bisection.

    Both inverters of ``pair`` get the candidate mp_percent; the bracket
    endpoints must classify differently.  A marginal classification is
    retried once with a doubled horizon, then counted as unstable.
    """

    def classify_at(mp):
        drp = {"mp_percent": {b: mp for b in pair}}
        verdict = classify(simulate(model, disturbances, horizon, droops=drp, opts=opts))
        if verdict == "marginal":
            verdict = classify(simulate(model, disturbances, 2 * horizon, droops=drp, opts=opts))
            if verdict == "marginal":
                verdict = "unstable"
        if transcript is not None:
            transcript.append((float(mp), verdict))
        return verdict

    lo, hi = float(bracket[0]), float(bracket[1])
    c_lo, c_hi = classify_at(lo), classify_at(hi)
    if c_lo == c_hi:
        raise BracketError(f"bracket endpoints classify identically ({c_lo}) at {lo} and {hi}")
    if c_lo != "stable":
        lo, hi = hi, lo  # orient: lo stable, hi unstable
    while abs(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        if classify_at(mid) == "stable":
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
