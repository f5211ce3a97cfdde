"""Admittance pencils and the real matrix set of the reduced model.

Every series element (line or equivalent-impedance load) with matrices
R, L contributes a first-order admittance pencil

    Y(s) = Y0 + s*Y1,   Y0 = (R + j*omega0*L)^-1,   Y1 = -Y0 @ L @ Y0,

which is the first-order Taylor expansion in s of (R + (s + j*omega0)*L)^-1.
Line pencils assemble into a block-Laplacian network pencil (zero block-row
sums); load pencils sit on the block diagonal.  Passive (non-inverter) buses
are eliminated by a Schur complement of the pencil carried to first order in
s, so that the compressed matrices index inverter buses only.  The balanced
inverter voltages let the 3N x 3N pencil compress to N x N through
Theta = I_N (x) [1, t, t^2]^T with t = exp(-j*2*pi/3).

All compressed quantities are per-unitized on (s_base, v_base) so that the
droop matrices Lambda_p/Lambda_q and the network matrices live on one scale;
stability verdicts are invariant to the choice of s_base.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import AssemblyError, ModelRegimeError
from .network import NetworkModel, phase_indices

SYM_TOL = 1e-9


@dataclass(frozen=True)
class AffineAdmittance:
    """Matrix pencil Y(s) = Y0 + s*Y1, either three-phase (3M x 3M) or compressed (N x N)."""

    Y0: np.ndarray
    Y1: np.ndarray

    def __post_init__(self):
        if self.Y0.shape != self.Y1.shape or self.Y0.shape[0] != self.Y0.shape[1]:
            raise AssemblyError(f"pencil coefficients must be square and congruent, got {self.Y0.shape} / {self.Y1.shape}")

    @property
    def dimension(self) -> int:
        return self.Y0.shape[0]

    def at(self, s: complex) -> np.ndarray:
        return self.Y0 + s * self.Y1

    def symmetry_defect(self) -> float:
        d = 0.0
        for M in (self.Y0, self.Y1):
            n = np.linalg.norm(M)
            if n > 0:
                d = max(d, np.linalg.norm(M - M.T) / n)
        return d


def element_pencil(R: np.ndarray, L: np.ndarray, phases: str, omega0: float, name: str):
    """(Y0, Y1) 3x3 pencil of one series element, inverted on its present phases."""
    idx = phase_indices(phases)
    z = (R + 1j * omega0 * L)[np.ix_(idx, idx)]
    try:
        y = np.linalg.inv(z)
    except np.linalg.LinAlgError as e:
        raise AssemblyError(f"singular impedance in {name}") from e
    Y0 = np.zeros((3, 3), dtype=complex)
    Y1 = np.zeros((3, 3), dtype=complex)
    Y0[np.ix_(idx, idx)] = y
    Y1[np.ix_(idx, idx)] = -y @ L[np.ix_(idx, idx)] @ y
    return Y0, Y1


def assemble_phase_admittance(model: NetworkModel):
    """Assemble the three-phase network and load pencils over all buses.

    Returns (Ynet_abc, Yload_abc), each an AffineAdmittance of size 3*n_buses.
    Network blocks: off-diagonal (i,k) = -(Y0 + s*Y1) of the line, diagonal =
    negative sum of the off-diagonal blocks.  Load blocks are diagonal.
    """
    ids = model.bus_ids
    pos = {b: 3 * i for i, b in enumerate(ids)}
    n = 3 * len(ids)
    N0 = np.zeros((n, n), dtype=complex)
    N1 = np.zeros((n, n), dtype=complex)
    for ln in model.lines:
        Y0, Y1 = element_pencil(
            ln.impedance.R, ln.impedance.L, ln.impedance.phases, model.omega0, f"line {ln.from_bus}-{ln.to_bus}"
        )
        i, k = pos[ln.from_bus], pos[ln.to_bus]
        for Y, M in ((Y0, N0), (Y1, N1)):
            M[i : i + 3, k : k + 3] -= Y
            M[k : k + 3, i : i + 3] -= Y
            M[i : i + 3, i : i + 3] += Y
            M[k : k + 3, k : k + 3] += Y
    L0 = np.zeros((n, n), dtype=complex)
    L1 = np.zeros((n, n), dtype=complex)
    for ld in model.loads:
        Y0, Y1 = element_pencil(ld.impedance.R, ld.impedance.L, ld.impedance.phases, model.omega0, f"load at {ld.bus}")
        i = pos[ld.bus]
        L0[i : i + 3, i : i + 3] += Y0
        L1[i : i + 3, i : i + 3] += Y1
    return AffineAdmittance(N0, N1), AffineAdmittance(L0, L1)


def _present_rows(model: NetworkModel):
    """Row indices (into the 3*n_buses layout) that carry any phase, per bus kind."""
    present = {b.id: set() for b in model.buses}
    for ln in model.lines:
        for p in ln.impedance.phases:
            present[ln.from_bus].add(p)
            present[ln.to_bus].add(p)
    for ld in model.loads:
        for p in ld.impedance.phases:
            present[ld.bus].add(p)
    ids = model.bus_ids
    inv = set(model.inverter_buses)
    t_rows, p_rows = [], []
    for i, b in enumerate(ids):
        for k, p in enumerate("abc"):
            row = 3 * i + k
            if b in inv:
                t_rows.append(row)  # inverter buses keep all three phases
            elif p in present[b]:
                p_rows.append(row)
    return t_rows, p_rows


def kron_reduce(Ynet: AffineAdmittance, Yload: AffineAdmittance, model: NetworkModel):
    """Eliminate passive buses from the pencil, folding their loads into the network part.

    The reduction is the Schur complement of Y(s) on the passive rows,
    expanded to first order in s:

        Y0_red = A0_tt - A0_tp A0_pp^-1 A0_pt
        Y1_red = A1_tt - A1_tp A0_pp^-1 A0_pt - A0_tp A0_pp^-1 A1_pt
                 + A0_tp A0_pp^-1 A1_pp A0_pp^-1 A0_pt

    with A(s) = Ynet(s) + Yload(s) restricted to passive rows that carry a
    phase.  Loads at inverter buses stay in the returned load pencil.
    Returns (Ynet_red, Yload_inv), both 3N x 3N over inverter buses.
    """
    t_rows, p_rows = _present_rows(model)
    A0 = Ynet.Y0.copy()
    A1 = Ynet.Y1.copy()
    # passive-bus loads take part in the elimination
    inv_ids = set(model.inverter_buses)
    pos = {b: 3 * i for i, b in enumerate(model.bus_ids)}
    for ld in model.loads:
        if ld.bus not in inv_ids:
            i = pos[ld.bus]
            A0[i : i + 3, i : i + 3] += Yload.Y0[i : i + 3, i : i + 3]
            A1[i : i + 3, i : i + 3] += Yload.Y1[i : i + 3, i : i + 3]

    T, P = np.ix_(t_rows, t_rows), np.ix_(p_rows, p_rows)
    TP, PT = np.ix_(t_rows, p_rows), np.ix_(p_rows, t_rows)
    if not p_rows:
        Y0r, Y1r = A0[T], A1[T]
    else:
        A0pp = A0[P]
        cond = np.linalg.cond(A0pp)
        if not np.isfinite(cond) or cond > 1e14:
            raise AssemblyError(
                f"passive-bus admittance block is numerically singular (cond={cond:.3g}); "
                "check for isolated passive buses"
            )
        X0 = np.linalg.solve(A0pp, A0[PT])          # A0_pp^-1 A0_pt
        X1 = np.linalg.solve(A0pp, A1[PT])          # A0_pp^-1 A1_pt
        Y0r = A0[T] - A0[TP] @ X0
        Y1r = A1[T] - A1[TP] @ X0 - A0[TP] @ X1 + A0[TP] @ np.linalg.solve(A0pp, A1[P] @ X0)

    li = [r for r in t_rows]
    Li = np.ix_(li, li)
    Yload_inv = AffineAdmittance(Yload.Y0[Li].copy(), Yload.Y1[Li].copy())
    return AffineAdmittance(Y0r, Y1r), Yload_inv


def theta_matrix(n: int) -> np.ndarray:
    t = np.exp(-2j * np.pi / 3)
    return np.kron(np.eye(n), np.array([[1.0], [t], [t * t]], dtype=complex))


def sequence_reduce(Y_abc: AffineAdmittance):
    """Compress a 3N x 3N pencil to N x N through the balanced-voltage map.

    Returns (AffineAdmittance, defect) where the coefficients are symmetrized
    as (Y + Y^T)/2 and ``defect`` is the worst relative asymmetry removed.
    Exact symmetry only holds for balanced inputs; the defect is reported so
    callers can judge how unbalanced the compression was.
    """
    n3 = Y_abc.dimension
    if n3 % 3:
        raise AssemblyError(f"three-phase pencil dimension {n3} is not a multiple of 3")
    Th = theta_matrix(n3 // 3)
    Y0 = Th.conj().T @ Y_abc.Y0 @ Th
    Y1 = Th.conj().T @ Y_abc.Y1 @ Th
    raw = AffineAdmittance(Y0, Y1)
    defect = raw.symmetry_defect()
    return AffineAdmittance((Y0 + Y0.T) / 2, (Y1 + Y1.T) / 2), defect


@dataclass(frozen=True)
class RealMatrixSet:
    """The six real N x N matrices of the reduced model plus droop inverses.

    B, G come from the zero-row-sum (Laplacian) part of the compressed
    quasi-steady network matrix; Btilde, Gtilde collect twice the shunt
    (diagonal row-sum) part, which is where constant-impedance loads land;
    Bprime, Gprime come from the full first-order coefficients.  Lambda_p and
    Lambda_q hold inverse droop gains, per unit on (s_base, v_base).
    """

    B: np.ndarray
    G: np.ndarray
    Btilde: np.ndarray
    Gtilde: np.ndarray
    Bprime: np.ndarray
    Gprime: np.ndarray
    Lambda_p: np.ndarray
    Lambda_q: np.ndarray
    tau: float
    bus_ids: tuple
    omega0: float
    rating_pu: np.ndarray  # rating_i / s_base
    vset_pu: np.ndarray  # V_set_i / v_base
    diagnostics: dict

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def named(self) -> dict:
        return {
            "Lambda_p": self.Lambda_p,
            "Lambda_q": self.Lambda_q,
            "B": self.B,
            "G": self.G,
            "Btilde": self.Btilde,
            "Gtilde": self.Gtilde,
            "Bprime": self.Bprime,
            "Gprime": self.Gprime,
        }

    def with_droops(self, mp_percent=None, mq_percent=None) -> "RealMatrixSet":
        """Rebuild Lambda_p/Lambda_q for new droop percentages.

        Scalars apply everywhere, dicts {bus_id: value} selectively, arrays
        positionally.  The network matrices are reused unchanged (droop gains
        do not enter them).
        """
        lp = np.diag(self.Lambda_p).copy()
        lq = np.diag(self.Lambda_q).copy()

        def resolve(value, current, scale):
            if value is None:
                return current
            if isinstance(value, dict):
                out = current.copy()
                for bus, v in value.items():
                    out[self.bus_ids.index(bus)] = scale(self.bus_ids.index(bus), float(v))
                return out
            arr = np.broadcast_to(np.asarray(value, dtype=float), current.shape).copy()
            return np.array([scale(i, arr[i]) for i in range(len(arr))])

        lam_p = lambda i, pct: 100.0 * self.rating_pu[i] / (pct * self.omega0)
        lam_q = lambda i, pct: 100.0 * self.rating_pu[i] / (pct * self.vset_pu[i])
        lp = resolve(mp_percent, lp, lam_p)
        lq = resolve(mq_percent, lq, lam_q)
        return replace(self, Lambda_p=np.diag(lp), Lambda_q=np.diag(lq))


def build_matrix_set(
    Ynet: AffineAdmittance,
    Yload: AffineAdmittance,
    model: NetworkModel,
    check_regime: bool = True,
    sym_defect: float = 0.0,
) -> RealMatrixSet:
    """Real matrix set from compressed N x N pencils, per unit on the model bases.

    The quasi-steady network coefficient is split into its zero-row-sum part
    (giving B, G) and its diagonal shunt part; the latter joins the explicit
    load diagonal in Btilde/Gtilde with the factor 2 that the linearization
    of |V|^2-type load power requires.  When every load sits at an inverter
    bus the shunt part of the network pencil vanishes and the construction
    coincides with the textbook definitions B = -Im Y0_net, G = Re Y0_net,
    Btilde = -2 Im Y0_load, Gtilde = 2 Re Y0_load, B' = Im(Y1_net+Y1_load),
    G' = -Re(Y1_net+Y1_load).
    """
    n = Ynet.dimension
    inv_ids = model.inverter_buses
    if n != len(inv_ids):
        raise AssemblyError(f"pencil dimension {n} does not match inverter count {len(inv_ids)}")
    z_base = model.v_base**2 / model.s_base
    Y0n = Ynet.Y0 * z_base
    Y1n = Ynet.Y1 * z_base
    Y0l = Yload.Y0 * z_base
    Y1l = Yload.Y1 * z_base

    rowsum = Y0n.sum(axis=1)
    lap = Y0n - np.diag(rowsum)
    shunt = np.diag(rowsum) + Y0l

    B = -lap.imag
    G = lap.real
    Btilde = np.diag(-2.0 * np.diag(shunt).imag)
    Gtilde = np.diag(2.0 * np.diag(shunt).real)
    Bprime = (Y1n + Y1l).imag
    Gprime = -(Y1n + Y1l).real

    inverters = [model.inverter(b) for b in inv_ids]
    rating_pu = np.array([iv.rating / model.s_base for iv in inverters])
    vset_pu = np.array([iv.V_set / model.v_base for iv in inverters])
    lam_p = np.array([100.0 * r / (iv.mp_percent * model.omega0) for r, iv in zip(rating_pu, inverters)])
    lam_q = np.array([100.0 * r / (iv.mq_percent * v) for r, v, iv in zip(rating_pu, vset_pu, inverters)])
    tau = inverters[0].tau

    def lam_min(M):
        return float(np.linalg.eigvalsh((M + M.T) / 2).min())

    # basis of the subspace orthogonal to the uniform angle translation;
    # B' is only required to be PD there (with no shunt element it has an
    # exact zero along the uniform direction, like B and G)
    U = np.linalg.svd(np.eye(n) - np.ones((n, n)) / n)[0][:, : n - 1] if n > 1 else np.zeros((1, 0))
    bp_quot = float(np.linalg.eigvalsh(U.T @ (Bprime + Bprime.T) / 2 @ U).min()) if n > 1 else lam_min(Bprime)

    scale = max(np.abs(Y0n).max(), np.abs(Y0l).max(), 1e-12)
    tol = 1e-8 * scale
    diag = {
        "s_base": model.s_base,
        "v_base": model.v_base,
        "sym_defect": sym_defect,
        "lambda_min_B": lam_min(B),
        "lambda_min_G": lam_min(G),
        "lambda_min_Bprime": lam_min(Bprime),
        "lambda_min_Bprime_quotient": bp_quot,
        "min_diag_Btilde": float(np.diag(Btilde).min()) if n else 0.0,
        "min_diag_Gtilde": float(np.diag(Gtilde).min()) if n else 0.0,
        "offdiag_shunt_leak": float(np.abs(shunt - np.diag(np.diag(shunt))).max()),
        "capacitive_load": bool(any(ld.capacitive for ld in model.loads)),
        "warnings": [],
    }
    if diag["min_diag_Btilde"] < -tol:
        diag["warnings"].append(
            "Btilde has negative diagonal entries (capacitive equivalent load); "
            "the load-susceptance positivity assumption does not hold"
        )
    if check_regime:
        if diag["lambda_min_B"] < -tol:
            raise ModelRegimeError(f"B is not positive semidefinite (lambda_min={diag['lambda_min_B']:.3e})")
        if diag["lambda_min_G"] < -tol:
            raise ModelRegimeError(f"G is not positive semidefinite (lambda_min={diag['lambda_min_G']:.3e})")
        if diag["lambda_min_Bprime"] < -tol or diag["lambda_min_Bprime_quotient"] <= tol:
            raise ModelRegimeError(
                f"B' is not positive definite on the non-rotational subspace "
                f"(lambda_min={diag['lambda_min_Bprime']:.3e}, "
                f"quotient={diag['lambda_min_Bprime_quotient']:.3e}); "
                "the first-order reduced model is outside its assumed regime"
            )
    return RealMatrixSet(
        B=B,
        G=G,
        Btilde=Btilde,
        Gtilde=Gtilde,
        Bprime=Bprime,
        Gprime=Gprime,
        Lambda_p=np.diag(lam_p),
        Lambda_q=np.diag(lam_q),
        tau=tau,
        bus_ids=tuple(inv_ids),
        omega0=model.omega0,
        rating_pu=rating_pu,
        vset_pu=vset_pu,
        diagnostics=diag,
    )


def build_matrices(model: NetworkModel, check_regime: bool = True, zeroth_order: bool = False) -> RealMatrixSet:
    """Full pipeline: assemble, Kron-reduce, compress, build the real matrix set.

    ``zeroth_order=True`` drops the first-order coefficients (Y1 := 0), i.e.
    B' = G' = 0, reproducing the quasi-steady-state simplification.
    """
    Ynet, Yload = assemble_phase_admittance(model)
    if zeroth_order:
        Ynet = AffineAdmittance(Ynet.Y0, np.zeros_like(Ynet.Y1))
        Yload = AffineAdmittance(Yload.Y0, np.zeros_like(Yload.Y1))
    Ynet_r, Yload_r = kron_reduce(Ynet, Yload, model)
    Ync, d1 = sequence_reduce(Ynet_r)
    Ylc, d2 = sequence_reduce(Yload_r)
    return build_matrix_set(Ync, Ylc, model, check_regime=check_regime, sym_defect=max(d1, d2))
