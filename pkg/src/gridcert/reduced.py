"""Linearized state-space of the reduced model and the eigenvalue stability oracle.

The second-order angle/first-order voltage dynamics

    tau*Lp*phi_dd + (Lp - B')*phi_d + B*phi + (G + Gt)*rho - G'*rho_d = 0
    (tau*Lq - B')*rho_d + (Lq + B + Bt)*rho - G*phi + G'*phi_d = 0

are put in first-order form over x = [phi, rho, phi_d]: rho_d is solved from
the second equation and substituted into the first.  States are angle
deviations (rad), per-unit voltage deviations, and frequency deviations
(rad/s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admittance import RealMatrixSet
from .errors import AssemblyError, NumericalError

MARGIN_TOL = 1e-6  # rad/s; stable <=> spectral abscissa < -MARGIN_TOL
ZERO_MODE_TOL = 1e-9


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray  # 3N x 3N, real
    bus_ids: tuple
    pivot_cond: float  # condition number of (tau*Lq - B') seen during assembly

    @property
    def n(self) -> int:
        return self.A.shape[0] // 3


@dataclass(frozen=True)
class EigReport:
    eigenvalues: np.ndarray  # complex, sorted by real part descending
    spectral_abscissa: float
    stable: bool
    margin: float  # distance of the governing eigenvalue to the imaginary axis
    zero_mode_excluded: bool


def assemble_state_space(ms: RealMatrixSet) -> StateSpace:
    """Build A over x = [phi, rho, phi_d] from a real matrix set."""
    n = ms.n
    S = ms.tau * ms.Lambda_q - ms.Bprime
    cond = float(np.linalg.cond(S))
    if not np.isfinite(cond) or cond > 1e12:
        raise AssemblyError(
            f"(tau*Lambda_q - B') is numerically singular (cond={cond:.3g}); "
            "a larger Lambda_q (smaller mq droop) restores invertibility"
        )
    Sinv = np.linalg.inv(S)
    I = np.eye(n)
    Z = np.zeros((n, n))
    rho_rows = np.hstack([Sinv @ ms.G, -Sinv @ (ms.Lambda_q + ms.B + ms.Btilde), -Sinv @ ms.Gprime])
    top = np.hstack([Z, Z, I])
    rhs = np.hstack([-ms.B, -(ms.G + ms.Gtilde), -(ms.Lambda_p - ms.Bprime)]) + ms.Gprime @ rho_rows
    acc = np.linalg.solve(ms.tau * ms.Lambda_p, rhs)
    A = np.vstack([top, rho_rows, acc])
    if not np.all(np.isfinite(A)):
        raise AssemblyError("state matrix has non-finite entries")
    return StateSpace(A=A, bus_ids=ms.bus_ids, pivot_cond=cond)


def model_residual(ms: RealMatrixSet, ss: StateSpace, x: np.ndarray):
    """Residuals of both governing equations at state x under xdot = A x.

    Exactly zero (to rounding) for a correct assembly; used as the oracle in
    tests.
    """
    n = ms.n
    phi, rho, phid = x[:n], x[n : 2 * n], x[2 * n :]
    xd = ss.A @ x
    rhod, phidd = xd[n : 2 * n], xd[2 * n :]
    r1 = ms.tau * ms.Lambda_p @ phidd + (ms.Lambda_p - ms.Bprime) @ phid + ms.B @ phi \
        + (ms.G + ms.Gtilde) @ rho - ms.Gprime @ rhod
    r2 = (ms.tau * ms.Lambda_q - ms.Bprime) @ rhod + (ms.Lambda_q + ms.B + ms.Btilde) @ rho \
        - ms.G @ phi + ms.Gprime @ phid
    return r1, r2


def zeroth_order_state_space(ms: RealMatrixSet) -> StateSpace:
    """State space of the quasi-steady simplification (B' = G' = 0)."""
    from dataclasses import replace

    ms0 = replace(ms, Bprime=np.zeros_like(ms.Bprime), Gprime=np.zeros_like(ms.Gprime))
    return assemble_state_space(ms0)


def _structural_zero_index(vals: np.ndarray, vecs: np.ndarray, n: int):
    """Index of the uniform-angle-translation mode, if present.

    The mode has |lambda| below tolerance and an eigenvector concentrated on
    a uniform phi block with (near) zero rho and phi_d parts.
    """
    for i in np.argsort(np.abs(vals)):
        if abs(vals[i]) > ZERO_MODE_TOL:
            return None
        v = vecs[:, i]
        phi, rest = v[:n], v[n:]
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        uniform = phi - phi.mean()
        if np.linalg.norm(rest) <= 1e-6 * nv and np.linalg.norm(uniform) <= 1e-6 * nv:
            return i
    return None


def eigenvalues(ss: StateSpace, margin_tol: float = MARGIN_TOL) -> EigReport:
    """All eigenvalues of A, sorted by real part (descending), with the verdict.

    One structural zero eigenvalue (the uniform angle translation that exists
    when no shunt element pins the angles) is excluded from the verdict.
    """
    try:
        vals, vecs = np.linalg.eig(ss.A)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"eigenvalue computation failed to converge: {e}") from e
    norm_a = max(np.linalg.norm(ss.A, 2), 1e-300)
    worst = max(
        np.linalg.norm(ss.A @ vecs[:, i] - vals[i] * vecs[:, i]) / norm_a for i in range(len(vals))
    )
    if worst > 1e-8:
        raise NumericalError(f"eigenpair residual {worst:.3e} exceeds 1e-8")

    zi = _structural_zero_index(vals, vecs, ss.n)
    mask = np.ones(len(vals), dtype=bool)
    if zi is not None:
        mask[zi] = False
    governed = vals[mask] if mask.any() else vals
    abscissa = float(governed.real.max())
    order = np.argsort(-vals.real)
    return EigReport(
        eigenvalues=vals[order],
        spectral_abscissa=abscissa,
        stable=bool(abscissa < -margin_tol),
        margin=float(-abscissa),
        zero_mode_excluded=zi is not None,
    )


def is_stable(ms: RealMatrixSet, margin_tol: float = MARGIN_TOL) -> bool:
    return eigenvalues(assemble_state_space(ms), margin_tol=margin_tol).stable
