"""Parameter-space exploration: droop region grids, stability boundaries per
method (certificate / eigenvalue / simulation), conservativeness, heat-maps.

Boundary convention: a droop axis moves the P-f (or Q-V) droop percentage of
the swept buses together while all other inverters stay at their nominal
settings.  The certificate boundary uses the full network certificate (all
neighboring pairs), driven by the sign of the minimum condition slack; the
eigenvalue boundary uses the spectral abscissa of the reduced model; the
simulation boundary uses the trajectory classifier.

Soundness ordering: whenever certificate and a reference boundary are
computed for the same axis, lambda*_cert <= lambda*_ref must hold; a
violation aborts the sweep with the offending configuration in the message
(it would falsify the certificate implementation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admittance import build_matrices
from .certificate import check_network
from .errors import BracketError, GridCertError, ValidationError
from .network import ConductorLibrary, NetworkModel
from .reduced import assemble_state_space, eigenvalues
from .simulator import SolverOptions, sim_boundary


class SoundnessError(GridCertError):
    """A certificate boundary exceeded its reference boundary (theory violation)."""


@dataclass
class BoundaryResult:
    method: str  # "cert" | "eig" | "sim"
    value: float  # boundary droop percentage
    axis: str
    buses: tuple
    bracket: tuple
    tol: float
    transcript: list  # (droop value, measure, verdict)


@dataclass
class HeatmapTable:
    rows: list  # pair labels "i-k"
    columns: list  # scenario labels
    values: np.ndarray  # (len(rows), len(columns)) conservativeness %
    ref_method: str
    boundaries: dict  # (row, col) -> {"cert": float, ref_method: float}


def _cert_predicate(model: NetworkModel):
    ms = build_matrices(model)

    def probe(axis, buses, value):
        rep = check_network(ms.with_droops(**{axis: {b: value for b in buses}}))
        return rep.certified, rep.min_slack()

    return probe


def _eig_predicate(model: NetworkModel):
    ms = build_matrices(model)

    def probe(axis, buses, value):
        override = {axis: {b: value for b in buses}}
        rep = eigenvalues(assemble_state_space(ms.with_droops(**override)))
        return rep.stable, -rep.spectral_abscissa

    return probe


def _axis_key(axis: str) -> str:
    a = axis.replace("-", "_")
    if a in ("mp", "mp_percent"):
        return "mp_percent"
    if a in ("mq", "mq_percent"):
        return "mq_percent"
    raise ValidationError(f"unsupported sweep axis {axis!r} (use mp_percent or mq_percent)")


def boundary(
    model: NetworkModel,
    method: str,
    bracket,
    buses=None,
    axis: str = "mp_percent",
    tol: float = 1e-3,
    disturbances=(),
    horizon: float = 5.0,
    sim_opts: SolverOptions = SolverOptions(),
) -> BoundaryResult:
    """Largest droop percentage (on ``axis``, for ``buses``) that passes ``method``.

    Bisection from a bracket whose low end passes and high end fails.
    ``buses`` defaults to every inverter bus (a global axis).
    """
    axis = _axis_key(axis)
    buses = tuple(buses) if buses is not None else tuple(model.inverter_buses)
    for b in buses:
        try:
            model.inverter(b)
        except KeyError:
            raise ValidationError(f"swept bus {b!r} has no inverter")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0 < lo < hi):
        raise ValidationError(f"bracket must satisfy 0 < lo < hi, got {bracket}")
    transcript: list = []

    if method == "sim":
        if axis != "mp_percent":
            raise ValidationError("simulation boundaries are implemented for the mp_percent axis")
        tr: list = []
        val = sim_boundary(
            model, buses, (lo, hi), disturbances, horizon=horizon, tol=tol, opts=sim_opts, transcript=tr
        )
        transcript = [(x, None, v) for x, v in tr]
        return BoundaryResult("sim", float(val), axis, buses, (lo, hi), tol, transcript)

    if method == "cert":
        probe = _cert_predicate(model)
    elif method == "eig":
        probe = _eig_predicate(model)
    else:
        raise ValidationError(f"unknown boundary method {method!r}")

    def check(value):
        ok, measure = probe(axis, buses, value)
        transcript.append((float(value), float(measure), "pass" if ok else "fail"))
        return ok

    ok_lo, ok_hi = check(lo), check(hi)
    if ok_lo == ok_hi:
        state = "passes" if ok_lo else "fails"
        raise BracketError(f"{method} {state} at both bracket endpoints ({lo}, {hi}) on {axis} for buses {buses}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if check(mid):
            lo = mid
        else:
            hi = mid
    return BoundaryResult(method, 0.5 * (lo + hi), axis, buses, (float(bracket[0]), float(bracket[1])), tol, transcript)


def boundaries(
    model: NetworkModel,
    methods,
    bracket,
    buses=None,
    axis: str = "mp_percent",
    tol: float = 1e-3,
    enforce_ordering: bool = True,
    **sim_kwargs,
) -> dict:
    """Boundaries for several methods on one axis, with the soundness check.

    Returns {method: BoundaryResult}.  With ``enforce_ordering`` the
    certificate boundary must not exceed any reference boundary computed in
    the same call (within the joint bisection tolerance).
    """
    out = {m: boundary(model, m, bracket, buses=buses, axis=axis, tol=tol, **sim_kwargs) for m in methods}
    if enforce_ordering and "cert" in out:
        for ref in ("eig", "sim"):
            if ref in out and out["cert"].value > out[ref].value + 2 * tol:
                raise SoundnessError(
                    f"certificate boundary {out['cert'].value:.6g}% exceeds {ref} boundary "
                    f"{out[ref].value:.6g}% on {axis} for buses {out['cert'].buses} "
                    f"(model {model.name!r}); transcripts: cert={out['cert'].transcript}, "
                    f"{ref}={out[ref].transcript}"
                )
    return out


def _region_row(args):
    ms, methods, mp, mq_values = args
    row = {m: np.zeros(len(mq_values), dtype=bool) for m in methods}
    for b, mq in enumerate(mq_values):
        msd = ms.with_droops(mp_percent=float(mp), mq_percent=float(mq))
        for m in methods:
            if m == "cert":
                row[m][b] = check_network(msd).certified
            else:
                row[m][b] = eigenvalues(assemble_state_space(msd)).stable
    return row


def region_grid(model: NetworkModel, mp_values, mq_values, methods=("cert", "eig"), jobs: int = 1) -> dict:
    """Per-method stable/certified verdicts over an (mp, mq) droop grid.

    The droop values apply to every inverter.  Returns
    {method: bool array of shape (len(mp_values), len(mq_values))}.  The grid
    rows are independent; ``jobs`` > 1 evaluates them in a process pool with
    deterministic aggregation order.
    """
    mp_values = np.asarray(mp_values, dtype=float)
    mq_values = np.asarray(mq_values, dtype=float)
    if mp_values.size * mq_values.size > 200 * 200:
        raise ValidationError("region grid larger than the 200x200 cap")
    for m in methods:
        if m not in ("cert", "eig"):
            raise ValidationError(f"region_grid supports cert and eig, not {m!r}")
    ms = build_matrices(model)
    tasks = [(ms, tuple(methods), float(mp), mq_values) for mp in mp_values]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_region_row, tasks, chunksize=max(1, len(tasks) // (4 * jobs) or 1)))
    else:
        rows = [_region_row(t) for t in tasks]
    return {m: np.vstack([r[m] for r in rows]) for m in methods}


def conservativeness(est: float, ref: float) -> float:
    """Percentage gap 100*(ref - est)/ref between boundaries."""
    if ref <= 0:
        raise ValidationError(f"reference boundary must be > 0, got {ref}")
    return 100.0 * (ref - est) / ref


@dataclass(frozen=True)
class ConductorScenario:
    """Swap the direct line of each pair to each conductor type in ``values``."""

    values: tuple
    library: ConductorLibrary

    def labels(self):
        return list(self.values)

    def apply(self, model: NetworkModel, pair, value) -> NetworkModel:
        return model.with_line_conductor(pair[0], pair[1], value, self.library)


@dataclass(frozen=True)
class RatingScenario:
    """Scale the rating of the pair's varied bus by each multiplier in ``values``."""

    values: tuple  # multipliers, e.g. (0.8, 0.9, 1.0, 1.1, 1.2)
    vary: str = "second"  # "first" | "second" | explicit bus id

    def labels(self):
        return [f"x{v:g}" for v in self.values]

    def apply(self, model: NetworkModel, pair, value) -> NetworkModel:
        bus = {"first": pair[0], "second": pair[1]}.get(self.vary, self.vary)
        return model.with_rating(bus, float(value))


def heatmap(
    model: NetworkModel,
    pairs,
    scenario,
    ref_method: str = "eig",
    bracket=(1e-2, 50.0),
    tol: float = 1e-3,
    axis: str = "mp_percent",
    **sim_kwargs,
) -> HeatmapTable:
    """Conservativeness of the certificate boundary across pairs x scenarios.

    Each cell modifies the model per the scenario, computes the certificate
    and reference boundaries on the pair's droop axis, and stores
    100*(ref - cert)/ref.  The soundness ordering is enforced per cell.
    """
    if ref_method not in ("eig", "sim"):
        raise ValidationError(f"reference method must be 'eig' or 'sim', not {ref_method!r}")
    rows = [f"{i}-{k}" for i, k in pairs]
    cols = scenario.labels()
    values = np.zeros((len(rows), len(cols)))
    cell_boundaries = {}
    for r, pair in enumerate(pairs):
        for c, val in enumerate(scenario.values):
            m = scenario.apply(model, pair, val)
            res = boundaries(m, ("cert", ref_method), bracket, buses=pair, axis=axis, tol=tol, **sim_kwargs)
            est = res["cert"].value
            ref = res[ref_method].value
            values[r, c] = conservativeness(est, ref)
            cell_boundaries[(rows[r], cols[c])] = {"cert": est, ref_method: ref}
    return HeatmapTable(rows=rows, columns=cols, values=values, ref_method=ref_method, boundaries=cell_boundaries)


# --- CSV emission -----------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def region_grid_rows(mp_values, mq_values, grids: dict):
    methods = sorted(grids)
    header = ["mp_percent", "mq_percent"] + methods
    rows = []
    for a, mp in enumerate(mp_values):
        for b, mq in enumerate(mq_values):
            rows.append([mp, mq] + [grids[m][a, b] for m in methods])
    return header, rows


def boundary_rows(result: BoundaryResult):
    header = ["step", "value", "measure", "verdict"]
    rows = [[i, x, m, v] for i, (x, m, v) in enumerate(result.transcript)]
    return header, rows


def heatmap_rows(table: HeatmapTable):
    header = ["pair"] + [str(c) for c in table.columns]
    rows = []
    for r, label in enumerate(table.rows):
        rows.append([label] + [table.values[r, c] for c in range(len(table.columns))])
    return header, rows
