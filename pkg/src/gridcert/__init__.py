"""gridcert: distributed small-signal stability certificates for
droop-controlled, three-phase unbalanced, inverter-based microgrids, with an
eigenvalue oracle and a dynamic-phasor time-domain simulator to validate
them.
"""

__version__ = "0.1.0"

from .admittance import (
    AffineAdmittance,
    RealMatrixSet,
    assemble_phase_admittance,
    build_matrices,
    build_matrix_set,
    kron_reduce,
    sequence_reduce,
)
from .certificate import (
    CertificateReport,
    LyapunovBundle,
    PairCertificate,
    build_lyapunov,
    check_network,
    check_pair,
    neighbor_pairs,
    neighbor_topology,
    pair_embedding,
    pair_partition,
    psd_check,
    verify_lyapunov_identity,
)
from .errors import (
    AssemblyError,
    BracketError,
    GridCertError,
    ModelRegimeError,
    NumericalError,
    ValidationError,
)
from .network import (
    BusSpec,
    ConductorLibrary,
    InverterSpec,
    LineSpec,
    LoadSpec,
    NetworkModel,
    PhaseImpedance,
    load_to_impedance,
    parse_conductors,
    parse_network,
)
from .reduced import (
    EigReport,
    StateSpace,
    assemble_state_space,
    eigenvalues,
    is_stable,
    model_residual,
    zeroth_order_state_space,
)
from .simulator import (
    Disturbance,
    SolverOptions,
    Trajectory,
    classify,
    sim_boundary,
    simulate,
    solve_equilibrium,
)
from .sweep import (
    BoundaryResult,
    ConductorScenario,
    HeatmapTable,
    RatingScenario,
    SoundnessError,
    boundaries,
    boundary,
    conservativeness,
    heatmap,
    region_grid,
)


def fixture_path(name: str):
    """Path of a packaged example network / conductor library JSON file."""
    from importlib.resources import files

    return files("gridcert.data").joinpath(name)
