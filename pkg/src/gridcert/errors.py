"""Exception types shared across the package."""


class GridCertError(Exception):
    """Base class for all errors raised by gridcert."""


class ValidationError(GridCertError):
    """Malformed or inconsistent input data (network files, scenarios, CLI args)."""


class ModelRegimeError(GridCertError):
    """The built model violates an assumption of the analysis (e.g. B' not PD)."""


class AssemblyError(GridCertError):
    """Numerical failure while assembling admittance matrices (singular element)."""


class NumericalError(GridCertError):
    """Runtime numerical failure (eigensolver, Newton iteration, integration)."""


class BracketError(GridCertError):
    """A bisection bracket whose endpoints do not differ in verdict."""
