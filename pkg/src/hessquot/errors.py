"""Exception types shared across the package."""


class NotAdmissibleError(ValueError):
    """Eigenvalues left the Garding cone where the quotient operator lives.

    Carries the offending eigenvalue list, the first sigma index that failed
    the strict positivity test, and (when raised during grid assembly) the
    multi-index of the offending node.
    """

    def __init__(self, lam, failing_index, node=None):
        self.lam = tuple(float(v) for v in lam)
        self.failing_index = int(failing_index)
        self.node = tuple(int(i) for i in node) if node is not None else None
        where = f" at node {self.node}" if self.node is not None else ""
        super().__init__(
            f"eigenvalues {self.lam} not admissible{where}: "
            f"sigma_{self.failing_index} <= 0"
        )


class SamplerExhaustedError(RuntimeError):
    """Rejection sampler hit its retry budget without landing in the cone."""


class EigenFailureError(RuntimeError):
    """Jacobi sweeps did not converge; for n <= 8 this indicates a bug."""


class OracleScaleError(ValueError):
    """Brute-force oracle invoked beyond its combinatorial size guard."""


class ProblemSpecError(ValueError):
    """Problem data violates a load-time invariant (boundary mismatch,
    inadmissible or insufficient subsolution)."""


class SolverError(RuntimeError):
    """Base class for solver failures; carries the last iterate and the
    partial report so callers can inspect where the continuation died."""

    def __init__(self, message, iterate=None, report=None):
        super().__init__(message)
        self.iterate = iterate
        self.report = report


class NewtonDivergenceError(SolverError):
    """A continuation stage exceeded its Newton iteration budget."""


class LineSearchError(SolverError):
    """Damped Newton could not find an admissible decreasing step."""


class HomotopyStallError(SolverError):
    """Step control shrank the continuation step below its floor."""


class SingularSystemError(SolverError):
    """Sparse solve failed or left a large residual.  While the linearized
    operator stays positive definite this should not happen; it usually
    signals an admissibility-margin collapse."""


class ConfigError(ValueError):
    """Malformed configuration file or CLI override."""
