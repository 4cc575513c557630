"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid mesh/experiment configuration (bad sizes, tolerances, names)."""


class ModelError(ValueError):
    """Problem data violates the model assumptions (e.g. nonpositive diffusion)."""


class SolverError(RuntimeError):
    """Linear solver failed to reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
