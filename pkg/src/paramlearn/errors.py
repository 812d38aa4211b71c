"""Exception hierarchy shared by all modules."""


class ParamLearnError(Exception):
    """Base class for every error raised by the package."""


class DomainError(ParamLearnError, ValueError):
    """A time or interval argument lies outside the curve's domain."""


class SimulationError(ParamLearnError, RuntimeError):
    """A simulated state became non-finite."""

    def __init__(self, path, step, value):
        self.path = path
        self.step = step
        self.value = value
        super().__init__(f"non-finite state {value!r} on path {path} at step {step}")


class ContractError(ParamLearnError, ValueError):
    """Inputs violate an operation's preconditions."""


class GibbsRangeError(ParamLearnError, ValueError):
    """The control grid does not resolve the Gibbs density (too narrow or off-centre)."""


class NonIntegrableError(ParamLearnError, ValueError):
    """The Hamiltonian is not strictly convex in the control, so exp(-L/lambda) is not a density."""


class DegenerateRegressorError(ParamLearnError, ValueError):
    """All regressors are numerically zero."""


class PolicyIterationError(ParamLearnError, RuntimeError):
    """A policy-iteration refit left the admissible region."""


class ConfigError(ParamLearnError, ValueError):
    """Malformed or invalid experiment configuration."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
