"""Exception types shared across the package."""


class BpsaError(Exception):
    """Base class for all package errors."""


class LawContractError(BpsaError, ValueError):
    """An offspring law produced a sample or mean outside its contract."""


class ExtinctStateError(BpsaError, ValueError):
    """An event was requested on a state that cannot host it."""


class UndefinedProportionError(BpsaError, ArithmeticError):
    """A type proportion was requested where the population is empty."""


class ConfigError(BpsaError, ValueError):
    """A scenario configuration is malformed or inconsistent."""


class ResourceGuardError(BpsaError, RuntimeError):
    """A run exceeded its wall-time budget."""


class IntegrationError(BpsaError, FloatingPointError):
    """The ODE integrator produced a non-finite state."""


class NotEnumerableError(BpsaError, ValueError):
    """A law has no finite-support representation at the requested state."""


class NonConvergenceWarning(UserWarning):
    """Newton iteration failed to converge from a guess."""
