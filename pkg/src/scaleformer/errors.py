class ScaleFormerError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(ScaleFormerError, ValueError):
    """Tensor shapes do not satisfy an operation's preconditions."""


class ConfigError(ScaleFormerError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(ScaleFormerError, ValueError):
    """A caller broke an operation's contract (bad labels, non-scalar loss, ...)."""


class NonFiniteError(ScaleFormerError, FloatingPointError):
    """A forward op produced NaN or Inf while finite checks were enabled."""
