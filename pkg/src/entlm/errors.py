"""Exception types shared across the toolkit."""


class EntlmError(ValueError):
    """Base class for toolkit errors."""


class ShapeError(EntlmError):
    """Operand shapes do not conform for a kernel."""


class ContractError(EntlmError):
    """A documented precondition or invariant was violated."""


class VocabError(EntlmError):
    """An id falls outside the relevant vocabulary."""


class CapacityError(EntlmError):
    """An input exceeds a configured size limit."""


class ConfigError(EntlmError):
    """Invalid or unknown configuration."""
