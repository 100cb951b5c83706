"""Exception hierarchy shared by the library and the CLI."""


class SparsgdError(Exception):
    """Base class for every error raised by this package."""


class StructureError(SparsgdError, ValueError):
    """Layer structures or vector dimensions do not line up."""


class ContractViolation(SparsgdError, ValueError):
    """A caller broke an operation's precondition (bad k, unsorted indices, ...)."""


class ProtocolViolation(SparsgdError):
    """Workers handed a collective payloads it cannot combine."""


class ConfigError(SparsgdError):
    """Invalid run configuration. ``rule`` names the violated invariant, if any."""

    def __init__(self, message: str, rule: str | None = None):
        self.rule = rule
        super().__init__(f"[{rule}] {message}" if rule else message)


class DivergenceError(SparsgdError):
    """Training produced a non-finite loss or parameter."""


class MetricsFileError(SparsgdError):
    """A metrics file is missing or does not match its schema."""
