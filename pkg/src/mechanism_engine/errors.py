"""Exception hierarchy shared by the engines, the artifact store and the CLI."""


class MenuConnectError(Exception):
    """Base class for every error raised by menuconnect."""


class CongruenceError(MenuConnectError, ValueError):
    """Two menus (or a menu and a bijection) do not have matching shapes."""


class PathStructureError(MenuConnectError, ValueError):
    """A path has too few breakpoints or mixes incompatible menus."""


class PreconditionError(MenuConnectError, ValueError):
    """An operation was called outside of its documented domain."""


class SizeError(PreconditionError):
    """Index sets or menu sizes do not have the required cardinality."""


class SpecError(MenuConnectError, ValueError):
    """A distribution spec cannot serve the requested shape or quantity."""


class InvariantViolation(MenuConnectError, RuntimeError):
    """An internal consistency check failed."""


class DivergenceError(MenuConnectError, RuntimeError):
    """Training produced a non-finite objective."""


class AuditFailure(MenuConnectError):
    """A path audit or smoothing-gap check did not pass."""
