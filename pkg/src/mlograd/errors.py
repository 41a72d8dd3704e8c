"""Exception types shared across the package.

Plain ``ValueError`` / ``KeyError`` are used for malformed arguments and
name lookups; the classes below cover failure modes that callers may want
to catch separately.
"""


class NumericalError(ArithmeticError):
    """A computation left the valid numeric domain (non-finite or log<=0)."""


class InvalidStateError(RuntimeError):
    """An operation was called before its preconditions were established."""


class GraphCycleError(ValueError):
    """The lower-to-upper dependency graph contains a cycle."""


class HierarchyError(ValueError):
    """An upper-to-lower edge contradicts the lower-to-upper ordering."""


class ConsistencyError(RuntimeError):
    """Internal scheduling invariant violated (e.g. notification on a non-edge)."""


class ConfigError(ValueError):
    """A benchmark configuration file is malformed."""


class UnusedDependencyWarning(UserWarning):
    """A reachable lower problem is never read by the dependent cost."""
