# This file holds the error types raised by hybrid_ap.


class HybridApError(RuntimeError):
    """Base class for every error hybrid_ap raises on purpose.

    Args:
        msg: The message displayed to the user on error.
    """

    def __init__(self, msg: str):
        super(HybridApError, self).__init__("%s" % (msg,))


class ConfigError(HybridApError):
    """An error encountered while reading the config file, the command line flags
    or the solver parameters."""


class EdgeFileError(HybridApError):
    """A similarity, association or name file could not be parsed."""


class GraphError(HybridApError):
    """The heterogeneous graph is malformed or cannot be prepared for solving."""


class SolverError(HybridApError):
    """A solver was started on a graph that does not meet its preconditions."""


class OracleError(HybridApError):
    """The exhaustive oracle was asked to enumerate an instance that is too large."""


class MetricError(HybridApError):
    """An exemplarness metric is undefined for the given labeling."""
