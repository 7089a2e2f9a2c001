"""Exceptions raised by fogpipe.

Every exception carries the CLI exit code it maps to, so the command line
front-end can translate failures without inspecting messages.
"""


class FogpipeError(Exception):
    """Base class for all fogpipe faults."""

    exit_code = 1


class GraphError(FogpipeError, ValueError):
    """Raised when a layer graph is malformed, e.g. it is not a DAG."""

    exit_code = 2


class ClusterError(FogpipeError, ValueError):
    """Raised when a cluster description violates its invariants."""

    exit_code = 2


class ScheduleError(FogpipeError, ValueError):
    """Raised when a schedule or profile does not fit its instance."""

    exit_code = 2


class InfeasibleError(FogpipeError):
    """Raised when memory pruning leaves no feasible schedule."""

    exit_code = 3


class ProtocolError(FogpipeError):
    """Raised on malformed frames or unknown frame types."""

    exit_code = 5


class PhaseError(FogpipeError):
    """Raised when a runtime phase fails or times out.

        Parameters
        ----------
        phase : string
            Name of the phase that failed.

        worker : string, optional
            Endpoint or device of the worker that caused the failure.

        reason : string
            Human readable description.
        """

    exit_code = 5

    def __init__(self, phase, reason, worker=None):
        self.phase  = phase
        self.worker = worker
        if worker is None:
            message = "{} phase failed: {}".format(phase, reason)
        else:
            message = "{} phase failed on worker {}: {}".format(phase, worker, reason)
        super().__init__(message)
