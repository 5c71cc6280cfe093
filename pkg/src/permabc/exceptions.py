"""Exception hierarchy shared across the package."""


class PermABCError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PermABCError):
    """Invalid model hyperparameters or run configuration."""


class SchemaError(PermABCError):
    """A data file is missing required columns."""


class RowError(PermABCError):
    """A data file row could not be parsed."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class EmptySelectionError(PermABCError):
    """Filtering removed every row of a dataset."""


class SimulationFailure(PermABCError):
    """A simulator produced an invalid state (treated as an ABC rejection)."""


class NotAvailableError(PermABCError):
    """The requested quantity is not defined for this model or input."""


class BudgetExceededError(PermABCError):
    """The simulation budget ran out before the run completed.

    Carries whatever partial results were collected so far in
    ``partial_samples`` together with the simulator-call count.
    """

    def __init__(self, message, partial_samples=None, n_simulations=0):
        super().__init__(message)
        self.partial_samples = partial_samples if partial_samples is not None else []
        self.n_simulations = n_simulations


class ExtinctionError(PermABCError):
    """Every particle of an SMC population died.

    Carries the trace rows recorded up to the failure point.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
