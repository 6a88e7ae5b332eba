"""Exception types shared across the package."""


class FedviewError(Exception):
    """Base class for all fedview errors."""


class ConfigError(FedviewError):
    """Invalid model, registry, or generator configuration."""


class InputError(FedviewError):
    """Malformed operation input (shape mismatch, bad index, empty batch)."""


class TrainingError(FedviewError):
    """Local training cannot proceed (e.g. empty dataset)."""


class MetricUndefinedError(FedviewError):
    """Metric has no defined value for this input (e.g. single-class AUC)."""


class AggregationError(FedviewError):
    """Client updates cannot be combined (mixed architectures, empty set)."""


class AssemblyError(FedviewError):
    """Feature parts cannot be joined into a sample (registry mismatch)."""


class GenerationError(FedviewError):
    """Synthetic data generation is infeasible for the requested config."""


class CheckpointError(FedviewError):
    """Checkpoint file is missing, corrupt, or incompatible."""


class ClockRegressionError(FedviewError):
    """An event timestamp moved backwards; the event must be rejected."""


class ProtocolError(FedviewError):
    """Malformed wire payload or unexpected server response."""
