"""Exception types shared across the package."""


class FairTopKError(Exception):
    """Base class for all package errors."""


class ParseError(FairTopKError):
    """Malformed input file; message names the offending line."""


class DuplicateItemError(FairTopKError):
    """The same (query, item) pair appeared twice in an input."""


class EmptyDatasetError(FairTopKError):
    """An input produced a dataset with no rows."""


class ConfigurationError(FairTopKError):
    """A parameter is out of range or a config file is invalid."""


class LookupError_(FairTopKError):
    """Unknown query or item index passed to a model."""


class CheckpointError(FairTopKError):
    """A checkpoint file is missing, truncated or has a bad magic header."""


class NonFiniteGradientError(FairTopKError):
    """NaN or inf detected in a gradient term; message names the term."""


class StateError(FairTopKError):
    """An estimator state required for a sampled query is missing."""
