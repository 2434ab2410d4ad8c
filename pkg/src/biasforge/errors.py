"""Exception hierarchy shared by all biasforge modules.

Two broad families matter for the CLI exit codes: ``ConfigError`` covers
mistakes in user-supplied configuration (exit code 1), ``DataError`` covers
problems with the data being processed (exit code 2). Anything else is an
internal error (exit code 3).
"""


class BiasforgeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BiasforgeError):
    """User or configuration error."""


class DataError(BiasforgeError):
    """The input data violates a contract."""


# --- manifest errors -------------------------------------------------------

class EmptyDataset(DataError):
    """A dataset root contains no class directories."""


class EmptyClass(DataError):
    """A class exists but has no usable records."""


class InsufficientClassSize(DataError):
    """A class has too few records for the requested split ratio."""


class DuplicatePath(DataError):
    """The same image path appears more than once."""


class UnknownClass(DataError):
    """A record's class label is not part of the target class set."""


# --- procedural generation errors ------------------------------------------

class MissingMetadata(DataError):
    """An external render directory lacks its sidecar parameters file."""


class MetadataMismatch(DataError):
    """Image files and sidecar entries disagree in count."""


# --- trainer errors ---------------------------------------------------------

class ClassSetMismatch(DataError):
    """Two manifests that must share a class set do not."""


class MissingPretrained(ConfigError):
    """The pretrained-backbone weights file is absent."""


# --- bootstrap errors --------------------------------------------------------

class IncompletePredictions(DataError):
    """A truth record has no corresponding prediction row."""


class InsufficientSamples(DataError):
    """Too few values to compute a confidence interval."""


# --- report errors -----------------------------------------------------------

class KTooLarge(ConfigError):
    """worst_k policy asked for more classes than exist."""
