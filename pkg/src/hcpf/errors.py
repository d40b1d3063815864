"""Exception hierarchy shared by every module."""


class HcpfError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(HcpfError, ValueError):
    """A parameter lies outside its valid domain."""


class FitError(HcpfError):
    """Maximum-likelihood or variational fitting could not proceed."""


class ConfigurationError(HcpfError, ValueError):
    """A run configuration is inconsistent (e.g. truncation cap exceeded)."""


class TruncationError(HcpfError):
    """A response is infeasible for every latent count up to the truncation level."""


class DataFormatError(HcpfError, ValueError):
    """An input file is malformed."""
