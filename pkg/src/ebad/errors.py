"""Exception types mapped to CLI exit codes."""


class EbadError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(EbadError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(EbadError):
    """Missing or malformed input data or model files (exit code 3)."""


class BundleMismatchError(EbadError):
    """Model bundle incompatible with the requested configuration (exit code 4)."""
