"""Exception types raised across the package."""


class ParameterError(ValueError):
    """Invalid sizes, shapes or hyper-parameters."""


class WavFormatError(ValueError):
    """Unsupported, multichannel, empty or truncated WAV file."""
