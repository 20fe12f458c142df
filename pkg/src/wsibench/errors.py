"""Exception types shared across the package."""


class WsibenchError(Exception):
    """Base class for all package-specific errors."""


class ImageFormatError(WsibenchError):
    """Raised for unreadable, truncated, or unsupported raster files."""


class DataError(WsibenchError):
    """Raised for invalid or missing input data (CLI exit code 2)."""


class BackendError(WsibenchError):
    """Raised when an inference backend fails (CLI exit code 3)."""


class ProtocolError(BackendError):
    """External backend violated the file protocol (bad dims, missing files)."""


class BackendTimeoutError(BackendError):
    """External backend did not produce a result within the timeout."""


class PipelineError(WsibenchError):
    """A pipeline stage failed; message carries the element (patch/superpixel) context."""


class UsageError(WsibenchError):
    """Bad command-line usage (CLI exit code 1)."""
