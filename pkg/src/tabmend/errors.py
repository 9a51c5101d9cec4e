"""Root of the package exception hierarchy."""


class TabmendError(Exception):
    """Base class for every error raised by this package."""
