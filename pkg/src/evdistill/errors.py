"""Shared exception types."""


class EvdistillError(Exception):
    """Base class for all package errors."""


class ContractError(EvdistillError, ValueError):
    """Operation called outside its documented contract."""


class ConfigError(EvdistillError, ValueError):
    """Invalid run configuration or network specification."""


class EventFormatError(EvdistillError, ValueError):
    """Malformed event-file content."""


class ContainerError(EvdistillError, ValueError):
    """Corrupt, truncated, or incompatible tensor container."""


class CheckpointMismatchError(EvdistillError, ValueError):
    """Checkpoint content does not match the requested configuration."""
