"""Shared exception base so the CLI can report any pipeline failure uniformly."""


class AuditError(Exception):
    """Base class for all errors raised by this package."""


class ConsistencyError(AuditError):
    """Cross-artifact ids or digests disagree (stale or mismatched inputs)."""
