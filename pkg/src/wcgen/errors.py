"""Exception types shared across the package."""

from __future__ import annotations


class WcgenError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(WcgenError, ValueError):
    """An argument violates a documented precondition."""


class InvalidStateError(WcgenError, RuntimeError):
    """An operation was invoked in a state its contract forbids."""


class BehindCameraError(WcgenError):
    """A 3D point has non-positive depth and cannot be projected."""


class DegenerateBearingError(InvalidArgumentError):
    """Two viewpoints are vertically stacked; no horizontal bearing exists."""


class NotFoundError(WcgenError, LookupError):
    """A referenced entity (viewpoint id, scene id) cannot be resolved."""


class CapabilityError(WcgenError):
    """A backend was asked for a generation mode it does not support."""


class ProtocolError(WcgenError):
    """Base class for wire-protocol failures."""


class TransportError(ProtocolError):
    """The remote endpoint could not be reached or kept failing.

    Carries retry metadata so callers can report what was attempted.
    """

    def __init__(self, message: str, *, attempts: int = 1, last_status: int | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.last_status = last_status


class MalformedResponseError(ProtocolError):
    """The remote endpoint answered with a body the protocol does not allow."""


class ProtocolViolationError(ProtocolError):
    """The remote endpoint answered with well-formed data that breaks an invariant."""


class RemoteRequestError(ProtocolError):
    """The remote endpoint rejected the request with a structured error body."""

    def __init__(self, code: str, message: str, status: int):
        super().__init__(f"{code}: {message} (HTTP {status})")
        self.code = code
        self.status = status


class LoadError(WcgenError):
    """A manifest or image file could not be loaded or failed validation."""


class ChecksumError(LoadError):
    """Stored content does not match its recorded checksum."""


class PipelineStepError(WcgenError):
    """A generation step failed; carries step context and partial results."""

    def __init__(self, stage: str, step: int, viewpoint_id: str, cause: BaseException, partial=None):
        super().__init__(f"stage={stage} step={step} viewpoint={viewpoint_id}: {cause}")
        self.stage = stage
        self.step = step
        self.viewpoint_id = viewpoint_id
        self.cause = cause
        self.partial = partial
