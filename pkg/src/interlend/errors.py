"""Shared error taxonomy.

Every domain error raised anywhere in the package derives from
:class:`InterlendError` and carries a stable machine-readable ``code``
(the class name in SCREAMING_SNAKE_CASE). The HTTP layer maps each code
to exactly one status; tests assert the mapping is total.
"""

import re


def _code(name: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", name).upper()


class InterlendError(Exception):
    """Base class for all domain errors."""

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__

    @property
    def code(self) -> str:
        return _code(self.__class__.__name__)


# -- bibliography -----------------------------------------------------------

class EmptyCitation(InterlendError):
    pass


class MalformedQuery(InterlendError):
    pass


class MalformedIdentifier(InterlendError):
    pass


class NotFound(InterlendError):
    pass


class SourceUnavailable(InterlendError):
    pass


class InvalidBib(InterlendError):
    pass


# -- request engine ---------------------------------------------------------

class InvalidState(InterlendError):
    pass


class Forbidden(InterlendError):
    pass


class AlreadyClaimed(InterlendError):
    pass


class SelfRequest(InterlendError):
    pass


class PartnerIsBasic(InterlendError):
    pass


class QuotaExceeded(InterlendError):
    pass


class PatronRequestsDisabled(InterlendError):
    pass


class MissingReceipt(InterlendError):
    pass


class BarcodeRequired(InterlendError):
    pass


class QuarantineNotElapsed(InterlendError):
    pass


class LoanCapExceeded(InterlendError):
    pass


class UnknownRequest(InterlendError):
    pass


# -- routing ----------------------------------------------------------------

class NoCandidates(InterlendError):
    pass


class UnknownPartner(InterlendError):
    pass


# -- acquisition ------------------------------------------------------------

class InsufficientDeposit(InterlendError):
    pass


# -- compliance / delivery --------------------------------------------------

class MissingPageCounts(InterlendError):
    pass


class RasterizerFailure(InterlendError):
    pass


class EmptySource(InterlendError):
    pass


class MethodNotAllowed(InterlendError):
    pass


class InvalidPayload(InterlendError):
    pass


# -- ledger / stats ---------------------------------------------------------

class InvalidEntry(InterlendError):
    pass


class DivisionByZero(InterlendError):
    pass


class EmptyWindow(InterlendError):
    pass


# -- service ----------------------------------------------------------------

class DuplicateId(InterlendError):
    pass


class InvalidCoordinates(InterlendError):
    pass


class UnknownUser(InterlendError):
    pass


class Unauthorized(InterlendError):
    pass


class UnknownCorrelation(InterlendError):
    pass


class SchemaViolation(InterlendError):
    pass


class ChecksumMismatch(InterlendError):
    pass


class ConfigInvalid(InterlendError):
    pass
