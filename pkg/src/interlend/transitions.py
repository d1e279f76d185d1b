"""Request lifecycle vocabulary and the declared transition relation.

The table is data, not code: the engine validates every mutation against
it, tests enumerate it, and the HTTP layer exports it for UI rendering.
Guards name the condition the engine checks before following an edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

# every status a request can carry
DRAFT = "DRAFT"
LOCAL_AVAILABLE = "LOCAL_AVAILABLE"
OA_AVAILABLE = "OA_AVAILABLE"
PENDING = "PENDING"
ORPHANED = "ORPHANED"
ACCEPTED = "ACCEPTED"
SHIPPED = "SHIPPED"
RECEIVED = "RECEIVED"
ON_LOAN = "ON_LOAN"
RETURNED_BY_PATRON = "RETURNED_BY_PATRON"
IN_QUARANTINE = "IN_QUARANTINE"
RETURNED_TO_LENDER = "RETURNED_TO_LENDER"
COMPLETE = "COMPLETE"
UNFULFILLED = "UNFULFILLED"
ARCHIVED_UNFULFILLED = "ARCHIVED_UNFULFILLED"
CANCEL_REQUESTED = "CANCEL_REQUESTED"
CANCELLED = "CANCELLED"
EXPIRED = "EXPIRED"

STATUSES = (
    DRAFT, LOCAL_AVAILABLE, OA_AVAILABLE, PENDING, ORPHANED, ACCEPTED,
    SHIPPED, RECEIVED, ON_LOAN, RETURNED_BY_PATRON, IN_QUARANTINE,
    RETURNED_TO_LENDER, COMPLETE, UNFULFILLED, ARCHIVED_UNFULFILLED,
    CANCEL_REQUESTED, CANCELLED, EXPIRED,
)

TERMINAL_STATUSES = frozenset({
    LOCAL_AVAILABLE, OA_AVAILABLE, COMPLETE, ARCHIVED_UNFULFILLED,
    CANCELLED, EXPIRED,
})

# statuses in which a request has a current lender
LENDER_SET_STATUSES = frozenset({
    PENDING, ACCEPTED, SHIPPED, RECEIVED, ON_LOAN, RETURNED_BY_PATRON,
    IN_QUARANTINE, RETURNED_TO_LENDER, CANCEL_REQUESTED,
})

INITIAL_STATUS = DRAFT


class UnfulfilReason(IntEnum):
    """Why a lender could not supply; tags are stable wire values."""

    NOT_AVAILABLE_FOR_ILL = 1
    NOT_HELD = 2
    NOT_ON_SHELF = 3
    WRONG_REFERENCE = 4
    LICENCE_OR_COPYRIGHT = 5
    ORDER_LIMIT_EXCEEDED = 6


@dataclass(frozen=True)
class Transition:
    state: str
    operation: str
    guard: str
    next_state: str


TRANSITIONS: tuple[Transition, ...] = tuple(
    Transition(*row) for row in (
        (DRAFT, "precheck", "advice=local_holdings", LOCAL_AVAILABLE),
        (DRAFT, "precheck", "advice=open_access", OA_AVAILABLE),
        (DRAFT, "precheck", "advice=proceed", DRAFT),
        (DRAFT, "send_to_partner", "", PENDING),
        (DRAFT, "send_to_all", "", ORPHANED),
        (UNFULFILLED, "send_to_partner", "", PENDING),
        (UNFULFILLED, "send_to_all", "", ORPHANED),
        (PENDING, "accept", "lender=current", ACCEPTED),
        (ORPHANED, "accept", "first_claim", ACCEPTED),
        (PENDING, "unfulfil", "", UNFULFILLED),
        (ACCEPTED, "unfulfil", "", UNFULFILLED),
        (UNFULFILLED, "reiterate", "rota_next=partner", PENDING),
        (UNFULFILLED, "reiterate", "rota_next=all_libraries", ORPHANED),
        (UNFULFILLED, "reiterate", "rota_exhausted", ARCHIVED_UNFULFILLED),
        (PENDING, "request_cancel", "", CANCEL_REQUESTED),
        (ACCEPTED, "request_cancel", "", CANCEL_REQUESTED),
        (CANCEL_REQUESTED, "decide_cancel", "approve", CANCELLED),
        (CANCEL_REQUESTED, "decide_cancel", "reject,prior=PENDING", PENDING),
        (CANCEL_REQUESTED, "decide_cancel", "reject,prior=ACCEPTED", ACCEPTED),
        (ACCEPTED, "fulfil", "", SHIPPED),
        (SHIPPED, "receive", "flow=returnable", RECEIVED),
        (SHIPPED, "receive", "flow=non_returnable", COMPLETE),
        (RECEIVED, "loan_to_patron", "", ON_LOAN),
        (ON_LOAN, "return_from_patron", "quarantine_days>0", IN_QUARANTINE),
        (ON_LOAN, "return_from_patron", "quarantine_days=0", RETURNED_BY_PATRON),
        (IN_QUARANTINE, "release_quarantine", "quarantine_elapsed", RETURNED_BY_PATRON),
        (RETURNED_BY_PATRON, "return_to_lender", "", RETURNED_TO_LENDER),
        (RETURNED_TO_LENDER, "complete", "", COMPLETE),
        (PENDING, "expire", "validity_past", EXPIRED),
        (ORPHANED, "expire", "validity_past", EXPIRED),
    )
)

OPERATIONS = tuple(dict.fromkeys(t.operation for t in TRANSITIONS))


def edges_from(state: str, operation: str) -> list[Transition]:
    return [t for t in TRANSITIONS if t.state == state and t.operation == operation]


def states_allowing(operation: str) -> frozenset[str]:
    return frozenset(t.state for t in TRANSITIONS if t.operation == operation)


def is_declared(state: str, operation: str, next_state: str) -> bool:
    return any(t.next_state == next_state
               for t in edges_from(state, operation))


def transition_table() -> dict:
    """Machine-readable export: states, operations, reason codes, edges."""
    return {
        "initial": INITIAL_STATUS,
        "statuses": list(STATUSES),
        "terminal": sorted(TERMINAL_STATUSES),
        "operations": list(OPERATIONS),
        "unfulfil_reasons": [
            {"code": int(reason), "name": reason.name}
            for reason in UnfulfilReason
        ],
        "transitions": [
            {"state": t.state, "operation": t.operation,
             "guard": t.guard, "next": t.next_state}
            for t in TRANSITIONS
        ],
    }
