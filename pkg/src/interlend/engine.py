"""Request lifecycle engine.

Owns every request mutation: role checks, guard evaluation against the
declared transition table, quota and quarantine timing, and the
append-only per-request event history. Mutations are serialized per
request id; claiming a broadcast (orphaned) request is an atomic
compare-and-claim, so exactly one lender wins.

Every state change is an event carrying the field assignments it made
("set"), which makes replay mechanical: folding a request's history
reproduces the stored record exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field as dataclass_field
from datetime import datetime, timedelta

from .bibliography import BibRef, check_open_access
from .errors import (
    AlreadyClaimed,
    BarcodeRequired,
    Forbidden,
    InvalidState,
    LoanCapExceeded,
    MissingReceipt,
    PartnerIsBasic,
    PatronRequestsDisabled,
    QuarantineNotElapsed,
    QuotaExceeded,
    SelfRequest,
    UnknownPartner,
    UnknownRequest,
)
from .routing import ALL_LIBRARIES, HoldingsIndex, RotaPlan, match_holdings
from . import transitions as tr
from .transitions import UnfulfilReason

SYSTEM_ACTOR = "system"
WIRE_ACTOR = "wire"  # remote-node actions arrive pre-authorized

ROLES = ("LIBRARY_MANAGER", "BORROWING_OPERATOR", "LENDING_OPERATOR", "PATRON")

QUOTA_WINDOW_DAYS = 7
DEFAULT_VALIDITY_DAYS = 14


@dataclass(frozen=True)
class LibraryProfile:
    """Per-library policy knobs; BASIC libraries may only borrow."""

    mode: str = "FULL"
    patron_requests_enabled: bool = True
    weekly_patron_quota: int | None = None
    quarantine_days: int = 0
    loan_caps: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("BASIC", "FULL"):
            raise ValueError(f"unknown profile mode {self.mode!r}")
        if self.quarantine_days < 0:
            raise ValueError("quarantine_days must be >= 0")


@dataclass(frozen=True)
class RoleGrant:
    user: str
    library: str
    roles: frozenset[str]


class RoleDirectory:
    """User/library role grants; managers inherit both operator roles."""

    def __init__(self):
        self._grants: dict[tuple[str, str], set[str]] = {}

    def grant(self, user: str, library: str, *roles: str) -> None:
        for role in roles:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        self._grants.setdefault((user, library), set()).update(roles)

    def revoke(self, user: str, library: str, *roles: str) -> None:
        held = self._grants.get((user, library))
        if held:
            held.difference_update(roles)
            if not held:
                del self._grants[(user, library)]

    def drop_user(self, user: str, library: str) -> None:
        self._grants.pop((user, library), None)

    def roles_at(self, user: str, library: str) -> frozenset[str]:
        return frozenset(self._grants.get((user, library), ()))

    def has_role(self, user: str, library: str, role: str) -> bool:
        held = self._grants.get((user, library), ())
        if role in held:
            return True
        # complete control over all operations, borrowing and lending
        return role in ("BORROWING_OPERATOR", "LENDING_OPERATOR") \
            and "LIBRARY_MANAGER" in held

    def grants_for(self, library: str) -> list[RoleGrant]:
        return [RoleGrant(user, lib, frozenset(roles))
                for (user, lib), roles in sorted(self._grants.items())
                if lib == library]

    def known_user(self, user: str) -> bool:
        return any(u == user for u, _ in self._grants)


@dataclass(frozen=True)
class Event:
    timestamp: datetime
    actor: str
    kind: str  # "status-change" | "annotation"
    payload: dict

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp.isoformat(), "actor": self.actor,
                "kind": self.kind, "payload": self.payload}

    @classmethod
    def from_dict(cls, data: dict) -> "Event":
        return cls(timestamp=datetime.fromisoformat(data["timestamp"]),
                   actor=data["actor"], kind=data["kind"],
                   payload=data["payload"])


@dataclass(frozen=True)
class RouteAdvice:
    kind: str  # "local_holdings" | "open_access" | "proceed"
    location: str | None = None
    url: str | None = None

    @classmethod
    def local(cls, location: str) -> "RouteAdvice":
        return cls("local_holdings", location=location)

    @classmethod
    def open_access(cls, url: str) -> "RouteAdvice":
        return cls("open_access", url=url)

    @classmethod
    def proceed(cls) -> "RouteAdvice":
        return cls("proceed")


# request fields that events may assign, with their JSON codecs
_DATETIME_FIELDS = frozenset({"validity_until", "patron_returned_at", "sent_at"})
_SETTABLE_FIELDS = frozenset({
    "current_lender", "validity_until", "temp_barcode", "rota", "rota_index",
    "unfulfil_reason", "delivery", "allowed_methods", "patron_returned_at",
    "cancel_prior_status", "oa_url", "tags", "sent_at",
})


def _encode_value(name: str, value):
    if value is None:
        return None
    if name in _DATETIME_FIELDS:
        return value.isoformat()
    if name == "rota" or name == "tags" or name == "allowed_methods":
        return list(value)
    return value


def _decode_value(name: str, value):
    if value is None:
        return None
    if name in _DATETIME_FIELDS:
        return datetime.fromisoformat(value)
    if name in ("rota", "tags", "allowed_methods"):
        return list(value)
    return value


@dataclass
class RSRequest:
    """One resource-sharing transaction."""

    id: str
    bib: BibRef
    requester_library: str
    flow: str  # "returnable" | "non_returnable"
    patron: str | None = None
    patron_group: str | None = None
    status: str = tr.INITIAL_STATUS
    rota: list = dataclass_field(default_factory=list)
    rota_index: int = 0
    current_lender: str | None = None
    validity_until: datetime | None = None
    temp_barcode: str | None = None
    tags: list = dataclass_field(default_factory=list)
    history: list = dataclass_field(default_factory=list)
    delivery: dict | None = None
    allowed_methods: list | None = None
    unfulfil_reason: int | None = None
    cancel_prior_status: str | None = None
    oa_url: str | None = None
    patron_returned_at: datetime | None = None
    sent_at: datetime | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "bib": self.bib.to_dict(),
            "requester_library": self.requester_library,
            "flow": self.flow,
            "patron": self.patron,
            "patron_group": self.patron_group,
            "status": self.status,
            "rota": list(self.rota),
            "rota_index": self.rota_index,
            "current_lender": self.current_lender,
            "validity_until": _encode_value("validity_until", self.validity_until),
            "temp_barcode": self.temp_barcode,
            "tags": list(self.tags),
            "delivery": self.delivery,
            "allowed_methods": self.allowed_methods,
            "unfulfil_reason": self.unfulfil_reason,
            "cancel_prior_status": self.cancel_prior_status,
            "oa_url": self.oa_url,
            "patron_returned_at": _encode_value("patron_returned_at",
                                                self.patron_returned_at),
            "sent_at": _encode_value("sent_at", self.sent_at),
            "history": [event.to_dict() for event in self.history],
        }


def replay_status(history: list[Event]) -> str | None:
    """Fold a history down to the status it implies."""
    status = None
    for event in history:
        if event.kind == "status-change":
            status = event.payload["to"]
    return status


def replay_request(events: list[Event]) -> RSRequest:
    """Rebuild a request record from its event history alone."""
    if not events or events[0].payload.get("operation") != "create_request":
        raise ValueError("history must start with the creation event")
    created = events[0].payload["set"]
    request = RSRequest(
        id=created["id"],
        bib=BibRef.from_dict(created["bib"]),
        requester_library=created["requester_library"],
        flow=created["flow"],
        patron=created.get("patron"),
        patron_group=created.get("patron_group"),
    )
    request.history.append(events[0])
    for event in events[1:]:
        request.history.append(event)
        if event.kind == "status-change":
            request.status = event.payload["to"]
        for name, value in event.payload.get("set", {}).items():
            setattr(request, name, _decode_value(name, value))
    return request


class RequestEngine:
    """All request mutations, fronted by the declared transition table."""

    def __init__(self, libraries: dict[str, LibraryProfile], roles: RoleDirectory,
                 clock, validity_days: int = DEFAULT_VALIDITY_DAYS,
                 patron_groups: dict[str, str] | None = None,
                 event_sink=None):
        self.libraries = libraries
        self.roles = roles
        self.clock = clock
        self.validity_days = validity_days
        self.patron_groups = patron_groups if patron_groups is not None else {}
        self.event_sink = event_sink
        self.store: dict[str, RSRequest] = {}
        self._request_locks: dict[str, threading.Lock] = {}
        self._master_lock = threading.Lock()
        self._id_counter = 0

    # -- plumbing -------------------------------------------------------

    def _next_id(self) -> str:
        with self._master_lock:
            self._id_counter += 1
            return f"R-{self._id_counter:06d}"

    def _lock_for(self, request_id: str) -> threading.Lock:
        with self._master_lock:
            lock = self._request_locks.get(request_id)
            if lock is None:
                lock = self._request_locks[request_id] = threading.Lock()
            return lock

    def get(self, request_id: str) -> RSRequest:
        request = self.store.get(request_id)
        if request is None:
            raise UnknownRequest(request_id)
        return request

    def _profile(self, library: str) -> LibraryProfile:
        profile = self.libraries.get(library)
        if profile is None:
            raise UnknownPartner(library)
        return profile

    def _authorize(self, actor: str, library: str, role: str) -> None:
        if actor in (SYSTEM_ACTOR, WIRE_ACTOR):
            return
        if not self.roles.has_role(actor, library, role):
            raise Forbidden(f"{actor} lacks {role} at {library}")

    def _emit(self, request: RSRequest, event: Event) -> None:
        request.history.append(event)
        if self.event_sink is not None:
            self.event_sink(request.id, event.to_dict())

    def _annotate(self, request: RSRequest, actor: str, note: str,
                  set_fields: dict | None = None, **extra) -> None:
        payload = {"note": note, **extra}
        if set_fields:
            encoded = {}
            for name, value in set_fields.items():
                if name not in _SETTABLE_FIELDS:
                    raise ValueError(f"field {name!r} is not event-settable")
                encoded[name] = _encode_value(name, value)
                setattr(request, name, value)
            payload["set"] = encoded
        self._emit(request, Event(self.clock(), actor, "annotation", payload))

    def _transition(self, request: RSRequest, operation: str, guard: str,
                    actor: str, set_fields: dict | None = None,
                    **extra) -> None:
        """Apply one declared edge; raises InvalidState off the table."""
        if request.status in tr.TERMINAL_STATUSES:
            raise InvalidState(
                f"{request.id} is terminal ({request.status})")
        edges = tr.edges_from(request.status, operation)
        edge = next((e for e in edges if e.guard == guard), None)
        if edge is None:
            raise InvalidState(
                f"no edge {request.status} --{operation}/{guard}-->")
        payload = {"operation": operation, "guard": guard,
                   "from": request.status, "to": edge.next_state}
        encoded = {}
        if set_fields:
            for name, value in set_fields.items():
                if name not in _SETTABLE_FIELDS:
                    raise ValueError(f"field {name!r} is not event-settable")
                encoded[name] = _encode_value(name, value)
                setattr(request, name, value)
        payload["set"] = encoded
        payload.update(extra)
        request.status = edge.next_state
        self._emit(request, Event(self.clock(), actor, "status-change", payload))

    # -- creation and pre-checks ------------------------------------------

    def create_request(self, bib: BibRef, requester: str, flow: str,
                       actor: str, patron: str | None = None,
                       tags: list | None = None) -> RSRequest:
        profile = self._profile(requester)
        if actor not in (SYSTEM_ACTOR, WIRE_ACTOR):
            if self.roles.has_role(actor, requester, "PATRON"):
                patron = patron or actor
            else:
                self._authorize(actor, requester, "BORROWING_OPERATOR")
        if flow not in ("returnable", "non_returnable"):
            raise ValueError(f"unknown flow {flow!r}")
        bib.validate()
        now = self.clock()
        if patron is not None:
            if not profile.patron_requests_enabled:
                raise PatronRequestsDisabled(requester)
            if profile.weekly_patron_quota is not None:
                remaining = self.check_patron_quota(patron, now, profile)
                if remaining <= 0:
                    raise QuotaExceeded(
                        f"{patron} used the weekly quota of "
                        f"{profile.weekly_patron_quota}")
        request = RSRequest(
            id=self._next_id(),
            bib=bib,
            requester_library=requester,
            flow=flow,
            patron=patron,
            patron_group=self.patron_groups.get(patron) if patron else None,
        )
        if tags:
            request.tags = list(tags)
        created = Event(now, actor, "status-change", {
            "operation": "create_request", "guard": "",
            "from": None, "to": tr.INITIAL_STATUS,
            "set": {
                "id": request.id,
                "bib": bib.to_dict(),
                "requester_library": requester,
                "flow": flow,
                "patron": patron,
                "patron_group": request.patron_group,
                "tags": list(request.tags),
            },
        })
        with self._master_lock:
            self.store[request.id] = request
        self._emit(request, created)
        return request

    def check_patron_quota(self, patron: str, now: datetime,
                           profile: LibraryProfile) -> int:
        """Requests left in the rolling seven-day window; floor zero."""
        quota = profile.weekly_patron_quota
        if quota is None:
            return 10 ** 9
        window_start = now - timedelta(days=QUOTA_WINDOW_DAYS)
        used = 0
        for request in self.store.values():
            if request.patron != patron or not request.history:
                continue
            created = request.history[0]
            if window_start < created.timestamp <= now:
                used += 1
        return max(0, quota - used)

    def precheck(self, request_id: str, holdings: HoldingsIndex, oa_source,
                 actor: str) -> RouteAdvice:
        """Local holdings, then open access, before anything is sent."""
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status != tr.DRAFT:
                raise InvalidState(f"precheck needs DRAFT, got {request.status}")
            holders = match_holdings(request.bib, holdings)
            if request.requester_library in holders:
                advice = RouteAdvice.local(request.requester_library)
                self._transition(request, "precheck", "advice=local_holdings",
                                 actor, advice="local_holdings")
                return advice
            try:
                url = check_open_access(request.bib, oa_source) if oa_source else None
            except Exception as exc:  # adapter failure downgrades to Proceed
                self._annotate(request, SYSTEM_ACTOR,
                               "open-access check unavailable", error=str(exc))
                url = None
            if url:
                advice = RouteAdvice.open_access(url)
                self._transition(request, "precheck", "advice=open_access",
                                 actor, set_fields={"oa_url": url},
                                 advice="open_access")
                return advice
            advice = RouteAdvice.proceed()
            self._transition(request, "precheck", "advice=proceed", actor,
                             advice="proceed")
            return advice

    # -- routing to lenders ------------------------------------------------

    def assign_rota(self, request_id: str, rota: list, actor: str) -> None:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status not in (tr.DRAFT, tr.UNFULFILLED):
                raise InvalidState("rota can only change before (re)sending")
            RotaPlan(tuple(rota))  # enforce rota shape invariants
            request.rota = list(rota)
            request.rota_index = 0
            self._annotate(request, actor, "rota assigned", rota=list(rota))

    def _validity(self) -> datetime:
        return self.clock() + timedelta(days=self.validity_days)

    def _check_sendable(self, request: RSRequest, partner: str) -> None:
        if partner == request.requester_library:
            raise SelfRequest(partner)
        profile = self._profile(partner)
        if profile.mode != "FULL":
            raise PartnerIsBasic(partner)

    def send_to_partner(self, request_id: str, partner: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status not in (tr.DRAFT, tr.UNFULFILLED):
                raise InvalidState(f"cannot send from {request.status}")
            self._check_sendable(request, partner)
            fields = {
                "current_lender": partner,
                "validity_until": self._validity(),
                "sent_at": request.sent_at or self.clock(),
                "unfulfil_reason": None,
            }
            if not request.rota:
                fields["rota"] = [partner]
                fields["rota_index"] = 0
            self._transition(request, "send_to_partner", "", actor,
                             set_fields=fields, partner=partner)
            return request

    def send_to_all(self, request_id: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status not in (tr.DRAFT, tr.UNFULFILLED):
                raise InvalidState(f"cannot broadcast from {request.status}")
            fields = {
                "current_lender": None,
                "validity_until": self._validity(),
                "sent_at": request.sent_at or self.clock(),
                "unfulfil_reason": None,
            }
            if ALL_LIBRARIES not in request.rota:
                fields["rota"] = list(request.rota) + [ALL_LIBRARIES]
                fields["rota_index"] = len(request.rota)
            else:
                fields["rota_index"] = request.rota.index(ALL_LIBRARIES)
            self._transition(request, "send_to_all", "", actor,
                             set_fields=fields)
            return request

    # -- lender side -------------------------------------------------------

    def accept(self, request_id: str, lender_library: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, lender_library, "LENDING_OPERATOR")
            profile = self._profile(lender_library)
            if profile.mode != "FULL":
                raise PartnerIsBasic(lender_library)
            if request.status == tr.PENDING:
                if request.current_lender != lender_library:
                    raise Forbidden(
                        f"{lender_library} is not the addressed lender")
                self._transition(request, "accept", "lender=current", actor,
                                 set_fields={}, lender=lender_library)
            elif request.status == tr.ORPHANED:
                if lender_library == request.requester_library:
                    raise SelfRequest(lender_library)
                # atomic compare-and-claim under the per-request lock
                self._transition(request, "accept", "first_claim", actor,
                                 set_fields={"current_lender": lender_library},
                                 lender=lender_library)
            elif request.status == tr.ACCEPTED:
                raise AlreadyClaimed(request_id)
            else:
                raise InvalidState(f"cannot accept from {request.status}")
            return request

    def unfulfil(self, request_id: str, reason: UnfulfilReason | int,
                 actor: str) -> RSRequest:
        reason = UnfulfilReason(reason)
        with self._lock_for(request_id):
            request = self.get(request_id)
            lender = request.current_lender
            if lender is None:
                raise InvalidState("no lender to unfulfil")
            self._authorize(actor, lender, "LENDING_OPERATOR")
            self._transition(request, "unfulfil", "", actor,
                             set_fields={"current_lender": None,
                                         "validity_until": None,
                                         "unfulfil_reason": int(reason)},
                             reason=reason.name, lender=lender)
            return request

    def reiterate(self, request_id: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status != tr.UNFULFILLED:
                raise InvalidState(f"cannot reiterate from {request.status}")
            next_index = request.rota_index + 1
            if next_index >= len(request.rota):
                self._transition(request, "reiterate", "rota_exhausted", actor,
                                 set_fields={"current_lender": None,
                                             "validity_until": None})
                return request
            entry = request.rota[next_index]
            if entry == ALL_LIBRARIES:
                self._transition(request, "reiterate", "rota_next=all_libraries",
                                 actor,
                                 set_fields={"rota_index": next_index,
                                             "current_lender": None,
                                             "validity_until": self._validity(),
                                             "unfulfil_reason": None})
            else:
                self._check_sendable(request, entry)
                self._transition(request, "reiterate", "rota_next=partner",
                                 actor,
                                 set_fields={"rota_index": next_index,
                                             "current_lender": entry,
                                             "validity_until": self._validity(),
                                             "unfulfil_reason": None},
                                 partner=entry)
            return request

    # -- cancellation --------------------------------------------------------

    def request_cancel(self, request_id: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status not in (tr.PENDING, tr.ACCEPTED):
                raise InvalidState(
                    f"cancel only after reaching a lender, not {request.status}")
            self._transition(request, "request_cancel", "", actor,
                             set_fields={"cancel_prior_status": request.status})
            return request

    def decide_cancel(self, request_id: str, approve: bool, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            lender = request.current_lender
            if request.status != tr.CANCEL_REQUESTED:
                raise InvalidState(f"no cancellation pending on {request.status}")
            if lender is None:
                raise InvalidState("cancellation without a lender")
            self._authorize(actor, lender, "LENDING_OPERATOR")
            if approve:
                self._transition(request, "decide_cancel", "approve", actor,
                                 set_fields={"current_lender": None,
                                             "validity_until": None,
                                             "cancel_prior_status": None},
                                 lender=lender)
            else:
                prior = request.cancel_prior_status
                self._transition(request, "decide_cancel",
                                 f"reject,prior={prior}", actor,
                                 set_fields={"cancel_prior_status": None})
            return request

    # -- fulfilment and the returnable chain ----------------------------------

    def record_allowed_methods(self, request_id: str, methods, actor: str) -> None:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._annotate(request, actor, "supply allowed",
                           set_fields={"allowed_methods": sorted(methods)})

    def fulfil(self, request_id: str, receipt: dict | None, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            lender = request.current_lender
            if lender is None:
                raise InvalidState("no lender on request")
            self._authorize(actor, lender, "LENDING_OPERATOR")
            if not receipt:
                raise MissingReceipt(request_id)
            self._transition(request, "fulfil", "", actor,
                             set_fields={"delivery": dict(receipt)})
            return request

    def receive(self, request_id: str, actor: str,
                barcode: str | None = None) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status != tr.SHIPPED:
                raise InvalidState(f"cannot receive from {request.status}")
            if request.flow == "returnable":
                if not barcode:
                    raise BarcodeRequired(request_id)
                self._transition(request, "receive", "flow=returnable", actor,
                                 set_fields={"temp_barcode": barcode})
            else:
                # copies are one-shot: receipt completes the request
                self._transition(request, "receive", "flow=non_returnable",
                                 actor,
                                 set_fields={"current_lender": None,
                                             "validity_until": None})
            return request

    def loan_to_patron(self, request_id: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status != tr.RECEIVED:
                raise InvalidState(f"cannot loan from {request.status}")
            profile = self._profile(request.requester_library)
            cap = profile.loan_caps.get(request.patron_group or "default")
            if cap is not None and request.patron is not None:
                concurrent = sum(
                    1 for other in self.store.values()
                    if other.patron == request.patron
                    and other.status == tr.ON_LOAN
                    and other.flow == "returnable")
                if concurrent >= cap:
                    raise LoanCapExceeded(
                        f"{request.patron} already holds {concurrent} loans")
            self._transition(request, "loan_to_patron", "", actor, set_fields={})
            return request

    def return_from_patron(self, request_id: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status != tr.ON_LOAN:
                raise InvalidState(f"cannot return from {request.status}")
            now = self.clock()
            profile = self._profile(request.requester_library)
            if profile.quarantine_days > 0:
                self._transition(request, "return_from_patron",
                                 "quarantine_days>0", actor,
                                 set_fields={"patron_returned_at": now})
            else:
                self._transition(request, "return_from_patron",
                                 "quarantine_days=0", actor,
                                 set_fields={"patron_returned_at": now})
            return request

    def release_quarantine(self, request_id: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            if request.status != tr.IN_QUARANTINE:
                raise InvalidState(f"not in quarantine: {request.status}")
            profile = self._profile(request.requester_library)
            release_at = request.patron_returned_at + timedelta(
                days=profile.quarantine_days)
            now = self.clock()
            if now < release_at:
                raise QuarantineNotElapsed(
                    f"release allowed from {release_at.isoformat()}")
            self._transition(request, "release_quarantine",
                             "quarantine_elapsed", actor, set_fields={})
            return request

    def return_to_lender(self, request_id: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            self._transition(request, "return_to_lender", "", actor, set_fields={})
            return request

    def complete(self, request_id: str, actor: str) -> RSRequest:
        with self._lock_for(request_id):
            request = self.get(request_id)
            self._authorize(actor, request.requester_library, "BORROWING_OPERATOR")
            self._transition(request, "complete", "", actor,
                             set_fields={"current_lender": None,
                                         "validity_until": None})
            return request

    # -- expiry ----------------------------------------------------------------

    def expire_stale(self, now: datetime | None = None) -> list[str]:
        """Move every over-validity PENDING/ORPHANED request to EXPIRED."""
        now = now or self.clock()
        expired: list[str] = []
        for request_id in sorted(self.store):
            with self._lock_for(request_id):
                request = self.store[request_id]
                if request.status not in (tr.PENDING, tr.ORPHANED):
                    continue
                if request.validity_until is None or request.validity_until >= now:
                    continue
                lender = request.current_lender
                self._transition(request, "expire", "validity_past",
                                 SYSTEM_ACTOR,
                                 set_fields={"current_lender": None,
                                             "validity_until": None},
                                 lender=lender)
                expired.append(request_id)
        return expired

    # -- integrity helpers -------------------------------------------------

    def verify_invariants(self, request: RSRequest) -> None:
        """Raise AssertionError when a stored record breaks an invariant."""
        assert request.status in tr.STATUSES, request.status
        has_lender = request.current_lender is not None
        assert has_lender == (request.status in tr.LENDER_SET_STATUSES), (
            request.status, request.current_lender)
        assert replay_status(request.history) == request.status
        if request.temp_barcode is not None:
            assert request.flow == "returnable"
