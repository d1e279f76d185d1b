"""One community node: registry, engine, ledger, packages, wire, panels.

Everything that mutates node state after construction flows through the
event log, so a node rebuilt from its log (or killed at any record
boundary and replayed) reproduces the exact state digest. Config-derived
setup (own library, peers, admin grant) is applied identically on boot
and on rebuild and is therefore not logged.
"""

from __future__ import annotations

import threading
from datetime import datetime, timezone
from pathlib import Path

from .. import transitions as tr
from ..acquisition import load_usage_csv
from ..bibliography import BibRef, FixtureMetadataSource
from ..compliance import (
    CopyrightPolicy,
    DeliveryPackage,
    Deny,
    LicenceRecord,
    LicenceStore,
    PackageRegistry,
    SyntheticRasterizer,
    check_supply_allowed,
    deliver,
    make_hardcopy,
)
from ..engine import (
    SYSTEM_ACTOR,
    WIRE_ACTOR,
    Event,
    LibraryProfile,
    RequestEngine,
    RoleDirectory,
    RSRequest,
    _decode_value,
)
from ..errors import (
    AlreadyClaimed,
    DuplicateId,
    EmptyWindow,
    Forbidden,
    InvalidCoordinates,
    SchemaViolation,
    UnknownCorrelation,
    UnknownUser,
)
from ..ledger import (
    Ledger,
    LedgerEntry,
    StatsWindow,
    avg_turnaround,
    fill_rate,
    settle,
)
from ..money import round_half_up
from ..routing import (
    HoldingsIndex,
    OutcomeLog,
    Partner,
    RoutingConfig,
    ServiceHours,
)
from .config import NodeConfig
from .eventlog import EventLog, canonical_json, read_log, state_digest
from .wire import WireMessage

OPERATOR_ROLES = ("BORROWING_OPERATOR", "LENDING_OPERATOR", "LIBRARY_MANAGER",
                  "PATRON")

BORROWING_ACTIVE = frozenset({
    tr.PENDING, tr.ORPHANED, tr.ACCEPTED, tr.SHIPPED, tr.RECEIVED,
    tr.ON_LOAN, tr.RETURNED_BY_PATRON, tr.IN_QUARANTINE,
    tr.RETURNED_TO_LENDER, tr.CANCEL_REQUESTED, tr.UNFULFILLED,
})


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class ServiceNode:
    """In-process node runtime behind the HTTP API and the simulator."""

    def __init__(self, config: NodeConfig, clock=None, log_path=None,
                 metadata_source=None, oa_source=None, rasterizer=None,
                 _replaying: bool = False):
        self.config = config
        self.node_id = config.node_id
        self.clock = clock or utc_now
        self.metadata_source = metadata_source
        self.oa_source = oa_source if oa_source is not None else metadata_source
        self.rasterizer = rasterizer or SyntheticRasterizer()

        self.libraries: dict[str, LibraryProfile] = {}
        self.partners: dict[str, Partner] = {}
        self.roles = RoleDirectory()
        self.holdings = HoldingsIndex()
        self.licences = LicenceStore()
        self.copyright_policy = CopyrightPolicy(
            domestic_country=config.domestic_country)
        self.ledger = Ledger()
        self.packages = PackageRegistry()
        self.outcome_log = OutcomeLog()
        self.usage_rows: list = []
        self.inbox: dict[str, dict] = {}
        self.seen_wire: dict[str, dict] = {}
        self.outbox: list[dict] = []
        self.stats = StatsWindow(period_start=self.clock(),
                                 period_end=self.clock())
        self._request_counter = 0
        self._package_counter = 0
        self._wire_out_counter = 0
        self._io_lock = threading.Lock()

        # config-derived setup, identical on boot and rebuild
        own = Partner(
            id=config.node_id,
            kind="NETWORK_NODE",
            profile_mode=config.profile.mode,
            utc_offset_minutes=config.utc_offset_minutes,
            service_hours=config.service_hours,
            latitude=config.latitude,
            longitude=config.longitude,
        )
        self.partners[own.id] = own
        self.libraries[own.id] = config.profile
        self.roles.grant(config.admin_user, own.id, "LIBRARY_MANAGER")
        for peer in config.peers:
            self.partners[peer.id] = peer
            self.libraries[peer.id] = LibraryProfile(mode=peer.profile_mode)

        self.routing = RoutingConfig(
            partners=self.partners,
            holdings=self.holdings,
            purchase_vendor=config.purchase_vendor,
            external_brokers=config.external_brokers,
            include_all_libraries=config.include_all_libraries,
        )
        self.engine = RequestEngine(
            self.libraries, self.roles, self.clock,
            validity_days=config.validity_days,
            patron_groups=dict(config.patron_groups),
            event_sink=None if _replaying else self._on_engine_event,
        )
        self.engine._next_id = self._next_request_id  # node-scoped ids
        self.log = EventLog(log_path)

    # -- identifiers ---------------------------------------------------------

    def _next_request_id(self) -> str:
        with self._io_lock:
            self._request_counter += 1
            return f"{self.node_id}-R-{self._request_counter:06d}"

    def _next_package_id(self) -> str:
        self._package_counter += 1
        return f"{self.node_id}-PKG-{self._package_counter:06d}"

    def _next_message_id(self) -> str:
        self._wire_out_counter += 1
        return f"{self.node_id}-M-{self._wire_out_counter:06d}"

    # -- event plumbing --------------------------------------------------------

    def _on_engine_event(self, request_id: str, event: dict) -> None:
        self.log.append("request", request_id, event)
        self._fold_into_stats(request_id, event)

    def _fold_into_stats(self, request_id: str, event: dict) -> None:
        """Derive stats counters from the request event stream."""
        if event["kind"] != "status-change":
            return
        payload = event["payload"]
        operation = payload["operation"]
        to_status = payload["to"]
        if operation == "create_request":
            self.stats.total_requests += 1
            return
        request = self.engine.store.get(request_id)
        if operation == "fulfil" and to_status == tr.SHIPPED:
            lender = request.current_lender if request else None
            hours = 0.0
            if request is not None and request.sent_at is not None:
                shipped_at = datetime.fromisoformat(event["timestamp"])
                hours = (shipped_at - request.sent_at).total_seconds() / 3600.0
            self.stats.filled += 1
            self.stats.turnaround_hours.append(hours)
            if lender:
                self.outcome_log.record_outcome(lender, "filled", hours)
        elif operation == "unfulfil":
            lender = payload.get("lender")
            if lender:
                self.outcome_log.record_outcome(lender, "unfilled")
        elif to_status == tr.ARCHIVED_UNFULFILLED:
            self.stats.unfilled += 1
        elif to_status == tr.CANCELLED:
            self.stats.cancelled += 1
        elif to_status == tr.EXPIRED:
            self.stats.expired += 1
            lender = payload.get("lender")
            if lender:
                self.outcome_log.record_outcome(lender, "expired")

    def _log_and_apply(self, entity: str, entity_id: str, event: dict) -> None:
        self.log.append(entity, entity_id, event)
        self._apply_record(entity, entity_id, event)

    # -- library and operator management -------------------------------------

    def register_library(self, fragment: dict, actor: str | None = None) -> str:
        """Add a library to the peer directory; returns its id."""
        library_id = fragment.get("id")
        if not library_id or not isinstance(library_id, str):
            raise SchemaViolation("library id required")
        if library_id in self.partners:
            raise DuplicateId(library_id)
        latitude = float(fragment.get("latitude", 0.0))
        longitude = float(fragment.get("longitude", 0.0))
        if not (-90.0 <= latitude <= 90.0 and -180.0 <= longitude <= 180.0):
            raise InvalidCoordinates(f"({latitude}, {longitude})")
        event = {
            "op": "register",
            "id": library_id,
            "display_name": fragment.get("display_name", library_id),
            "kind": fragment.get("kind", "NETWORK_NODE"),
            "latitude": latitude,
            "longitude": longitude,
            "utc_offset_minutes": int(fragment.get("utc_offset_minutes", 0)),
            "service_hours": fragment.get("service_hours", "08:00-18:00"),
            "profile": {
                "mode": fragment.get("profile", {}).get("mode", "FULL"),
                "patron_requests_enabled": fragment.get("profile", {}).get(
                    "patron_requests_enabled", True),
                "weekly_patron_quota": fragment.get("profile", {}).get(
                    "weekly_patron_quota"),
                "quarantine_days": fragment.get("profile", {}).get(
                    "quarantine_days", 0),
                "loan_caps": fragment.get("profile", {}).get("loan_caps", {}),
            },
            "supported_flows": fragment.get(
                "supported_flows", ["returnable", "non_returnable"]),
            "manager": fragment.get("manager") or actor or self.config.admin_user,
        }
        self._log_and_apply("library", library_id, event)
        return library_id

    def manage_operators(self, manager: str, library: str, action: str,
                         target: str, roles: list[str] | None = None) -> None:
        """invite / add / remove / delete operators of one library."""
        if not self.roles.has_role(manager, library, "LIBRARY_MANAGER") \
                and manager != SYSTEM_ACTOR:
            raise Forbidden(f"{manager} does not manage {library}")
        if action not in ("invite", "add", "remove", "delete"):
            raise SchemaViolation(f"unknown action {action!r}")
        roles = roles or ["BORROWING_OPERATOR", "LENDING_OPERATOR"]
        for role in roles:
            if role not in OPERATOR_ROLES:
                raise SchemaViolation(f"unknown role {role!r}")
        if action in ("remove", "delete") and \
                not self.roles.roles_at(target, library):
            raise UnknownUser(f"{target} holds nothing at {library}")
        self._log_and_apply("grant", f"{target}@{library}", {
            "action": action, "user": target, "library": library,
            "roles": sorted(roles), "by": manager,
            "at": self.clock().isoformat(),
        })

    # -- ingestion ---------------------------------------------------------------

    def ingest_holdings(self, source) -> int:
        staging = HoldingsIndex()
        staging.load_csv(source)
        rows = staging.rows()
        self._log_and_apply("holdings", "batch", {"rows": [list(r) for r in rows]})
        return len(rows)

    def ingest_licences(self, source) -> int:
        store = LicenceStore.from_csv(source)
        records = [{
            "publisher": r.publisher, "container": r.container,
            "ill_digital_allowed": r.ill_digital_allowed,
            "methods": sorted(r.allowed_methods),
            "cross_border": r.cross_border_allowed,
        } for r in store.records()]
        self._log_and_apply("licences", "store", {"records": records})
        return len(records)

    def ingest_usage(self, source) -> int:
        rows = load_usage_csv(source)
        serialized = [{
            "key": r.key, "subject": r.subject, "yop": r.yop,
            "list_price": r.list_price,
            "monthly_uses": list(r.monthly_uses),
            "monthly_denials": list(r.monthly_denials),
            "in_program": r.in_program, "prepicked": r.prepicked,
        } for r in rows]
        self._log_and_apply("usage", "batch", {"rows": serialized})
        return len(rows)

    # -- delivery orchestration ---------------------------------------------------

    def fulfil_request(self, request_id: str, method: str, actor: str,
                       source_pages: int = 1, url: str | None = None,
                       borrower_country: str | None = None):
        """Gate by licence/copyright, package, deliver, advance the engine.

        Returns (verdict, receipt_or_None). A Deny leaves the request
        untouched; the lender then records unfulfilment with the
        licence/copyright reason code.
        """
        request = self.engine.get(request_id)
        verdict = check_supply_allowed(
            request.bib, self.licences, self.copyright_policy,
            borrower_country=borrower_country,
            requested_methods=frozenset({method}),
        )
        if isinstance(verdict, Deny):
            return verdict, None
        now = self.clock()
        if method in ("SED", "ARTICLE_EXCHANGE"):
            package = make_hardcopy(
                [f"page-{i + 1}" for i in range(source_pages)],
                self.rasterizer, package_id=self._next_package_id(), now=now)
            self._log_and_apply("package", package.package_id, {
                "op": "created", "manifest": package.manifest,
                "disclaimer": package.disclaimer_text})
            receipt = deliver(verdict.methods, package, method, now)
        elif method == "URL":
            receipt = deliver(verdict.methods, url, method, now)
        else:
            receipt = deliver(verdict.methods, None, method, now)
        self.engine.record_allowed_methods(request_id, verdict.methods, actor)
        self.engine.fulfil(request_id, receipt.to_dict(), actor)
        self.post_ledger("LENT", request.requester_library, units=1, amount=0)
        return verdict, receipt

    def supply_as_lender(self, correlation: str, bib: BibRef,
                         borrower_library: str, method: str,
                         source_pages: int = 1, url: str | None = None,
                         borrower_country: str | None = None):
        """Lender-side supply for a request owned by another node.

        Gates by this node's licences, builds the package, posts the LENT
        entry, and returns (verdict, receipt). The caller wires the
        receipt back to the borrower, whose engine advances to SHIPPED.
        """
        verdict = check_supply_allowed(
            bib, self.licences, self.copyright_policy,
            borrower_country=borrower_country,
            requested_methods=frozenset({method}),
        )
        if isinstance(verdict, Deny):
            return verdict, None
        now = self.clock()
        if method in ("SED", "ARTICLE_EXCHANGE"):
            package = make_hardcopy(
                [f"page-{i + 1}" for i in range(source_pages)],
                self.rasterizer, package_id=self._next_package_id(), now=now)
            self._log_and_apply("package", package.package_id, {
                "op": "created", "manifest": package.manifest,
                "disclaimer": package.disclaimer_text})
            receipt = deliver(verdict.methods, package, method, now)
        elif method == "URL":
            receipt = deliver(verdict.methods, url, method, now)
        else:
            receipt = deliver(verdict.methods, None, method, now)
        self.post_ledger("LENT", borrower_library, units=1, amount=0)
        return verdict, receipt

    def receive_request(self, request_id: str, actor: str,
                        barcode: str | None = None) -> RSRequest:
        request = self.engine.get(request_id)
        lender = request.current_lender
        self.engine.receive(request_id, actor, barcode=barcode)
        if lender:
            self.post_ledger("BORROWED", lender, units=1, amount=0)
        return request

    def mark_package_downloaded(self, package_id: str) -> None:
        if self.packages.get(package_id) is None:
            raise UnknownCorrelation(package_id)
        self._log_and_apply("package", package_id, {"op": "downloaded"})

    def purge_packages(self, now: datetime | None = None) -> list[str]:
        now = now or self.clock()
        doomed = []
        for package_id in self.packages.live_ids():
            package = self.packages.get(package_id)
            if package.retention_until < now or (
                    package.delete_after_first_download and package.downloaded):
                doomed.append(package_id)
        if doomed:
            self._log_and_apply("package", "sweep", {
                "op": "purged", "ids": doomed, "at": now.isoformat()})
        return doomed

    def post_ledger(self, direction: str, counterparty: str, units: int = 1,
                    amount: int = 0) -> None:
        entry = {
            "timestamp": self.clock().isoformat(),
            "direction": direction,
            "counterparty": counterparty,
            "units": units,
            "amount": amount,
        }
        self._log_and_apply("ledger", str(self.log.next_seq), entry)

    def expire_stale(self, now: datetime | None = None) -> list[str]:
        return self.engine.expire_stale(now)

    # -- wire protocol -----------------------------------------------------------

    def make_wire(self, kind: str, correlation: str, recipient: str,
                  payload: dict) -> WireMessage:
        message = WireMessage(
            message_id=self._next_message_id(),
            correlation=correlation,
            kind=kind,
            sender=self.node_id,
            recipient=recipient,
            payload=payload,
            sent_at=self.clock().isoformat(),
        )
        self.log.append("wire_out", message.message_id, message.to_dict())
        return message

    def ingest_wire(self, data: dict) -> dict:
        message = WireMessage.from_dict(data)
        if message.recipient != self.node_id:
            raise SchemaViolation(
                f"message addressed to {message.recipient}, this is {self.node_id}")
        if message.message_id in self.seen_wire:
            return dict(self.seen_wire[message.message_id])
        ack = self._dispatch_wire(message)
        self.log.append("wire_in", message.message_id,
                        {"message": message.to_dict(), "ack": ack})
        self._apply_wire(message, ack)
        return dict(ack)

    def _dispatch_wire(self, message: WireMessage) -> dict:
        """Engine-side effects of a fresh message; pure-state effects are
        applied afterwards so replay can skip straight to them."""
        payload = message.payload
        if message.kind == "REQUEST":
            if "bib" not in payload or "flow" not in payload:
                raise SchemaViolation("REQUEST needs bib and flow")
            return {"ack_of": message.message_id, "result": "queued"}
        if message.kind == "REQUEST_CONFIRMATION":
            self._require_request(message.correlation)
            self.engine._annotate(
                self.engine.get(message.correlation), message.sender,
                "request confirmed by lender node",
                answer=payload.get("answer", "ok"))
            return {"ack_of": message.message_id, "result": "noted"}
        if message.kind == "SUPPLYING_STATUS":
            return self._apply_supplying_status(message)
        if message.kind == "REQUESTING_ACTION":
            if message.correlation not in self.inbox:
                raise UnknownCorrelation(message.correlation)
            action = payload.get("action")
            if action not in ("cancel", "received", "returned", "complete"):
                raise SchemaViolation(f"unknown requesting action {action!r}")
            return {"ack_of": message.message_id, "result": "noted"}
        raise SchemaViolation(f"unroutable kind {message.kind}")

    def _require_request(self, request_id: str) -> None:
        if request_id not in self.engine.store:
            raise UnknownCorrelation(request_id)

    def _apply_supplying_status(self, message: WireMessage) -> dict:
        self._require_request(message.correlation)
        payload = message.payload
        action = payload.get("action")
        rid = message.correlation
        if action == "accept":
            try:
                self.engine.accept(rid, payload["lender"], WIRE_ACTOR)
                result = "accepted"
            except AlreadyClaimed:
                result = "already_claimed"
        elif action == "unfulfil":
            self.engine.unfulfil(rid, int(payload["reason"]), WIRE_ACTOR)
            result = "unfulfilled"
        elif action == "fulfil":
            receipt = payload.get("receipt")
            self.engine.fulfil(rid, receipt, WIRE_ACTOR)
            result = "shipped"
        elif action == "cancel_decision":
            self.engine.decide_cancel(rid, bool(payload.get("approve")), WIRE_ACTOR)
            result = "cancel_decided"
        else:
            raise SchemaViolation(f"unknown supplying action {action!r}")
        return {"ack_of": message.message_id, "result": result}

    def _apply_wire(self, message: WireMessage, ack: dict) -> None:
        """Pure-state wire effects; runs both live and on replay."""
        self.seen_wire[message.message_id] = dict(ack)
        payload = message.payload
        if message.kind == "REQUEST":
            self.inbox[message.correlation] = {
                "request_id": message.correlation,
                "from_node": message.sender,
                "bib": payload.get("bib"),
                "flow": payload.get("flow"),
                "requester_library": payload.get("requester_library",
                                                 message.sender),
                "state": "NEW",
                "received_at": message.sent_at,
            }
            self.outbox.append({
                "kind": "new_lending_request", "request": message.correlation,
                "at": message.sent_at})
        elif message.kind == "REQUESTING_ACTION":
            entry = self.inbox.get(message.correlation)
            if entry is not None:
                action = payload.get("action")
                entry["state"] = {"cancel": "CANCEL_REQUESTED",
                                  "received": "RECEIVED_BY_BORROWER",
                                  "returned": "RETURNED",
                                  "complete": "CLOSED"}.get(action, entry["state"])

    def close_inbox_entry(self, request_id: str, state: str) -> None:
        entry = self.inbox.get(request_id)
        if entry is not None and entry["state"] != state:
            self._log_and_apply("inbox", request_id, {"op": "state", "state": state})

    # -- panels ---------------------------------------------------------------

    def _row(self, request: RSRequest) -> dict:
        bib = request.bib
        citation = bib.title
        if bib.container_title:
            citation += f" / {bib.container_title}"
        if bib.year:
            citation += f" ({bib.year})"
        created = request.history[0] if request.history else None
        return {
            "id": request.id,
            "status": request.status,
            "citation": citation,
            "entry_date": created.timestamp.isoformat() if created else None,
            "operator": created.actor if created else None,
            "requester": request.requester_library,
            "lender": request.current_lender,
            "flow": request.flow,
            "unfulfil_reason": request.unfulfil_reason,
        }

    def _last_lender(self, request: RSRequest) -> str | None:
        lender = None
        for event in request.history:
            if event.kind != "status-change":
                continue
            value = event.payload.get("lender") or \
                event.payload.get("set", {}).get("current_lender")
            if value:
                lender = value
        return lender

    def panel(self, side: str, name: str, library: str) -> list[dict]:
        requests = sorted(self.engine.store.values(), key=lambda r: r.id)
        rows: list[dict] = []
        if side == "borrowing":
            mine = [r for r in requests if r.requester_library == library]
            if name == "new":
                rows = [self._row(r) for r in mine if r.status == tr.DRAFT]
            elif name == "pending":
                rows = [self._row(r) for r in mine
                        if r.status in BORROWING_ACTIVE]
            elif name == "archive":
                rows = [self._row(r) for r in mine
                        if r.status in tr.TERMINAL_STATUSES]
            else:
                raise SchemaViolation(f"unknown borrowing panel {name!r}")
        elif side == "lending":
            if name == "pending":
                rows = [self._row(r) for r in requests
                        if r.current_lender == library]
                rows.extend(
                    dict(entry) for entry in sorted(
                        self.inbox.values(), key=lambda e: e["request_id"])
                    if entry["state"] in ("NEW", "CANCEL_REQUESTED"))
            elif name == "orphaned":
                profile = self.libraries.get(library)
                rows = []
                if profile is not None and profile.mode == "FULL":
                    rows = [self._row(r) for r in requests
                            if r.status == tr.ORPHANED
                            and r.requester_library != library]
            elif name == "archive":
                rows = [self._row(r) for r in requests
                        if r.status in tr.TERMINAL_STATUSES
                        and self._last_lender(r) == library]
            else:
                raise SchemaViolation(f"unknown lending panel {name!r}")
        else:
            raise SchemaViolation(f"unknown panel side {side!r}")
        return rows

    # -- reports -----------------------------------------------------------------

    def stats_report(self, mode: str = "OF_TOTAL", decimals: int = 0) -> dict:
        window = self.stats
        try:
            rate = fill_rate(window, mode, decimals)
        except EmptyWindow:
            rate = None
        try:
            turnaround = avg_turnaround(window)
        except EmptyWindow:
            turnaround = None
        per_partner = {}
        for partner, counts in sorted(self.outcome_log.counters.items()):
            samples = self.outcome_log.turnaround_hours.get(partner, [])
            per_partner[partner] = {
                **counts,
                "avg_turnaround_days": round_half_up(
                    sum(samples) / len(samples) / 24.0, 2) if samples else None,
            }
        return {
            "mode": mode,
            "fill_rate": rate,
            "avg_turnaround_days": turnaround,
            "counters": {
                "filled": window.filled,
                "unfilled": window.unfilled,
                "cancelled": window.cancelled,
                "expired": window.expired,
                "total_requests": window.total_requests,
            },
            "per_partner": per_partner,
        }

    def ledger_report(self) -> dict:
        period = (datetime.min.replace(tzinfo=timezone.utc),
                  datetime.max.replace(tzinfo=timezone.utc))
        settlement = []
        for counterparty in self.ledger.counterparties():
            invoice = settle(self.ledger, period, self.config.cost_policy,
                             counterparty)
            settlement.append({
                "counterparty": counterparty,
                "units_billed": invoice.units_billed,
                "amount": invoice.amount,
            })
        return {
            "policy": self.config.cost_policy.variant,
            "entries": len(self.ledger.entries),
            "units": {
                "lent": sum(e.units for e in self.ledger.entries
                            if e.direction == "LENT"),
                "borrowed": sum(e.units for e in self.ledger.entries
                                if e.direction == "BORROWED"),
            },
            "settlement": settlement,
        }

    # -- persistence --------------------------------------------------------------

    def state_snapshot(self) -> dict:
        return {
            "node_id": self.node_id,
            "libraries": {
                library_id: {
                    "mode": profile.mode,
                    "patron_requests_enabled": profile.patron_requests_enabled,
                    "weekly_patron_quota": profile.weekly_patron_quota,
                    "quarantine_days": profile.quarantine_days,
                    "loan_caps": dict(sorted(profile.loan_caps.items())),
                }
                for library_id, profile in sorted(self.libraries.items())
            },
            "grants": [
                [grant.user, grant.library, sorted(grant.roles)]
                for library_id in sorted(self.libraries)
                for grant in self.roles.grants_for(library_id)
            ],
            "requests": {rid: request.to_dict()
                         for rid, request in sorted(self.engine.store.items())},
            "holdings": [list(row) for row in self.holdings.rows()],
            "licences": [{
                "publisher": r.publisher, "container": r.container,
                "ill_digital_allowed": r.ill_digital_allowed,
                "methods": sorted(r.allowed_methods),
                "cross_border": r.cross_border_allowed,
            } for r in self.licences.records()],
            "usage": [[r.key, r.subject, r.yop, r.list_price,
                       list(r.monthly_uses), list(r.monthly_denials),
                       r.in_program, r.prepicked] for r in self.usage_rows],
            "ledger": [{
                "timestamp": e.timestamp.isoformat(), "direction": e.direction,
                "counterparty": e.counterparty, "units": e.units,
                "amount": e.amount,
            } for e in self.ledger.entries],
            "packages": {
                package_id: {
                    "manifest": self.packages.get(package_id).manifest,
                    "downloaded": self.packages.get(package_id).downloaded,
                }
                for package_id in self.packages.live_ids()
            },
            "purged": list(self.packages.purge_log),
            "inbox": {rid: dict(entry)
                      for rid, entry in sorted(self.inbox.items())},
            "seen_wire": {mid: ack
                          for mid, ack in sorted(self.seen_wire.items())},
            "outbox": list(self.outbox),
            "counters": {
                "requests": self._request_counter,
                "packages": self._package_counter,
                "wire_out": self._wire_out_counter,
            },
            "stats": {
                "filled": self.stats.filled,
                "unfilled": self.stats.unfilled,
                "cancelled": self.stats.cancelled,
                "expired": self.stats.expired,
                "total_requests": self.stats.total_requests,
                "turnaround_hours": [round(h, 6)
                                     for h in self.stats.turnaround_hours],
            },
        }

    def state_digest(self) -> str:
        return state_digest(self.state_snapshot())

    # -- replay --------------------------------------------------------------------

    def _apply_request_event(self, request_id: str, event_dict: dict) -> None:
        event = Event.from_dict(event_dict)
        store = self.engine.store
        if request_id not in store:
            payload = event.payload
            if payload.get("operation") != "create_request":
                raise SchemaViolation(
                    f"first event for {request_id} is not creation")
            created = payload["set"]
            request = RSRequest(
                id=created["id"],
                bib=BibRef.from_dict(created["bib"]),
                requester_library=created["requester_library"],
                flow=created["flow"],
                patron=created.get("patron"),
                patron_group=created.get("patron_group"),
            )
            request.tags = list(created.get("tags", []))
            request.history.append(event)
            store[request_id] = request
            self._request_counter = max(
                self._request_counter,
                int(request_id.rsplit("-", 1)[-1]))
            return
        request = store[request_id]
        request.history.append(event)
        if event.kind == "status-change":
            request.status = event.payload["to"]
        for name, value in event.payload.get("set", {}).items():
            setattr(request, name, _decode_value(name, value))

    def _apply_record(self, entity: str, entity_id: str, event: dict) -> None:
        """Pure-state application of one logged record."""
        if entity == "library":
            profile = event["profile"]
            self.partners[entity_id] = Partner(
                id=entity_id,
                kind=event.get("kind", "NETWORK_NODE"),
                profile_mode=profile["mode"],
                utc_offset_minutes=event.get("utc_offset_minutes", 0),
                service_hours=ServiceHours.parse(event.get(
                    "service_hours", "08:00-18:00")),
                latitude=event["latitude"],
                longitude=event["longitude"],
                supported_flows=frozenset(event.get(
                    "supported_flows", ["returnable", "non_returnable"])),
            )
            self.libraries[entity_id] = LibraryProfile(
                mode=profile["mode"],
                patron_requests_enabled=profile["patron_requests_enabled"],
                weekly_patron_quota=profile["weekly_patron_quota"],
                quarantine_days=profile["quarantine_days"],
                loan_caps=dict(profile["loan_caps"]),
            )
            self.roles.grant(event["manager"], entity_id, "LIBRARY_MANAGER")
        elif entity == "grant":
            action = event["action"]
            user, library = event["user"], event["library"]
            if action == "add":
                self.roles.grant(user, library, *event["roles"])
            elif action == "remove":
                self.roles.revoke(user, library, *event["roles"])
            elif action == "delete":
                self.roles.drop_user(user, library)
            elif action == "invite":
                self.outbox.append({"kind": "operator_invitation",
                                    "user": user, "library": library,
                                    "at": event["at"]})
        elif entity == "holdings":
            for key, partner_id, year_start, year_end in event["rows"]:
                self.holdings.add(key, partner_id, year_start, year_end)
        elif entity == "licences":
            self.licences.reload([
                LicenceRecord(
                    publisher=r["publisher"], container=r["container"],
                    ill_digital_allowed=r["ill_digital_allowed"],
                    allowed_methods=frozenset(r["methods"]),
                    cross_border_allowed=r["cross_border"],
                ) for r in event["records"]])
        elif entity == "usage":
            from ..acquisition import EbaUsageRow
            self.usage_rows = [
                EbaUsageRow(
                    key=r["key"], subject=r["subject"], yop=r["yop"],
                    list_price=r["list_price"],
                    monthly_uses=tuple(r["monthly_uses"]),
                    monthly_denials=tuple(r["monthly_denials"]),
                    in_program=r["in_program"], prepicked=r["prepicked"],
                ) for r in event["rows"]]
        elif entity == "ledger":
            self.ledger.post(LedgerEntry(
                timestamp=datetime.fromisoformat(event["timestamp"]),
                direction=event["direction"],
                counterparty=event["counterparty"],
                units=event["units"],
                amount=event["amount"],
            ))
        elif entity == "package":
            if event["op"] == "created":
                manifest = event["manifest"]
                package = DeliveryPackage(
                    package_id=manifest["package_id"],
                    page_count=len(manifest["pages"]),
                    dpi=manifest["dpi"],
                    disclaimer_text=event.get("disclaimer", ""),
                    created_at=datetime.fromisoformat(manifest["created_at"]),
                    retention_until=datetime.fromisoformat(
                        manifest["retention_until"]),
                    delete_after_first_download=manifest[
                        "delete_after_first_download"],
                    manifest=manifest,
                )
                self.packages.add(package)
                self._package_counter = max(
                    self._package_counter,
                    int(manifest["package_id"].rsplit("-", 1)[-1]))
            elif event["op"] == "downloaded":
                self.packages.mark_downloaded(entity_id)
            elif event["op"] == "purged":
                for package_id in event["ids"]:
                    self.packages.remove(package_id)
                self.packages.purge_log.extend(event["ids"])
        elif entity == "inbox":
            if event["op"] == "state" and entity_id in self.inbox:
                self.inbox[entity_id]["state"] = event["state"]

    @classmethod
    def rebuild(cls, config: NodeConfig, log_path, clock=None) -> "ServiceNode":
        """Reconstruct node state purely from its event log."""
        records = read_log(log_path)
        node = cls(config, clock=clock, log_path=None, _replaying=True)
        for record in records:
            if record.entity == "request":
                node._apply_request_event(record.entity_id, record.event)
                node._fold_into_stats(record.entity_id, record.event)
            elif record.entity == "wire_in":
                message = WireMessage.from_dict(record.event["message"])
                node._apply_wire(message, record.event["ack"])
            elif record.entity == "wire_out":
                node._wire_out_counter = max(
                    node._wire_out_counter,
                    int(record.entity_id.rsplit("-", 1)[-1]))
            else:
                node._apply_record(record.entity, record.entity_id, record.event)
        node.log = EventLog(None)
        node.log.records = list(records)
        node.log._tip = records[-1].checksum if records else "0" * 16
        node.engine.event_sink = node._on_engine_event
        node.engine._id_counter = node._request_counter
        return node
