"""Deterministic in-process multi-node simulation.

Builds N community nodes wired through the JSON envelope, generates a
seeded request stream, drives every transaction through routing,
compliance, delivery, the returnable chain and reciprocity accounting,
then reports per-node statistics, ledger digests and settlement. Equal
seeds and configs produce byte-identical reports.
"""

from __future__ import annotations

import hashlib
import io
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from .. import transitions as tr
from ..bibliography import BibRef
from ..compliance import Deny
from ..engine import SYSTEM_ACTOR
from ..errors import ConfigInvalid
from ..ledger import CostPolicy
from ..money import to_cents
from ..routing import ALL_LIBRARIES, select_partner
from .config import parse_config
from .eventlog import canonical_json
from .node import ServiceNode

SIM_EPOCH = datetime(2023, 1, 2, 8, 0, tzinfo=timezone.utc)


class SimClock:
    """Single shared simulated clock; only the driver advances it."""

    def __init__(self, start: datetime = SIM_EPOCH):
        self.now = start

    def __call__(self) -> datetime:
        return self.now

    def advance_hours(self, hours: float) -> None:
        self.now += timedelta(hours=hours)

    def advance_days(self, days: float) -> None:
        self.advance_hours(days * 24)


@dataclass
class SimScenario:
    """Knobs for the generated workload; all defaults are desk-scale."""

    returnable_share: float = 0.25
    local_share: float = 0.05
    oa_share: float = 0.05
    restricted_share: float = 0.06  # titles whose licence forbids digital
    p_accept: float = 0.88
    p_silent: float = 0.02          # lender never answers; request expires
    p_cancel: float = 0.03          # borrower asks to cancel while pending
    quarantine_days: int = 2
    validity_days: int = 14
    policy_variant: str = "FREE"
    policy_threshold_units: int = 0
    policy_unit_price: int = 0
    shipping_out_cost: int = 7_00
    shipping_return_cost: int = 5_00
    user_invoice_share: float = 0.05
    user_invoice_amount: int = 3_00
    single_borrower: bool = False
    uniform_holdings: bool = False  # every peer holds every title
    titles: int = 40

    @classmethod
    def from_dict(cls, raw: dict) -> "SimScenario":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigInvalid(f"unknown scenario keys: {sorted(unknown)}")
        values = dict(raw)
        for money_key in ("policy_unit_price", "shipping_out_cost",
                          "shipping_return_cost", "user_invoice_amount"):
            if money_key in values:
                values[money_key] = to_cents(values[money_key])
        return cls(**values)

    def policy(self) -> CostPolicy:
        return CostPolicy(self.policy_variant, self.policy_threshold_units,
                          self.policy_unit_price)


@dataclass
class _Title:
    key_issn: str | None
    isbn: str | None
    title: str
    year: int
    publisher: str
    holders: list[str]
    oa: bool
    kind: str = "article"


def _build_nodes(count: int, scenario: SimScenario, clock: SimClock
                 ) -> dict[str, ServiceNode]:
    node_ids = [f"N{i + 1}" for i in range(count)]
    nodes: dict[str, ServiceNode] = {}
    for index, node_id in enumerate(node_ids):
        peers = [{
            "id": other,
            "utc_offset_minutes": (others_index % 5 - 2) * 60,
            "service_hours": "00:00-24:00",
        } for others_index, other in enumerate(node_ids) if other != node_id]
        config = parse_config({
            "node_id": node_id,
            "display_name": f"Library {node_id}",
            "latitude": 40.0 + index,
            "longitude": 5.0 + index,
            "service_hours": "00:00-24:00",
            "profile": {"mode": "FULL",
                        "quarantine_days": scenario.quarantine_days,
                        "loan_caps": {"default": 1000}},
            "cost_policy": {
                "variant": scenario.policy_variant,
                "threshold_units": scenario.policy_threshold_units,
                "unit_price": scenario.policy_unit_price / 100,
            },
            "validity_days": scenario.validity_days,
            "pods": [{"name": "community", "members": node_ids}],
            "peers": peers,
        })
        nodes[node_id] = ServiceNode(config, clock=clock)
    return nodes


def _build_corpus(rng: random.Random, scenario: SimScenario,
                  node_ids: list[str]) -> list[_Title]:
    corpus: list[_Title] = []
    for index in range(scenario.titles):
        serial = rng.random() >= scenario.returnable_share
        if scenario.uniform_holdings:
            # every lender-side node holds everything; the (single)
            # borrower node holds nothing, keeping all peers eligible
            holders = [nid for nid in node_ids if nid != node_ids[0]]
        else:
            holders = sorted(rng.sample(
                node_ids, rng.randint(1, max(1, len(node_ids) - 1))))
        restricted = rng.random() < scenario.restricted_share
        corpus.append(_Title(
            key_issn=f"{1000 + index:04d}-{2000 + index:04d}" if serial else None,
            isbn=None if serial else f"978000000{index:04d}",
            title=f"Synthetic Title {index:03d}",
            year=1995 + (index % 28),
            publisher="Paywall House" if restricted else "Open Press",
            holders=holders,
            oa=rng.random() < scenario.oa_share,
            kind="article" if serial else "book",
        ))
    return corpus


class _OaFixture:
    def __init__(self, oa_keys: set[str]):
        self.oa_keys = oa_keys

    def oa_url(self, scheme: str, value: str) -> str | None:
        if f"{scheme}:{value}" in self.oa_keys:
            return f"https://archive.example/{value}.pdf"
        return None


def run_simulation(seed: int, nodes: int, requests: int,
                   scenario: SimScenario | None = None) -> dict:
    """Drive `requests` transactions across `nodes` in-process nodes."""
    if nodes < 2:
        raise ConfigInvalid("simulation needs at least 2 nodes")
    scenario = scenario or SimScenario()
    rng = random.Random(seed)
    clock = SimClock()
    community = _build_nodes(nodes, scenario, clock)
    node_ids = sorted(community)
    corpus = _build_corpus(rng, scenario, node_ids)

    holdings_rows = []
    for title_index, title in enumerate(corpus):
        key = (f"isbn:{title.isbn}" if title.isbn
               else f"issn:{title.key_issn.replace('-', '')}|{title.year}")
        for holder in title.holders:
            holdings_rows.append((key, holder, title.year - 3, title.year + 3))
    licence_records = [
        {"publisher": "Paywall House", "container": "",
         "ill_digital_allowed": False, "methods": ["POSTAL"],
         "cross_border": True},
    ]
    holdings_csv = "key,partner_id,year_start,year_end\n" + "".join(
        f"{k},{p},{s},{e}\n" for k, p, s, e in holdings_rows)
    licences_csv = "publisher,container,ill_digital_allowed,methods,cross_border\n" \
        + "".join(f"{r['publisher']},{r['container']},"
                  f"{str(r['ill_digital_allowed']).lower()},"
                  f"{'|'.join(r['methods'])},{str(r['cross_border']).lower()}\n"
                  for r in licence_records)
    oa_keys = {f"doi:10.9999/t{i}" for i, t in enumerate(corpus) if t.oa}
    oa_fixture = _OaFixture(oa_keys)
    for node in community.values():
        node.ingest_holdings(io.StringIO(holdings_csv))
        node.ingest_licences(io.StringIO(licences_csv))
        node.oa_source = oa_fixture

    loads = {nid: 0 for nid in node_ids}
    assigned = {nid: 0 for nid in node_ids}
    generated: list[tuple[str, str]] = []  # (node id, request id)

    def bib_for(title_index: int) -> BibRef:
        title = corpus[title_index]
        return BibRef(
            kind=title.kind,
            title=title.title,
            container_title="Synthetic Journal" if title.kind == "article" else None,
            year=title.year,
            doi=f"10.9999/t{title_index}",
            isbn=title.isbn,
            issn=title.key_issn,
            publisher=title.publisher,
        )

    def wire(sender: ServiceNode, kind: str, correlation: str,
             recipient_id: str, payload: dict) -> dict:
        message = sender.make_wire(kind, correlation, recipient_id, payload)
        return community[recipient_id].ingest_wire(message.to_dict())

    def lender_decides(lender_id: str, borrower: ServiceNode,
                       rid: str) -> str:
        """One lender's reaction to a pending request; returns outcome."""
        lender = community[lender_id]
        if rng.random() < scenario.p_silent:
            return "silent"
        entry = lender.inbox.get(rid)
        request = borrower.engine.get(rid)
        if rng.random() >= scenario.p_accept:
            reason = rng.choice([1, 2, 3, 4, 6])
            wire(lender, "SUPPLYING_STATUS", rid, borrower.node_id,
                 {"action": "unfulfil", "lender": lender_id, "reason": reason})
            if entry:
                lender.close_inbox_entry(rid, "CLOSED")
            return "unfulfilled"
        ack = wire(lender, "SUPPLYING_STATUS", rid, borrower.node_id,
                   {"action": "accept", "lender": lender_id})
        if ack["result"] != "accepted":
            return "lost_race"
        method = "POSTAL" if request.flow == "returnable" else "SED"
        verdict, receipt = lender.supply_as_lender(
            rid, request.bib, request.requester_library, method,
            source_pages=rng.randint(2, 18))
        if isinstance(verdict, Deny):
            wire(lender, "SUPPLYING_STATUS", rid, borrower.node_id,
                 {"action": "unfulfil", "lender": lender_id,
                  "reason": verdict.reason_code})
            if entry:
                lender.close_inbox_entry(rid, "CLOSED")
            return "unfulfilled"
        lender.post_ledger("SHIPPING_OUT", request.requester_library, units=1,
                           amount=-scenario.shipping_out_cost)
        loads[lender_id] += 1
        wire(lender, "SUPPLYING_STATUS", rid, borrower.node_id,
             {"action": "fulfil", "receipt": receipt.to_dict()})
        if entry:
            lender.close_inbox_entry(rid, "SHIPPED")
        return "shipped"

    def borrower_finishes(borrower: ServiceNode, rid: str,
                          lender_id: str) -> None:
        request = borrower.engine.get(rid)
        barcode = f"T-{rid[-6:]}" if request.flow == "returnable" else None
        borrower.receive_request(rid, SYSTEM_ACTOR, barcode=barcode)
        loads[lender_id] -= 1
        if request.flow == "returnable":
            borrower.engine.loan_to_patron(rid, SYSTEM_ACTOR)
            borrower.engine.return_from_patron(rid, SYSTEM_ACTOR)
            if request.status == tr.IN_QUARANTINE:
                clock.advance_days(scenario.quarantine_days)
                borrower.engine.release_quarantine(rid, SYSTEM_ACTOR)
            borrower.engine.return_to_lender(rid, SYSTEM_ACTOR)
            borrower.post_ledger("SHIPPING_RETURN", lender_id, units=1,
                                 amount=-scenario.shipping_return_cost)
            borrower.engine.complete(rid, SYSTEM_ACTOR)
            wire(borrower, "REQUESTING_ACTION", rid, lender_id,
                 {"action": "complete"})
        if rng.random() < scenario.user_invoice_share:
            borrower.post_ledger("USER_INVOICE", request.patron or "walk-in",
                                 units=1, amount=scenario.user_invoice_amount)

    for request_index in range(requests):
        clock.advance_hours(rng.randint(1, 5))
        borrower_id = node_ids[0] if scenario.single_borrower else \
            rng.choice(node_ids)
        borrower = community[borrower_id]
        title_index = rng.randrange(len(corpus))
        if rng.random() < scenario.local_share:
            # steer toward a locally held title when one exists
            local = [i for i, t in enumerate(corpus)
                     if borrower_id in t.holders]
            if local:
                title_index = rng.choice(local)
        else:
            # patrons mostly ask for what their library does not hold
            for _ in range(8):
                if borrower_id not in corpus[title_index].holders:
                    break
                title_index = rng.randrange(len(corpus))
        title = corpus[title_index]
        flow = "returnable" if title.kind == "book" else "non_returnable"
        patron = f"pat-{borrower_id}" if flow == "returnable" or \
            rng.random() < 0.5 else None
        request = borrower.engine.create_request(
            bib_for(title_index), borrower_id, flow, SYSTEM_ACTOR,
            patron=patron)
        generated.append((borrower_id, request.id))

        advice = borrower.engine.precheck(request.id, borrower.holdings,
                                          borrower.oa_source, SYSTEM_ACTOR)
        if advice.kind != "proceed":
            continue

        candidates = {h for h in title.holders if h != borrower_id}
        if not candidates:
            borrower.engine.send_to_all(request.id, SYSTEM_ACTOR)
            for peer_id in node_ids:
                if peer_id == borrower_id:
                    continue
                wire(borrower, "REQUEST", request.id, peer_id, {
                    "bib": request.bib.to_dict(), "flow": flow,
                    "requester_library": borrower_id})
            claimed = False
            for peer_id in node_ids:
                if peer_id == borrower_id or claimed:
                    continue
                if rng.random() < scenario.p_accept:
                    ack = wire(community[peer_id], "SUPPLYING_STATUS",
                               request.id, borrower_id,
                               {"action": "accept", "lender": peer_id})
                    if ack["result"] == "accepted":
                        claimed = True
                        lender = community[peer_id]
                        method = "POSTAL" if flow == "returnable" else "SED"
                        verdict, receipt = lender.supply_as_lender(
                            request.id, request.bib, borrower_id, method,
                            source_pages=rng.randint(2, 18))
                        if isinstance(verdict, Deny):
                            wire(lender, "SUPPLYING_STATUS", request.id,
                                 borrower_id,
                                 {"action": "unfulfil", "lender": peer_id,
                                  "reason": verdict.reason_code})
                        else:
                            lender.post_ledger(
                                "SHIPPING_OUT", borrower_id, units=1,
                                amount=-scenario.shipping_out_cost)
                            wire(lender, "SUPPLYING_STATUS", request.id,
                                 borrower_id, {"action": "fulfil",
                                               "receipt": receipt.to_dict()})
                            borrower_finishes(borrower, request.id, peer_id)
            continue

        lender_id = select_partner(candidates, loads, assigned, clock(),
                                   borrower.partners)
        assigned[lender_id] += 1
        remaining = sorted(candidates - {lender_id})
        rota = [lender_id] + remaining
        if rng.random() < 0.6:  # most, not all, rotas end in a broadcast
            rota.append(ALL_LIBRARIES)
        borrower.engine.assign_rota(request.id, rota, SYSTEM_ACTOR)
        borrower.engine.send_to_partner(request.id, lender_id, SYSTEM_ACTOR)
        wire(borrower, "REQUEST", request.id, lender_id, {
            "bib": request.bib.to_dict(), "flow": flow,
            "requester_library": borrower_id})

        hop = 0
        current = lender_id
        while True:
            clock.advance_hours(rng.randint(1, 12))
            if rng.random() < scenario.p_cancel:
                borrower.engine.request_cancel(request.id, SYSTEM_ACTOR)
                wire(borrower, "REQUESTING_ACTION", request.id, current,
                     {"action": "cancel"})
                approve = rng.random() < 0.7
                wire(community[current], "SUPPLYING_STATUS", request.id,
                     borrower_id, {"action": "cancel_decision",
                                   "approve": approve})
                if approve:
                    community[current].close_inbox_entry(request.id, "CLOSED")
                    break
            outcome = lender_decides(current, borrower, request.id)
            if outcome == "shipped":
                borrower_finishes(borrower, request.id, current)
                break
            if outcome == "silent":
                break  # expires at the horizon sweep
            if outcome != "unfulfilled":
                break
            # advance the rota
            record = borrower.engine.get(request.id)
            if record.rota_index + 1 >= len(record.rota):
                borrower.engine.reiterate(request.id, SYSTEM_ACTOR)
                break
            next_entry = record.rota[record.rota_index + 1]
            borrower.engine.reiterate(request.id, SYSTEM_ACTOR)
            if next_entry == ALL_LIBRARIES:
                break  # broadcast tail: leave for expiry sweep
            current = next_entry
            assigned[current] += 1
            wire(borrower, "REQUEST", request.id, current, {
                "bib": request.bib.to_dict(), "flow": flow,
                "requester_library": borrower_id})
            hop += 1
            if hop > len(node_ids) + 2:
                break

    # horizon: validity expiry and the day-8 package purge sweep
    clock.advance_days(scenario.validity_days + 1)
    for node_id in node_ids:
        community[node_id].expire_stale()
    clock.advance_days(8)
    for node_id in node_ids:
        community[node_id].purge_packages()

    period = (SIM_EPOCH - timedelta(days=1), clock() + timedelta(days=1))
    policy = scenario.policy()
    terminal = 0
    per_node: dict[str, dict] = {}
    sum_lent = 0
    sum_borrowed = 0
    for node_id in node_ids:
        node = community[node_id]
        for request in node.engine.store.values():
            if request.status in tr.TERMINAL_STATUSES:
                terminal += 1
        report = node.stats_report()
        ledger_bytes = canonical_json([
            {"timestamp": e.timestamp.isoformat(), "direction": e.direction,
             "counterparty": e.counterparty, "units": e.units,
             "amount": e.amount} for e in node.ledger.entries
        ]).encode()
        settlement = node.ledger_report()["settlement"]
        sum_lent += sum(e.units for e in node.ledger.entries
                        if e.direction == "LENT")
        sum_borrowed += sum(e.units for e in node.ledger.entries
                            if e.direction == "BORROWED")
        per_node[node_id] = {
            "stats": report,
            "ledger_digest": hashlib.sha256(ledger_bytes).hexdigest(),
            "settlement": settlement,
            "state_digest": node.state_digest(),
            "packages_live": len(node.packages),
        }
    total = len(generated)
    return {
        "seed": seed,
        "nodes": nodes,
        "requests": requests,
        "policy": policy.variant,
        "per_node": per_node,
        "network": {
            "generated": total,
            "terminal": terminal,
            "in_flight": total - terminal,
            "terminal_rate": round(terminal / total, 4) if total else 1.0,
            "sum_lent": sum_lent,
            "sum_borrowed": sum_borrowed,
            "assignment_counts": {nid: assigned[nid] for nid in node_ids},
        },
    }


def report_bytes(report: dict) -> bytes:
    return canonical_json(report).encode("utf-8")
