"""Partner directory, holdings matching, rota construction, lender selection.

A rota (lender string) is the ordered sequence of suppliers a request is
tried against; selection inside a candidate tier levels load across
partners and respects their service hours by UTC offset.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .bibliography import BibRef, dedupe_key
from .errors import NoCandidates, UnknownPartner

ALL_LIBRARIES = "ALL_LIBRARIES"

PARTNER_KINDS = ("NETWORK_NODE", "EMAIL_PARTNER", "PURCHASE_VENDOR", "EXTERNAL_BROKER")

MINUTES_PER_DAY = 24 * 60


@dataclass(frozen=True)
class ServiceHours:
    """Daily open/close in minutes since local midnight; open < close."""

    open_minute: int = 8 * 60
    close_minute: int = 18 * 60

    def __post_init__(self):
        if not (0 <= self.open_minute < self.close_minute <= MINUTES_PER_DAY):
            raise ValueError(f"bad service hours {self.open_minute}..{self.close_minute}")

    def contains(self, local_minute: int) -> bool:
        return self.open_minute <= local_minute < self.close_minute

    @classmethod
    def parse(cls, text: str) -> "ServiceHours":
        """Parse 'HH:MM-HH:MM'."""
        opening, _, closing = text.partition("-")
        def minute(part: str) -> int:
            hours, _, minutes = part.strip().partition(":")
            return int(hours) * 60 + int(minutes or 0)
        return cls(minute(opening), minute(closing))

    def render(self) -> str:
        return (f"{self.open_minute // 60:02d}:{self.open_minute % 60:02d}-"
                f"{self.close_minute // 60:02d}:{self.close_minute % 60:02d}")


@dataclass
class Partner:
    """A supplier: community node, email partner, vendor or broker."""

    id: str
    kind: str = "NETWORK_NODE"
    profile_mode: str = "FULL"  # BASIC requesters never lend
    utc_offset_minutes: int = 0
    service_hours: ServiceHours = field(default_factory=ServiceHours)
    latitude: float = 0.0
    longitude: float = 0.0
    cost_policy_ref: str | None = None
    supported_flows: frozenset[str] = frozenset({"returnable", "non_returnable"})

    def __post_init__(self):
        if self.kind not in PARTNER_KINDS:
            raise ValueError(f"unknown partner kind {self.kind!r}")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")

    def open_at(self, clock_utc: datetime) -> bool:
        utc_minute = clock_utc.hour * 60 + clock_utc.minute
        local = (utc_minute + self.utc_offset_minutes) % MINUTES_PER_DAY
        return self.service_hours.contains(local)


@dataclass(frozen=True)
class Pod:
    """A reciprocal sub-community; a partner may belong to several."""

    name: str
    members: frozenset[str]
    reciprocal: bool = True


class HoldingsIndex:
    """NormalizedKey -> {(partner, year_start, year_end)}; year-level match."""

    def __init__(self):
        self._holdings: dict[str, set[tuple[str, int, int]]] = {}

    def add(self, key: str, partner_id: str, year_start: int, year_end: int) -> None:
        if year_start > year_end:
            raise ValueError(f"year_start {year_start} > year_end {year_end}")
        self._holdings.setdefault(key, set()).add((partner_id, year_start, year_end))

    def load_csv(self, source: str | Path | io.TextIOBase) -> int:
        """Ingest `key,partner_id,year_start,year_end` rows; returns count."""
        if isinstance(source, (str, Path)):
            with open(source, newline="", encoding="utf-8") as handle:
                return self.load_csv(handle)
        reader = csv.DictReader(source)
        count = 0
        for row in reader:
            self.add(row["key"].strip(), row["partner_id"].strip(),
                     int(row["year_start"]), int(row["year_end"]))
            count += 1
        return count

    def rows(self) -> list[tuple[str, str, int, int]]:
        out = []
        for key in sorted(self._holdings):
            for partner, start, end in sorted(self._holdings[key]):
                out.append((key, partner, start, end))
        return out

    def holders(self, key: str, year: int | None) -> set[str]:
        found = set()
        for partner, start, end in self._holdings.get(key, ()):
            if year is None or start <= year <= end:
                found.add(partner)
        return found


def match_holdings(bib: BibRef, index: HoldingsIndex) -> set[str]:
    """Partners holding the bib's key; serials must cover the year."""
    key = dedupe_key(bib).key
    year = bib.year if bib.kind == "article" else None
    return index.holders(key, year)


@dataclass(frozen=True)
class RotaPlan:
    """Ordered rota entries; ALL_LIBRARIES may appear once, only last."""

    entries: tuple[str, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("rota must be non-empty")
        for first, second in zip(self.entries, self.entries[1:]):
            if first == second:
                raise ValueError("immediate duplicate rota entry")
        if ALL_LIBRARIES in self.entries[:-1]:
            raise ValueError("ALL_LIBRARIES only allowed as the final entry")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RoutingConfig:
    """Node routing context: known partners, holdings, tier options."""

    partners: dict[str, Partner] = field(default_factory=dict)
    holdings: HoldingsIndex = field(default_factory=HoldingsIndex)
    purchase_vendor: str | None = None
    external_brokers: tuple[str, ...] = ()
    include_all_libraries: bool = True

    def partner(self, partner_id: str) -> Partner:
        try:
            return self.partners[partner_id]
        except KeyError:
            raise UnknownPartner(partner_id) from None


def build_rota(bib: BibRef, requester: str, flow: str, cfg: RoutingConfig,
               pods: list[Pod], purchase_eligible: bool = False) -> RotaPlan:
    """Assemble the lender string for one request.

    Tier order: purchase vendor (only when the request qualified for
    purchase-on-demand), pod members holding the item, email partners,
    external brokers, optional ALL_LIBRARIES broadcast. The requester
    never appears in its own rota.
    """
    def eligible(partner_id: str) -> bool:
        if partner_id == requester or partner_id not in cfg.partners:
            return False
        partner = cfg.partners[partner_id]
        return partner.profile_mode == "FULL" and flow in partner.supported_flows

    entries: list[str] = []

    def push(partner_id: str) -> None:
        if partner_id not in entries:
            entries.append(partner_id)

    if purchase_eligible and cfg.purchase_vendor and eligible(cfg.purchase_vendor):
        push(cfg.purchase_vendor)

    holders = match_holdings(bib, cfg.holdings)
    for pod in pods:
        for member in sorted(pod.members & holders):
            if eligible(member):
                push(member)

    for partner_id in sorted(cfg.partners):
        if cfg.partners[partner_id].kind == "EMAIL_PARTNER" and eligible(partner_id):
            push(partner_id)

    for broker in cfg.external_brokers:
        if eligible(broker):
            push(broker)

    if not entries and not cfg.include_all_libraries:
        raise NoCandidates(f"no supplier for {dedupe_key(bib)}")
    if cfg.include_all_libraries:
        entries.append(ALL_LIBRARIES)
    return RotaPlan(tuple(entries))


def select_partner(candidates: set[str], loads: dict[str, int],
                   period_assigned: dict[str, int], clock: datetime,
                   partners: dict[str, Partner]) -> str:
    """Pick one supplier from a candidate tier.

    Partners whose local time falls outside service hours are filtered
    out first — unless that empties the set, in which case requests
    queue at a closed lender rather than stall. Survivors are ranked by
    outstanding lending load, then by assignments this period, then by
    id.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    open_now = {c for c in candidates
                if c in partners and partners[c].open_at(clock)}
    pool = open_now or candidates
    return min(pool, key=lambda c: (loads.get(c, 0), period_assigned.get(c, 0), c))


class OutcomeLog:
    """Per-partner outcome counters fed to the stats module."""

    OUTCOMES = ("filled", "unfilled", "expired")

    def __init__(self):
        self.counters: dict[str, dict[str, int]] = {}
        self.turnaround_hours: dict[str, list[float]] = {}
        self.events: list[tuple[str, str, float]] = []

    def record_outcome(self, partner_id: str, outcome: str,
                       turnaround_hours: float = 0.0) -> None:
        if outcome not in self.OUTCOMES:
            raise ValueError(f"unknown outcome {outcome!r}")
        bucket = self.counters.setdefault(
            partner_id, {name: 0 for name in self.OUTCOMES})
        bucket[outcome] += 1
        if outcome == "filled":
            self.turnaround_hours.setdefault(partner_id, []).append(turnaround_hours)
        self.events.append((partner_id, outcome, turnaround_hours))

    def count(self, partner_id: str, outcome: str) -> int:
        return self.counters.get(partner_id, {}).get(outcome, 0)
