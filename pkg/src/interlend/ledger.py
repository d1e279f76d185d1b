"""Reciprocity accounting, scenario comparison, service statistics.

The ledger is append-only, one appender per node; amounts are signed
integer cents (revenue positive, cost negative). Settlement supports the
three community cost policies: free, free until an imbalance threshold,
and fixed unit cost.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime

from .errors import DivisionByZero, EmptyWindow, InvalidEntry
from .money import cents_to_str, divide_floor, round_half_up

DIRECTIONS = ("LENT", "BORROWED", "SHIPPING_OUT", "SHIPPING_RETURN",
              "USER_INVOICE", "PARTNER_INVOICE")


@dataclass(frozen=True)
class CostPolicy:
    """How a community charges for exchanged documents."""

    variant: str  # FREE | FREE_WITH_THRESHOLD | FIXED_UNIT
    threshold_units: int = 0
    unit_price: int = 0

    def __post_init__(self):
        if self.variant not in ("FREE", "FREE_WITH_THRESHOLD", "FIXED_UNIT"):
            raise ValueError(f"unknown cost policy {self.variant!r}")
        if self.threshold_units < 0 or self.unit_price < 0:
            raise ValueError("threshold and unit price must be >= 0")

    @classmethod
    def free(cls) -> "CostPolicy":
        return cls("FREE")

    @classmethod
    def with_threshold(cls, threshold_units: int, unit_price: int) -> "CostPolicy":
        return cls("FREE_WITH_THRESHOLD", threshold_units, unit_price)

    @classmethod
    def fixed(cls, unit_price: int) -> "CostPolicy":
        return cls("FIXED_UNIT", unit_price=unit_price)


@dataclass(frozen=True)
class LedgerEntry:
    timestamp: datetime
    direction: str
    counterparty: str
    units: int = 1
    amount: int = 0  # signed cents: revenue +, cost -

    def validate(self) -> "LedgerEntry":
        if self.direction not in DIRECTIONS:
            raise InvalidEntry(f"unknown direction {self.direction!r}")
        if self.direction in ("LENT", "BORROWED") and self.units < 1:
            raise InvalidEntry("LENT/BORROWED need units >= 1")
        if self.direction.startswith("SHIPPING") and self.amount > 0:
            raise InvalidEntry("shipping amounts are costs (<= 0)")
        if self.direction == "USER_INVOICE" and self.amount < 0:
            raise InvalidEntry("user invoices are revenue (>= 0)")
        return self


@dataclass(frozen=True)
class Invoice:
    counterparty: str
    units_billed: int
    amount: int


class Ledger:
    """Append-only entry log with running totals."""

    def __init__(self):
        self.entries: list[LedgerEntry] = []
        self._units: dict[tuple[str, str], int] = {}
        self._amounts: dict[str, int] = {d: 0 for d in DIRECTIONS}

    def post(self, entry: LedgerEntry) -> None:
        entry.validate()
        self.entries.append(entry)
        key = (entry.direction, entry.counterparty)
        self._units[key] = self._units.get(key, 0) + entry.units
        self._amounts[entry.direction] += entry.amount

    def units(self, direction: str, counterparty: str | None = None,
              period: tuple[datetime, datetime] | None = None) -> int:
        if period is None and counterparty is not None:
            return self._units.get((direction, counterparty), 0)
        total = 0
        for entry in self.entries:
            if entry.direction != direction:
                continue
            if counterparty is not None and entry.counterparty != counterparty:
                continue
            if period is not None and not (period[0] <= entry.timestamp < period[1]):
                continue
            total += entry.units
        return total

    def amount(self, direction: str) -> int:
        return self._amounts[direction]

    def counterparties(self) -> list[str]:
        return sorted({entry.counterparty for entry in self.entries
                       if entry.direction in ("LENT", "BORROWED")})


def settle(ledger: Ledger, period: tuple[datetime, datetime],
           policy: CostPolicy, counterparty: str) -> Invoice:
    """Invoice one counterparty for the period under the community policy.

    Free exchange bills nothing; fixed unit cost bills every lent
    document; the threshold variant bills only the excess of net lending
    (lent minus borrowed) beyond the agreed imbalance.
    """
    lent = ledger.units("LENT", counterparty, period)
    borrowed = ledger.units("BORROWED", counterparty, period)
    if policy.variant == "FREE":
        return Invoice(counterparty, 0, 0)
    if policy.variant == "FIXED_UNIT":
        return Invoice(counterparty, lent, lent * policy.unit_price)
    net = lent - borrowed
    billable = max(0, net - policy.threshold_units)
    return Invoice(counterparty, billable, billable * policy.unit_price)


@dataclass(frozen=True)
class ScenarioInputs:
    """One year of borrowing/lending activity for cost comparison."""

    sent_requests: int
    lent_documents: int
    avg_fee_per_doc: int
    shipping_return_total: int
    shipping_out_total: int
    user_invoice_total: int
    fee_paid_to_nonreciprocal: int
    fee_received_from_nonreciprocal: int

    def validate(self) -> "ScenarioInputs":
        for name in self.__dataclass_fields__:
            if getattr(self, name) < 0:
                raise InvalidEntry(f"{name} must be >= 0")
        return self


def compare_scenarios(inputs: ScenarioInputs) -> dict:
    """Cost of running the service with vs without reciprocity.

    Without reciprocity every borrowed document is paid at the average
    fee and every lent one is invoiced at it; shipping and user invoices
    are identical in both worlds. The per-document average divides the
    net total by all documents moved (sent + lent) and truncates to the
    cent, matching the printed figures this report mirrors.
    """
    inputs.validate()
    documents = inputs.sent_requests + inputs.lent_documents
    if documents == 0:
        raise DivisionByZero("no documents sent or lent")

    fee_paid_without = inputs.sent_requests * inputs.avg_fee_per_doc
    fee_received_without = inputs.lent_documents * inputs.avg_fee_per_doc
    shipping = inputs.shipping_return_total + inputs.shipping_out_total

    with_costs = inputs.fee_paid_to_nonreciprocal + shipping
    with_revenues = inputs.user_invoice_total + inputs.fee_received_from_nonreciprocal
    with_total = with_costs - with_revenues

    without_costs = fee_paid_without + shipping
    without_revenues = inputs.user_invoice_total + fee_received_without
    without_total = without_costs - without_revenues

    return {
        "with_reciprocity": {
            "costs": with_costs,
            "fee_paid": inputs.fee_paid_to_nonreciprocal,
            "shipping_return": inputs.shipping_return_total,
            "shipping_out": inputs.shipping_out_total,
            "revenues": with_revenues,
            "user_invoices": inputs.user_invoice_total,
            "fee_received": inputs.fee_received_from_nonreciprocal,
            "total": with_total,
        },
        "without_reciprocity": {
            "costs": without_costs,
            "fee_paid": fee_paid_without,
            "shipping_return": inputs.shipping_return_total,
            "shipping_out": inputs.shipping_out_total,
            "revenues": without_revenues,
            "user_invoices": inputs.user_invoice_total,
            "fee_received": fee_received_without,
            "total": without_total,
        },
        "documents": documents,
        "avg_cost_per_doc_with": divide_floor(with_total, documents),
        "avg_cost_per_doc_without": divide_floor(without_total, documents),
    }


_REPORT_ROWS = (
    ("Costs", "costs"),
    ("Documents provided by other libraries", "fee_paid"),
    ("Shipping back documents", "shipping_return"),
    ("Shipping documents to borrowing libraries", "shipping_out"),
    ("Revenues", "revenues"),
    ("Invoices to users", "user_invoices"),
    ("Documents sent to other libraries", "fee_received"),
    ("Total cost of service", "total"),
    ("Average cost per document", None),
)


def report_csv(report: dict) -> str:
    """Render the comparison as CSV with the report's row labels."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["", "With reciprocity", "Without reciprocity"])
    for label, key in _REPORT_ROWS:
        if key is None:
            writer.writerow([label,
                             cents_to_str(report["avg_cost_per_doc_with"]),
                             cents_to_str(report["avg_cost_per_doc_without"])])
        else:
            writer.writerow([label,
                             cents_to_str(report["with_reciprocity"][key]),
                             cents_to_str(report["without_reciprocity"][key])])
    return buffer.getvalue()


# -- service statistics -------------------------------------------------------


@dataclass
class StatsWindow:
    """Counters and turnaround samples for one reporting period."""

    period_start: datetime
    period_end: datetime
    filled: int = 0
    unfilled: int = 0
    cancelled: int = 0
    expired: int = 0
    total_requests: int = 0
    turnaround_hours: list[float] = field(default_factory=list)
    per_partner: dict[str, dict[str, int]] = field(default_factory=dict)

    def validate(self) -> "StatsWindow":
        if self.filled + self.unfilled + self.cancelled + self.expired \
                > self.total_requests:
            raise InvalidEntry("outcome counts exceed total requests")
        return self

    def bump(self, outcome: str, partner: str | None = None) -> None:
        setattr(self, outcome, getattr(self, outcome) + 1)
        if partner:
            bucket = self.per_partner.setdefault(
                partner, {"filled": 0, "unfilled": 0, "cancelled": 0,
                          "expired": 0, "total": 0})
            bucket[outcome if outcome != "total_requests" else "total"] += 1


OF_TOTAL = "OF_TOTAL"
OF_DECIDED = "OF_DECIDED"


def fill_rate(window: StatsWindow, mode: str = OF_TOTAL,
              decimals: int = 0) -> float:
    """Share of requests filled, as a percentage.

    OF_TOTAL divides by every request in the window, pending included;
    OF_DECIDED divides by decided ones only (filled + unfilled). Both
    conventions are in live use, so the caller picks.
    """
    if mode == OF_TOTAL:
        denominator = window.total_requests
    elif mode == OF_DECIDED:
        denominator = window.filled + window.unfilled
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if denominator == 0:
        raise EmptyWindow("no requests in window")
    return round_half_up(100.0 * window.filled / denominator, decimals)


def avg_turnaround(window: StatsWindow) -> float:
    """Mean sample in days, two decimals."""
    if not window.turnaround_hours:
        raise EmptyWindow("no turnaround samples")
    mean_hours = sum(window.turnaround_hours) / len(window.turnaround_hours)
    return round_half_up(mean_hours / 24.0, 2)


def stats_csv(windows: dict[str, StatsWindow]) -> str:
    """`partner,filled,unfilled,cancelled,expired,total,avg_turnaround_days`."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["partner", "filled", "unfilled", "cancelled",
                     "expired", "total", "avg_turnaround_days"])
    for partner in sorted(windows):
        window = windows[partner]
        try:
            turnaround = f"{avg_turnaround(window):.2f}"
        except EmptyWindow:
            turnaround = ""
        writer.writerow([partner, window.filled, window.unfilled,
                         window.cancelled, window.expired,
                         window.total_requests, turnaround])
    return buffer.getvalue()
