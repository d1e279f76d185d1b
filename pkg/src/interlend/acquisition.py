"""Purchase-instead-of-borrow decisions.

Three acquisition models feed the router: patron-driven purchase of
e-books with short-term rentals before a definitive buy, purchase-on-
demand of print books that would otherwise travel internationally, and
evidence-based end-of-period selection from usage statistics. Money is
integer cents throughout.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InsufficientDeposit
from .money import divide_half_up

STL_ABSOLUTE_CAP = 100_00  # rental below 100 EUR triggers eligibility
STL_LIST_FRACTION = 0.5    # ... or below half the list price

UNUSED = "unused"


@dataclass(frozen=True)
class PdaPool:
    """Title-pool filter for patron-driven acquisition."""

    subjects_allowed: frozenset[str]
    languages_allowed: frozenset[str]
    price_min: int = 0
    price_max: int = 200_00
    moving_wall_years: int = 3
    excluded_publishers: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.price_min > self.price_max:
            raise ValueError("price_min > price_max")
        if self.moving_wall_years < 0:
            raise ValueError("moving_wall_years < 0")


def pool_contains(meta: dict, pool: PdaPool, current_year: int) -> bool:
    """True when a title belongs in the discovery pool.

    ``meta`` carries subject, language, list_price (cents), yop and
    publisher. All criteria must hold, including the publication-year
    moving wall (current_year - yop < wall).
    """
    return (
        meta["subject"] in pool.subjects_allowed
        and meta["language"] in pool.languages_allowed
        and pool.price_min <= meta["list_price"] <= pool.price_max
        and current_year - meta["yop"] < pool.moving_wall_years
        and meta.get("publisher") not in pool.excluded_publishers
    )


@dataclass
class PdaTitleState:
    """Rental/purchase progress of one pooled title."""

    key: str
    list_price: int
    stl_price: int | None = None
    rentals: int = 0
    purchased: bool = False


@dataclass
class Deposit:
    """Prepaid purchase account; balance never goes below zero."""

    balance: int
    history: list[tuple[str, int]] = field(default_factory=list)

    def charge(self, label: str, amount: int) -> None:
        if amount > self.balance:
            raise InsufficientDeposit(
                f"{label} needs {amount} with balance {self.balance}")
        self.balance -= amount
        self.history.append((label, amount))

    def top_up(self, amount: int) -> None:
        self.balance += amount
        self.history.append(("topup", -amount))


@dataclass(frozen=True)
class Action:
    """Outcome of one use event: rent, purchase or nothing."""

    kind: str                 # "rent" | "purchase" | "noop"
    price: int = 0
    model: str | None = None  # purchase licence model

    @classmethod
    def rent(cls, price: int) -> "Action":
        return cls("rent", price)

    @classmethod
    def purchase(cls, price: int) -> "Action":
        return cls("purchase", price, model="1U")

    @classmethod
    def noop(cls) -> "Action":
        return cls("noop")


def stl_eligible(state: PdaTitleState) -> bool:
    """Rental offered and cheap enough: under the absolute cap or under
    half the list price."""
    if state.stl_price is None:
        return False
    return (state.stl_price < STL_ABSOLUTE_CAP
            or state.stl_price < STL_LIST_FRACTION * state.list_price)


def on_use_event(state: PdaTitleState, deposit: Deposit) -> Action:
    """Advance one title on a patron use.

    Two cheap rentals precede the definitive single-user purchase; titles
    without an eligible rental option are bought on first use. Charges
    that would overdraw the deposit raise without touching any state.
    """
    if state.purchased:
        return Action.noop()
    if stl_eligible(state):
        if state.rentals < 2:
            action = Action.rent(state.stl_price)
            deposit.charge(f"rent:{state.key}", state.stl_price)
            state.rentals += 1
            return action
        action = Action.purchase(state.list_price)
        deposit.charge(f"purchase:{state.key}", state.list_price)
        state.purchased = True
        return action
    action = Action.purchase(state.list_price)
    deposit.charge(f"purchase:{state.key}", state.list_price)
    state.purchased = True
    return action


@dataclass(frozen=True)
class PodParams:
    """Eligibility rules for buying a requested print book outright."""

    max_cost: int = 150_00
    eligible_groups: frozenset[str] = frozenset({"academic_staff"})
    excluded_genres: frozenset[str] = frozenset(
        {"syllabus", "tourist_guide", "school_book"})
    student_high_demand_allowed: bool = True

    def __post_init__(self):
        if self.max_cost <= 0:
            raise ValueError("max_cost must be positive")


def pod_eligibility(price_quote: int, genre: str, patron_group: str,
                    params: PodParams, high_demand: bool = False) -> tuple[bool, str]:
    """Purchase-on-demand gate with a human-readable reason."""
    if price_quote > params.max_cost:
        return False, f"quote {price_quote} exceeds cap {params.max_cost}"
    if genre in params.excluded_genres:
        return False, f"genre {genre!r} excluded"
    if patron_group in params.eligible_groups:
        return True, "eligible patron group"
    if (patron_group == "student" and high_demand
            and params.student_high_demand_allowed):
        return True, "student request in high demand"
    return False, f"patron group {patron_group!r} not eligible"


@dataclass(frozen=True)
class EbaUsageRow:
    """One title's year of COUNTER-style usage and denial counts."""

    key: str
    subject: str
    yop: int
    list_price: int
    monthly_uses: tuple[int, ...]
    monthly_denials: tuple[int, ...]
    in_program: bool = True
    prepicked: bool = False

    def __post_init__(self):
        if len(self.monthly_uses) != 12 or len(self.monthly_denials) != 12:
            raise ValueError("need 12 monthly buckets")
        if any(n < 0 for n in self.monthly_uses + self.monthly_denials):
            raise ValueError("counts must be non-negative")

    @property
    def total_uses(self) -> int:
        return sum(self.monthly_uses)

    @property
    def month_spread(self) -> int:
        return sum(1 for n in self.monthly_uses if n > 0)

    @property
    def total_denials(self) -> int:
        return sum(self.monthly_denials)


def eba_rank_key(row: EbaUsageRow):
    """Normative selection order: librarian picks, then use volume, use
    spread across months, denied-access volume, recency, key."""
    return (not row.prepicked, -row.total_uses, -row.month_spread,
            -row.total_denials, -row.yop, row.key)


def eba_select(rows: list[EbaUsageRow], budget: int) -> list[str]:
    """Greedy pick under budget in the normative order."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    selected: list[str] = []
    remaining = budget
    for row in sorted(rows, key=eba_rank_key):
        if row.list_price <= remaining:
            selected.append(row.key)
            remaining -= row.list_price
    return selected


def load_usage_csv(source: str | Path | io.TextIOBase) -> list[EbaUsageRow]:
    """Ingest `key,subject,yop,price,uses_m1..m12,denials_m1..m12,in_program,prepicked`."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as handle:
            return load_usage_csv(handle)
    rows: list[EbaUsageRow] = []
    for record in csv.DictReader(source):
        rows.append(EbaUsageRow(
            key=record["key"].strip(),
            subject=record["subject"].strip(),
            yop=int(record["yop"]),
            list_price=int(round(float(record["price"]) * 100)),
            monthly_uses=tuple(int(record[f"uses_m{i}"]) for i in range(1, 13)),
            monthly_denials=tuple(int(record[f"denials_m{i}"]) for i in range(1, 13)),
            in_program=record.get("in_program", "true").strip().lower()
            in ("1", "true", "yes"),
            prepicked=record.get("prepicked", "false").strip().lower()
            in ("1", "true", "yes"),
        ))
    return rows


def cost_per_use(total_spend: int, uses: int) -> int | str:
    """Average cents per use, half-up; zero uses reports the sentinel."""
    if uses < 0:
        raise ValueError("uses must be >= 0")
    if uses == 0:
        return UNUSED
    return divide_half_up(total_spend, uses)
