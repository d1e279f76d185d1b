import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from interlend import errors
from interlend.acquisition import (
    UNUSED,
    Action,
    Deposit,
    EbaUsageRow,
    PdaPool,
    PdaTitleState,
    PodParams,
    cost_per_use,
    eba_rank_key,
    eba_select,
    load_usage_csv,
    on_use_event,
    pod_eligibility,
    pool_contains,
    stl_eligible,
)
from interlend.money import to_cents


def pool(**kw):
    defaults = dict(
        subjects_allowed=frozenset({"chemistry", "engineering"}),
        languages_allowed=frozenset({"en", "fr"}),
        price_min=0,
        price_max=200_00,
        moving_wall_years=3,
        excluded_publishers=frozenset({"DirectBuy"}),
    )
    defaults.update(kw)
    return PdaPool(**defaults)


def meta(**kw):
    defaults = dict(subject="chemistry", language="en", list_price=50_00,
                    yop=2023, publisher="Any")
    defaults.update(kw)
    return defaults


class TestPoolContains:
    def test_price_cap_200(self):
        assert not pool_contains(meta(list_price=210_00), pool(), 2023)

    def test_moving_wall_three_years(self):
        assert not pool_contains(meta(yop=2019), pool(), 2023)
        assert pool_contains(meta(yop=2021), pool(), 2023)

    def test_all_criteria_met(self):
        assert pool_contains(meta(), pool(), 2023)

    def test_excluded_publisher(self):
        assert not pool_contains(meta(publisher="DirectBuy"), pool(), 2023)

    def test_language_filter(self):
        assert not pool_contains(meta(language="de"), pool(), 2023)


class TestOnUseEvent:
    def test_cheap_stl_rents(self):
        state = PdaTitleState("t", list_price=65_00, stl_price=9_30)
        deposit = Deposit(balance=500_000)
        action = on_use_event(state, deposit)
        assert action == Action.rent(9_30)
        assert state.rentals == 1
        assert deposit.balance == 500_000 - 9_30

    def test_purchase_after_two_rentals(self):
        state = PdaTitleState("t", list_price=65_00, stl_price=9_30, rentals=2)
        deposit = Deposit(balance=500_000)
        action = on_use_event(state, deposit)
        assert action.kind == "purchase"
        assert action.price == 65_00
        assert action.model == "1U"
        assert state.purchased

    def test_no_stl_buys_on_first_use(self):
        state = PdaTitleState("t", list_price=40_00, stl_price=None)
        deposit = Deposit(balance=500_000)
        action = on_use_event(state, deposit)
        assert action.kind == "purchase"
        assert state.purchased and state.rentals == 0

    def test_stl_eligible_via_absolute_cap(self):
        # 90 EUR rental on a 150 EUR title: fails the 50% rule but sits
        # under the 100 EUR cap, so the OR admits it
        state = PdaTitleState("t", list_price=150_00, stl_price=90_00)
        assert stl_eligible(state)
        deposit = Deposit(balance=500_000)
        assert on_use_event(state, deposit).kind == "rent"

    def test_stl_eligible_via_fraction(self):
        state = PdaTitleState("t", list_price=300_00, stl_price=120_00)
        assert stl_eligible(state)

    def test_stl_ineligible(self):
        state = PdaTitleState("t", list_price=150_00, stl_price=100_00)
        assert not stl_eligible(state)  # 100 not < 100; 100 not < 75

    def test_purchased_titles_noop(self):
        state = PdaTitleState("t", list_price=40_00, purchased=True)
        deposit = Deposit(balance=10)
        assert on_use_event(state, deposit) == Action.noop()
        assert deposit.balance == 10

    def test_insufficient_deposit_blocks_without_state_change(self):
        state = PdaTitleState("t", list_price=40_00, stl_price=None)
        deposit = Deposit(balance=39_99)
        with pytest.raises(errors.InsufficientDeposit):
            on_use_event(state, deposit)
        assert not state.purchased
        assert deposit.balance == 39_99

    @settings(max_examples=60)
    @given(
        list_price=st.integers(min_value=1_00, max_value=400_00),
        stl_price=st.one_of(st.none(), st.integers(min_value=1, max_value=250_00)),
        events=st.integers(min_value=1, max_value=8),
    )
    def test_purchase_happens_after_exactly_two_rentals_or_none(
            self, list_price, stl_price, events):
        state = PdaTitleState("t", list_price=list_price, stl_price=stl_price)
        deposit = Deposit(balance=10_000_00)
        eligible = stl_eligible(state)
        rentals_at_purchase = None
        for _ in range(events):
            action = on_use_event(state, deposit)
            if action.kind == "purchase":
                rentals_at_purchase = state.rentals
        if state.purchased:
            assert rentals_at_purchase == (2 if eligible else 0)

    def test_deposit_conservation_fuzz(self):
        rng = random.Random(11)
        titles = {
            f"t{i}": PdaTitleState(
                f"t{i}",
                list_price=rng.randint(10_00, 180_00),
                stl_price=rng.choice([None, rng.randint(1_00, 120_00)]),
            )
            for i in range(40)
        }
        initial = 2_000_00
        deposit = Deposit(balance=initial)
        topups = 0
        spent = 0
        for _ in range(10_000):
            state = titles[f"t{rng.randrange(40)}"]
            try:
                action = on_use_event(state, deposit)
            except errors.InsufficientDeposit:
                deposit.top_up(500_00)
                topups += 500_00
                continue
            if action.kind in ("rent", "purchase"):
                spent += action.price
        assert deposit.balance == initial + topups - spent
        assert deposit.balance >= 0


class TestPodEligibility:
    def test_cost_cap_150(self):
        ok, why = pod_eligibility(160_00, "monograph", "academic_staff", PodParams())
        assert not ok and "cap" in why

    def test_staff_book_within_cap(self):
        ok, _ = pod_eligibility(80_00, "monograph", "academic_staff", PodParams())
        assert ok

    def test_student_high_demand(self):
        ok, why = pod_eligibility(80_00, "monograph", "student", PodParams(),
                                  high_demand=True)
        assert ok and "high demand" in why

    def test_student_without_flag(self):
        ok, _ = pod_eligibility(80_00, "monograph", "student", PodParams())
        assert not ok

    def test_excluded_genre(self):
        ok, why = pod_eligibility(80_00, "tourist_guide", "academic_staff", PodParams())
        assert not ok and "genre" in why


def usage_row(key, uses_total=0, spread_months=1, denials=0, yop=2021,
              price=50_00, prepicked=False):
    uses = [0] * 12
    spread = min(spread_months, uses_total)
    if spread:
        base, rem = divmod(uses_total, spread)
        for month in range(spread):
            uses[month] = base + (1 if month < rem else 0)
    denial_buckets = [0] * 12
    denial_buckets[0] = denials
    return EbaUsageRow(key=key, subject="s", yop=yop, list_price=price,
                       monthly_uses=tuple(uses),
                       monthly_denials=tuple(denial_buckets),
                       prepicked=prepicked)


class TestEbaSelect:
    def test_budget_zero(self):
        assert eba_select([usage_row("a", 5)], 0) == []

    def test_higher_uses_first(self):
        rows = [usage_row("a", 3), usage_row("b", 5)]
        assert eba_select(rows, 50_00) == ["b"]

    def test_prepicked_beats_uses(self):
        rows = [usage_row("a", 50), usage_row("b", 1, prepicked=True)]
        assert eba_select(rows, 50_00) == ["b"]

    def test_spread_breaks_use_ties(self):
        rows = [usage_row("a", 6, spread_months=1), usage_row("b", 6, spread_months=3)]
        assert eba_select(rows, 50_00) == ["b"]

    def test_greedy_skips_too_expensive(self):
        rows = [usage_row("a", 9, price=80_00), usage_row("b", 2, price=30_00)]
        assert eba_select(rows, 40_00) == ["b"]

    def test_against_exhaustive_oracle(self):
        rng = random.Random(5)
        rows = [
            usage_row(
                f"k{i}",
                uses_total=rng.randint(0, 6),
                spread_months=rng.randint(1, 4),
                denials=rng.randint(0, 3),
                yop=rng.choice([2019, 2020, 2021]),
                price=rng.choice([20_00, 40_00, 60_00]),
                prepicked=rng.random() < 0.25,
            )
            for i in range(8)
        ]
        budget = 160_00  # fits about 4 of 8

        # Oracle: among all orderings consistent with the rank key (ties
        # permuted), greedy selection must be identical because the key is
        # total (ends with the unique row key); verify by brute force over
        # every permutation of rank-equal prefixes.
        ranked = sorted(rows, key=eba_rank_key)
        groups = [list(g) for _, g in itertools.groupby(ranked, key=eba_rank_key)]
        selections = set()
        for perm_groups in itertools.product(
                *[itertools.permutations(g) for g in groups]):
            order = [row for group in perm_groups for row in group]
            remaining = budget
            picked = []
            for row in order:
                if row.list_price <= remaining:
                    picked.append(row.key)
                    remaining -= row.list_price
            selections.add(tuple(sorted(picked)))
        assert selections == {tuple(sorted(eba_select(rows, budget)))}

    def test_budget_feasible_and_order_consistent(self):
        rng = random.Random(17)
        rows = [
            usage_row(f"k{i}", uses_total=rng.randint(0, 9),
                      spread_months=rng.randint(1, 6),
                      price=rng.choice([25_00, 45_00, 65_00]))
            for i in range(12)
        ]
        budget = 200_00
        chosen = eba_select(rows, budget)
        total = sum(r.list_price for r in rows if r.key in chosen)
        assert total <= budget
        # removing any selected row never admits an earlier unselected one
        by_key = {r.key: r for r in rows}
        ranked = sorted(rows, key=eba_rank_key)
        for victim in chosen:
            rest = [r for r in rows if r.key != victim]
            reselected = eba_select(rest, budget)
            for row in ranked:
                if row.key == victim:
                    continue
                if row.key in reselected and row.key not in chosen:
                    # any newly admitted row must rank after the victim
                    assert eba_rank_key(row) > eba_rank_key(by_key[victim])


class TestCostPerUse:
    def test_purchase_average(self):
        assert cost_per_use(to_cents("5346.96"), 96) == 55_70

    def test_rental_average(self):
        assert cost_per_use(to_cents("2384.30"), 221) == 10_79

    def test_zero_uses_sentinel(self):
        assert cost_per_use(100_00, 0) == UNUSED


class TestUsageCsv:
    def test_roundtrip(self, tmp_path):
        header = ("key,subject,yop,price,"
                  + ",".join(f"uses_m{i}" for i in range(1, 13)) + ","
                  + ",".join(f"denials_m{i}" for i in range(1, 13))
                  + ",in_program,prepicked\n")
        line = "k1,chem,2021,49.50," + ",".join(["1"] * 12) + "," \
            + ",".join(["0"] * 12) + ",true,false\n"
        path = tmp_path / "usage.csv"
        path.write_text(header + line)
        rows = load_usage_csv(path)
        assert rows[0].key == "k1"
        assert rows[0].list_price == 49_50
        assert rows[0].total_uses == 12
