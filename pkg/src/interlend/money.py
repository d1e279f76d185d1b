"""Money arithmetic on integer cents.

All amounts in the package are ``int`` cents (EUR at desk scale; a node
runs a single currency). Report rounding is half-up to match the figures
libraries print; division helpers make the rounding mode explicit at the
call site instead of relying on float behaviour.
"""

from decimal import ROUND_HALF_UP, Decimal, InvalidOperation

CENT = Decimal("0.01")


def to_cents(value) -> int:
    """Parse a euro amount (int, float, str or Decimal) into cents.

    String inputs may carry thousands separators ("19,185" or "19 185").
    Amounts with sub-cent precision are rejected rather than rounded:
    money enters the system exact or not at all.
    """
    if isinstance(value, int) and not isinstance(value, bool):
        return value * 100
    if isinstance(value, Decimal):
        dec = value
    else:
        text = str(value).strip().replace(" ", "").replace(" ", "")
        if "," in text and "." in text:
            text = text.replace(",", "")
        elif "," in text:
            # lone comma: decimal comma if it has 1-2 trailing digits
            head, _, tail = text.rpartition(",")
            text = f"{head}.{tail}" if 0 < len(tail) <= 2 else text.replace(",", "")
        try:
            dec = Decimal(text)
        except InvalidOperation as exc:
            raise ValueError(f"not a money amount: {value!r}") from exc
    cents = dec * 100
    if cents != cents.to_integral_value():
        raise ValueError(f"sub-cent amount: {value!r}")
    return int(cents)


def cents_to_str(cents: int) -> str:
    """Format cents as a plain euro string, e.g. 745 -> '7.45'."""
    sign = "-" if cents < 0 else ""
    mag = abs(cents)
    return f"{sign}{mag // 100}.{mag % 100:02d}"


def cents_to_decimal(cents: int) -> Decimal:
    return (Decimal(cents) / 100).quantize(CENT)


def divide_half_up(numerator_cents: int, denominator: int) -> int:
    """numerator / denominator in cents, rounded half-up to a whole cent."""
    if denominator == 0:
        raise ZeroDivisionError("division by zero")
    quotient = Decimal(numerator_cents) / Decimal(denominator)
    return int(quotient.quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def divide_floor(numerator_cents: int, denominator: int) -> int:
    """numerator / denominator in cents, truncated toward zero."""
    if denominator == 0:
        raise ZeroDivisionError("division by zero")
    sign = -1 if (numerator_cents < 0) != (denominator < 0) else 1
    return sign * (abs(numerator_cents) // abs(denominator))


def round_half_up(value: float | Decimal, decimals: int = 0) -> float:
    """Half-up rounding for report figures (percentages, day counts)."""
    if not isinstance(value, Decimal):
        value = Decimal(str(value))
    quant = Decimal(1).scaleb(-decimals)
    result = value.quantize(quant, rounding=ROUND_HALF_UP)
    return float(result)
