"""Fixed-point decimal amounts as stored in the world state."""
from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Context, Decimal, localcontext
from typing import Union

DEFAULT_SCALE = 6

# Wide enough that sums and rate products of ledger amounts never round.
EXACT = Context(prec=60)

Number = Union[Decimal, int, str, float]


def quantum(scale: int = DEFAULT_SCALE) -> Decimal:
    return Decimal(1).scaleb(-scale)


def to_amount(value: Number, scale: int = DEFAULT_SCALE) -> Decimal:
    """Coerce ``value`` to a decimal rounded half-even to ``scale`` digits.

    Floats go through ``repr`` so ``12.5`` becomes ``Decimal("12.5")`` and not
    its binary expansion.
    """
    if isinstance(value, float):
        value = repr(value)
    with localcontext(EXACT):
        return Decimal(value).quantize(quantum(scale), rounding=ROUND_HALF_EVEN)


def encode_amount(value: Number, scale: int = DEFAULT_SCALE) -> bytes:
    return format(to_amount(value, scale), "f").encode()


def decode_amount(raw: bytes | None, scale: int = DEFAULT_SCALE) -> Decimal:
    if raw is None:
        return to_amount(0, scale)
    return to_amount(raw.decode(), scale)


def to_units(value: Number, scale: int = DEFAULT_SCALE) -> int:
    return int(to_amount(value, scale).scaleb(scale))


def from_units(units: int, scale: int = DEFAULT_SCALE) -> Decimal:
    return to_amount(Decimal(units).scaleb(-scale), scale)
