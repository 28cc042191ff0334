"""Composite keys: prefix plus ordered attributes rendered into one state key.

Rendering joins the prefix and every attribute with a ``0x00`` separator.
Literal ``0x00`` and the escape byte ``0x01`` inside a component are
byte-stuffed (``0x01 0x01`` and ``0x01 0x02``) so splitting is lossless and
the separator never occurs inside a component. Because ``0x01 0x01`` sorts
above the separator, lexicographic order of rendered keys groups every key
that shares a leading partial key into one contiguous range.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..errors import BadAttribute, MalformedKey

SEP = "\x00"
ESC = "\x01"
_ESCAPES = {SEP: ESC + ESC, ESC: ESC + "\x02"}
_UNESCAPES = {ESC: SEP, "\x02": ESC}


@dataclass(frozen=True)
class CompositeKeyRecord:
    prefix: str
    attributes: tuple[str, ...]
    rendered: str

    @classmethod
    def from_rendered(cls, rendered: str) -> "CompositeKeyRecord":
        prefix, attrs = split_composite_key(rendered)
        return cls(prefix, tuple(attrs), rendered)


def _escape(part: str) -> str:
    if SEP not in part and ESC not in part:
        return part
    return "".join(_ESCAPES.get(ch, ch) for ch in part)


def _unescape(part: str) -> str:
    if ESC not in part:
        return part
    out = []
    it = iter(part)
    for ch in it:
        if ch != ESC:
            out.append(ch)
            continue
        nxt = next(it, None)
        if nxt not in _UNESCAPES:
            raise MalformedKey(f"dangling escape in {part!r}")
        out.append(_UNESCAPES[nxt])
    return "".join(out)


def create_composite_key(prefix: str, attributes: Sequence[str]) -> str:
    if not prefix:
        raise BadAttribute("composite key prefix must be non-empty")
    if not attributes:
        raise BadAttribute("composite key needs at least one attribute")
    for attr in attributes:
        if not isinstance(attr, str) or attr == "":
            raise BadAttribute(f"empty or non-string attribute {attr!r}")
    return SEP.join([_escape(prefix), *(_escape(a) for a in attributes)])


def split_composite_key(rendered: str) -> tuple[str, list[str]]:
    parts = rendered.split(SEP)
    if len(parts) < 2 or any(p == "" for p in parts):
        raise MalformedKey(f"not a composite key: {rendered!r}")
    prefix, *attrs = (_unescape(p) for p in parts)
    return prefix, attrs


def partial_key_range(prefix: str, leading_attrs: Sequence[str]) -> tuple[str, str]:
    """Half-open ``[lo, hi)`` key range holding every match of a partial key."""
    if not prefix:
        raise BadAttribute("composite key prefix must be non-empty")
    for attr in leading_attrs:
        if attr == "":
            raise BadAttribute("empty leading attribute")
    base = SEP.join([_escape(prefix), *(_escape(a) for a in leading_attrs)])
    # Every escaped component character is >= 0x01, so ``base + 0x01`` bounds
    # all of ``base + SEP + ...`` from above. A bare prefix is not a
    # composite key, hence the separator in the lower bound in that case.
    lo = base if leading_attrs else base + SEP
    return lo, base + ESC
