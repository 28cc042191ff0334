"""Per-shard multi-version world state."""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

from .compositekey import CompositeKeyRecord, partial_key_range


@dataclass(frozen=True)
class VersionedEntry:
    key: str
    value: bytes | None  # None is a tombstone; it still carries a version
    version: int

    @property
    def deleted(self) -> bool:
        return self.value is None


class VersionedWorldState:
    """Key -> (value, version) with reads at any committed height.

    Every write is kept in a per-key history so a :class:`Snapshot` taken at
    height ``h`` keeps returning what was committed at ``h`` after later
    blocks land. A key's first write creates it at version 0 and each later
    write, deletes included, bumps the version by exactly one.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.height = 0
        self._history: dict[str, list[tuple[int, VersionedEntry]]] = {}
        self._live: list[str] = []  # sorted keys whose latest entry is not a tombstone
        self.entries_scanned = 0

    # reads
    def get(self, key: str, height: int | None = None) -> VersionedEntry | None:
        hist = self._history.get(key)
        if not hist:
            return None
        if height is None or height >= self.height:
            return hist[-1][1]
        idx = bisect.bisect_right(hist, height, key=lambda item: item[0])
        return hist[idx - 1][1] if idx else None

    def value(self, key: str) -> bytes | None:
        entry = self.get(key)
        return entry.value if entry else None

    def version(self, key: str) -> int | None:
        entry = self.get(key)
        return entry.version if entry else None

    def __contains__(self, key: str) -> bool:
        entry = self.get(key)
        return entry is not None and not entry.deleted

    def __len__(self) -> int:
        return len(self._live)

    def keys(self) -> list[str]:
        return list(self._live)

    def snapshot(self) -> "Snapshot":
        return Snapshot(self, self.height)

    def scan_range(self, lo: str, hi: str, height: int | None = None) -> Iterator[VersionedEntry]:
        """Live entries with ``lo <= key < hi`` in key order."""
        if height is None or height >= self.height:
            i = bisect.bisect_left(self._live, lo)
            j = bisect.bisect_left(self._live, hi)
            keys = self._live[i:j]
        else:
            keys = sorted(k for k in self._history if lo <= k < hi)
        for key in keys:
            self.entries_scanned += 1
            entry = self.get(key, height)
            if entry is not None and not entry.deleted:
                yield entry

    def partial_composite(
        self, prefix: str, leading_attrs: Iterable[str] = (), height: int | None = None
    ) -> list[CompositeKeyRecord]:
        lo, hi = partial_key_range(prefix, list(leading_attrs))
        return [CompositeKeyRecord.from_rendered(e.key) for e in self.scan_range(lo, hi, height)]

    # writes
    def put(self, key: str, value: bytes | None) -> VersionedEntry:
        """Write at the current height; ``None`` deletes. Committer use only."""
        hist = self._history.get(key)
        prev = hist[-1][1] if hist else None
        entry = VersionedEntry(key, value, 0 if prev is None else prev.version + 1)
        if hist is None:
            self._history[key] = [(self.height, entry)]
        elif hist[-1][0] == self.height:
            hist[-1] = (self.height, entry)
        else:
            hist.append((self.height, entry))
        was_live = prev is not None and not prev.deleted
        if value is not None and not was_live:
            bisect.insort(self._live, key)
        elif value is None and was_live:
            del self._live[bisect.bisect_left(self._live, key)]
        return entry

    def seed(self, values: Mapping[str, bytes]) -> None:
        """Load genesis values at the current height."""
        for key in sorted(values):
            self.put(key, values[key])

    def next_height(self) -> int:
        self.height += 1
        return self.height

    def dump(self) -> dict[str, dict]:
        out = {}
        for key in sorted(self._history):
            entry = self._history[key][-1][1]
            out[key] = {"value": _render_value(entry.value), "version": entry.version}
        return out

    def dump_json(self) -> str:
        return json.dumps(self.dump(), sort_keys=True, indent=1)


def _render_value(raw: bytes | None) -> str | None:
    if raw is None:
        return None
    try:
        return raw.decode()
    except UnicodeDecodeError:
        return "hex:" + raw.hex()


class Snapshot:
    """Read-only view of a state frozen at one committed height."""

    def __init__(self, state: VersionedWorldState, height: int):
        self._state = state
        self.height = height

    @property
    def name(self) -> str:
        return self._state.name

    def get(self, key: str) -> VersionedEntry | None:
        return self._state.get(key, self.height)

    def partial_composite(self, prefix: str, leading_attrs: Iterable[str] = ()) -> list[CompositeKeyRecord]:
        return self._state.partial_composite(prefix, leading_attrs, self.height)
