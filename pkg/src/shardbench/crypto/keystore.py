"""Per-party key store with role-based read policy and an access log.

Private-data-collection style access control is expressed as policy rows
``(principal, key_id) -> allow`` with role-wide fallbacks ``(role, key_id)``.
Anything without a matching row is denied. Every read attempt, granted or
not, is appended to the access log.
"""
from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass
from typing import IO, Callable, Iterable

from ..errors import AccessDenied, ExportError
from .transport import TransportKey


class Role(str, enum.Enum):
    CLIENT = "client"
    INTERMEDIARY = "intermediary"
    CONVERSION = "conversion"


@dataclass(frozen=True)
class Principal:
    role: Role
    name: str

    def __str__(self) -> str:
        return f"{self.role.value}:{self.name}"


@dataclass(frozen=True)
class AccessRecord:
    role: str
    principal: str
    key_id: str
    op: str
    sim_time: float
    allowed: bool

    def to_json(self) -> dict:
        return {
            "role": self.role,
            "key_id": self.key_id,
            "op": self.op,
            "sim_time": self.sim_time,
            "principal": self.principal,
            "allowed": self.allowed,
        }


def conversion_principal(channel: str) -> Principal:
    return Principal(Role.CONVERSION, channel)


def client_principal(account: str) -> Principal:
    return Principal(Role.CLIENT, account)


def intermediary_principal(account: str) -> Principal:
    return Principal(Role.INTERMEDIARY, account)


class KeyStore:
    """Holds transport keys and HE key sets; hands them out per policy.

    ``clock`` supplies the simulated time stamped on log records.
    """

    def __init__(self, clock: Callable[[], float] = lambda: 0.0):
        self.clock = clock
        self._lock = threading.Lock()
        self._transport: dict[str, TransportKey] = {}
        self._keysets: dict[str, object] = {}
        self._principal_rows: dict[tuple[Principal, str], bool] = {}
        self._role_rows: dict[tuple[Role, str], bool] = {}
        self._log: list[AccessRecord] = []

    # registration (serialized)
    def register_transport_key(self, key: TransportKey, conversion: Principal) -> None:
        """Store a client's key readable by its owner and one conversion context."""
        with self._lock:
            self._transport[key.key_id] = key
            self._principal_rows[(client_principal(key.owner), key.key_id)] = True
            self._principal_rows[(conversion, key.key_id)] = True
            self._role_rows[(Role.INTERMEDIARY, key.key_id)] = False

    def register_keyset(self, keyset, conversion: Principal) -> None:
        """Store an HE key set whose secret key only ``conversion`` may read."""
        with self._lock:
            self._keysets[keyset.keyset_id] = keyset
            self._principal_rows[(conversion, keyset.sk_id)] = True
            self._role_rows[(Role.INTERMEDIARY, keyset.sk_id)] = False

    def set_policy(self, who: Principal | Role, key_id: str, allow: bool) -> None:
        with self._lock:
            if isinstance(who, Principal):
                self._principal_rows[(who, key_id)] = allow
            else:
                self._role_rows[(Role(who), key_id)] = allow

    # policy
    def allowed(self, principal: Principal, key_id: str) -> bool:
        row = self._principal_rows.get((principal, key_id))
        if row is None:
            row = self._role_rows.get((principal.role, key_id), False)
        return row

    def _authorize(self, principal: Principal, key_id: str, op: str) -> None:
        ok = self.allowed(principal, key_id)
        record = AccessRecord(principal.role.value, principal.name, key_id, op, self.clock(), ok)
        with self._lock:
            self._log.append(record)
        if not ok:
            raise AccessDenied(f"{principal} may not {op} {key_id}", key_id=key_id)

    # reads
    def transport_key(self, principal: Principal, key_id: str, op: str = "read") -> TransportKey:
        self._authorize(principal, key_id, op)
        return self._transport[key_id]

    def secret_key(self, principal: Principal, keyset_id: str, op: str = "read"):
        keyset = self._keysets[keyset_id]
        self._authorize(principal, keyset.sk_id, op)
        return keyset.sk

    def public_keyset(self, keyset_id: str):
        """Public and evaluation keys; readable by anyone and not logged."""
        return self._keysets[keyset_id].public()

    def has_transport_key(self, key_id: str) -> bool:
        return key_id in self._transport

    # log
    @property
    def access_log(self) -> list[AccessRecord]:
        with self._lock:
            return list(self._log)

    def reads_by_role(self, role: Role, granted_only: bool = True) -> list[AccessRecord]:
        return [r for r in self.access_log if r.role == role.value and (r.allowed or not granted_only)]

    def export_access_log(self, out: str | IO[str]) -> None:
        lines = (json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.access_log)
        if isinstance(out, str):
            try:
                with open(out, "w", encoding="utf-8") as fh:
                    fh.writelines(lines)
            except OSError as exc:
                raise ExportError(str(exc)) from exc
        else:
            out.writelines(lines)


def sensitive_key_ids(records: Iterable[AccessRecord]) -> list[str]:
    """Key ids of granted reads of transport keys or HE secret keys."""
    return [r.key_id for r in records if r.allowed and (r.key_id.startswith("skey:") or r.key_id.endswith("/sk"))]
