"""The conversion context: the only place transport ciphertexts are opened.

A :class:`ConversionContext` is a principal of its own, bound to one source
channel. It reads initiators' transport keys and the channel's HE secret key
through the :class:`KeyStore`, so every use is policy-checked and logged.
Plaintext amounts it recovers are wrapped in :class:`ConfinedAmount`, which
refuses to be printed, serialized, or coerced outside the context.
"""
from __future__ import annotations

from decimal import Decimal
from typing import Any, Iterable, Sequence

from ..errors import ConfinementViolation
from .he import CipherVector, HEBackend, PublicKeySet
from .keystore import KeyStore, Principal, Role, conversion_principal
from .transport import AmountCipher, decrypt_transport


class ConfinedAmount:
    """A plaintext amount tainted as non-exportable.

    Only the context that produced it can read the value back. Any attempt
    to turn it into a string, number, or pickle raises
    :class:`ConfinementViolation`.
    """

    __slots__ = ("_value", "_owner", "key_id")

    def __init__(self, value: Decimal, owner: "ConversionContext", key_id: str):
        self._value = value
        self._owner = owner
        self.key_id = key_id

    tainted = True

    def reveal(self, context: "ConversionContext") -> Decimal:
        if context is not self._owner:
            raise ConfinementViolation("confined amount used outside its context")
        return self._value

    def _leak(self, *_args, **_kwargs):
        raise ConfinementViolation("confined amount cannot leave its context")

    __str__ = __float__ = __int__ = __index__ = __bool__ = __format__ = _leak
    __reduce__ = __reduce_ex__ = __getstate__ = _leak

    def __repr__(self) -> str:
        return f"<confined amount {self.key_id}>"


def is_tainted(value: Any) -> bool:
    return isinstance(value, ConfinedAmount)


class TaintMonitor:
    """Records values seen on intermediary-role code paths.

    Code running as an intermediary calls :meth:`observe` on every value it
    handles. Tainted values are recorded as violations; the confidentiality
    check asserts that none were recorded.
    """

    def __init__(self):
        self.observations = 0
        self.violations: list[tuple[str, str]] = []

    def observe(self, principal: Principal, value: Any, where: str = "") -> Any:
        self.observations += 1
        for item in _flatten(value):
            if is_tainted(item):
                self.violations.append((str(principal), where))
        return value

    def observe_all(self, principal: Principal, values: Iterable[Any], where: str = "") -> None:
        for v in values:
            self.observe(principal, v, where)


def _flatten(value: Any):
    if isinstance(value, (list, tuple, set, frozenset)):
        for v in value:
            yield from _flatten(v)
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _flatten(k)
            yield from _flatten(v)
    else:
        yield value


def convert(
    keystore: KeyStore,
    backend: HEBackend,
    keys: PublicKeySet,
    ciphers: Sequence[AmountCipher],
    delta: float | None,
    principal: Principal,
) -> CipherVector:
    """Open each transport cipher as ``principal`` and re-encrypt under ``keys``.

    Fails with ``ACCESS_DENIED`` unless ``principal`` may read every
    initiator's transport key.
    """
    amounts = []
    for c in ciphers:
        skey = keystore.transport_key(principal, c.key_id, op="decrypt")
        amounts.append(decrypt_transport(skey, c)[0])
    return backend.encrypt_vector(keys.pk, amounts, delta)


class ConversionContext:
    """Conversion service of one source channel."""

    def __init__(self, channel: str, keystore: KeyStore, backend: HEBackend, keyset_id: str):
        self.channel = channel
        self.principal = conversion_principal(channel)
        self.keystore = keystore
        self.backend = backend
        self.keyset_id = keyset_id

    @property
    def keys(self) -> PublicKeySet:
        return self.keystore.public_keyset(self.keyset_id)

    def convert(
        self, ciphers: Sequence[AmountCipher], delta: float | None = None, as_principal: Principal | None = None
    ) -> CipherVector:
        return convert(self.keystore, self.backend, self.keys, ciphers, delta, as_principal or self.principal)

    def open(self, c: AmountCipher) -> ConfinedAmount:
        """Recover one amount, confined to this context."""
        skey = self.keystore.transport_key(self.principal, c.key_id, op="decrypt")
        return ConfinedAmount(decrypt_transport(skey, c)[0], self, c.key_id)

    def reveal(self, amount: ConfinedAmount) -> Decimal:
        return amount.reveal(self)

    def encrypt_amounts(self, amounts: Sequence[Decimal | float], delta: float | None = None) -> CipherVector:
        """Encrypt public values (e.g. an exchange rate) under the channel key set."""
        return self.backend.encrypt_vector(self.keys.pk, list(amounts), delta)

    def decrypt_aggregate(self, c: CipherVector, count: int = 1) -> list:
        """Decrypt an aggregate such as a batch sum; the result is public."""
        sk = self.keystore.secret_key(self.principal, self.keyset_id, op="decrypt")
        return self.backend.decrypt_decode(sk, c, count)


def intermediary_may_read(keystore: KeyStore, key_id: str, account: str) -> bool:
    return keystore.allowed(Principal(Role.INTERMEDIARY, account), key_id)
