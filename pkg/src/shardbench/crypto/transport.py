"""Fixed-size AES transport cipher for CSTx amounts.

Each amount is packed with its transaction timestamp into exactly one
128-bit AES block::

    [check: 2 B][amount in fixed-point units: 6 B][timestamp: 8 B]

A single-block ECB encryption is safe here because no two payloads repeat:
the timestamp carries a per-client monotonic tie-breaker in its low bits.
The check field is a truncated keyed hash of the rest of the payload, so a
tampered or foreign ciphertext is rejected with probability 1 - 2**-16.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from decimal import Decimal

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..amounts import DEFAULT_SCALE, Number, from_units, to_units
from ..errors import CorruptCiphertext, NegativeAmount

BLOCK_BYTES = 16
TIEBREAK_BITS = 12
_MAX_UNITS = (1 << 48) - 1


@dataclass(frozen=True)
class TransportKey:
    key_id: str
    key_material: bytes = field(repr=False)
    owner: str

    def __post_init__(self):
        if len(self.key_material) != 16:
            raise ValueError("transport keys are 128-bit")


@dataclass(frozen=True)
class AmountCipher:
    ciphertext: bytes
    tx_timestamp: int
    key_id: str

    @property
    def hex(self) -> str:
        return self.ciphertext.hex()


def generate_transport_key(owner: str, rng: random.Random) -> TransportKey:
    return TransportKey(f"skey:{owner}", rng.randbytes(16), owner)


def make_timestamp(sim_ns: int, tiebreak: int = 0) -> int:
    if not 0 <= tiebreak < (1 << TIEBREAK_BITS):
        raise ValueError("tie-breaker out of range")
    return (sim_ns << TIEBREAK_BITS) | tiebreak


def timestamp_ns(ts: int) -> int:
    return ts >> TIEBREAK_BITS


class TimestampSource:
    """Per-client timestamps: simulated ns plus a counter for same-ns calls."""

    def __init__(self):
        self._last: dict[str, tuple[int, int]] = {}

    def issue(self, client: str, sim_ns: int) -> int:
        last_ns, count = self._last.get(client, (-1, -1))
        if sim_ns < last_ns:
            sim_ns = last_ns
        count = count + 1 if sim_ns == last_ns else 0
        if count >= (1 << TIEBREAK_BITS):
            sim_ns, count = sim_ns + 1, 0
        self._last[client] = (sim_ns, count)
        return make_timestamp(sim_ns, count)


def _check(key: bytes, body: bytes) -> bytes:
    return hashlib.blake2s(body, key=key, digest_size=2).digest()


def _aes(key: bytes):
    return Cipher(algorithms.AES(key), modes.ECB())


def encrypt_transport(
    skey: TransportKey, amount: Number, ts: int, scale: int = DEFAULT_SCALE
) -> AmountCipher:
    units = to_units(amount, scale)
    if units <= 0:
        raise NegativeAmount(f"amount must be positive, got {amount}")
    if units > _MAX_UNITS:
        raise ValueError("amount too large for the transport block")
    body = units.to_bytes(6, "big") + ts.to_bytes(8, "big")
    enc = _aes(skey.key_material).encryptor()
    block = enc.update(_check(skey.key_material, body) + body) + enc.finalize()
    return AmountCipher(block, ts, skey.key_id)


def decrypt_transport(
    skey: TransportKey, c: AmountCipher, scale: int = DEFAULT_SCALE
) -> tuple[Decimal, int]:
    if len(c.ciphertext) != BLOCK_BYTES:
        raise CorruptCiphertext(f"expected {BLOCK_BYTES} bytes, got {len(c.ciphertext)}")
    dec = _aes(skey.key_material).decryptor()
    plain = dec.update(c.ciphertext) + dec.finalize()
    check, body = plain[:2], plain[2:]
    if check != _check(skey.key_material, body):
        raise CorruptCiphertext("integrity check failed")
    units = int.from_bytes(body[:6], "big")
    ts = int.from_bytes(body[6:], "big")
    if units == 0:
        raise CorruptCiphertext("zero amount")
    return from_units(units, scale), ts
