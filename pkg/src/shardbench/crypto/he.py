"""Homomorphic vector backends behind one interface.

Two implementations share the encode / encrypt / rotate / add / multiply /
inner-sum / decrypt contract:

``MockBackend``
    Exact decimal arithmetic in the clear. Slots are stored sparsely so a
    4096-slot vector holding three amounts costs three entries.

``ApproxBackend``
    A CKKS-shaped simulation: encoding quantizes each slot to a multiple of
    ``1/Δ``, encryption and key switching add Gaussian noise scaled like
    fresh RLWE noise in the canonical embedding, multiplication consumes a
    level and adds rescaling noise. Inner sums really are computed by
    ``log2(n)`` rotate-and-add steps per slot group.

Neither backend hides its payload cryptographically; confidentiality is an
access-control property of who may hold the secret key (see ``keystore``).
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from typing import Any, Sequence

import numpy as np

from ..amounts import EXACT, Number
from ..errors import KeyMismatch, LevelExhausted, MissingRotationKeys, VectorTooLong


@dataclass(frozen=True)
class HEParams:
    slots: int = 4096
    scale: float = 2.0**40
    levels: int = 3
    noise_std: float = 3.2

    def __post_init__(self):
        if self.slots < 1 or self.slots & (self.slots - 1):
            raise ValueError("slot count must be a positive power of two")
        if not self.scale > 0:
            raise ValueError("scaling factor must be positive")
        if self.levels < 0:
            raise ValueError("levels must be non-negative")

    @property
    def max_modulus_bits(self) -> int:
        """Modulus budget: one special prime plus one scale-sized prime per level."""
        return 60 + self.levels * math.ceil(math.log2(self.scale))


@dataclass(frozen=True)
class PublicKey:
    keyset_id: str


@dataclass(frozen=True)
class SecretKey:
    keyset_id: str
    material: int = field(repr=False)


@dataclass(frozen=True)
class RelinKey:
    keyset_id: str


@dataclass(frozen=True)
class GaloisKeys:
    keyset_id: str
    steps: tuple[int, ...]


@dataclass(frozen=True)
class PublicKeySet:
    keyset_id: str
    pk: PublicKey
    rlk: RelinKey
    gk: GaloisKeys | None


@dataclass(frozen=True)
class KeySet:
    keyset_id: str
    pk: PublicKey
    sk: SecretKey
    rlk: RelinKey
    gk: GaloisKeys | None

    @property
    def sk_id(self) -> str:
        return f"{self.keyset_id}/sk"

    def public(self) -> PublicKeySet:
        return PublicKeySet(self.keyset_id, self.pk, self.rlk, self.gk)


@dataclass(frozen=True)
class Plaintext:
    payload: Any = field(repr=False)
    length: int
    scale: float
    slots: int


@dataclass
class CipherVector:
    """Encrypted vector made of one or more ``slots``-wide groups."""

    keyset_id: str
    groups: list = field(repr=False)
    length: int
    level: int
    scale: float
    slots: int
    backend: str

    @property
    def capacity(self) -> int:
        return len(self.groups) * self.slots

    @property
    def nbytes(self) -> int:
        # two ring elements of ``slots`` 8-byte coefficients per level-prime
        return len(self.groups) * 2 * self.slots * 8 * (self.level + 1)


def power_of_two_steps(n: int) -> tuple[int, ...]:
    return tuple(1 << i for i in range(int(math.log2(n)))) if n > 1 else ()


class HEBackend:
    name = "abstract"
    rel_error_bound = 0.0
    abs_error_floor = 0.0

    def __init__(self, params: HEParams | None = None, seed: int = 0):
        self.params = params or HEParams()
        self.seed = seed
        self.cipher_ops = 0
        self._eval_keys: dict[str, PublicKeySet] = {}
        self._keygen_count = 0

    # keys
    def keygen(self, keyset_id: str, rotations: bool = True) -> KeySet:
        self._keygen_count += 1
        material = random.Random(f"{self.seed}:{keyset_id}:{self._keygen_count}").getrandbits(62)
        gk = GaloisKeys(keyset_id, power_of_two_steps(self.params.slots)) if rotations else None
        ks = KeySet(keyset_id, PublicKey(keyset_id), SecretKey(keyset_id, material), RelinKey(keyset_id), gk)
        self._eval_keys[keyset_id] = ks.public()
        return ks

    def register_public(self, pub: PublicKeySet) -> None:
        self._eval_keys[pub.keyset_id] = pub

    # encoding
    def encode(self, amounts: Sequence[Number], delta: float | None = None) -> Plaintext:
        delta = self.params.scale if delta is None else delta
        if not delta > 0:
            raise ValueError("scaling factor must be positive")
        if len(amounts) > self.params.slots:
            raise VectorTooLong(f"{len(amounts)} values exceed {self.params.slots} slots")
        return Plaintext(self._encode(amounts, delta), len(amounts), delta, self.params.slots)

    def encrypt(self, pk: PublicKey, pt: Plaintext) -> CipherVector:
        self.cipher_ops += 1
        return CipherVector(
            pk.keyset_id, [self._encrypt(pt.payload, pt.scale)], pt.length,
            self.params.levels, pt.scale, self.params.slots, self.name,
        )

    def encrypt_vector(self, pk: PublicKey, amounts: Sequence[Number], delta: float | None = None) -> CipherVector:
        """Encrypt any number of amounts, packing them into ``slots``-wide groups."""
        n = self.params.slots
        chunks = [amounts[i:i + n] for i in range(0, len(amounts), n)] or [[]]
        parts = [self.encrypt(pk, self.encode(chunk, delta)) for chunk in chunks]
        head = parts[0]
        head.groups = [p.groups[0] for p in parts]
        head.length = len(amounts)
        return head

    def decrypt_decode(self, sk: SecretKey, c: CipherVector, count: int | None = None) -> list:
        """Real parts of the first ``count`` slots (default: the encoded length)."""
        if sk.keyset_id != c.keyset_id:
            raise KeyMismatch(f"secret key {sk.keyset_id} cannot open {c.keyset_id}")
        self.cipher_ops += 1
        count = c.length if count is None else count
        out: list = []
        for group in c.groups:
            if len(out) >= count:
                break
            out.extend(self._decode(group, min(self.params.slots, count - len(out))))
        return out

    # evaluation
    def _pair(self, a: CipherVector, b: CipherVector) -> None:
        if a.keyset_id != b.keyset_id:
            raise KeyMismatch(f"operands under {a.keyset_id} and {b.keyset_id}")

    def _zip_groups(self, a: CipherVector, b: CipherVector):
        zero = self._zero()
        for i in range(max(len(a.groups), len(b.groups))):
            ga = a.groups[i] if i < len(a.groups) else zero
            gb = b.groups[i] if i < len(b.groups) else zero
            yield ga, gb

    def _derive(self, c: CipherVector, groups: list, length: int | None = None, level: int | None = None) -> CipherVector:
        return CipherVector(
            c.keyset_id, groups, c.length if length is None else length,
            c.level if level is None else level, c.scale, c.slots, self.name,
        )

    def add(self, a: CipherVector, b: CipherVector) -> CipherVector:
        self._pair(a, b)
        self.cipher_ops += 1
        groups = [self._add(x, y) for x, y in self._zip_groups(a, b)]
        return self._derive(a, groups, max(a.length, b.length), min(a.level, b.level))

    def sub(self, a: CipherVector, b: CipherVector) -> CipherVector:
        self._pair(a, b)
        self.cipher_ops += 1
        groups = [self._sub(x, y) for x, y in self._zip_groups(a, b)]
        return self._derive(a, groups, max(a.length, b.length), min(a.level, b.level))

    def _galois(self, keyset_id: str) -> GaloisKeys:
        pub = self._eval_keys.get(keyset_id)
        if pub is None or pub.gk is None:
            raise MissingRotationKeys(f"no rotation keys for {keyset_id}")
        return pub.gk

    def rotate(self, c: CipherVector, k: int) -> CipherVector:
        """Cyclic left rotation of every group by ``k`` slots."""
        self._galois(c.keyset_id)
        k %= c.slots
        # any step is a composition of the power-of-two Galois keys
        self.cipher_ops += max(1, bin(k).count("1"))
        return self._derive(c, [self._rotate(g, k) for g in c.groups])

    def inner_sum(self, c: CipherVector, batch: int, n: int | None = None) -> CipherVector:
        """Slot 0 of the result holds the sum of the first ``batch`` slots.

        Each of the ``ceil(batch / n)`` groups is reduced by rotate-and-add,
        then the reduced groups are added together.
        """
        n = c.slots if n is None else n
        if n != c.slots:
            raise ValueError(f"group size {n} must equal the slot count {c.slots}")
        if batch > c.capacity:
            raise VectorTooLong(f"batch {batch} exceeds capacity {c.capacity}")
        self._galois(c.keyset_id)
        if batch <= 0:
            return self._derive(c, [self._zero()], length=1)
        total = None
        for gi in range(math.ceil(batch / n)):
            keep = min(n, batch - gi * n)
            group = c.groups[gi]
            if keep < n:
                group = self._mask(group, keep)
            reduced = self._group_sum(group)
            total = reduced if total is None else self._add(total, reduced)
            self.cipher_ops += 1
        return self._derive(c, [total], length=1)

    def _group_sum(self, group):
        """Rotate-and-add over ``log2(n)`` steps; every slot ends up holding the total."""
        for step in power_of_two_steps(self.params.slots):
            group = self._add(group, self._rotate(group, step))
            self.cipher_ops += 1
        return group

    def mul(self, c: CipherVector, rate_cipher: CipherVector) -> CipherVector:
        self._pair(c, rate_cipher)
        pub = self._eval_keys.get(c.keyset_id)
        if pub is None or pub.rlk is None:
            raise KeyMismatch(f"no relinearization key for {c.keyset_id}")
        if c.level <= 0 or rate_cipher.level <= 0:
            raise LevelExhausted("no multiplicative levels left")
        self.cipher_ops += 1
        groups = [self._mul(x, y) for x, y in self._zip_groups(c, rate_cipher)]
        return self._derive(c, groups, max(c.length, rate_cipher.length), min(c.level, rate_cipher.level) - 1)

    def close(self, got, want) -> bool:
        """Whether ``got`` matches ``want`` within this backend's advertised bound."""
        return abs(float(got) - float(want)) <= self.rel_error_bound * abs(float(want)) + self.abs_error_floor

    # backend hooks
    def _encode(self, amounts, delta): raise NotImplementedError
    def _encrypt(self, payload, scale): raise NotImplementedError
    def _decode(self, group, count: int) -> list: raise NotImplementedError
    def _zero(self): raise NotImplementedError
    def _add(self, a, b): raise NotImplementedError
    def _sub(self, a, b): raise NotImplementedError
    def _rotate(self, group, k: int): raise NotImplementedError
    def _mask(self, group, keep: int): raise NotImplementedError
    def _mul(self, a, b): raise NotImplementedError


def _dec(value: Number) -> Decimal:
    if isinstance(value, float):
        return Decimal(repr(value))
    return Decimal(value)


class MockBackend(HEBackend):
    """Exact arithmetic with sparse ``{slot: Decimal}`` groups."""

    name = "mock"

    def _encode(self, amounts, delta):
        return {i: _dec(v) for i, v in enumerate(amounts) if _dec(v) != 0}

    def _encrypt(self, payload, scale):
        return dict(payload)

    def _decode(self, group, count):
        return [group.get(i, Decimal(0)) for i in range(count)]

    def _zero(self):
        return {}

    def _add(self, a, b):
        out = dict(a)
        with localcontext(EXACT):
            for i, v in b.items():
                out[i] = out.get(i, Decimal(0)) + v
        return out

    def _sub(self, a, b):
        out = dict(a)
        with localcontext(EXACT):
            for i, v in b.items():
                out[i] = out.get(i, Decimal(0)) - v
        return out

    def _rotate(self, group, k):
        n = self.params.slots
        return {(i - k) % n: v for i, v in group.items()}

    def _mask(self, group, keep):
        return {i: v for i, v in group.items() if i < keep}

    def _mul(self, a, b):
        with localcontext(EXACT):
            return {i: v * b[i] for i, v in a.items() if i in b}

    def _group_sum(self, group):
        # Exact arithmetic makes the rotation ladder equivalent to a direct
        # sum into slot 0; the ladder itself stays available via
        # ``rotation_group_sum`` for cross-checking.
        with localcontext(EXACT):
            return {0: sum(group.values(), Decimal(0))}

    def rotation_group_sum(self, group):
        return HEBackend._group_sum(self, group)


class ApproxBackend(HEBackend):
    """Noise-injecting CKKS simulation on dense complex slot arrays."""

    name = "approx"
    rel_error_bound = 1e-5
    abs_error_floor = 1e-6

    def __init__(self, params: HEParams | None = None, seed: int = 0):
        super().__init__(params, seed)
        self._rng = np.random.default_rng(seed)

    @property
    def _sigma(self) -> float:
        # fresh RLWE noise of std ``noise_std`` per coefficient grows by
        # sqrt(n) in the slot embedding, then is divided by the scale
        return self.params.noise_std * math.sqrt(self.params.slots) / self.params.scale

    def _noise(self, scale: float) -> np.ndarray:
        sigma = self._sigma * self.params.scale / scale
        n = self.params.slots
        return self._rng.normal(0.0, sigma, n) + 1j * self._rng.normal(0.0, sigma, n)

    def _encode(self, amounts, delta):
        vec = np.zeros(self.params.slots, dtype=np.complex128)
        if len(amounts):
            real = np.array([float(v) for v in amounts], dtype=np.float64)
            vec[: len(amounts)] = np.round(real * delta) / delta
        return vec

    def _encrypt(self, payload, scale):
        return payload + self._noise(scale)

    def _decode(self, group, count):
        return [float(x) for x in group.real[:count]]

    def _zero(self):
        return np.zeros(self.params.slots, dtype=np.complex128)

    def _add(self, a, b):
        return a + b

    def _sub(self, a, b):
        return a - b

    def _rotate(self, group, k):
        # key switching adds noise of the same order as a fresh encryption
        return np.roll(group, -k) + self._noise(self.params.scale)

    def _mask(self, group, keep):
        out = group.copy()
        out[keep:] = 0
        return out + self._noise(self.params.scale)

    def _mul(self, a, b):
        return a * b + self._noise(self.params.scale)


BACKENDS = {"mock": MockBackend, "approx": ApproxBackend, "approximate": ApproxBackend}


def make_backend(name: str, params: HEParams | None = None, seed: int = 0) -> HEBackend:
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown HE backend {name!r}") from None
    return cls(params, seed)
