"""Cross-shard transfers through composite-key sub-brokers and batched HE settlement.

Lifecycle of one transfer from initiator ``O`` on shard S to receiver ``D``
on shard T via intermediary ``g``:

1. ``initiate_cstx``: the client encrypts its amount with its transport key.
2. ``preprocess``: a source-shard transaction debits ``O`` and writes the
   per-transfer key ``cstx / g / O / D / V``. The intermediary's own
   account key is untouched, so transfers through one ``g`` never contend.
3. ``accumulate``: at the settlement tick, ``g`` collects its entries,
   has them converted into one HE vector, sums the slots, and multiplies by
   the encrypted exchange rate.
4. ``synchronize``: the source conversion context decrypts the two
   aggregates. If ``g`` cannot cover the inbound total on T, nothing is
   applied and the batch waits for the next tick. Otherwise the source
   keys are cleared into ``g``'s source account and the obligation is
   recorded on T.
5. ``complete``: each receiver is credited ``amount * rate`` out of ``g``'s
   target-side funds.

Plaintext per-transfer amounts only ever appear inside a conversion context
(the source-channel contract); code acting as the intermediary handles
ciphertexts and the two public aggregates.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from decimal import Decimal, localcontext
from typing import Callable, Iterable

from ..amounts import EXACT, Number, decode_amount, encode_amount, quantum, to_amount
from ..crypto.context import ConversionContext, TaintMonitor
from ..crypto.he import CipherVector, HEBackend
from ..crypto.keystore import KeyStore, client_principal, conversion_principal, intermediary_principal
from ..crypto.transport import AmountCipher, TimestampSource, encrypt_transport, generate_transport_key
from ..errors import (
    AlreadyCompleted,
    DuplicateKey,
    InsufficientBalance,
    IntentFailed,
    LiquidityShortfall,
    NegativeAmount,
    RoundingResidue,
    UnknownAccount,
)
from ..ledger import (
    Apply,
    ReadWriteSet,
    TxContext,
    Verdict,
    VersionedWorldState,
    create_composite_key,
    simulate,
    validate_and_commit,
)
from ..ledger.compositekey import SEP
from .model import (
    CrossShardTx,
    CSTxMessage,
    CSTxStatus,
    PendingItem,
    PendingTransferSet,
    SettlementResult,
)
from .pool import MERGED_PREFIX, RAW_PREFIX, ComKeyPool

SETTLE_PREFIX = "settle"
_ERRORS = {
    "INSUFFICIENT_BALANCE": InsufficientBalance,
    "UNKNOWN_ACCOUNT": UnknownAccount,
    "DUPLICATE_KEY": DuplicateKey,
    "LIQUIDITY_SHORTFALL": LiquidityShortfall,
    "ROUNDING_RESIDUE": RoundingResidue,
}


def raise_for(exc: IntentFailed):
    """Re-raise an intent failure as its typed engine error."""
    cls = _ERRORS.get(exc.reason)
    if cls is None:
        raise exc
    raise cls(str(exc)) from exc


def cipher_value(c: AmountCipher) -> bytes:
    return json.dumps({"v": c.hex, "ts": c.tx_timestamp, "key": c.key_id}, sort_keys=True).encode()


def cipher_from_value(raw: bytes) -> AmountCipher:
    obj = json.loads(raw)
    return AmountCipher(bytes.fromhex(obj["v"]), int(obj["ts"]), obj["key"])


@dataclass
class Direction:
    source: str
    target: str
    rate: Decimal
    c_rate: CipherVector


class HiCoCSEngine:
    """Protocol engine over a set of shard pairs.

    ``commit_hook(shard, rwset)`` is called after every system transaction
    the engine commits directly (settlement, rollback, reuse), so a
    simulator can charge committer time for it.
    """

    def __init__(
        self,
        states: dict[str, VersionedWorldState],
        pairs: Iterable[tuple[str, str]],
        backend: HEBackend,
        keystore: KeyStore | None = None,
        rate: Number = 1,
        delta: float | None = None,
        monitor: TaintMonitor | None = None,
        max_settle_attempts: int = 3,
        scale: int = 6,
        seed: int = 0,
        commit_hook: Callable[[str, ReadWriteSet], None] | None = None,
    ):
        self.states = states
        self.backend = backend
        self.keystore = keystore or KeyStore()
        self.delta = delta
        self.monitor = monitor or TaintMonitor()
        self.max_settle_attempts = max_settle_attempts
        self.scale = scale
        self.commit_hook = commit_hook
        self._rng = random.Random(seed)
        self._clock = TimestampSource()

        self.contexts: dict[str, ConversionContext] = {}
        for shard in states:
            keyset = backend.keygen(f"he:{shard}")
            self.keystore.register_keyset(keyset, conversion_principal(shard))
            self.contexts[shard] = ConversionContext(shard, self.keystore, backend, keyset.keyset_id)

        rate = to_amount(rate, scale)
        self.directions: dict[str, Direction] = {}
        for a, b in pairs:
            with localcontext(EXACT):
                back = Decimal(1) / rate
            self.directions[a] = Direction(a, b, rate, self.contexts[a].encrypt_amounts([rate], delta))
            self.directions[b] = Direction(b, a, back, self.contexts[b].encrypt_amounts([back], delta))
        self.pools = {shard: ComKeyPool(shard) for shard in self.directions}

        self.home: dict[str, str] = {}
        self.txs: dict[str, CrossShardTx] = {}
        self.dependents: dict[str, list[str]] = {}
        self._inbound: dict[str, list[str]] = {}  # receiver -> unsettled txs paying it
        self._pending: dict[tuple[str, str], SettlementResult] = {}
        self._periods: dict[tuple[str, str], int] = {}
        self.audit_log: list[dict] = []
        self.system_txs = 0
        self._seq = 0

    # ------------------------------------------------------------ accounts
    def register_client(self, account: str, shard: str) -> None:
        """An account that may initiate; gets a transport key on its home shard."""
        self.home[account] = shard
        key = generate_transport_key(account, self._rng)
        self.keystore.register_transport_key(key, conversion_principal(shard))

    def register_account(self, account: str, shard: str) -> None:
        self.home[account] = shard

    def _transport_key(self, account: str):
        # clients hold their own key; this is the client side of initiation
        return self.keystore.transport_key(client_principal(account), f"skey:{account}", op="encrypt")

    # ------------------------------------------------------------ initiation
    def initiate_cstx(self, initiator: str, receiver: str, intermediary: str, amount: Number, now_ns: int) -> CrossShardTx:
        amount = to_amount(amount, self.scale)
        if amount <= 0:
            raise NegativeAmount(f"amount must be positive, got {amount}")
        source = self.home.get(initiator)
        target = self.home.get(receiver)
        if source is None or initiator not in self.states[source]:
            raise UnknownAccount(f"no initiator {initiator}")
        if target is None or source not in self.directions or self.directions[source].target != target:
            raise UnknownAccount(f"receiver {receiver} is not on the paired shard")
        if intermediary not in self.states[source] or intermediary not in self.states[target]:
            raise UnknownAccount(f"intermediary {intermediary} is not funded on both shards")
        ts = self._clock.issue(initiator, now_ns)
        cipher = encrypt_transport(self._transport_key(initiator), amount, ts, self.scale)
        self._seq += 1
        tx = CrossShardTx(
            f"cs{self._seq:07d}", CSTxMessage(initiator, receiver, intermediary, cipher),
            source, target, amount, now_ns / 1e6,
        )
        tx.history.append((tx.status.value, tx.initiated_at))
        self.txs[tx.tx_id] = tx
        return tx

    # ------------------------------------------------------------ pre-processing
    def composite_key(self, tx: CrossShardTx) -> str:
        return create_composite_key(RAW_PREFIX, [tx.intermediary, tx.initiator, tx.receiver, tx.cipher.hex])

    def _open(self, tx: CrossShardTx) -> Decimal:
        """Plaintext amount of ``tx``, recovered inside its source context."""
        ctx = self.contexts[tx.source]
        return ctx.reveal(ctx.open(tx.cipher))

    def _credit_of(self, tx: CrossShardTx) -> Decimal:
        with localcontext(EXACT):
            return to_amount(self._open(tx) * self.directions[tx.source].rate, self.scale)

    def preprocess_intent(self, tx: CrossShardTx) -> Apply:
        """Source-shard contract: balance check, debit, sub-broker key write.

        Returns the ids of unsettled inbound transfers the balance check had
        to count; the transfer depends on them.
        """
        key = self.composite_key(tx)

        def run(ctx: TxContext) -> tuple[str, ...]:
            amount = self._open(tx)
            if ctx.exists(key):
                raise IntentFailed("DUPLICATE_KEY", f"{tx.tx_id} already pooled")
            raw = ctx.get_state(tx.initiator)
            if raw is None:
                raise IntentFailed("UNKNOWN_ACCOUNT", tx.initiator)
            balance = decode_amount(raw, self.scale)
            deps: list[str] = []
            if balance < amount:
                short = amount - balance
                for other_id in self._inbound.get(tx.initiator, []):
                    deps.append(other_id)
                    short -= self._credit_of(self.txs[other_id])
                    if short <= 0:
                        break
                if short > 0:
                    raise IntentFailed("INSUFFICIENT_BALANCE", f"{tx.initiator} cannot cover {tx.tx_id}")
            ctx.put_amount(tx.initiator, balance - amount)
            ctx.put_state(key, cipher_value(tx.cipher))
            return tuple(deps)

        return Apply(run, f"preprocess:{tx.tx_id}")

    def admit(self, tx: CrossShardTx, deps: tuple[str, ...], now: float) -> None:
        """Record a committed pre-processing: the transfer is now pooled."""
        tx.move(CSTxStatus.POOLED, now)
        tx.composite_key = self.composite_key(tx)
        tx.depends_on = tuple(deps)
        for d in deps:
            self.dependents.setdefault(d, []).append(tx.tx_id)
        size = len(tx.composite_key) + len(cipher_value(tx.cipher))
        self.pools[tx.source].add_raw(tx.composite_key, tx.tx_id, tx.intermediary, size)
        self._inbound.setdefault(tx.receiver, []).append(tx.tx_id)

    def reject(self, tx: CrossShardTx, reason: str, now: float) -> None:
        """Pre-processing failed or was abandoned; nothing was applied."""
        tx.failure = reason
        tx.move(CSTxStatus.ROLLED_BACK, now)

    def preprocess(self, tx: CrossShardTx, now: float = 0.0) -> CSTxStatus:
        """Pre-process ``tx`` in a block of its own (direct mode)."""
        state = self.states[tx.source]
        try:
            rwset, deps = simulate(self.preprocess_intent(tx), state.snapshot())
        except IntentFailed as exc:
            self.reject(tx, exc.reason, now)
            if exc.reason == "DUPLICATE_KEY":
                raise DuplicateKey(str(exc)) from exc
            return tx.status
        if validate_and_commit([rwset], state)[0] is Verdict.VALID:
            self.admit(tx, deps, now)
        return tx.status

    def submit(self, initiator: str, receiver: str, intermediary: str, amount: Number, now_ns: int = 0) -> CrossShardTx:
        tx = self.initiate_cstx(initiator, receiver, intermediary, amount, now_ns)
        self.preprocess(tx, now_ns / 1e6)
        return tx

    # ------------------------------------------------------------ system commits
    def _commit(self, shard: str, fn: Callable[[TxContext], object], label: str):
        state = self.states[shard]
        try:
            rwset, result = simulate(Apply(fn, label), state.snapshot())
        except IntentFailed as exc:
            raise_for(exc)
        verdict = validate_and_commit([rwset], state)[0]
        assert verdict is Verdict.VALID, "system transactions run alone in their block"
        self.system_txs += 1
        if self.commit_hook is not None:
            self.commit_hook(shard, rwset)
        return result

    def _deps_settled(self, tx: CrossShardTx) -> bool:
        return all(self.txs[d].status is CSTxStatus.COMPLETED for d in tx.depends_on)

    def eligible(self, tx: CrossShardTx) -> bool:
        return tx.status in (CSTxStatus.POOLED, CSTxStatus.ACCUMULATED) and self._deps_settled(tx)

    # ------------------------------------------------------------ accumulation
    def next_period(self, intermediary: str, source: str) -> int:
        key = (intermediary, source)
        self._periods[key] = self._periods.get(key, 0) + 1
        return self._periods[key]

    def accumulate(self, intermediary: str, source: str, now: float = 0.0, period: int = 0) -> SettlementResult:
        """Collect ``intermediary``'s pooled entries on ``source`` and sum them under HE."""
        direction = self.directions[source]
        pool = self.pools[source]
        state = self.states[source]
        me = intermediary_principal(intermediary)

        raw = state.partial_composite(RAW_PREFIX, [intermediary])
        merged = state.partial_composite(MERGED_PREFIX, [intermediary])
        pending = PendingTransferSet(intermediary)
        ciphers: list[AmountCipher] = []
        keys: list[str] = []
        tx_ids: list[str] = []
        for rec in raw:
            tx = self.txs[pool.raw[rec.rendered]]
            if not self.eligible(tx):
                continue
            _, _, receiver, _ = rec.attributes
            cipher = cipher_from_value(state.value(rec.rendered))
            pending.items.append(PendingItem(receiver, cipher, tx.tx_id))
            ciphers.append(cipher)
            keys.append(rec.rendered)
            tx_ids.append(tx.tx_id)
        extra: list[CipherVector] = []
        for rec in merged:
            entry = pool.merged[rec.rendered]
            for receiver in sorted(entry.covered):
                extra.append(entry.payload[receiver])
                for tid in entry.covered[receiver]:
                    pending.items.append(PendingItem(receiver, self.txs[tid].cipher, tid))
                    tx_ids.append(tid)
            keys.append(rec.rendered)
        self.monitor.observe(me, [raw, merged, pending.items, ciphers], "accumulate.collect")

        result = SettlementResult(
            intermediary, source, direction.target, direction.rate, None, None,
            pending, keys, tx_ids, period=period,
        )
        if not tx_ids:
            return result
        ctx = self.contexts[source]
        c_sum = None
        if ciphers:
            c_vec = ctx.convert(ciphers, self.delta)
            c_sum = self.backend.inner_sum(c_vec, len(ciphers))
        for c in extra:
            c_sum = c if c_sum is None else self.backend.add(c_sum, c)
        result.c_sum = c_sum
        result.c_final_sum = self.backend.mul(c_sum, direction.c_rate)
        self.monitor.observe(me, [result.c_sum, result.c_final_sum], "accumulate.evaluate")
        for tid in tx_ids:
            tx = self.txs[tid]
            if tx.status is CSTxStatus.POOLED:
                tx.move(CSTxStatus.ACCUMULATED, now)
        pool.consumed.update(keys)
        return result

    # ------------------------------------------------------------ synchronization
    def synchronize(self, result: SettlementResult, now: float = 0.0) -> tuple[Decimal, Decimal]:
        """Decrypt the aggregates and move the source side; all-or-nothing."""
        if result.empty:
            result.out_amount = result.in_amount = to_amount(0, self.scale)
            return result.out_amount, result.in_amount
        ctx = self.contexts[result.source]
        out_amount = to_amount(ctx.decrypt_aggregate(result.c_sum)[0], self.scale)
        in_amount = to_amount(ctx.decrypt_aggregate(result.c_final_sum)[0], self.scale)
        g = result.intermediary
        record = create_composite_key(SETTLE_PREFIX, [g, result.source, str(result.period)])

        def target_side(tctx: TxContext) -> None:
            funds = tctx.get_amount(g)
            if funds < in_amount:
                raise IntentFailed("LIQUIDITY_SHORTFALL", f"{g} holds {funds} < {in_amount}")
            tctx.put_state(record, encode_amount(in_amount, self.scale))

        def source_side(sctx: TxContext) -> None:
            for key in result.consumed_keys:
                sctx.del_state(key)
            sctx.put_amount(g, sctx.get_amount(g) + out_amount)

        self._commit(result.target, target_side, f"sync-target:{g}")
        self._commit(result.source, source_side, f"sync-source:{g}")
        pool = self.pools[result.source]
        for key in result.consumed_keys:
            pool.remove(key)
        result.out_amount, result.in_amount = out_amount, in_amount
        return out_amount, in_amount

    # ------------------------------------------------------------ completion
    def residue_bound(self, result: SettlementResult) -> Decimal:
        bound = quantum(self.scale) * len(result.pending.items)
        if self.backend.rel_error_bound:
            bound += Decimal(repr(self.backend.rel_error_bound)) * abs(result.in_amount) + quantum(self.scale)
        return bound

    def complete(self, result: SettlementResult, now: float = 0.0) -> dict[str, Decimal]:
        """Credit every receiver ``amount * rate`` from the intermediary's target funds."""
        if result.empty:
            return {}
        g = result.intermediary
        credits: dict[str, Decimal] = {}
        ctx = self.contexts[result.source]
        for item in result.pending.items:
            with localcontext(EXACT):
                credit = to_amount(ctx.reveal(ctx.open(item.cipher)) * result.rate, self.scale)
            credits[item.receiver] = credits.get(item.receiver, Decimal(0)) + credit
        total = sum(credits.values(), Decimal(0))
        if abs(total - result.in_amount) > self.residue_bound(result):
            raise RoundingResidue(f"credits {total} vs inbound {result.in_amount}")

        def target_side(tctx: TxContext) -> None:
            for receiver in sorted(credits):
                tctx.put_amount(receiver, tctx.get_amount(receiver) + credits[receiver])
            tctx.put_amount(g, tctx.get_amount(g) - total)

        self._commit(result.target, target_side, f"complete:{g}")
        for tid in result.tx_ids:
            tx = self.txs[tid]
            tx.move(CSTxStatus.COMPLETED, now)
            self._settled(tx)
        self.audit_log.append(result.audit())
        return credits

    def _settled(self, tx: CrossShardTx) -> None:
        inbound = self._inbound.get(tx.receiver)
        if inbound and tx.tx_id in inbound:
            inbound.remove(tx.tx_id)

    # ------------------------------------------------------------ periodic task
    def settle(self, intermediary: str, source: str, now: float = 0.0) -> SettlementResult:
        """One settlement period for ``intermediary`` on ``source``.

        A batch that hit a liquidity shortfall is retried as is at the next
        period; after ``max_settle_attempts`` failed attempts its members are
        rolled back so every transfer still reaches a terminal status.
        """
        key = (intermediary, source)
        period = self.next_period(intermediary, source)
        result = self._pending.pop(key, None)
        if result is None:
            result = self.accumulate(intermediary, source, now, period)
        result.period = period
        if result.empty:
            self.synchronize(result, now)
            return result
        result.attempts += 1
        try:
            self.synchronize(result, now)
        except LiquidityShortfall:
            if result.attempts >= self.max_settle_attempts:
                self.pools[source].consumed.difference_update(result.consumed_keys)
                for tid in result.tx_ids:
                    self.rollback(self.txs[tid], now, "LIQUIDITY_SHORTFALL")
            else:
                self._pending[key] = result
            raise
        self.complete(result, now)
        return result

    def has_pending(self, intermediary: str, source: str) -> bool:
        return (intermediary, source) in self._pending

    # ------------------------------------------------------------ rollback
    def rollback(self, tx: CrossShardTx, now: float = 0.0, reason: str = "ROLLBACK") -> list[str]:
        """Undo ``tx`` and, recursively, every transfer that counted on its credit."""
        if tx.status is CSTxStatus.COMPLETED:
            raise AlreadyCompleted(f"{tx.tx_id} is completed")
        if tx.status is CSTxStatus.ROLLED_BACK:
            return []
        if tx.status in (CSTxStatus.POOLED, CSTxStatus.ACCUMULATED):
            self._undo_pooling(tx)
        tx.failure = tx.failure or reason
        tx.move(CSTxStatus.ROLLED_BACK, now)
        self._settled(tx)
        undone = [tx.tx_id]
        for dep_id in self.dependents.get(tx.tx_id, []):
            dep = self.txs[dep_id]
            if dep.status is not CSTxStatus.ROLLED_BACK:
                undone += self.rollback(dep, now, f"DEPENDS_ON:{tx.tx_id}")
        return undone

    def _undo_pooling(self, tx: CrossShardTx) -> None:
        pool = self.pools[tx.source]
        key = tx.composite_key
        for pkey, pending in list(self._pending.items()):
            if tx.tx_id in pending.tx_ids:
                # the batch must be re-accumulated without this member
                del self._pending[pkey]
                pool.consumed.difference_update(pending.consumed_keys)
        amount = self._open(tx)
        entry = pool.merged.get(key)
        if entry is None:
            def run(ctx: TxContext) -> None:
                ctx.put_amount(tx.initiator, ctx.get_amount(tx.initiator) + amount)
                ctx.del_state(key)

            self._commit(tx.source, run, f"rollback:{tx.tx_id}")
            pool.remove(key)
            return
        single = self.contexts[tx.source].convert([tx.cipher], self.delta)
        receiver = tx.receiver
        entry.covered[receiver].remove(tx.tx_id)
        if entry.covered[receiver]:
            entry.payload[receiver] = self.backend.sub(entry.payload[receiver], single)
        else:
            del entry.covered[receiver]
            del entry.payload[receiver]
        value = merged_value(entry.covered) if entry.covered else None

        def run_merged(ctx: TxContext) -> None:
            ctx.put_amount(tx.initiator, ctx.get_amount(tx.initiator) + amount)
            if value is None:
                ctx.del_state(key)
            else:
                ctx.put_state(key, value)

        self._commit(tx.source, run_merged, f"rollback:{tx.tx_id}")
        if value is None:
            pool.remove(key)
        else:
            pool.put_merged(entry, len(key) + len(value))

    # ------------------------------------------------------------ oracles
    def in_flight(self, source: str) -> Decimal:
        """Value parked in sub-broker keys on ``source`` (test oracle; uses client-side amounts)."""
        live = (CSTxStatus.POOLED, CSTxStatus.ACCUMULATED)
        return sum((t.amount for t in self.txs.values() if t.source == source and t.status in live), Decimal(0))

    def shard_balance(self, shard: str) -> Decimal:
        state = self.states[shard]
        return sum((decode_amount(state.value(k), self.scale) for k in state.keys() if SEP not in k), Decimal(0))

    def rate_adjusted_total(self, source: str) -> Decimal:
        """Pair total in ``source`` units: its balances plus the partner's divided by the rate."""
        d = self.directions[source]
        with localcontext(EXACT):
            here = self.shard_balance(source) + self.in_flight(source)
            there = self.shard_balance(d.target) + self.in_flight(d.target)
            return here + there / d.rate

    def export_audit(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.audit_log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def merged_value(covered: dict[str, list[str]]) -> bytes:
    """State value of a merged key: receivers and the transfers folded into each."""
    return json.dumps({d: covered[d] for d in sorted(covered)}, sort_keys=True).encode()
