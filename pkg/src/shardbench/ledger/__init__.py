"""Per-shard versioned world state with execute-order-validate processing."""
from .block import (
    MB,
    Block,
    BlockCutter,
    EndorsedTx,
    Verdict,
    apply_writes,
    check_reads,
    cut_blocks,
    order_and_batch,
    validate_and_commit,
)
from .compositekey import (
    CompositeKeyRecord,
    create_composite_key,
    partial_key_range,
    split_composite_key,
)
from .state import Snapshot, VersionedEntry, VersionedWorldState
from .tx import Apply, ReadWriteSet, Transfer, TxContext, Write, simulate, simulate_tx


def get_state_by_partial_composite_key(state, prefix, leading_attrs=()):
    """All stored composite keys under ``prefix`` whose leading attributes match."""
    return state.partial_composite(prefix, leading_attrs)


__all__ = [
    "MB",
    "Apply",
    "Block",
    "BlockCutter",
    "CompositeKeyRecord",
    "EndorsedTx",
    "ReadWriteSet",
    "Snapshot",
    "Transfer",
    "TxContext",
    "Verdict",
    "VersionedEntry",
    "VersionedWorldState",
    "Write",
    "apply_writes",
    "check_reads",
    "create_composite_key",
    "cut_blocks",
    "get_state_by_partial_composite_key",
    "order_and_batch",
    "partial_key_range",
    "simulate",
    "simulate_tx",
    "split_composite_key",
    "validate_and_commit",
]
