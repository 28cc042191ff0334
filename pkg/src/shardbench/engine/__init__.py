"""Cross-shard transaction engine and composite-key reuse."""
from .hicocs import HiCoCSEngine
from .model import (
    CrossShardTx,
    CSTxMessage,
    CSTxStatus,
    PendingItem,
    PendingTransferSet,
    SettlementResult,
)
from .pool import ComKeyPool, MergedEntry
from .reuse import (
    TempComKeyPool,
    ckpoe_regenerate,
    ckpoe_summarize,
    ckpoe_validate,
    elect_reuse_intermediary,
    run_ckpoe,
)

__all__ = [
    "ComKeyPool", "CrossShardTx", "CSTxMessage", "CSTxStatus", "HiCoCSEngine", "MergedEntry",
    "PendingItem", "PendingTransferSet", "SettlementResult", "TempComKeyPool", "ckpoe_regenerate",
    "ckpoe_summarize", "ckpoe_validate", "elect_reuse_intermediary", "run_ckpoe",
]
