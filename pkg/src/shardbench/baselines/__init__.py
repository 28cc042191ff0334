"""Reference cross-shard schemes: single broker, two-phase locking, optimistic."""
from .common import BaselineTx, RetryPolicy, lock_keys, refund_leg, source_leg, target_leg
from .occ import OCCResult, occ_execute, occ_validate_and_commit, run_occ
from .twopl import LockTable, TwoPLCoordinator
from .vanilla import Outcome, VanillaResult, run_vanilla, vanilla_block

__all__ = [
    "BaselineTx", "LockTable", "OCCResult", "Outcome", "RetryPolicy", "TwoPLCoordinator",
    "VanillaResult", "lock_keys", "occ_execute", "occ_validate_and_commit", "refund_leg",
    "run_occ", "run_vanilla", "source_leg", "target_leg", "vanilla_block",
]
