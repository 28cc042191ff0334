"""Error taxonomy shared by every layer.

Each exception carries a stable ``code`` string so callers (and the metrics
collector) can count failures by kind without matching on class names.
"""
from __future__ import annotations


class ShardBenchError(Exception):
    code = "ERROR"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details


# ledger
class IntentFailed(ShardBenchError):
    code = "INTENT_FAILED"

    def __init__(self, reason: str, message: str = "", **details):
        super().__init__(message or reason, **details)
        self.reason = reason


class BadAttribute(ShardBenchError):
    code = "BAD_ATTRIBUTE"


class MalformedKey(ShardBenchError):
    code = "MALFORMED_KEY"


# crypto
class NegativeAmount(ShardBenchError):
    code = "NEGATIVE_AMOUNT"


class AccessDenied(ShardBenchError):
    code = "ACCESS_DENIED"


class CorruptCiphertext(ShardBenchError):
    code = "CORRUPT_CIPHERTEXT"


class VectorTooLong(ShardBenchError):
    code = "VECTOR_TOO_LONG"


class KeyMismatch(ShardBenchError):
    code = "KEY_MISMATCH"


class MissingRotationKeys(ShardBenchError):
    code = "MISSING_ROTATION_KEYS"


class LevelExhausted(ShardBenchError):
    code = "LEVEL_EXHAUSTED"


class ConfinementViolation(ShardBenchError):
    """A confined plaintext amount was asked to leave its context."""

    code = "CONFINEMENT_VIOLATION"


# cross-shard engine
class UnknownAccount(ShardBenchError):
    code = "UNKNOWN_ACCOUNT"


class InsufficientBalance(ShardBenchError):
    code = "INSUFFICIENT_BALANCE"


class DuplicateKey(ShardBenchError):
    code = "DUPLICATE_KEY"


class EmptyPool(ShardBenchError):
    code = "EMPTY_POOL"


class LiquidityShortfall(ShardBenchError):
    code = "LIQUIDITY_SHORTFALL"


class RoundingResidue(ShardBenchError):
    code = "ROUNDING_RESIDUE"


class AlreadyCompleted(ShardBenchError):
    code = "ALREADY_COMPLETED"


class InvalidTransition(ShardBenchError):
    code = "INVALID_TRANSITION"


# comkey reuse
class EmptyGroup(ShardBenchError):
    code = "EMPTY_GROUP"


class StaleSnapshot(ShardBenchError):
    code = "STALE_SNAPSHOT"


class DigestMismatch(ShardBenchError):
    code = "DIGEST_MISMATCH"


# baselines
class LockTimeout(ShardBenchError):
    code = "LOCK_TIMEOUT"


class AbortExhausted(ShardBenchError):
    code = "ABORT_EXHAUSTED"


# harness
class BadTrace(ShardBenchError):
    code = "BAD_TRACE"


class ConfigInvalid(ShardBenchError):
    code = "CONFIG_INVALID"


class ExportError(ShardBenchError):
    code = "IO_ERROR"
