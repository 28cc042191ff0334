"""Sharded-ledger simulator and cross-shard transaction engine."""

__version__ = "0.1.0"
