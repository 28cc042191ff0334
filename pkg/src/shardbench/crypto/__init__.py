"""Transport cipher, homomorphic vector backends, key store, conversion context."""
from .context import ConfinedAmount, ConversionContext, TaintMonitor, convert, is_tainted
from .he import (
    ApproxBackend,
    CipherVector,
    HEBackend,
    HEParams,
    KeySet,
    MockBackend,
    Plaintext,
    PublicKeySet,
    make_backend,
)
from .keystore import (
    AccessRecord,
    KeyStore,
    Principal,
    Role,
    client_principal,
    conversion_principal,
    intermediary_principal,
)
from .transport import (
    AmountCipher,
    TimestampSource,
    TransportKey,
    decrypt_transport,
    encrypt_transport,
    generate_transport_key,
    make_timestamp,
    timestamp_ns,
)

__all__ = [
    "AccessRecord", "AmountCipher", "ApproxBackend", "CipherVector", "ConfinedAmount",
    "ConversionContext", "HEBackend", "HEParams", "KeySet", "KeyStore", "MockBackend",
    "Plaintext", "Principal", "PublicKeySet", "Role", "TaintMonitor", "TimestampSource",
    "TransportKey", "client_principal", "conversion_principal", "convert", "decrypt_transport",
    "encrypt_transport", "generate_transport_key", "intermediary_principal", "is_tainted",
    "make_backend", "make_timestamp", "timestamp_ns",
]
