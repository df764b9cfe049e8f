"""Fixed cryptographic primitives for the whole framework.

The hash and the authenticated cipher are named here exactly once so that
every module, every stored address and every golden test value agree on
them:

* 32-byte hash: SHA-256
* authenticated symmetric scheme: ChaCha20-Poly1305

Nothing in this package invents cryptography; this module only pins which
standard primitives are in use and gives them a stable calling surface.
"""

from __future__ import annotations

import hashlib

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

HASH_NAME = "sha256"
DIGEST_SIZE = 32

AEAD_NAME = "chacha20poly1305"
AEAD_KEY_SIZE = 32
AEAD_NONCE_SIZE = 12
AEAD_TAG_SIZE = 16


def digest(*parts: bytes) -> bytes:
    """SHA-256 over the concatenation of ``parts``."""
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def derive_key(label: bytes, *parts: bytes) -> bytes:
    """Derive a 32-byte subkey, domain-separated by ``label``."""
    return digest(label, *parts)


def derive_nonce(label: bytes, *parts: bytes) -> bytes:
    """Derive a 12-byte AEAD nonce, domain-separated by ``label``.

    Callers must guarantee that the part tuple is unique per (key, message);
    the channel codec does this by folding the message index in.
    """
    return digest(label, *parts)[:AEAD_NONCE_SIZE]


def encrypt(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    return ChaCha20Poly1305(key).encrypt(nonce, plaintext, aad)


def decrypt(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes | None:
    """Decrypt and authenticate; ``None`` on any authentication failure."""
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, ciphertext, aad)
    except InvalidTag:
        return None
