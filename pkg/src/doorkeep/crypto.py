"""Symmetric XOR cipher for probe images in transit.

The door unit encrypts every captured image before upload and the
controller decrypts it just before comparison. The transform is its own
inverse, so both ends share one key and one function.

This cipher is NOT cryptographically strong: a single known plaintext
reveals the key stream. It is kept for wire-compatibility with the rest
of the system; do not reuse it for anything else.
"""

from __future__ import annotations

from dataclasses import dataclass

MIN_KEY_LEN = 16


class CipherKeyError(ValueError):
    """Raised for unusable cipher keys (too short, all-zero, bad hex)."""


@dataclass(frozen=True)
class CipherKey:
    """Validated symmetric key. Degenerate keys are rejected up front:
    an all-zero key would make ciphertext equal plaintext."""

    key_bytes: bytes

    def __post_init__(self):
        if len(self.key_bytes) < MIN_KEY_LEN:
            raise CipherKeyError(
                f"key must be at least {MIN_KEY_LEN} bytes, got {len(self.key_bytes)}"
            )
        if not any(self.key_bytes):
            raise CipherKeyError("all-zero key is not allowed")

    @classmethod
    def from_hex(cls, hex_str: str) -> "CipherKey":
        """Parse the `cipher_key_hex` config entry (>= 32 hex chars, even length)."""
        try:
            raw = bytes.fromhex(hex_str.strip())
        except ValueError as exc:
            raise CipherKeyError(f"invalid hex key: {exc}") from exc
        return cls(raw)


def xor_transform(data: bytes, key: CipherKey) -> bytes:
    """XOR `data` against the cycled key. Applying it twice restores the input."""
    if not data:
        return b""
    kb = key.key_bytes
    # repeat the key to cover the data, then XOR in one pass
    reps = -(-len(data) // len(kb))
    stream = (kb * reps)[: len(data)]
    return bytes(a ^ b for a, b in zip(data, stream))
