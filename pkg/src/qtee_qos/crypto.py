"""Authenticated sealing of metadata blobs and backend key agreement.

The AEAD is pluggable by name (``aes-256-gcm`` or ``chacha20-poly1305``); both
take 32-byte keys and 96-bit nonces.  Nonces are random per seal.  Passing a
seeded generator makes nonces (and therefore ciphertexts) reproducible, which
is meant for tests and deterministic bundle builds only.

Backend keys are X25519.  Public keys travel as 32 raw bytes followed by a
4-byte SHA-256 check value so that a corrupted key is rejected rather than
silently agreeing on garbage.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM, ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .encoding import Reader, Writer

KEY_SIZE = 32
NONCE_SIZE = 12
PUBLIC_KEY_SIZE = 36

AEAD_SCHEMES = {
    "aes-256-gcm": AESGCM,
    "chacha20-poly1305": ChaCha20Poly1305,
}
DEFAULT_SCHEME = "aes-256-gcm"

_METADATA_KDF_LABEL = b"qtee-qos/metadata-key/v1/"


class AuthenticationFailure(Exception):
    """A sealed blob did not authenticate.  Carries no detail by design."""

    def __init__(self) -> None:
        super().__init__("authentication failure")


class KeyAgreementError(ValueError):
    pass


def random_bytes(n: int, rng: np.random.Generator | None = None) -> bytes:
    """OS entropy by default; a seeded generator gives reproducible bytes."""
    if rng is None:
        return os.urandom(n)
    return rng.bytes(n)


@dataclass(frozen=True)
class SealedBlob:
    key_id: str
    nonce: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return Writer().text(self.key_id).blob(self.nonce).blob(self.ciphertext).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> SealedBlob:
        r = Reader(data)
        key_id = r.text()
        nonce = r.blob()
        ciphertext = r.blob()
        r.expect_end()
        return cls(key_id, nonce, ciphertext)


def _aead(key: bytes, scheme: str):
    if len(key) != KEY_SIZE:
        raise ValueError(f"key must be {KEY_SIZE} bytes, got {len(key)}")
    try:
        return AEAD_SCHEMES[scheme](key)
    except KeyError:
        raise ValueError(f"unknown AEAD scheme {scheme!r}") from None


def seal(
    plaintext: bytes,
    key: bytes,
    associated_data: bytes,
    rng: np.random.Generator | None = None,
    *,
    key_id: str = "",
    scheme: str = DEFAULT_SCHEME,
) -> SealedBlob:
    nonce = random_bytes(NONCE_SIZE, rng)
    ct = _aead(key, scheme).encrypt(nonce, bytes(plaintext), bytes(associated_data))
    return SealedBlob(key_id, nonce, ct)


def open_blob(
    blob: SealedBlob, key: bytes, associated_data: bytes, *, scheme: str = DEFAULT_SCHEME
) -> bytes:
    """Return the plaintext or raise :class:`AuthenticationFailure`."""
    if len(blob.nonce) != NONCE_SIZE or len(key) != KEY_SIZE:
        raise AuthenticationFailure()
    try:
        return _aead(key, scheme).decrypt(blob.nonce, blob.ciphertext, bytes(associated_data))
    except InvalidTag:
        raise AuthenticationFailure() from None


# --- X25519 ---------------------------------------------------------------


def encode_public_key(raw: bytes) -> bytes:
    return raw + hashlib.sha256(raw).digest()[:4]


def decode_public_key(encoded: bytes) -> X25519PublicKey:
    if len(encoded) != PUBLIC_KEY_SIZE:
        raise KeyAgreementError(f"public key must be {PUBLIC_KEY_SIZE} bytes, got {len(encoded)}")
    raw, check = encoded[:32], encoded[32:]
    if hashlib.sha256(raw).digest()[:4] != check:
        raise KeyAgreementError("public key check value mismatch")
    return X25519PublicKey.from_public_bytes(raw)


def generate_keypair(rng: np.random.Generator | None = None) -> tuple[bytes, bytes]:
    """Return ``(secret, encoded_public)``."""
    secret = random_bytes(32, rng)
    return secret, public_from_secret(secret)


def public_from_secret(secret: bytes) -> bytes:
    if len(secret) != 32:
        raise KeyAgreementError("X25519 secret must be 32 bytes")
    pub = X25519PrivateKey.from_private_bytes(secret).public_key()
    return encode_public_key(pub.public_bytes_raw())


def _derive(secret: bytes, peer_public: bytes, backend_id: str) -> bytes:
    if len(secret) != 32:
        raise KeyAgreementError("X25519 secret must be 32 bytes")
    peer = decode_public_key(peer_public)
    try:
        shared = X25519PrivateKey.from_private_bytes(secret).exchange(peer)
    except ValueError as exc:
        # low-order peer points give an all-zero shared secret
        raise KeyAgreementError(str(exc)) from None
    return HKDF(
        algorithm=hashes.SHA256(),
        length=KEY_SIZE,
        salt=None,
        info=_METADATA_KDF_LABEL + backend_id.encode("utf-8"),
    ).derive(shared)


def establish_backend_key(
    client_ephemeral_secret: bytes, backend_static_public: bytes, backend_id: str
) -> tuple[bytes, bytes]:
    """Client side: ``(symmetric_key, client_ephemeral_public)``."""
    key = _derive(client_ephemeral_secret, backend_static_public, backend_id)
    return key, public_from_secret(client_ephemeral_secret)


def derive_controller_key(
    backend_static_secret: bytes, client_ephemeral_public: bytes, backend_id: str
) -> bytes:
    """Trust-boundary side of :func:`establish_backend_key`."""
    return _derive(backend_static_secret, client_ephemeral_public, backend_id)


# --- associated data --------------------------------------------------------


def metadata_associated_data(backend_id: str, digest: bytes) -> bytes:
    return Writer().raw(b"QMAD").text(backend_id).blob(digest).getvalue()


def output_associated_data(job_id: str) -> bytes:
    return Writer().raw(b"QOAD").text(job_id).getvalue()


# --- registry -----------------------------------------------------------------


@dataclass
class KeyRegistry:
    """Key material addressed by key id, tagged with the boundary that owns it.

    ``owner`` is one of ``"controller"`` (backend static secrets), ``"client"``
    (response keys, ephemeral secrets) or ``"session"`` (transport keys shared
    by a client and the service).  ``secret(key_id, owner=...)`` refuses to hand
    material to any other boundary.
    """

    _public: dict[str, bytes] = field(default_factory=dict)
    _secret: dict[str, tuple[str, bytes]] = field(default_factory=dict)

    def add_backend_keypair(self, backend_id: str, secret: bytes) -> bytes:
        public = public_from_secret(secret)
        self._public[backend_id] = public
        self._secret[backend_id] = ("controller", secret)
        return public

    def add_secret(self, key_id: str, owner: str, material: bytes) -> None:
        self._secret[key_id] = (owner, material)

    def public_key(self, key_id: str) -> bytes:
        try:
            return self._public[key_id]
        except KeyError:
            raise KeyError(f"no public key registered for {key_id!r}") from None

    def secret(self, key_id: str, *, owner: str) -> bytes:
        try:
            holder, material = self._secret[key_id]
        except KeyError:
            raise KeyError(f"no secret registered for {key_id!r}") from None
        if holder != owner:
            raise PermissionError(f"{key_id!r} belongs to the {holder} boundary")
        return material

    def __contains__(self, key_id: str) -> bool:
        return key_id in self._public or key_id in self._secret

