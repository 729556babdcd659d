"""The client's local secret records (one per prepared bundle).

Records are sealed under a key derived from a passphrase with scrypt unless the
user opts into plaintext storage explicitly.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from ..crypto import AuthenticationFailure, SealedBlob, open_blob, random_bytes, seal
from .files import write_atomic

_SEALED_MAGIC = b"QSEC\x01"
_SALT = 16
_INDEX = "jobs.json"


class SecretStoreError(Exception):
    pass


@dataclass(frozen=True)
class LocalSecretRecord:
    idempotency_token: str
    backend_id: str
    scheme_label: str
    num_qubits: int
    shots: int
    response_key: bytes
    client_ephemeral_secret: bytes
    original_circuit_digest: bytes
    job_id: str | None = None

    def to_json(self) -> bytes:
        d = dataclasses.asdict(self)
        for k in ("response_key", "client_ephemeral_secret", "original_circuit_digest"):
            d[k] = d[k].hex()
        return json.dumps(d, sort_keys=True).encode()

    @classmethod
    def from_json(cls, data: bytes) -> LocalSecretRecord:
        d = json.loads(data)
        d.pop("insecure", None)
        for k in ("response_key", "client_ephemeral_secret", "original_circuit_digest"):
            d[k] = bytes.fromhex(d[k])
        return cls(**d)


def _kdf(passphrase: str, salt: bytes) -> bytes:
    return Scrypt(salt=salt, length=32, n=2**14, r=8, p=1).derive(passphrase.encode("utf-8"))


class SecretStore:
    """Directory of records named ``<idempotency_token>.rec`` plus a job index."""

    def __init__(self, directory: str | os.PathLike, passphrase: str | None = None, *, insecure: bool = False):
        self.directory = Path(directory)
        self.passphrase = passphrase
        self.insecure = insecure

    def _path(self, token: str) -> Path:
        if not token or any(c not in "0123456789abcdef-" for c in token):
            raise SecretStoreError(f"bad record name {token!r}")
        return self.directory / f"{token}.rec"

    def save(self, record: LocalSecretRecord) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        os.chmod(self.directory, 0o700)
        path = self._path(record.idempotency_token)
        if self.passphrase:
            salt = random_bytes(_SALT)
            blob = seal(record.to_json(), _kdf(self.passphrase, salt), self._ad(record.idempotency_token))
            data = _SEALED_MAGIC + salt + blob.to_bytes()
        elif self.insecure:
            d = json.loads(record.to_json())
            d["insecure"] = True
            data = json.dumps(d, indent=2, sort_keys=True).encode()
        else:
            raise SecretStoreError("refusing to store secrets without a passphrase (or --insecure-store)")
        write_atomic(path, data)
        os.chmod(path, 0o600)
        if record.job_id:
            self._index_job(record.job_id, record.idempotency_token)
        return path

    @staticmethod
    def _ad(token: str) -> bytes:
        return b"qtee-qos/secret-record/" + token.encode()

    def load(self, token: str) -> LocalSecretRecord:
        path = self._path(token)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise SecretStoreError(f"no secret record for {token}") from None
        if data.startswith(_SEALED_MAGIC):
            if not self.passphrase:
                raise SecretStoreError(f"{path.name} is encrypted; a passphrase is required")
            salt = data[len(_SEALED_MAGIC) : len(_SEALED_MAGIC) + _SALT]
            blob = SealedBlob.from_bytes(data[len(_SEALED_MAGIC) + _SALT :])
            try:
                plain = open_blob(blob, _kdf(self.passphrase, salt), self._ad(token))
            except AuthenticationFailure:
                raise SecretStoreError(f"wrong passphrase for {path.name}") from None
            return LocalSecretRecord.from_json(plain)
        return LocalSecretRecord.from_json(data)

    def _index_job(self, job_id: str, token: str) -> None:
        index_path = self.directory / _INDEX
        index = json.loads(index_path.read_text()) if index_path.exists() else {}
        index[job_id] = token
        write_atomic(index_path, json.dumps(index, indent=2, sort_keys=True).encode())

    def for_job(self, job_id: str) -> LocalSecretRecord:
        index_path = self.directory / _INDEX
        index = json.loads(index_path.read_text()) if index_path.exists() else {}
        if job_id not in index:
            raise SecretStoreError(f"no secret record for job {job_id}")
        return self.load(index[job_id])

    def attach_job(self, token: str, job_id: str) -> LocalSecretRecord:
        record = dataclasses.replace(self.load(token), job_id=job_id)
        if not self.passphrase and not self.insecure:
            # existing plaintext record: keep its storage mode
            self.insecure = True
        self.save(record)
        return record
