"""Bundle and raw-results files.

Both reuse the wire's tagged-field encoding behind a 4-byte magic, so a bundle
is exactly the payload of a SUBMIT and a results file is exactly the payload
of a RESULTS reply.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from ..circuit import PulseSchedule, decode_schedule, encode_schedule
from ..crypto import SealedBlob
from ..encoding import EncodingError, decode_fields, encode_fields, require

BUNDLE_MAGIC = b"QBND"
RESULTS_MAGIC = b"QRES"


@dataclass(frozen=True)
class Bundle:
    idempotency_token: str
    backend_id: str
    schedule: PulseSchedule
    sealed_metadata: SealedBlob
    client_ephemeral_public: bytes
    shots: int

    def to_bytes(self) -> bytes:
        return BUNDLE_MAGIC + encode_fields(
            {
                "idempotency_token": self.idempotency_token,
                "backend_id": self.backend_id,
                "schedule": encode_schedule(self.schedule),
                "sealed_metadata": self.sealed_metadata.to_bytes(),
                "client_ephemeral_public": self.client_ephemeral_public,
                "shots": self.shots,
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> Bundle:
        if not data.startswith(BUNDLE_MAGIC):
            raise EncodingError("not a bundle file")
        f = decode_fields(data[len(BUNDLE_MAGIC) :])
        require(f, ["idempotency_token", "backend_id", "schedule", "sealed_metadata",
                    "client_ephemeral_public", "shots"])
        return cls(
            f["idempotency_token"],
            f["backend_id"],
            decode_schedule(f["schedule"]),
            SealedBlob.from_bytes(f["sealed_metadata"]),
            f["client_ephemeral_public"],
            f["shots"],
        )


@dataclass(frozen=True)
class RawResults:
    job_id: str
    bitstrings: tuple[str, ...]
    sealed_output_metadata: SealedBlob

    def to_bytes(self) -> bytes:
        return RESULTS_MAGIC + encode_fields(
            {
                "job_id": self.job_id,
                "bitstrings": list(self.bitstrings),
                "sealed_output_metadata": self.sealed_output_metadata.to_bytes(),
            }
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> RawResults:
        if not data.startswith(RESULTS_MAGIC):
            raise EncodingError("not a results file")
        f = decode_fields(data[len(RESULTS_MAGIC) :])
        require(f, ["job_id", "bitstrings", "sealed_output_metadata"])
        return cls(f["job_id"], tuple(f["bitstrings"]), SealedBlob.from_bytes(f["sealed_output_metadata"]))


def write_atomic(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
