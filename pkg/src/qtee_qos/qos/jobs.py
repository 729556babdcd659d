from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Any

from ..circuit import PulseSchedule, decode_schedule, encode_schedule
from ..crypto import SealedBlob
from ..encoding import EncodingError, require


class JobState(str, enum.Enum):
    RECEIVED = "Received"
    QUEUED = "Queued"
    RUNNING = "Running"
    DONE = "Done"
    FAILED = "Failed"

    @property
    def terminal(self) -> bool:
        return self in (JobState.DONE, JobState.FAILED)


_EDGES = {
    JobState.RECEIVED: {JobState.QUEUED},
    JobState.QUEUED: {JobState.RUNNING},
    JobState.RUNNING: {JobState.DONE, JobState.FAILED},
    JobState.DONE: set(),
    JobState.FAILED: set(),
}


class InvalidTransition(RuntimeError):
    pass


@dataclass(frozen=True)
class JobResults:
    bitstrings: tuple[str, ...]
    sealed_output_metadata: SealedBlob


@dataclass(frozen=True)
class Job:
    """Immutable snapshot of a job.  Transitions return a new snapshot."""

    job_id: str
    client_id: str
    backend_id: str
    obf_schedule: PulseSchedule
    sealed_metadata: SealedBlob
    client_ephemeral_public: bytes
    shots: int
    submitted_at: int
    state: JobState = JobState.RECEIVED
    reason: str | None = None
    results: JobResults | None = None
    idempotency_token: str | None = None

    def __post_init__(self) -> None:
        if (self.results is not None) != (self.state is JobState.DONE):
            raise ValueError("results are present iff the job is Done")

    def transition(
        self, state: JobState, reason: str | None = None, results: JobResults | None = None
    ) -> Job:
        if state not in _EDGES[self.state]:
            raise InvalidTransition(f"{self.job_id}: {self.state.value} -> {state.value}")
        return dataclasses.replace(self, state=state, reason=reason, results=results)

    def demoted(self) -> Job:
        """Crash-recovery only: a job caught Running goes back to Queued."""
        if self.state is not JobState.RUNNING:
            return self
        return dataclasses.replace(self, state=JobState.QUEUED, reason=None)

    @property
    def state_label(self) -> str:
        if self.state is JobState.FAILED and self.reason:
            return f"Failed({self.reason})"
        return self.state.value

    def to_fields(self) -> dict[str, Any]:
        fields: dict[str, Any] = {
            "job_id": self.job_id,
            "client_id": self.client_id,
            "backend_id": self.backend_id,
            "schedule": encode_schedule(self.obf_schedule),
            "sealed_metadata": self.sealed_metadata.to_bytes(),
            "client_ephemeral_public": self.client_ephemeral_public,
            "shots": self.shots,
            "submitted_at": self.submitted_at,
            "state": self.state.value,
            "reason": self.reason,
            "idempotency_token": self.idempotency_token,
        }
        if self.results is not None:
            fields["bitstrings"] = list(self.results.bitstrings)
            fields["sealed_output_metadata"] = self.results.sealed_output_metadata.to_bytes()
        return fields

    @classmethod
    def from_fields(cls, f: dict[str, Any]) -> Job:
        require(
            f,
            ["job_id", "client_id", "backend_id", "schedule", "sealed_metadata",
             "client_ephemeral_public", "shots", "submitted_at", "state"],
        )
        results = None
        if "bitstrings" in f:
            require(f, ["sealed_output_metadata"])
            results = JobResults(
                tuple(f["bitstrings"]), SealedBlob.from_bytes(f["sealed_output_metadata"])
            )
        try:
            state = JobState(f["state"])
        except ValueError:
            raise EncodingError(f"unknown job state {f['state']!r}") from None
        return cls(
            job_id=f["job_id"],
            client_id=f["client_id"],
            backend_id=f["backend_id"],
            obf_schedule=decode_schedule(f["schedule"]),
            sealed_metadata=SealedBlob.from_bytes(f["sealed_metadata"]),
            client_ephemeral_public=f["client_ephemeral_public"],
            shots=f["shots"],
            submitted_at=f["submitted_at"],
            state=state,
            reason=f.get("reason"),
            results=results,
            idempotency_token=f.get("idempotency_token"),
        )
