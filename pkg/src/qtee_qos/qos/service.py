"""The QOS service: intake, backend-pinned FIFO scheduling, dispatch, fetch.

The service handles obfuscated schedules and sealed blobs only.  It has no
key material capable of opening either kind of blob; controllers are reached
through the :class:`~qtee_qos.handoff.ControllerHandle` protocol.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Mapping

from ..circuit import BackendDescriptor, PulseSchedule, check_schedule, decode_schedule
from ..crypto import PUBLIC_KEY_SIZE, AuthenticationFailure, SealedBlob
from ..encoding import EncodingError
from ..handoff import ControllerHandle, Handoff
from ..statevector import CapacityError
from .jobs import Job, JobResults, JobState
from .store import JobStore

log = logging.getLogger(__name__)

MAX_SHOTS = 1_000_000


class QOSError(Exception):
    """An error reported back to the requesting client as ``code`` + message."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code
        self.message = message


class MigrationError(AssertionError):
    """A dispatch targeted a backend other than the job's pinned one."""


@dataclass(frozen=True)
class SubmitRequest:
    client_id: str
    backend_id: str
    schedule: bytes
    sealed_metadata: bytes
    client_ephemeral_public: bytes
    shots: int
    idempotency_token: str | None = None


@dataclass(frozen=True)
class FetchResult:
    state: str
    results: JobResults | None = None


@dataclass
class _Lane:
    controller: ControllerHandle
    wake: threading.Event = field(default_factory=threading.Event)
    thread: threading.Thread | None = None


class QOSService:
    def __init__(
        self,
        store: JobStore,
        backends: Mapping[str, BackendDescriptor] | list[BackendDescriptor],
        controllers: Mapping[str, ControllerHandle] | None = None,
    ) -> None:
        if not isinstance(backends, Mapping):
            backends = {b.backend_id: b for b in backends}
        self.store = store
        self.backends = dict(backends)
        self._lanes = {bid: _Lane(c) for bid, c in (controllers or {}).items()}
        for bid in self._lanes:
            if bid not in self.backends:
                raise ValueError(f"controller for unknown backend {bid!r}")
        self._stop = threading.Event()
        self._trace_lock = threading.Lock()
        # (job_id, pinned backend, controller backend) per dispatch
        self.dispatch_log: list[tuple[str, str, str]] = []
        self.completions: dict[str, list[str]] = {bid: [] for bid in self.backends}

    # -- intake ------------------------------------------------------------------

    def handle_submit(self, req: SubmitRequest) -> str:
        if req.idempotency_token:
            prior = self.store.job_for_token(req.idempotency_token)
            if prior is not None:
                if prior.client_id != req.client_id:
                    raise QOSError("unauthorized", "idempotency token belongs to another client")
                return prior.job_id
        backend = self.backends.get(req.backend_id)
        if backend is None:
            raise QOSError("unknown-backend", f"unknown backend {req.backend_id!r}")
        schedule = self._check_schedule(req.schedule, backend)
        try:
            sealed = SealedBlob.from_bytes(req.sealed_metadata)
        except EncodingError as exc:
            raise QOSError("bad-request", f"malformed sealed metadata: {exc}") from None
        if len(req.client_ephemeral_public) != PUBLIC_KEY_SIZE:
            raise QOSError("bad-request", "malformed client ephemeral public key")
        if not 1 <= req.shots <= MAX_SHOTS:
            raise QOSError("bad-request", f"shots must be in 1..{MAX_SHOTS}")

        def build(seq: int) -> Job:
            return Job(
                job_id=f"job-{seq:06d}",
                client_id=req.client_id,
                backend_id=backend.backend_id,
                obf_schedule=schedule,
                sealed_metadata=sealed,
                client_ephemeral_public=bytes(req.client_ephemeral_public),
                shots=req.shots,
                submitted_at=seq,
                state=JobState.QUEUED,
                idempotency_token=req.idempotency_token or None,
            )

        job, created = self.store.create(build, req.idempotency_token)
        if not created:
            if job.client_id != req.client_id:
                raise QOSError("unauthorized", "idempotency token belongs to another client")
            return job.job_id
        log.info("accepted %s for %s", job.job_id, job.backend_id)
        lane = self._lanes.get(job.backend_id)
        if lane is not None:
            lane.wake.set()
        return job.job_id

    @staticmethod
    def _check_schedule(data: bytes, backend: BackendDescriptor) -> PulseSchedule:
        try:
            schedule = decode_schedule(data)
        except EncodingError as exc:
            raise QOSError("malformed-schedule", str(exc)) from None
        problems = check_schedule(schedule)
        if schedule.num_qubits > backend.num_qubits:
            problems.append(
                f"schedule needs {schedule.num_qubits} qubits, backend has {backend.num_qubits}"
            )
        unsupported = {s.op.opcode for s in schedule.slots} - backend.supported_opcodes
        if unsupported:
            problems.append("unsupported opcodes: " + ", ".join(sorted(o.value for o in unsupported)))
        if problems:
            raise QOSError("malformed-schedule", "; ".join(problems))
        return schedule

    # -- scheduling ----------------------------------------------------------------

    def schedule_next(self, backend_id: str) -> Job | None:
        if backend_id not in self.backends:
            raise QOSError("unknown-backend", f"unknown backend {backend_id!r}")
        job = self.store.claim_next(backend_id)
        if job is not None and job.backend_id != backend_id:
            raise MigrationError(f"{job.job_id} is pinned to {job.backend_id}, not {backend_id}")
        return job

    # -- dispatch -------------------------------------------------------------------

    def dispatch_and_collect(self, job: Job, controller: ControllerHandle) -> Job:
        if job.state is not JobState.RUNNING:
            raise ValueError(f"{job.job_id} is {job.state.value}, not Running")
        with self._trace_lock:
            self.dispatch_log.append((job.job_id, job.backend_id, controller.backend_id))
        if controller.backend_id != job.backend_id:
            raise MigrationError(
                f"{job.job_id} pinned to {job.backend_id} dispatched to {controller.backend_id}"
            )
        handoff = Handoff(
            job_id=job.job_id,
            backend_id=job.backend_id,
            schedule=job.obf_schedule,
            sealed_metadata=job.sealed_metadata,
            client_ephemeral_public=job.client_ephemeral_public,
            shots=job.shots,
        )
        try:
            result = controller.run(handoff)
        except AuthenticationFailure:
            log.warning("%s: sealed metadata rejected by %s", job.job_id, job.backend_id)
            return self.store.set_state(job.job_id, JobState.FAILED, "metadata-auth")
        except CapacityError:
            return self.store.set_state(job.job_id, JobState.FAILED, "capacity")
        except MigrationError:
            raise
        except Exception:
            log.exception("%s: controller error", job.job_id)
            return self.store.set_state(job.job_id, JobState.FAILED, "controller-error")
        if len(result.bitstrings) != job.shots:
            return self.store.set_state(job.job_id, JobState.FAILED, "controller-error")
        done = self.store.record_results(
            job.job_id, JobResults(tuple(result.bitstrings), result.sealed_output_metadata)
        )
        with self._trace_lock:
            self.completions[job.backend_id].append(job.job_id)
        return done

    def run_once(self, backend_id: str) -> Job | None:
        """Schedule and run one job on ``backend_id`` in the calling thread."""
        job = self.schedule_next(backend_id)
        if job is None:
            return None
        return self.dispatch_and_collect(job, self._lanes[backend_id].controller)

    def drain(self) -> int:
        """Run every queued job serially, backend by backend.  Returns the count."""
        ran = 0
        for backend_id in self._lanes:
            while self.run_once(backend_id) is not None:
                ran += 1
        return ran

    # -- fetch ----------------------------------------------------------------------

    def _owned(self, job_id: str, requester: str) -> Job:
        job = self.store.get(job_id)
        if job is None:
            raise QOSError("unknown-job", f"unknown job {job_id!r}")
        if job.client_id != requester:
            raise QOSError("unauthorized", f"job {job_id} belongs to another client")
        return job

    def handle_status(self, job_id: str, requester: str) -> str:
        return self._owned(job_id, requester).state_label

    def handle_fetch(self, job_id: str, requester: str) -> FetchResult:
        job = self._owned(job_id, requester)
        if job.state is JobState.DONE:
            return FetchResult(job.state_label, job.results)
        return FetchResult(job.state_label)

    # -- executor lanes ----------------------------------------------------------------

    def start(self) -> None:
        """One serial executor thread per backend that has a controller."""
        self._stop.clear()
        for backend_id, lane in self._lanes.items():
            if lane.thread is not None and lane.thread.is_alive():
                continue
            lane.thread = threading.Thread(
                target=self._lane_loop, args=(backend_id, lane), name=f"lane-{backend_id}", daemon=True
            )
            lane.thread.start()
            lane.wake.set()

    def _lane_loop(self, backend_id: str, lane: _Lane) -> None:
        while not self._stop.is_set():
            lane.wake.clear()
            try:
                job = self.schedule_next(backend_id)
                if job is not None:
                    self.dispatch_and_collect(job, lane.controller)
                    continue
            except Exception:
                log.exception("lane %s stopped", backend_id)
                return
            lane.wake.wait(0.25)

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        for lane in self._lanes.values():
            lane.wake.set()
        for lane in self._lanes.values():
            if lane.thread is not None:
                lane.thread.join(timeout)
                lane.thread = None
