"""Durable job store: an append-only journal plus periodic full snapshots.

Layout of a storage directory::

    journal.log    records appended since the last snapshot
    snapshot.bin   full state as of some journal sequence number (LSN)

Journal record::

    u32 length | u8 type | u64 lsn | tagged fields | u32 crc32(type..fields)

``length`` covers type, lsn and fields.  A record whose bytes run past the end
of the file, or a final record whose checksum fails, is a torn write and is
discarded on recovery.  A checksum failure anywhere before the last record is
corruption of committed data and stops recovery with the offending offset.

Every mutation is appended and fsynced before it is applied in memory, so an
exception from the write path leaves memory at the last committed state.
"""

from __future__ import annotations

import bisect
import logging
import os
import threading
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Any, BinaryIO, Callable, Iterator

from ..crypto import SealedBlob
from ..encoding import EncodingError, Reader, Writer, decode_fields, encode_fields
from .jobs import InvalidTransition, Job, JobResults, JobState

log = logging.getLogger(__name__)

REC_JOB = 1
REC_STATE = 2
REC_RESULTS = 3

JOURNAL = "journal.log"
SNAPSHOT = "snapshot.bin"
_SNAPSHOT_MAGIC = b"QSNP\x01"

DEFAULT_SNAPSHOT_EVERY = 256
TOKEN_RETENTION = 10_000

Opener = Callable[[Path, str], BinaryIO]


class RecoveryError(RuntimeError):
    def __init__(self, path: Path, offset: int, message: str) -> None:
        super().__init__(f"{path}: {message} at offset {offset}")
        self.path = path
        self.offset = offset


def _default_opener(path: Path, mode: str) -> BinaryIO:
    return open(path, mode)


def _frame(rtype: int, lsn: int, fields: dict[str, Any]) -> bytes:
    payload = Writer().u8(rtype).u64(lsn).raw(encode_fields(fields)).getvalue()
    return Writer().u32(len(payload)).raw(payload).u32(zlib.crc32(payload)).getvalue()


def scan_journal(path: Path) -> tuple[list[tuple[int, int, int, dict[str, Any]]], int]:
    """Parse committed records.

    Returns ``([(offset, type, lsn, fields), ...], valid_length)``.
    """
    data = path.read_bytes() if path.exists() else b""
    records = []
    pos = 0
    size = len(data)
    while pos < size:
        if size - pos < 4:
            log.warning("discarding %d-byte torn header at offset %d", size - pos, pos)
            break
        length = int.from_bytes(data[pos : pos + 4], "big")
        end = pos + 4 + length + 4
        if length < 1 + 8 + 2 or end > size:
            if end > size:
                log.warning("discarding torn record at offset %d", pos)
                break
            raise RecoveryError(path, pos, f"impossible record length {length}")
        payload = data[pos + 4 : pos + 4 + length]
        crc = int.from_bytes(data[end - 4 : end], "big")
        if zlib.crc32(payload) != crc:
            if end == size:
                log.warning("discarding final record with bad checksum at offset %d", pos)
                break
            raise RecoveryError(path, pos, "checksum mismatch in committed record")
        r = Reader(payload)
        try:
            rtype = r.u8()
            lsn = r.u64()
            fields = decode_fields(r.raw(r.remaining))
        except EncodingError as exc:
            raise RecoveryError(path, pos, f"undecodable record: {exc}") from None
        records.append((pos, rtype, lsn, fields))
        pos = end
    return records, pos


class JobStore:
    """Thread-safe job store; all mutations go through one lock (single writer)."""

    def __init__(
        self,
        path: str | os.PathLike,
        *,
        snapshot_every: int = DEFAULT_SNAPSHOT_EVERY,
        fsync: bool = True,
        opener: Opener | None = None,
    ) -> None:
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.snapshot_every = snapshot_every
        self._fsync = fsync
        self._opener = opener or _default_opener
        self._lock = threading.RLock()
        self._jobs: dict[str, Job] = {}
        self._queues: dict[str, list[tuple[int, str]]] = {}
        self._tokens: OrderedDict[str, str] = OrderedDict()
        self._next_seq = 1
        self._lsn = 0
        self._since_snapshot = 0
        self._load()
        self._fh = self._opener(self.path / JOURNAL, "ab")

    # -- recovery ----------------------------------------------------------------

    def _load(self) -> None:
        snap_lsn = self._load_snapshot()
        journal = self.path / JOURNAL
        records, valid = scan_journal(journal)
        if journal.exists() and valid < journal.stat().st_size:
            with open(journal, "r+b") as fh:
                fh.truncate(valid)
                fh.flush()
                os.fsync(fh.fileno())
        for offset, rtype, lsn, fields in records:
            if lsn <= snap_lsn:
                continue  # already folded into the snapshot
            try:
                self._apply(rtype, fields)
            except (EncodingError, KeyError, ValueError, InvalidTransition) as exc:
                raise RecoveryError(journal, offset, f"record does not apply: {exc}") from None
            self._lsn = lsn
            self._since_snapshot += 1
        self._lsn = max(self._lsn, snap_lsn)
        for job in list(self._jobs.values()):
            if job.state is JobState.RUNNING:
                log.info("demoting %s from Running to Queued", job.job_id)
                self._put(job.demoted())

    def _load_snapshot(self) -> int:
        snap = self.path / SNAPSHOT
        if not snap.exists():
            return 0
        data = snap.read_bytes()
        if len(data) < len(_SNAPSHOT_MAGIC) + 4 or not data.startswith(_SNAPSHOT_MAGIC):
            raise RecoveryError(snap, 0, "not a snapshot file")
        body, crc = data[:-4], int.from_bytes(data[-4:], "big")
        if zlib.crc32(body) != crc:
            raise RecoveryError(snap, 0, "snapshot checksum mismatch")
        r = Reader(body[len(_SNAPSHOT_MAGIC) :])
        try:
            lsn = r.u64()
            self._next_seq = r.u64()
            for _ in range(r.u32()):
                self._put(Job.from_fields(decode_fields(r.blob())))
            for _ in range(r.u32()):
                token, job_id = r.text(), r.text()
                self._remember_token(token, job_id)
            r.expect_end()
        except EncodingError as exc:
            raise RecoveryError(snap, 0, f"undecodable snapshot: {exc}") from None
        return lsn

    # -- in-memory state ---------------------------------------------------------

    def _put(self, job: Job) -> None:
        old = self._jobs.get(job.job_id)
        queue = self._queues.setdefault(job.backend_id, [])
        key = (job.submitted_at, job.job_id)
        was_queued = old is not None and old.state is JobState.QUEUED
        if was_queued and job.state is not JobState.QUEUED:
            i = bisect.bisect_left(queue, key)
            if i < len(queue) and queue[i] == key:
                del queue[i]
        elif job.state is JobState.QUEUED and not was_queued:
            bisect.insort(queue, key)
        self._jobs[job.job_id] = job

    def _remember_token(self, token: str, job_id: str) -> None:
        self._tokens[token] = job_id
        self._tokens.move_to_end(token)
        while len(self._tokens) > TOKEN_RETENTION:
            self._tokens.popitem(last=False)

    def _apply(self, rtype: int, f: dict[str, Any]) -> None:
        if rtype == REC_JOB:
            job = Job.from_fields(f)
            if job.job_id in self._jobs:
                raise EncodingError(f"duplicate job record {job.job_id}")
            self._put(job)
            self._next_seq = max(self._next_seq, job.submitted_at + 1)
            if job.idempotency_token:
                self._remember_token(job.idempotency_token, job.job_id)
        elif rtype == REC_STATE:
            job = self._jobs[f["job_id"]]
            self._put(job.transition(JobState(f["state"]), f.get("reason")))
        elif rtype == REC_RESULTS:
            job = self._jobs[f["job_id"]]
            results = JobResults(
                tuple(f["bitstrings"]), SealedBlob.from_bytes(f["sealed_output_metadata"])
            )
            self._put(job.transition(JobState.DONE, None, results))
        else:
            raise EncodingError(f"unknown record type {rtype}")

    # -- write path ------------------------------------------------------------------

    def _commit(self, rtype: int, fields: dict[str, Any]) -> None:
        lsn = self._lsn + 1
        record = _frame(rtype, lsn, fields)
        self._fh.write(record)
        self._fh.flush()
        if self._fsync:
            os.fsync(self._fh.fileno())
        self._apply(rtype, fields)
        self._lsn = lsn
        self._since_snapshot += 1
        if self.snapshot_every and self._since_snapshot >= self.snapshot_every:
            self.snapshot()

    def snapshot(self) -> None:
        """Write the full state atomically and start an empty journal."""
        with self._lock:
            w = Writer().raw(_SNAPSHOT_MAGIC).u64(self._lsn).u64(self._next_seq)
            jobs = sorted(self._jobs.values(), key=lambda j: j.submitted_at)
            w.u32(len(jobs))
            for job in jobs:
                w.blob(encode_fields(job.to_fields()))
            w.u32(len(self._tokens))
            for token, job_id in self._tokens.items():
                w.text(token).text(job_id)
            body = w.getvalue()
            tmp = self.path / (SNAPSHOT + ".tmp")
            with open(tmp, "wb") as fh:
                fh.write(body + zlib.crc32(body).to_bytes(4, "big"))
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path / SNAPSHOT)
            self._fsync_dir()
            # a crash before the truncate leaves records the snapshot already covers;
            # recovery skips them by LSN
            self._fh.close()
            self._fh = self._opener(self.path / JOURNAL, "wb")
            self._since_snapshot = 0

    def _fsync_dir(self) -> None:
        try:
            fd = os.open(self.path, os.O_RDONLY)
        except OSError:
            return
        try:
            os.fsync(fd)
        finally:
            os.close(fd)

    def create(self, build: Callable[[int], Job], token: str | None = None) -> tuple[Job, bool]:
        """Allocate the next sequence number, build the job with it, persist it.

        If ``token`` is already known the original job is returned instead and
        the flag is False.
        """
        with self._lock:
            if token and token in self._tokens and self._tokens[token] in self._jobs:
                return self._jobs[self._tokens[token]], False
            job = build(self._next_seq)
            if job.job_id in self._jobs:
                raise ValueError(f"job id {job.job_id} already exists")
            self._commit(REC_JOB, job.to_fields())
            return self._jobs[job.job_id], True

    def set_state(self, job_id: str, state: JobState, reason: str | None = None) -> Job:
        with self._lock:
            self._jobs[job_id].transition(state, reason)  # validate before writing
            self._commit(REC_STATE, {"job_id": job_id, "state": state.value, "reason": reason})
            return self._jobs[job_id]

    def record_results(self, job_id: str, results: JobResults) -> Job:
        with self._lock:
            self._jobs[job_id].transition(JobState.DONE, None, results)
            self._commit(
                REC_RESULTS,
                {
                    "job_id": job_id,
                    "bitstrings": list(results.bitstrings),
                    "sealed_output_metadata": results.sealed_output_metadata.to_bytes(),
                },
            )
            return self._jobs[job_id]

    def claim_next(self, backend_id: str) -> Job | None:
        """Mark the oldest Queued job pinned to ``backend_id`` Running and return it."""
        with self._lock:
            queue = self._queues.get(backend_id)
            if not queue:
                return None
            _, job_id = queue[0]
            return self.set_state(job_id, JobState.RUNNING)

    # -- reads -----------------------------------------------------------------------

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def job_for_token(self, token: str) -> Job | None:
        with self._lock:
            job_id = self._tokens.get(token)
            return None if job_id is None else self._jobs.get(job_id)

    def queued(self, backend_id: str) -> list[str]:
        with self._lock:
            return [job_id for _, job_id in self._queues.get(backend_id, [])]

    def jobs(self) -> list[Job]:
        """All jobs in submission order."""
        with self._lock:
            return sorted(self._jobs.values(), key=lambda j: j.submitted_at)

    def __iter__(self) -> Iterator[Job]:
        return iter(self.jobs())

    def __len__(self) -> int:
        with self._lock:
            return len(self._jobs)

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self) -> JobStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def recover_store(storage_path: str | os.PathLike, **kwargs) -> JobStore:
    """Open a store directory, replaying snapshot and journal."""
    return JobStore(storage_path, **kwargs)
