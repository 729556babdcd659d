"""Fault injection for the journal write path."""

from __future__ import annotations

from pathlib import Path
from typing import BinaryIO


class SimulatedCrash(Exception):
    """The process "died" in the middle of a journal append."""


class TornWriteInjector:
    """Opener for :class:`~qtee_qos.qos.store.JobStore` that tears one append.

    Appends are counted across every file it opens.  On append number
    ``crash_on_append`` (1-based) only ``keep_bytes`` of the record reach the
    file (default: half of it), then :class:`SimulatedCrash` is raised and every
    later write fails too, as if the process were gone.
    """

    def __init__(self, crash_on_append: int, keep_bytes: int | None = None) -> None:
        self.crash_on_append = crash_on_append
        self.keep_bytes = keep_bytes
        self.appends = 0
        self.crashed = False

    def __call__(self, path: Path, mode: str) -> BinaryIO:
        return _TearingFile(open(path, mode), self)


class _TearingFile:
    def __init__(self, fh: BinaryIO, injector: TornWriteInjector) -> None:
        self._fh = fh
        self._inj = injector

    def write(self, data: bytes) -> int:
        inj = self._inj
        if inj.crashed:
            raise SimulatedCrash("process is gone")
        inj.appends += 1
        if inj.appends == inj.crash_on_append:
            keep = len(data) // 2 if inj.keep_bytes is None else min(inj.keep_bytes, len(data))
            self._fh.write(data[:keep])
            self._fh.flush()
            inj.crashed = True
            raise SimulatedCrash(f"torn write: {keep}/{len(data)} bytes of append {inj.appends}")
        return self._fh.write(data)

    def flush(self) -> None:
        self._fh.flush()

    def fileno(self) -> int:
        return self._fh.fileno()

    def close(self) -> None:
        self._fh.close()

    @property
    def closed(self) -> bool:
        return self._fh.closed
