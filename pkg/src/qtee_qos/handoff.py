"""The contract between the QOS dispatcher and a backend's trusted controller.

A :class:`Handoff` is the only way a schedule reaches a controller, and it
always carries the sealed metadata with it.  Likewise a
:class:`ControllerResult` pairs the flipped outcomes with their sealed masks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .circuit import PulseSchedule
from .crypto import SealedBlob


@dataclass(frozen=True)
class Handoff:
    job_id: str
    backend_id: str
    schedule: PulseSchedule
    sealed_metadata: SealedBlob
    client_ephemeral_public: bytes
    shots: int


@dataclass(frozen=True)
class ControllerResult:
    bitstrings: tuple[str, ...]
    sealed_output_metadata: SealedBlob


class ControllerHandle(Protocol):
    @property
    def backend_id(self) -> str: ...

    def run(self, handoff: Handoff) -> ControllerResult: ...
