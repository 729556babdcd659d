"""Simulated trust boundary of one quantum machine.

Everything that touches plaintext obfuscation metadata, the backend static
secret or flip masks lives here.  The QOS service never imports this module;
the deployment wiring hands it a :class:`TrustedController` as an opaque lane
handle.

Output randomization is applied as ``outcome XOR mask`` after sampling.  An X
on qubit ``q`` right before a computational-basis measurement maps outcome
bit ``b`` to ``1 - b`` deterministically, so flipping the sampled bit has the
same law as appending the gate and is cheaper.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .circuit import BackendDescriptor, Circuit, PulseSchedule, schedule_digest
from .crypto import (
    AuthenticationFailure,
    KeyAgreementError,
    SealedBlob,
    derive_controller_key,
    metadata_associated_data,
    open_blob,
    output_associated_data,
    seal,
)
from .encoding import EncodingError, Reader, Writer
from .handoff import ControllerResult, Handoff
from .obfuscation import (
    ChannelPermutation,
    ObfuscationMetadata,
    apply_permutation,
    naive_interpret,
    remove_slots,
)
from .statevector import DEFAULT_MAX_QUBITS, sample_shots, simulate_probabilities


class IntegrityError(RuntimeError):
    """Authentic metadata that does not fit its schedule; treated as fatal."""


@dataclass(frozen=True, repr=False)
class DeobfuscationPlan:
    dummy_slot_indices: tuple[int, ...]
    inverse_channel_permutation: ChannelPermutation
    response_key: bytes
    shots: int
    job_id: str

    def __repr__(self) -> str:
        # never render key material or the plan contents
        return f"DeobfuscationPlan(job_id={self.job_id!r}, shots={self.shots})"

    def __reduce__(self):
        raise TypeError("DeobfuscationPlan cannot be serialized")


@dataclass(frozen=True)
class OutputMetadata:
    flip_masks: tuple[str, ...]
    num_qubits: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "flip_masks", tuple(self.flip_masks))
        if any(len(m) != self.num_qubits or set(m) - {"0", "1"} for m in self.flip_masks):
            raise ValueError("every mask must be a bitstring of width num_qubits")

    def encode(self) -> bytes:
        w = Writer().raw(b"QOUT").u32(self.num_qubits).u32(len(self.flip_masks))
        width = (self.num_qubits + 7) // 8
        for m in self.flip_masks:
            # left-aligned, qubit 0 in the top bit of the first byte
            w.raw(int(m.ljust(width * 8, "0"), 2).to_bytes(width, "big"))
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> OutputMetadata:
        r = Reader(data)
        if r.raw(4) != b"QOUT":
            raise EncodingError("not an output metadata encoding")
        n = r.u32()
        count = r.u32()
        width = (n + 7) // 8
        if count * width > r.remaining:
            raise EncodingError("mask count exceeds payload")
        masks = []
        for _ in range(count):
            bits = format(int.from_bytes(r.raw(width), "big"), f"0{width * 8}b")
            masks.append(bits[:n])
        r.expect_end()
        return cls(tuple(masks), n)


def ingest(
    obf_schedule: PulseSchedule,
    sealed_metadata: SealedBlob,
    client_ephemeral_public: bytes,
    job_id: str,
    shots: int,
    backend_keys: tuple[str, bytes],
) -> DeobfuscationPlan:
    """Open the sealed metadata for ``obf_schedule`` on this backend.

    ``backend_keys`` is ``(backend_id, static_secret)``.  Any mismatch (wrong
    backend, substituted schedule, tampered blob, malformed key) surfaces as
    the same bare :class:`AuthenticationFailure`.
    """
    backend_id, static_secret = backend_keys
    try:
        key = derive_controller_key(static_secret, client_ephemeral_public, backend_id)
    except KeyAgreementError:
        raise AuthenticationFailure() from None
    digest = schedule_digest(obf_schedule)
    plaintext = open_blob(sealed_metadata, key, metadata_associated_data(backend_id, digest))
    try:
        meta = ObfuscationMetadata.decode(plaintext)
    except EncodingError:
        raise AuthenticationFailure() from None
    if meta.backend_id != backend_id or meta.schedule_digest != digest:
        raise AuthenticationFailure()
    return DeobfuscationPlan(
        meta.dummy_slot_indices,
        meta.channel_permutation.inverse(),
        meta.response_key,
        shots,
        job_id,
    )


def deobfuscate(obf_schedule: PulseSchedule, plan: DeobfuscationPlan) -> Circuit:
    try:
        kept = remove_slots(obf_schedule, plan.dummy_slot_indices)
    except IndexError:
        raise IntegrityError("dummy index outside the schedule") from None
    if len(plan.inverse_channel_permutation.drive) != obf_schedule.num_qubits:
        raise IntegrityError("permutation does not match schedule width")
    return naive_interpret(apply_permutation(kept, plan.inverse_channel_permutation))


def execute_shots_with_flips(
    circuit: Circuit,
    shots: int,
    rng: np.random.Generator,
    max_qubits: int = DEFAULT_MAX_QUBITS,
) -> tuple[list[str], OutputMetadata]:
    """Sample ``shots`` outcomes, then draw one uniform flip mask per shot.

    Outcomes are drawn before any mask, so they match ``sample_shots`` on a
    generator in the same state.
    """
    dist = simulate_probabilities(circuit, max_qubits)
    outcomes = sample_shots(dist, shots, rng)
    n = circuit.num_qubits
    bits = rng.integers(0, 2, size=(shots, n))
    masks = ["".join("1" if b else "0" for b in row) for row in bits]
    flipped = [recover_xor(o, m) for o, m in zip(outcomes, masks)]
    return flipped, OutputMetadata(tuple(masks), n)


def recover_xor(a: str, b: str) -> str:
    if len(a) != len(b):
        raise ValueError(f"width mismatch: {len(a)} vs {len(b)}")
    return "".join("1" if x != y else "0" for x, y in zip(a, b))


def seal_output_metadata(
    masks: OutputMetadata,
    response_key: bytes,
    job_id: str,
    rng: np.random.Generator | None = None,
) -> SealedBlob:
    return seal(
        masks.encode(),
        response_key,
        output_associated_data(job_id),
        rng,
        key_id=f"response/{job_id}",
    )


class TrustedController:
    """One controller lane per backend, processing one handoff at a time.

    ``seed`` switches on harness mode: the shot generator for each job is
    derived from ``(seed, job_id)`` (see :func:`job_rng`), so tests can align a
    direct simulation run with the pipeline bit for bit.
    """

    def __init__(
        self,
        backend: BackendDescriptor,
        static_secret: bytes,
        *,
        seed: int | None = None,
        max_qubits: int = DEFAULT_MAX_QUBITS,
    ) -> None:
        self.backend = backend
        self.max_qubits = max_qubits
        self._seed = seed
        secret = bytes(static_secret)
        # closure keeps the secret off the instance dict
        self._keys = lambda: (backend.backend_id, secret)

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def __repr__(self) -> str:
        return f"TrustedController({self.backend_id!r})"

    def _rng(self, job_id: str) -> tuple[np.random.Generator, np.random.Generator | None]:
        if self._seed is None:
            return np.random.default_rng(), None
        rng = job_rng(self._seed, job_id)
        return rng, rng

    def run(self, handoff: Handoff) -> ControllerResult:
        if handoff.backend_id != self.backend_id:
            raise AssertionError(
                f"job {handoff.job_id} pinned to {handoff.backend_id} reached {self.backend_id}"
            )
        plan = ingest(
            handoff.schedule,
            handoff.sealed_metadata,
            handoff.client_ephemeral_public,
            handoff.job_id,
            handoff.shots,
            self._keys(),
        )
        circuit = deobfuscate(handoff.schedule, plan)
        shot_rng, nonce_rng = self._rng(handoff.job_id)
        flipped, masks = execute_shots_with_flips(circuit, plan.shots, shot_rng, self.max_qubits)
        sealed = seal_output_metadata(masks, plan.response_key, plan.job_id, nonce_rng)
        return ControllerResult(tuple(flipped), sealed)


def job_rng(seed: int, job_id: str) -> np.random.Generator:
    """Harness-mode shot generator for ``job_id`` under controller seed ``seed``."""
    tag = int.from_bytes(hashlib.sha256(job_id.encode("utf-8")).digest()[:8], "big")
    return np.random.default_rng([seed, tag])
