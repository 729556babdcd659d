"""Client-side schedule obfuscation and the metadata that undoes it.

Two transforms, composed in a fixed order (dummies first, then relabeling):

* dummy insertion: extra single-qubit drive pulses at uniform positions; the
  trusted controller attenuates them, which in this slot model is deletion.
* channel relabeling: a uniformly drawn permutation of the drive channels and
  an independent one of the control channels present in the schedule.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    Channel,
    ChannelKind,
    Circuit,
    Control,
    Drive,
    Gate,
    Op,
    Opcode,
    PulseSchedule,
    Slot,
    read_channel,
    schedule_digest,
    write_channel,
)
from .encoding import EncodingError, Reader, Writer

DEFAULT_DUMMY_POOL = frozenset({Opcode.X, Opcode.H, Opcode.RZ})


class Scheme(str, enum.Enum):
    DUMMY_ONLY = "dummy-only"
    SWAP_ONLY = "swap-only"
    COMBINED = "combined"


@dataclass(frozen=True)
class ObfuscationParams:
    dummy_count: int = 0
    dummy_opcode_pool: frozenset[Opcode] = DEFAULT_DUMMY_POOL
    enable_swap: bool = False
    scheme_label: Scheme = Scheme.COMBINED

    def __post_init__(self) -> None:
        pool = frozenset(Opcode(o) for o in self.dummy_opcode_pool)
        object.__setattr__(self, "dummy_opcode_pool", pool)
        object.__setattr__(self, "scheme_label", Scheme(self.scheme_label))
        if self.dummy_count < 0:
            raise ValueError("dummy_count must be non-negative")
        if self.dummy_count > 0 and not pool:
            raise ValueError("dummy_opcode_pool is empty")
        if any(op.arity != 1 for op in pool):
            raise ValueError("dummy pool may only hold single-qubit opcodes")

    @classmethod
    def for_scheme(
        cls,
        scheme: Scheme | str,
        num_qubits: int,
        dummy_count: int | None = None,
        pool: frozenset[Opcode] = DEFAULT_DUMMY_POOL,
    ) -> ObfuscationParams:
        """Parameters for a named scheme.  The default dummy count, 3 per qubit,
        is an arbitrary starting point rather than a security level."""
        scheme = Scheme(scheme)
        if scheme is Scheme.SWAP_ONLY:
            return cls(0, pool, True, scheme)
        count = 3 * num_qubits if dummy_count is None else dummy_count
        return cls(count, pool, scheme is Scheme.COMBINED, scheme)


@dataclass(frozen=True)
class ChannelPermutation:
    """``drive[q]`` is the image of ``Drive(q)``; ``control`` lists (source, image) pairs."""

    drive: tuple[int, ...]
    control: tuple[tuple[tuple[int, int], tuple[int, int]], ...] = ()
    _control_map: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        drive = tuple(int(q) for q in self.drive)
        if sorted(drive) != list(range(len(drive))):
            raise ValueError("drive permutation is not a bijection")
        control = tuple(sorted((tuple(a), tuple(b)) for a, b in self.control))
        sources = [a for a, _ in control]
        images = [b for _, b in control]
        if len(set(sources)) != len(sources) or sorted(sources) != sorted(images):
            raise ValueError("control permutation is not a bijection on its channels")
        object.__setattr__(self, "drive", drive)
        object.__setattr__(self, "control", control)
        object.__setattr__(self, "_control_map", dict(control))

    @classmethod
    def identity(cls, num_qubits: int) -> ChannelPermutation:
        return cls(tuple(range(num_qubits)))

    @property
    def is_identity(self) -> bool:
        return self.drive == tuple(range(len(self.drive))) and all(a == b for a, b in self.control)

    def __call__(self, ch: Channel) -> Channel:
        if ch.kind is ChannelKind.DRIVE:
            return Drive(self.drive[ch.qubits[0]])
        return Control(*self._control_map.get(ch.qubits, ch.qubits))

    def inverse(self) -> ChannelPermutation:
        inv = [0] * len(self.drive)
        for q, image in enumerate(self.drive):
            inv[image] = q
        return ChannelPermutation(tuple(inv), tuple((b, a) for a, b in self.control))

    def encode(self, w: Writer) -> None:
        w.u32(len(self.drive))
        for q in self.drive:
            w.u32(q)
        w.u32(len(self.control))
        for a, b in self.control:
            write_channel(w, Control(*a))
            write_channel(w, Control(*b))

    @classmethod
    def decode(cls, r: Reader) -> ChannelPermutation:
        drive = tuple(r.u32() for _ in range(r.u32()))
        pairs = []
        for _ in range(r.u32()):
            a, b = read_channel(r), read_channel(r)
            if a.kind is not ChannelKind.CONTROL or b.kind is not ChannelKind.CONTROL:
                raise EncodingError("control permutation entry is not a control channel")
            pairs.append((a.qubits, b.qubits))
        try:
            return cls(drive, tuple(pairs))
        except ValueError as exc:
            raise EncodingError(str(exc)) from None


@dataclass(frozen=True)
class ObfuscationMetadata:
    dummy_slot_indices: tuple[int, ...]
    channel_permutation: ChannelPermutation
    response_key: bytes
    backend_id: str
    schedule_digest: bytes

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.dummy_slot_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])) or any(i < 0 for i in idx):
            raise ValueError("dummy indices must be non-negative and strictly increasing")
        object.__setattr__(self, "dummy_slot_indices", idx)

    def encode(self) -> bytes:
        w = Writer().raw(b"QMET")
        w.u32(len(self.dummy_slot_indices))
        for i in self.dummy_slot_indices:
            w.u32(i)
        self.channel_permutation.encode(w)
        w.blob(self.response_key).text(self.backend_id).blob(self.schedule_digest)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> ObfuscationMetadata:
        r = Reader(data)
        if r.raw(4) != b"QMET":
            raise EncodingError("not an obfuscation metadata encoding")
        indices = tuple(r.u32() for _ in range(r.u32()))
        perm = ChannelPermutation.decode(r)
        response_key = r.blob()
        backend_id = r.text()
        digest = r.blob()
        r.expect_end()
        try:
            return cls(indices, perm, response_key, backend_id, digest)
        except ValueError as exc:
            raise EncodingError(str(exc)) from None


def insert_dummies(
    schedule: PulseSchedule, params: ObfuscationParams, rng: np.random.Generator
) -> tuple[PulseSchedule, tuple[int, ...]]:
    """Insert ``params.dummy_count`` dummy drive pulses; returns the new schedule
    and the sorted positions of the dummies in it."""
    entries: list[tuple[Slot, bool]] = [(s, False) for s in schedule.slots]
    pool = sorted(params.dummy_opcode_pool, key=lambda o: o.value)
    for _ in range(params.dummy_count):
        opcode = pool[int(rng.integers(len(pool)))]
        q = int(rng.integers(schedule.num_qubits))
        param = float(rng.uniform(0.0, 2 * math.pi)) if opcode.parametric else None
        pos = int(rng.integers(len(entries) + 1))
        entries.insert(pos, (Slot(Drive(q), Op(opcode, param)), True))
    indices = tuple(i for i, (_, dummy) in enumerate(entries) if dummy)
    return PulseSchedule(schedule.num_qubits, tuple(s for s, _ in entries)), indices


def draw_permutation(schedule: PulseSchedule, rng: np.random.Generator) -> ChannelPermutation:
    drive = tuple(int(q) for q in rng.permutation(schedule.num_qubits))
    present = [ch.qubits for ch in schedule.channels(ChannelKind.CONTROL)]
    order = rng.permutation(len(present)) if present else []
    control = tuple((present[i], present[int(j)]) for i, j in enumerate(order))
    return ChannelPermutation(drive, control)


def apply_permutation(schedule: PulseSchedule, perm: ChannelPermutation) -> PulseSchedule:
    return PulseSchedule(schedule.num_qubits, tuple(Slot(perm(s.channel), s.op) for s in schedule.slots))


def permute_channels(
    schedule: PulseSchedule, enable: bool, rng: np.random.Generator
) -> tuple[PulseSchedule, ChannelPermutation]:
    if not enable:
        return schedule, ChannelPermutation.identity(schedule.num_qubits)
    perm = draw_permutation(schedule, rng)
    return apply_permutation(schedule, perm), perm


def remove_slots(schedule: PulseSchedule, indices) -> PulseSchedule:
    drop = set(indices)
    if any(not 0 <= i < len(schedule.slots) for i in drop):
        raise IndexError("slot index out of range")
    kept = tuple(s for i, s in enumerate(schedule.slots) if i not in drop)
    return PulseSchedule(schedule.num_qubits, kept)


def naive_interpret(schedule: PulseSchedule) -> Circuit:
    """Read a schedule back as gates, trusting every slot and channel verbatim."""
    gates = []
    for s in schedule.slots:
        gates.append(Gate(s.op.opcode, s.channel.qubits, s.op.param))
    return Circuit(schedule.num_qubits, tuple(gates), True)


@dataclass(frozen=True)
class Obfuscated:
    schedule: PulseSchedule
    dummy_slot_indices: tuple[int, ...]
    permutation: ChannelPermutation


def obfuscate(schedule: PulseSchedule, params: ObfuscationParams, rng: np.random.Generator) -> Obfuscated:
    padded, indices = insert_dummies(schedule, params, rng)
    relabeled, perm = permute_channels(padded, params.enable_swap, rng)
    return Obfuscated(relabeled, indices, perm)


def build_metadata(
    dummy_indices,
    permutation: ChannelPermutation,
    response_key: bytes,
    backend,
    obf_schedule: PulseSchedule,
) -> ObfuscationMetadata:
    n = len(obf_schedule.slots)
    if any(not 0 <= i < n for i in dummy_indices):
        raise ValueError(f"dummy index outside schedule of {n} slots")
    if len(permutation.drive) != obf_schedule.num_qubits:
        raise ValueError("drive permutation size differs from schedule qubit count")
    present = {ch.qubits for ch in obf_schedule.channels(ChannelKind.CONTROL)}
    if any(a not in present for a, _ in permutation.control):
        raise ValueError("control permutation names a channel absent from the schedule")
    for i in dummy_indices:
        if obf_schedule.slots[i].channel.kind is not ChannelKind.DRIVE:
            raise ValueError(f"dummy index {i} is not a drive slot")
    return ObfuscationMetadata(
        tuple(sorted(dummy_indices)),
        permutation,
        bytes(response_key),
        backend.backend_id,
        schedule_digest(obf_schedule),
    )
