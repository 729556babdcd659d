"""Gate-level circuits, channel-level pulse schedules and backend descriptors.

A schedule slot carries the *operation* (opcode and, for RZ, the angle) but no
qubit operands: the channel alone says where the pulse goes.  That is what
makes channel relabeling an effective obfuscation, since the provider-visible
artifact has no second copy of the routing.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field

from .encoding import EncodingError, Reader, Writer


class Opcode(str, enum.Enum):
    I = "I"
    X = "X"
    Y = "Y"
    Z = "Z"
    H = "H"
    S = "S"
    SX = "SX"
    RZ = "RZ"
    CX = "CX"

    @property
    def arity(self) -> int:
        return 2 if self is Opcode.CX else 1

    @property
    def parametric(self) -> bool:
        return self is Opcode.RZ


ALL_OPCODES = frozenset(Opcode)
SINGLE_QUBIT_OPCODES = frozenset(op for op in Opcode if op.arity == 1)
# wire codes; order is part of the canonical encoding and must not change
_OPCODE_CODE = {op: i for i, op in enumerate(Opcode)}
_CODE_OPCODE = {i: op for op, i in _OPCODE_CODE.items()}


@dataclass(frozen=True)
class Gate:
    opcode: Opcode
    qubits: tuple[int, ...]
    param: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "opcode", Opcode(self.opcode))
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if len(self.qubits) != self.opcode.arity:
            raise ValueError(
                f"{self.opcode.value} takes {self.opcode.arity} qubit(s), got {len(self.qubits)}"
            )
        if self.opcode.parametric:
            if self.param is None:
                raise ValueError("RZ requires an angle")
            object.__setattr__(self, "param", float(self.param))
        elif self.param is not None:
            raise ValueError(f"{self.opcode.value} takes no parameter")

    @property
    def op(self) -> Op:
        return Op(self.opcode, self.param)

    def __str__(self) -> str:
        args = " ".join(str(q) for q in self.qubits)
        if self.param is not None:
            return f"{self.opcode.value.lower()} {args} {self.param!r}"
        return f"{self.opcode.value.lower()} {args}"


def gate(opcode: str | Opcode, *qubits: int, param: float | None = None) -> Gate:
    """Shorthand constructor: ``gate("cx", 0, 1)``, ``gate("rz", 0, param=0.5)``."""
    if isinstance(opcode, str):
        opcode = Opcode(opcode.upper())
    return Gate(opcode, tuple(qubits), param)


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: tuple[Gate, ...] = ()
    measure_all: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "gates", tuple(self.gates))

    def __len__(self) -> int:
        return len(self.gates)


class ChannelKind(enum.IntEnum):
    DRIVE = 0
    CONTROL = 1


@dataclass(frozen=True, order=True)
class Channel:
    kind: ChannelKind
    qubits: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ChannelKind(self.kind))
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        want = 1 if self.kind is ChannelKind.DRIVE else 2
        if len(self.qubits) != want:
            raise ValueError(f"{self.kind.name} channel needs {want} index(es)")

    def __str__(self) -> str:
        if self.kind is ChannelKind.DRIVE:
            return f"d{self.qubits[0]}"
        return f"u{self.qubits[0]}_{self.qubits[1]}"


def Drive(q: int) -> Channel:  # noqa: N802 - reads like a constructor
    return Channel(ChannelKind.DRIVE, (q,))


def Control(c: int, t: int) -> Channel:  # noqa: N802
    return Channel(ChannelKind.CONTROL, (c, t))


@dataclass(frozen=True)
class Op:
    """The operand-free part of a gate, as carried by a schedule slot."""

    opcode: Opcode
    param: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "opcode", Opcode(self.opcode))
        if self.opcode.parametric:
            if self.param is None:
                raise ValueError("RZ requires an angle")
            object.__setattr__(self, "param", float(self.param))
        elif self.param is not None:
            raise ValueError(f"{self.opcode.value} takes no parameter")


@dataclass(frozen=True)
class Slot:
    channel: Channel
    op: Op

    def __str__(self) -> str:
        p = "" if self.op.param is None else f"({self.op.param!r})"
        return f"{self.channel}:{self.op.opcode.value}{p}"


@dataclass(frozen=True)
class PulseSchedule:
    num_qubits: int
    slots: tuple[Slot, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "slots", tuple(self.slots))

    def __len__(self) -> int:
        return len(self.slots)

    def channels(self, kind: ChannelKind | None = None) -> list[Channel]:
        """Distinct channels present, sorted."""
        seen = {s.channel for s in self.slots if kind is None or s.channel.kind is kind}
        return sorted(seen)


@dataclass(frozen=True)
class BackendDescriptor:
    backend_id: str
    num_qubits: int
    metadata_public_key: bytes
    supported_opcodes: frozenset[Opcode] = field(default_factory=lambda: ALL_OPCODES)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "supported_opcodes", frozenset(Opcode(o) for o in self.supported_opcodes)
        )


@dataclass(frozen=True)
class Violation:
    gate_index: int | None
    reason: str

    def __str__(self) -> str:
        where = "circuit" if self.gate_index is None else f"gate {self.gate_index}"
        return f"{self.reason} at {where}"


def validate_circuit(circuit: Circuit, backend: BackendDescriptor) -> list[Violation]:
    """Return every violation found; an empty list means the circuit is acceptable."""
    problems: list[Violation] = []
    n = circuit.num_qubits
    if n < 1:
        problems.append(Violation(None, "num_qubits must be positive"))
    if n > backend.num_qubits:
        problems.append(
            Violation(None, f"capacity exceeded: {n} qubits > {backend.num_qubits} on {backend.backend_id}")
        )
    if not circuit.measure_all:
        problems.append(Violation(None, "circuit must end with measure all"))
    for i, g in enumerate(circuit.gates):
        if g.opcode not in backend.supported_opcodes:
            problems.append(Violation(i, f"opcode {g.opcode.value} unsupported"))
        for q in g.qubits:
            if not 0 <= q < n:
                problems.append(Violation(i, f"qubit {q} out of range"))
        if len(g.qubits) == 2 and g.qubits[0] == g.qubits[1]:
            problems.append(Violation(i, "identical operands"))
        if g.param is not None and not math.isfinite(g.param):
            problems.append(Violation(i, "non-finite angle"))
    return problems


def check_schedule(schedule: PulseSchedule) -> list[str]:
    """Well-formedness problems of a schedule (empty list when fine)."""
    problems = []
    n = schedule.num_qubits
    if n < 1:
        problems.append("num_qubits must be positive")
    for i, s in enumerate(schedule.slots):
        ch = s.channel
        if any(not 0 <= q < n for q in ch.qubits):
            problems.append(f"slot {i}: channel {ch} out of range")
        if ch.kind is ChannelKind.DRIVE and s.op.opcode.arity != 1:
            problems.append(f"slot {i}: drive channel carries {s.op.opcode.value}")
        if ch.kind is ChannelKind.CONTROL:
            if s.op.opcode is not Opcode.CX:
                problems.append(f"slot {i}: control channel carries {s.op.opcode.value}")
            if ch.qubits[0] == ch.qubits[1]:
                problems.append(f"slot {i}: control channel with identical qubits")
        if s.op.param is not None and not math.isfinite(s.op.param):
            problems.append(f"slot {i}: non-finite angle")
    return problems


def lower_to_schedule(circuit: Circuit) -> PulseSchedule:
    slots = []
    for g in circuit.gates:
        if g.opcode is Opcode.CX:
            ch = Control(*g.qubits)
        else:
            ch = Drive(g.qubits[0])
        slots.append(Slot(ch, g.op))
    return PulseSchedule(circuit.num_qubits, tuple(slots))


# --- canonical encoding ----------------------------------------------------

_CIRCUIT_MAGIC = b"QCIR"
_SCHEDULE_MAGIC = b"QSCH"


def _write_op(w: Writer, op: Op) -> None:
    w.u8(_OPCODE_CODE[op.opcode])
    if op.param is None:
        w.u8(0)
    else:
        w.u8(1).f64(op.param)


def _read_op(r: Reader) -> Op:
    code = r.u8()
    if code not in _CODE_OPCODE:
        raise EncodingError(f"unknown opcode code {code}")
    has_param = r.u8()
    if has_param not in (0, 1):
        raise EncodingError("bad parameter flag")
    param = r.f64() if has_param else None
    try:
        return Op(_CODE_OPCODE[code], param)
    except ValueError as exc:
        raise EncodingError(str(exc)) from None


def encode_circuit(circuit: Circuit) -> bytes:
    w = Writer().raw(_CIRCUIT_MAGIC).u32(circuit.num_qubits).u8(int(circuit.measure_all))
    w.u32(len(circuit.gates))
    for g in circuit.gates:
        _write_op(w, g.op)
        w.u8(len(g.qubits))
        for q in g.qubits:
            w.u32(q)
    return w.getvalue()


def decode_circuit(data: bytes) -> Circuit:
    r = Reader(data)
    if r.raw(4) != _CIRCUIT_MAGIC:
        raise EncodingError("not a circuit encoding")
    n = r.u32()
    measure = bool(r.u8())
    gates = []
    for _ in range(r.u32()):
        op = _read_op(r)
        qubits = tuple(r.u32() for _ in range(r.u8()))
        try:
            gates.append(Gate(op.opcode, qubits, op.param))
        except ValueError as exc:
            raise EncodingError(str(exc)) from None
    r.expect_end()
    return Circuit(n, tuple(gates), measure)


def write_channel(w: Writer, ch: Channel) -> None:
    w.u8(int(ch.kind))
    for q in ch.qubits:
        w.u32(q)


def read_channel(r: Reader) -> Channel:
    kind = r.u8()
    if kind == ChannelKind.DRIVE:
        return Drive(r.u32())
    if kind == ChannelKind.CONTROL:
        return Control(r.u32(), r.u32())
    raise EncodingError(f"unknown channel kind {kind}")


def encode_schedule(schedule: PulseSchedule) -> bytes:
    w = Writer().raw(_SCHEDULE_MAGIC).u32(schedule.num_qubits).u32(len(schedule.slots))
    for s in schedule.slots:
        write_channel(w, s.channel)
        _write_op(w, s.op)
    return w.getvalue()


def decode_schedule(data: bytes) -> PulseSchedule:
    r = Reader(data)
    if r.raw(4) != _SCHEDULE_MAGIC:
        raise EncodingError("not a schedule encoding")
    n = r.u32()
    count = r.u32()
    # every slot takes at least 7 bytes; refuse absurd counts before allocating
    if count * 7 > r.remaining:
        raise EncodingError("slot count exceeds payload")
    slots = []
    for _ in range(count):
        ch = read_channel(r)
        slots.append(Slot(ch, _read_op(r)))
    r.expect_end()
    return PulseSchedule(n, tuple(slots))


def schedule_digest(schedule: PulseSchedule) -> bytes:
    """SHA-256 over the canonical schedule encoding (32 bytes)."""
    return hashlib.sha256(encode_schedule(schedule)).digest()


def circuit_digest(circuit: Circuit) -> bytes:
    return hashlib.sha256(encode_circuit(circuit)).digest()


# --- text format -----------------------------------------------------------


class CircuitParseError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


def parse_circuit(text: str) -> Circuit:
    """Parse the line-oriented circuit text format.

    ``qubits N`` must come first, ``measure all`` last; ``#`` starts a comment
    line.  Gate lines are ``<op> <qubit>...`` with the angle last for ``rz``.
    """
    num_qubits: int | None = None
    gates: list[Gate] = []
    measured = False
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        last_line = lineno
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        head = tokens[0]
        if measured:
            raise CircuitParseError(lineno, "instruction after 'measure all'")
        if head == "qubits":
            if num_qubits is not None:
                raise CircuitParseError(lineno, "duplicate 'qubits' header")
            if len(tokens) != 2:
                raise CircuitParseError(lineno, "expected 'qubits N'")
            num_qubits = _parse_int(tokens[1], lineno)
            if num_qubits < 1:
                raise CircuitParseError(lineno, "qubit count must be positive")
            continue
        if num_qubits is None:
            raise CircuitParseError(lineno, "missing 'qubits N' header")
        if head == "measure":
            if tokens[1:] != ["all"]:
                raise CircuitParseError(lineno, "expected 'measure all'")
            measured = True
            continue
        if head != head.lower():
            raise CircuitParseError(lineno, f"instructions are lowercase, got {head!r}")
        try:
            opcode = Opcode(head.upper())
        except ValueError:
            raise CircuitParseError(lineno, f"unknown instruction {head!r}") from None
        want = opcode.arity + (1 if opcode.parametric else 0)
        if len(tokens) - 1 != want:
            raise CircuitParseError(
                lineno, f"'{head}' expects {want} argument(s), got {len(tokens) - 1}"
            )
        qubits = tuple(_parse_int(t, lineno) for t in tokens[1 : 1 + opcode.arity])
        param = None
        if opcode.parametric:
            try:
                param = float(tokens[-1])
            except ValueError:
                raise CircuitParseError(lineno, f"bad angle {tokens[-1]!r}") from None
        gates.append(Gate(opcode, qubits, param))
    if num_qubits is None:
        raise CircuitParseError(max(last_line, 1), "missing 'qubits N' header")
    if not measured:
        raise CircuitParseError(max(last_line, 1), "missing final 'measure all'")
    return Circuit(num_qubits, tuple(gates), True)


def _parse_int(token: str, lineno: int) -> int:
    try:
        value = int(token)
    except ValueError:
        raise CircuitParseError(lineno, f"expected an integer, got {token!r}") from None
    if value < 0:
        raise CircuitParseError(lineno, f"negative index {value}")
    return value


def format_circuit(circuit: Circuit) -> str:
    lines = [f"qubits {circuit.num_qubits}"]
    lines.extend(str(g) for g in circuit.gates)
    lines.append("measure all")
    return "\n".join(lines) + "\n"

