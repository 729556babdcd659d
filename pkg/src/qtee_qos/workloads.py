"""Circuit generators for tests, demos and acceptance runs."""

from __future__ import annotations

import math

import numpy as np

from .circuit import ALL_OPCODES, Circuit, Gate, Opcode, gate


def bell() -> Circuit:
    return Circuit(2, (gate("h", 0), gate("cx", 0, 1)))


def ghz(n: int) -> Circuit:
    gates = [gate("h", 0)] + [gate("cx", i, i + 1) for i in range(n - 1)]
    return Circuit(n, tuple(gates))


def random_circuit(
    rng: np.random.Generator,
    *,
    num_qubits: int | None = None,
    min_qubits: int = 1,
    max_qubits: int = 6,
    min_gates: int = 0,
    max_gates: int = 30,
    opcodes=ALL_OPCODES,
) -> Circuit:
    """Uniform opcode choice; CX only when there are at least two qubits."""
    n = int(rng.integers(min_qubits, max_qubits + 1)) if num_qubits is None else num_qubits
    pool = sorted((o for o in opcodes if n > 1 or o.arity == 1), key=lambda o: o.value)
    gates = []
    for _ in range(int(rng.integers(min_gates, max_gates + 1))):
        op = pool[int(rng.integers(len(pool)))]
        if op is Opcode.CX:
            c, t = (int(q) for q in rng.choice(n, size=2, replace=False))
            gates.append(Gate(op, (c, t)))
        elif op is Opcode.RZ:
            gates.append(Gate(op, (int(rng.integers(n)),), float(rng.uniform(-2 * math.pi, 2 * math.pi))))
        else:
            gates.append(Gate(op, (int(rng.integers(n)),)))
    return Circuit(n, tuple(gates))
