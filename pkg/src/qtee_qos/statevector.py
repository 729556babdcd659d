"""Exact, noise-free statevector simulation for small circuits.

Bit order: outcome strings are written qubit 0 first, so ``"10"`` on two
qubits means qubit 0 measured 1 and qubit 1 measured 0.  Internally the state
is a tensor with one axis per qubit (axis ``i`` is qubit ``i``), which makes
the flat index's most significant bit qubit 0 and lets ``format(index, "0nb")``
produce the outcome string directly.
"""

from __future__ import annotations

from math import sqrt
from typing import Mapping, Sequence

import numpy as np

from .circuit import Circuit, Gate, Opcode

DEFAULT_MAX_QUBITS = 12
NORM_TOL = 1e-9

Distribution = dict[str, float]

_R2 = 1 / sqrt(2)
_FIXED = {
    Opcode.I: np.eye(2, dtype=complex),
    Opcode.X: np.array([[0, 1], [1, 0]], dtype=complex),
    Opcode.Y: np.array([[0, -1j], [1j, 0]], dtype=complex),
    Opcode.Z: np.array([[1, 0], [0, -1]], dtype=complex),
    Opcode.H: np.array([[1, 1], [1, -1]], dtype=complex) * _R2,
    Opcode.S: np.array([[1, 0], [0, 1j]], dtype=complex),
    Opcode.SX: 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=complex),
}


class CapacityError(ValueError):
    """The circuit needs more qubits than the simulator ceiling allows."""


def single_qubit_matrix(opcode: Opcode, param: float | None = None) -> np.ndarray:
    if opcode is Opcode.RZ:
        half = 0.5 * float(param)
        return np.array([[np.exp(-1j * half), 0], [0, np.exp(1j * half)]], dtype=complex)
    try:
        return _FIXED[opcode]
    except KeyError:
        raise ValueError(f"{opcode.value} is not a single-qubit gate") from None


class StateVector:
    def __init__(self, num_qubits: int, amplitudes: np.ndarray | None = None) -> None:
        if num_qubits < 1:
            raise ValueError("num_qubits must be positive")
        self.num_qubits = num_qubits
        if amplitudes is None:
            amplitudes = np.zeros(2**num_qubits, dtype=complex)
            amplitudes[0] = 1.0
        amplitudes = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if amplitudes.shape != (2**num_qubits,):
            raise ValueError(f"expected {2**num_qubits} amplitudes, got {amplitudes.size}")
        self.amplitudes = amplitudes

    @classmethod
    def basis(cls, bits: str) -> StateVector:
        """Computational basis state, ``bits[i]`` giving qubit ``i``."""
        n = len(bits)
        amps = np.zeros(2**n, dtype=complex)
        amps[int(bits, 2)] = 1.0
        return cls(n, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def apply(self, g: Gate) -> StateVector:
        """Apply ``g`` in place and return self."""
        n = self.num_qubits
        if any(not 0 <= q < n for q in g.qubits):
            raise ValueError(f"gate {g} touches a qubit outside 0..{n - 1}")
        psi = self.amplitudes.reshape([2] * n)
        if g.opcode is Opcode.CX:
            c, t = g.qubits
            if c == t:
                raise ValueError("CX operands must differ")
            idx = [slice(None)] * n
            idx[c] = 1
            sub = psi[tuple(idx)]  # view with qubit c removed
            t_axis = t if t < c else t - 1
            psi[tuple(idx)] = np.flip(sub, axis=t_axis).copy()
        else:
            (q,) = g.qubits
            m = single_qubit_matrix(g.opcode, g.param)
            psi = np.moveaxis(np.tensordot(m, psi, axes=([1], [q])), 0, q)
        self.amplitudes = np.ascontiguousarray(psi).reshape(-1)
        norm = self.norm()
        if abs(norm - 1.0) > NORM_TOL:
            raise ArithmeticError(f"norm drifted to {norm!r} after {g}")
        return self

    def probabilities(self) -> Distribution:
        n = self.num_qubits
        probs = np.abs(self.amplitudes) ** 2
        return {format(i, f"0{n}b"): float(p) for i, p in enumerate(probs)}

    def copy(self) -> StateVector:
        return StateVector(self.num_qubits, self.amplitudes.copy())


def _check_capacity(num_qubits: int, max_qubits: int) -> None:
    if num_qubits > max_qubits:
        raise CapacityError(f"{num_qubits} qubits exceeds simulator ceiling of {max_qubits}")


def simulate_statevector(circuit: Circuit, max_qubits: int = DEFAULT_MAX_QUBITS) -> StateVector:
    _check_capacity(circuit.num_qubits, max_qubits)
    state = StateVector(circuit.num_qubits)
    for g in circuit.gates:
        state.apply(g)
    return state


def simulate_probabilities(circuit: Circuit, max_qubits: int = DEFAULT_MAX_QUBITS) -> Distribution:
    """Exact outcome distribution of ``circuit`` run on ``|0...0>``."""
    return simulate_statevector(circuit, max_qubits).probabilities()


def sample_shots(dist: Mapping[str, float], shots: int, rng: np.random.Generator) -> list[str]:
    """Draw ``shots`` independent outcomes; reproducible for a given generator state."""
    if shots < 1:
        raise ValueError("shots must be a positive integer")
    outcomes = sorted(dist)
    p = np.array([dist[k] for k in outcomes], dtype=float)
    if np.any(p < -NORM_TOL) or abs(p.sum() - 1.0) > NORM_TOL:
        raise ValueError("not a probability distribution")
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    picks = rng.choice(len(outcomes), size=shots, p=p)
    return [outcomes[i] for i in picks]


def _amplitudes(x: StateVector | np.ndarray | Sequence[complex]) -> np.ndarray:
    if isinstance(x, StateVector):
        return x.amplitudes
    return np.asarray(x, dtype=complex).reshape(-1)


def equiv_up_to_global_phase(a, b, tol: float = 1e-9) -> bool:
    """True iff ``a == lam * b`` elementwise within ``tol`` for some unit ``lam``.

    ``lam`` is taken from the largest-magnitude amplitude of ``b``.
    """
    va, vb = _amplitudes(a), _amplitudes(b)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.size} vs {vb.size}")
    k = int(np.argmax(np.abs(vb)))
    if abs(vb[k]) == 0.0:
        return bool(np.max(np.abs(va)) <= tol)
    ratio = va[k] / vb[k]
    lam = ratio / abs(ratio) if ratio != 0 else 1.0
    return bool(np.max(np.abs(va - lam * vb)) <= tol)


def total_variation_distance(p: Mapping[str, float], q: Mapping[str, float]) -> float:
    widths = {len(k) for k in p} | {len(k) for k in q}
    if len(widths) > 1:
        raise ValueError("distributions over different qubit counts")
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
