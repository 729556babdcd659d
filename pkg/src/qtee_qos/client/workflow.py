"""Client-side steps: prepare a sealed submission, recover true outcomes."""

from __future__ import annotations

import secrets as _secrets
from collections import Counter

import numpy as np

from ..circuit import BackendDescriptor, Circuit, circuit_digest, lower_to_schedule, validate_circuit
from ..controller import OutputMetadata
from ..crypto import (
    AuthenticationFailure,
    establish_backend_key,
    metadata_associated_data,
    open_blob,
    output_associated_data,
    random_bytes,
    seal,
)
from ..encoding import EncodingError
from ..obfuscation import ObfuscationParams, Scheme, build_metadata, obfuscate
from .files import Bundle, RawResults
from .secrets import LocalSecretRecord


class ValidationError(ValueError):
    def __init__(self, violations) -> None:
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = list(violations)


class IntegrityError(RuntimeError):
    pass


def prepare_bundle(
    circuit: Circuit,
    backend: BackendDescriptor,
    scheme: Scheme | str,
    shots: int,
    *,
    dummy_count: int | None = None,
    seed: int | None = None,
) -> tuple[Bundle, LocalSecretRecord]:
    """Lower, obfuscate and seal ``circuit`` for ``backend``.

    With ``seed`` every random choice, key material included, comes from one
    seeded generator and the bundle bytes are reproducible.  That is for tests
    and demos; without it keys and nonces come from OS entropy.
    """
    violations = validate_circuit(circuit, backend)
    if violations:
        raise ValidationError(violations)
    if shots < 1:
        raise ValueError("shots must be positive")
    if seed is not None:
        rng = np.random.default_rng(seed)
        key_rng = rng
    else:
        rng = np.random.default_rng(_secrets.randbits(128))
        key_rng = None

    params = ObfuscationParams.for_scheme(scheme, circuit.num_qubits, dummy_count)
    obf = obfuscate(lower_to_schedule(circuit), params, rng)

    response_key = random_bytes(32, key_rng)
    ephemeral_secret = random_bytes(32, key_rng)
    metadata = build_metadata(obf.dummy_slot_indices, obf.permutation, response_key, backend, obf.schedule)
    key, ephemeral_public = establish_backend_key(
        ephemeral_secret, backend.metadata_public_key, backend.backend_id
    )
    sealed = seal(
        metadata.encode(),
        key,
        metadata_associated_data(backend.backend_id, metadata.schedule_digest),
        key_rng,
        key_id=f"{backend.backend_id}/x25519",
    )
    token = random_bytes(16, key_rng).hex()
    bundle = Bundle(token, backend.backend_id, obf.schedule, sealed, ephemeral_public, shots)
    record = LocalSecretRecord(
        idempotency_token=token,
        backend_id=backend.backend_id,
        scheme_label=params.scheme_label.value,
        num_qubits=circuit.num_qubits,
        shots=shots,
        response_key=response_key,
        client_ephemeral_secret=ephemeral_secret,
        original_circuit_digest=circuit_digest(circuit),
    )
    return bundle, record


def recover_bits(flipped: str, mask: str) -> str:
    if len(flipped) != len(mask):
        raise ValueError(f"width mismatch: {len(flipped)} vs {len(mask)}")
    return "".join("1" if a != b else "0" for a, b in zip(flipped, mask))


def open_output_metadata(raw: RawResults, response_key: bytes) -> OutputMetadata:
    """Raises :class:`AuthenticationFailure` if the blob is not for ``raw.job_id``."""
    plain = open_blob(raw.sealed_output_metadata, response_key, output_associated_data(raw.job_id))
    try:
        return OutputMetadata.decode(plain)
    except (EncodingError, ValueError):
        raise AuthenticationFailure() from None


def recover_results(raw: RawResults, record: LocalSecretRecord) -> list[str]:
    """True per-shot outcomes, in shot order."""
    masks = open_output_metadata(raw, record.response_key)
    if len(masks.flip_masks) != len(raw.bitstrings):
        raise IntegrityError(
            f"{len(raw.bitstrings)} bitstrings but {len(masks.flip_masks)} flip masks"
        )
    return [recover_bits(b, m) for b, m in zip(raw.bitstrings, masks.flip_masks)]


def count_outcomes(bitstrings) -> list[tuple[str, int]]:
    """Counts sorted by frequency (descending), then bitstring."""
    return sorted(Counter(bitstrings).items(), key=lambda kv: (-kv[1], kv[0]))


def format_counts(counts: list[tuple[str, int]]) -> str:
    return "".join(f"{b} {n}\n" for b, n in counts)
