import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtee_qos.circuit import (
    BackendDescriptor,
    ChannelKind,
    Circuit,
    Control,
    Drive,
    Op,
    Opcode,
    PulseSchedule,
    Slot,
    gate,
    lower_to_schedule,
    schedule_digest,
)
from qtee_qos.controller import DeobfuscationPlan, deobfuscate
from qtee_qos.encoding import EncodingError
from qtee_qos.obfuscation import (
    ChannelPermutation,
    ObfuscationMetadata,
    ObfuscationParams,
    Scheme,
    apply_permutation,
    build_metadata,
    insert_dummies,
    naive_interpret,
    obfuscate,
    permute_channels,
    remove_slots,
)
from qtee_qos.statevector import equiv_up_to_global_phase, simulate_statevector
from qtee_qos.workloads import bell, random_circuit

BACKEND = BackendDescriptor("sim-a", 6, b"\x00" * 36)


def plan_for(obf, shots=1):
    return DeobfuscationPlan(obf.dummy_slot_indices, obf.permutation.inverse(), b"k" * 32, shots, "job-x")


def test_zero_dummies_is_identity():
    s = lower_to_schedule(bell())
    out, idx = insert_dummies(s, ObfuscationParams(0), np.random.default_rng(0))
    assert out == s and idx == ()


def test_dummies_on_empty_schedule():
    s = PulseSchedule(1, ())
    out, idx = insert_dummies(s, ObfuscationParams(1, frozenset({Opcode.X})), np.random.default_rng(0))
    assert out.slots == (Slot(Drive(0), Op(Opcode.X)),)
    assert idx == (0,)


def test_dummy_insertion_preserves_original_order():
    s = lower_to_schedule(random_circuit(np.random.default_rng(2), num_qubits=4, min_gates=10))
    out, idx = insert_dummies(s, ObfuscationParams(12), np.random.default_rng(3))
    assert len(out) == len(s) + 12
    assert remove_slots(out, idx) == s
    assert all(out.slots[i].channel.kind is ChannelKind.DRIVE for i in idx)
    assert all(out.slots[i].op.opcode in {Opcode.X, Opcode.H, Opcode.RZ} for i in idx)


def test_dummy_positions_spread_over_schedule():
    # every position of a 3-slot schedule + 1 dummy should occur
    s = lower_to_schedule(Circuit(2, (gate("h", 0), gate("h", 1), gate("cx", 0, 1))))
    rng = np.random.default_rng(5)
    seen = {insert_dummies(s, ObfuscationParams(1), rng)[1][0] for _ in range(200)}
    assert seen == {0, 1, 2, 3}


def test_permutation_disabled_is_identity():
    s = lower_to_schedule(bell())
    out, perm = permute_channels(s, False, np.random.default_rng(0))
    assert out == s and perm.is_identity


def test_single_qubit_swap_is_identity():
    s = PulseSchedule(1, (Slot(Drive(0), Op(Opcode.H)),))
    out, perm = permute_channels(s, True, np.random.default_rng(0))
    assert out == s and perm.drive == (0,)


def test_permutation_is_bijection_and_covers_all_drives():
    s = lower_to_schedule(random_circuit(np.random.default_rng(1), num_qubits=5, min_gates=20))
    rng = np.random.default_rng(9)
    for _ in range(50):
        _, perm = permute_channels(s, True, rng)
        assert sorted(perm.drive) == list(range(5))
        present = {ch.qubits for ch in s.channels(ChannelKind.CONTROL)}
        assert {a for a, _ in perm.control} == present == {b for _, b in perm.control}
        assert apply_permutation(apply_permutation(s, perm), perm.inverse()) == s


def test_permutation_uniform_over_two_qubits():
    s = lower_to_schedule(bell())
    rng = np.random.default_rng(12)
    swaps = sum(permute_channels(s, True, rng)[1].drive == (1, 0) for _ in range(2000))
    assert 900 < swaps < 1100


def test_bijection_rejected():
    with pytest.raises(ValueError):
        ChannelPermutation((0, 0))
    with pytest.raises(ValueError):
        ChannelPermutation((0, 1), (((0, 1), (1, 0)),))


def test_params_for_scheme():
    assert ObfuscationParams.for_scheme("dummy-only", 4) == ObfuscationParams(12, enable_swap=False,
                                                                              scheme_label=Scheme.DUMMY_ONLY)
    swap = ObfuscationParams.for_scheme(Scheme.SWAP_ONLY, 4)
    assert swap.dummy_count == 0 and swap.enable_swap
    comb = ObfuscationParams.for_scheme("combined", 2, dummy_count=1)
    assert comb.dummy_count == 1 and comb.enable_swap
    with pytest.raises(ValueError):
        ObfuscationParams(1, frozenset({Opcode.CX}))
    with pytest.raises(ValueError):
        ObfuscationParams(-1)


def test_build_metadata_checks():
    s = lower_to_schedule(bell())
    obf = obfuscate(s, ObfuscationParams.for_scheme("combined", 2), np.random.default_rng(0))
    meta = build_metadata(obf.dummy_slot_indices, obf.permutation, b"r" * 32, BACKEND, obf.schedule)
    assert meta.schedule_digest == schedule_digest(obf.schedule)
    with pytest.raises(ValueError):
        build_metadata((len(obf.schedule),), obf.permutation, b"r" * 32, BACKEND, obf.schedule)
    cx_index = next(i for i, sl in enumerate(obf.schedule.slots) if sl.channel.kind is ChannelKind.CONTROL)
    with pytest.raises(ValueError):
        build_metadata((cx_index,), obf.permutation, b"r" * 32, BACKEND, obf.schedule)
    with pytest.raises(ValueError):
        build_metadata((), ChannelPermutation.identity(3), b"r" * 32, BACKEND, obf.schedule)


def test_metadata_encoding_round_trip():
    s = lower_to_schedule(random_circuit(np.random.default_rng(4), num_qubits=4, min_gates=10))
    obf = obfuscate(s, ObfuscationParams.for_scheme("combined", 4), np.random.default_rng(4))
    meta = build_metadata(obf.dummy_slot_indices, obf.permutation, b"r" * 32, BACKEND, obf.schedule)
    data = meta.encode()
    assert ObfuscationMetadata.decode(data) == meta
    assert ObfuscationMetadata.decode(data).encode() == data
    with pytest.raises(EncodingError):
        ObfuscationMetadata.decode(data[:-1])


def test_metadata_rejects_unsorted_indices():
    with pytest.raises(ValueError):
        ObfuscationMetadata((3, 1), ChannelPermutation.identity(1), b"", "b", b"")


def test_naive_interpret_sees_relabeled_routing():
    s = lower_to_schedule(Circuit(3, (gate("cx", 0, 1),)))
    perm = ChannelPermutation((0, 1, 2), (((0, 1), (0, 1)),))
    assert naive_interpret(apply_permutation(s, perm)).gates == (gate("cx", 0, 1),)
    drive_swap = ChannelPermutation((2, 1, 0))
    hs = lower_to_schedule(Circuit(3, (gate("x", 0),)))
    assert naive_interpret(apply_permutation(hs, drive_swap)).gates == (gate("x", 2),)


@pytest.mark.parametrize("scheme", list(Scheme))
@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_deobfuscation_recovers_original(scheme, seed):
    rng = np.random.default_rng(seed)
    c = random_circuit(rng)
    obf = obfuscate(lower_to_schedule(c), ObfuscationParams.for_scheme(scheme, c.num_qubits), rng)
    recovered = deobfuscate(obf.schedule, plan_for(obf))
    assert recovered == c
    assert equiv_up_to_global_phase(simulate_statevector(recovered), simulate_statevector(c), 1e-9)


def test_obfuscation_changes_schedule_for_combined():
    c = random_circuit(np.random.default_rng(1), num_qubits=4, min_gates=8)
    s = lower_to_schedule(c)
    obf = obfuscate(s, ObfuscationParams.for_scheme("combined", 4), np.random.default_rng(1))
    assert obf.schedule != s
    assert len(obf.schedule) == len(s) + 12


def test_control_channels_only_relabel_among_present():
    s = PulseSchedule(3, (Slot(Control(0, 1), Op(Opcode.CX)), Slot(Control(2, 1), Op(Opcode.CX))))
    rng = np.random.default_rng(0)
    for _ in range(20):
        out, _ = permute_channels(s, True, rng)
        assert {sl.channel.qubits for sl in out.slots} == {(0, 1), (2, 1)}
