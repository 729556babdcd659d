"""Acceptance criteria, each at its stated tolerance and time limit.

Every test records one PASS/FAIL line (see ``acceptance_report``); the lines
are repeated in the pytest terminal summary.  Run just these with::

    pytest tests/test_acceptance.py -v
"""

import dataclasses
import time

import numpy as np
import pytest
from acceptance_report import report
from support import Capture, make_backends, make_service, request_for

from qtee_qos.circuit import Opcode, encode_schedule, lower_to_schedule, schedule_digest
from qtee_qos.client.files import RawResults
from qtee_qos.client.workflow import open_output_metadata, prepare_bundle, recover_results
from qtee_qos.controller import OutputMetadata, TrustedController, deobfuscate, ingest, seal_output_metadata
from qtee_qos.crypto import (
    AuthenticationFailure,
    SealedBlob,
    derive_controller_key,
    metadata_associated_data,
    open_blob,
    seal,
)
from qtee_qos.obfuscation import (
    ObfuscationMetadata,
    ObfuscationParams,
    Scheme,
    apply_permutation,
    draw_permutation,
    insert_dummies,
    naive_interpret,
)
from qtee_qos.qos.faults import SimulatedCrash, TornWriteInjector
from qtee_qos.qos.jobs import JobState
from qtee_qos.qos.protocol import RESULTS, QOSClient
from qtee_qos.qos.server import QOSServer
from qtee_qos.qos.service import QOSService
from qtee_qos.qos.store import JobStore
from qtee_qos.statevector import (
    equiv_up_to_global_phase,
    simulate_probabilities,
    simulate_statevector,
    total_variation_distance,
)
from qtee_qos.workloads import bell, random_circuit

SESSION = b"s" * 32


def active_qubits(circuit):
    return {q for g in circuit.gates for q in g.qubits}


def wait_results(client, job_id, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        reply = client.fetch(job_id)
        if reply.kind == RESULTS:
            return RawResults(job_id, tuple(reply.fields["bitstrings"]),
                              SealedBlob.from_bytes(reply.fields["sealed_output_metadata"]))
        time.sleep(0.01)
    raise AssertionError(f"{job_id} did not finish")


def submit_over(client, bundle):
    return client.submit(
        backend_id=bundle.backend_id,
        schedule=encode_schedule(bundle.schedule),
        sealed_metadata=bundle.sealed_metadata.to_bytes(),
        client_ephemeral_public=bundle.client_ephemeral_public,
        shots=bundle.shots,
        idempotency_token=bundle.idempotency_token,
    )


# -- 1 ---------------------------------------------------------------------------


def test_criterion_1_deobfuscation_correctness():
    """200 random circuits per scheme through real sealing and controller ingest."""
    backends, secrets = make_backends(1, (("sim-6", 6),))
    backend, secret = backends["sim-6"], secrets["sim-6"]
    start = time.perf_counter()
    passed = total = 0
    for i, scheme in enumerate(Scheme):
        rng = np.random.default_rng([1, i])
        for trial in range(200):
            c = random_circuit(rng, max_qubits=6, max_gates=30)
            bundle, _ = prepare_bundle(c, backend, scheme, 1, seed=int(rng.integers(2**63)))
            plan = ingest(bundle.schedule, bundle.sealed_metadata, bundle.client_ephemeral_public,
                          f"job-{trial}", 1, (backend.backend_id, secret))
            rebuilt = deobfuscate(bundle.schedule, plan)
            total += 1
            passed += equiv_up_to_global_phase(simulate_statevector(rebuilt), simulate_statevector(c), 1e-9)
    elapsed = time.perf_counter() - start
    ok = passed == total and elapsed < 30
    report("1 de-obfuscation correctness", ok, f"{passed}/{total} equivalent (tol 1e-9), {elapsed:.1f} s < 30 s")
    assert passed == total
    assert elapsed < 30


# -- 2 ---------------------------------------------------------------------------

EFFECTIVENESS_POOL = frozenset({Opcode.X, Opcode.H})


def effectiveness_trial(rng, scheme):
    """One trial under the stated preconditions: 3*n dummies from {X, H}; a
    permutation that moves at least one of >= 2 active qubits."""
    swap = scheme is not Scheme.DUMMY_ONLY
    while True:
        c = random_circuit(rng, max_qubits=6, max_gates=30)
        if not swap or len(active_qubits(c)) >= 2:
            break
    s = lower_to_schedule(c)
    if scheme is not Scheme.SWAP_ONLY:
        params = ObfuscationParams(3 * c.num_qubits, EFFECTIVENESS_POOL, swap, scheme)
        s, _ = insert_dummies(s, params, rng)
    if swap:
        act = active_qubits(c)
        while True:
            perm = draw_permutation(s, rng)
            if any(perm.drive[q] != q for q in act):
                break
        s = apply_permutation(s, perm)
    return total_variation_distance(simulate_probabilities(naive_interpret(s)), simulate_probabilities(c))


@pytest.mark.parametrize("scheme", list(Scheme), ids=[s.value for s in Scheme])
def test_criterion_2_effectiveness(scheme):
    rng = np.random.default_rng([2, list(Scheme).index(scheme)])
    start = time.perf_counter()
    distances = [effectiveness_trial(rng, scheme) for _ in range(200)]
    elapsed = time.perf_counter() - start
    rate = sum(d > 0.01 for d in distances) / len(distances)
    unchanged = sum(d < 1e-12 for d in distances)
    ok = rate >= 0.90 and elapsed < 30
    report(
        f"2 effectiveness [{scheme.value}]",
        ok,
        f"TVD > 0.01 in {rate:.1%} of 200 trials (need >= 90%; {unchanged} with TVD = 0), {elapsed:.1f} s < 30 s",
    )
    assert rate >= 0.90
    assert elapsed < 30


# -- 3 ---------------------------------------------------------------------------


def test_criterion_3_bell_recovery(tmp_path):
    service, backends, _ = make_service(tmp_path / "store", controller_seed=None)
    start = time.perf_counter()
    with QOSServer(service, {"alice": SESSION}) as srv, QOSClient(srv.address, "alice", SESSION) as client:
        bundle, record = prepare_bundle(bell(), backends["sim-a"], "combined", 4096)
        raw = wait_results(client, submit_over(client, bundle))
        counts = {k: 0 for k in ("00", "01", "10", "11")}
        for outcome in recover_results(raw, record):
            counts[outcome] += 1
        mask_bundle, mask_record = prepare_bundle(bell(), backends["sim-a"], "combined", 10_000)
        mask_raw = wait_results(client, submit_over(client, mask_bundle))
        masks = open_output_metadata(mask_raw, mask_record.response_key).flip_masks
    elapsed = time.perf_counter() - start
    service.store.close()
    freq = np.array([[m[q] == "1" for q in range(2)] for m in masks]).mean(axis=0)
    ok = (
        1843 <= counts["00"] <= 2253
        and 1843 <= counts["11"] <= 2253
        and counts["01"] == counts["10"] == 0
        and len(masks) == 10_000
        and all(0.47 <= f <= 0.53 for f in freq)
        and elapsed < 10
    )
    report(
        "3 Bell recovery",
        ok,
        f"counts {counts}; flip frequency per qubit {freq.round(4).tolist()} over {len(masks)} masks; "
        f"{elapsed:.1f} s < 10 s",
    )
    assert 1843 <= counts["00"] <= 2253 and 1843 <= counts["11"] <= 2253
    assert counts["01"] == 0 and counts["10"] == 0
    assert len(masks) == 10_000 and all(0.47 <= f <= 0.53 for f in freq)
    assert elapsed < 10


# -- 4 ---------------------------------------------------------------------------


def test_criterion_4_scheduler(tmp_path):
    service, backends, _ = make_service(tmp_path / "store")
    ids = sorted(backends)
    rng = np.random.default_rng(4)
    submitted = {bid: [] for bid in ids}
    start = time.perf_counter()
    service.start()
    for _ in range(100):
        bid = ids[int(rng.integers(len(ids)))]
        c = random_circuit(rng, max_qubits=backends[bid].num_qubits, max_gates=12)
        bundle, _ = prepare_bundle(c, backends[bid], "combined", 32)
        submitted[bid].append(service.handle_submit(request_for(bundle)))
    deadline = time.monotonic() + 10
    while time.monotonic() < deadline and sum(map(len, service.completions.values())) < 100:
        time.sleep(0.01)
    service.stop()
    elapsed = time.perf_counter() - start
    service.store.close()
    cross = sum(pinned != ran for _, pinned, ran in service.dispatch_log)
    in_order = service.completions == submitted
    done = sum(map(len, service.completions.values()))
    ok = cross == 0 and in_order and done == 100 and elapsed < 10
    report(
        "4 scheduler",
        ok,
        f"{done}/100 completed, {cross} cross-backend dispatches, per-backend order preserved: {in_order}, "
        f"{elapsed:.1f} s < 10 s",
    )
    assert done == 100
    assert cross == 0
    assert in_order
    assert elapsed < 10


# -- 5 ---------------------------------------------------------------------------


def test_criterion_5_crypto_binding():
    backends, secrets = make_backends(5)
    a = backends["sim-a"]
    rng = np.random.default_rng(5)
    start = time.perf_counter()

    round_trips = 0
    for _ in range(1000):
        key = rng.bytes(32)
        msg = rng.bytes(int(rng.integers(0, 512)))
        ad = rng.bytes(int(rng.integers(0, 64)))
        round_trips += open_blob(seal(msg, key, ad), key, ad) == msg

    def rejected(schedule, blob, eph, backend_id, secret):
        try:
            ingest(schedule, blob, eph, "job-1", 1, (backend_id, secret))
        except AuthenticationFailure:
            return True
        return False

    bundle, record = prepare_bundle(random_circuit(rng, num_qubits=4, min_gates=10), a, "combined", 8, seed=5)
    assert not rejected(bundle.schedule, bundle.sealed_metadata, bundle.client_ephemeral_public,
                        "sim-a", secrets["sim-a"])
    blob = bundle.sealed_metadata
    tamper_cases = tamper_caught = 0
    for field in ("nonce", "ciphertext"):
        value = getattr(blob, field)
        for bit in range(len(value) * 8):
            flipped = bytearray(value)
            flipped[bit // 8] ^= 1 << (bit % 8)
            bad = dataclasses.replace(blob, **{field: bytes(flipped)})
            tamper_cases += 1
            tamper_caught += rejected(bundle.schedule, bad, bundle.client_ephemeral_public,
                                      "sim-a", secrets["sim-a"])
    for bit in range(len(bundle.client_ephemeral_public) * 8):
        eph = bytearray(bundle.client_ephemeral_public)
        eph[bit // 8] ^= 1 << (bit % 8)
        tamper_cases += 1
        tamper_caught += rejected(bundle.schedule, blob, bytes(eph), "sim-a", secrets["sim-a"])

    substitution_cases = substitution_caught = 0
    for _ in range(50):
        other, _ = prepare_bundle(random_circuit(rng, num_qubits=4, min_gates=1), a, "combined", 8)
        if other.schedule == bundle.schedule:
            continue
        substitution_cases += 1
        substitution_caught += rejected(other.schedule, blob, bundle.client_ephemeral_public,
                                        "sim-a", secrets["sim-a"])

    backend_cases = [
        ("sim-b", secrets["sim-b"]),  # the other backend's own keys
        ("sim-b", secrets["sim-a"]),  # right secret, wrong binding
        ("sim-a", secrets["sim-b"]),  # right binding, wrong secret
    ]
    backend_caught = sum(
        rejected(bundle.schedule, blob, bundle.client_ephemeral_public, bid, sec) for bid, sec in backend_cases
    )

    replay_cases = replay_caught = 0
    for j in range(50):
        masks = OutputMetadata(("01",) * 4, 2)
        sealed = seal_output_metadata(masks, record.response_key, f"job-{j:06d}")
        for other_job in (f"job-{j + 1:06d}", f"job-{j:06d}x"):
            replay_cases += 1
            try:
                open_output_metadata(RawResults(other_job, ("00",) * 4, sealed), record.response_key)
            except AuthenticationFailure:
                replay_caught += 1
    elapsed = time.perf_counter() - start

    ok = (
        round_trips == 1000
        and tamper_caught == tamper_cases
        and substitution_caught == substitution_cases > 0
        and backend_caught == len(backend_cases)
        and replay_caught == replay_cases
        and elapsed < 10
    )
    report(
        "5 crypto binding",
        ok,
        f"round trips {round_trips}/1000; single-bit tamper {tamper_caught}/{tamper_cases}; "
        f"schedule substitution {substitution_caught}/{substitution_cases}; "
        f"backend substitution {backend_caught}/{len(backend_cases)}; job_id replay {replay_caught}/{replay_cases}; "
        f"{elapsed:.1f} s < 10 s",
    )
    assert round_trips == 1000
    assert tamper_caught == tamper_cases
    assert substitution_caught == substitution_cases > 0
    assert backend_caught == len(backend_cases)
    assert replay_caught == replay_cases
    assert elapsed < 10


# -- 6 ---------------------------------------------------------------------------


def test_criterion_6_durability(tmp_path):
    n = 12
    backends, secrets = make_backends(6)
    controllers = {bid: TrustedController(d, secrets[bid], seed=6) for bid, d in backends.items()}
    store_dir = tmp_path / "store"
    ids = sorted(backends)
    rng = np.random.default_rng(6)
    bundles = [prepare_bundle(bell(), backends[ids[i % 3]], "combined", 64, seed=int(rng.integers(2**31)))
               for i in range(n + 1)]

    # appends: n submissions, one claim (a job caught Running), then the torn submission
    injector = TornWriteInjector(crash_on_append=n + 2)
    service = QOSService(JobStore(store_dir, opener=injector), backends, controllers)
    committed = [service.handle_submit(request_for(b)) for b, _ in bundles[:n]]
    running = service.schedule_next(ids[0]).job_id
    with pytest.raises(SimulatedCrash):
        service.handle_submit(request_for(bundles[n][0]))
    torn = injector.crashed

    recovered_store = JobStore(store_dir)
    recovered_ids = [j.job_id for j in recovered_store.jobs()]
    demoted = recovered_store.get(running).state is JobState.QUEUED
    all_queued = all(j.state is JobState.QUEUED for j in recovered_store.jobs())
    service = QOSService(recovered_store, backends, controllers)
    ran = service.drain()
    finished = all(recovered_store.get(j).state is JobState.DONE for j in committed)
    outcomes_ok = True
    for job_id, (_, record) in zip(committed, bundles):
        res = recovered_store.get(job_id).results
        outcomes = recover_results(RawResults(job_id, res.bitstrings, res.sealed_output_metadata), record)
        outcomes_ok &= set(outcomes) <= {"00", "11"}
    recovered_store.close()

    ok = torn and recovered_ids == committed and demoted and all_queued and ran == n and finished and outcomes_ok
    report(
        "6 durability",
        ok,
        f"torn append injected: {torn}; recovered {len(recovered_ids)}/{n} jobs in order: "
        f"{recovered_ids == committed}; Running -> Queued: {demoted}; rerun completed {ran}/{n}, "
        f"outcomes valid: {outcomes_ok}",
    )
    assert torn
    assert recovered_ids == committed
    assert demoted and all_queued
    assert ran == n and finished and outcomes_ok


# -- 7 ---------------------------------------------------------------------------


def run_deployment(path, bundles, controller_seed):
    service, backends, secrets = make_service(path / "store", seed=7, controller_seed=controller_seed)
    server_tap, client_tap = Capture(), Capture()
    raws = []
    with QOSServer(service, {"alice": SESSION}, tap=server_tap) as srv:
        with QOSClient(srv.address, "alice", SESSION, tap=client_tap) as client:
            job_ids = [submit_over(client, b) for b in bundles]
            raws = [wait_results(client, j) for j in job_ids]
    service.store.snapshot()  # scan both the snapshot and the journal
    service.store.close()
    stored = b"".join(p.read_bytes() for p in sorted((path / "store").iterdir()) if p.is_file())
    return raws, server_tap.blob + client_tap.blob, stored, secrets


def test_criterion_7_blindness(tmp_path):
    backends, secrets = make_backends(7)
    rng = np.random.default_rng(7)
    bundles, records = [], []
    for i in range(6):
        c = random_circuit(rng, min_qubits=3, max_qubits=5, min_gates=8)
        b, r = prepare_bundle(c, backends["sim-a"], "combined", 256)
        bundles.append(b)
        records.append(r)
    raws, captured, stored, _ = run_deployment(tmp_path / "run1", bundles, controller_seed=71)

    secret_items = []
    for bundle, record, raw in zip(bundles, records, raws):
        key = derive_controller_key(secrets["sim-a"], bundle.client_ephemeral_public, "sim-a")
        plain = open_blob(bundle.sealed_metadata, key,
                          metadata_associated_data("sim-a", schedule_digest(bundle.schedule)))
        meta = ObfuscationMetadata.decode(plain)
        assert not meta.channel_permutation.is_identity and meta.dummy_slot_indices
        masks = open_output_metadata(raw, record.response_key)
        # dummy indices and permutation as they are encoded inside the metadata
        perm_and_indices = plain[4 : plain.index(meta.response_key) - 4]
        secret_items += [
            ("metadata plaintext", plain),
            ("dummy indices + permutation", perm_and_indices),
            ("response_key", record.response_key),
            ("response_key hex", record.response_key.hex().encode()),
            ("flip masks (packed)", masks.encode()),
            ("flip masks (text)", "".join(masks.flip_masks).encode()),
        ]
    leaks = [name for name, item in secret_items if item in captured or item in stored]

    # same bundle, controller seeds 71 and 72
    raws_b, _, _, _ = run_deployment(tmp_path / "run2", bundles[:1], controller_seed=72)
    different = [raws[0].bitstrings != raws_b[0].bitstrings]
    # two fresh preparations of one circuit also give different provider views
    c = random_circuit(np.random.default_rng(70), num_qubits=3, min_gates=6)
    p1, _ = prepare_bundle(c, backends["sim-a"], "combined", 256, seed=1)
    p2, _ = prepare_bundle(c, backends["sim-a"], "combined", 256, seed=2)
    r3, _, _, _ = run_deployment(tmp_path / "run3", [p1, p2], controller_seed=None)
    different.append(r3[0].bitstrings != r3[1].bitstrings)

    ok = not leaks and all(different) and len(captured) > 0 and len(stored) > 0
    report(
        "7 blindness",
        ok,
        f"{len(secret_items)} secret byte patterns scanned over {len(captured)} transport bytes and "
        f"{len(stored)} store bytes: leaks {leaks or 'none'}; different-seed flip outputs differ: {different}",
    )
    assert not leaks
    assert all(different)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
