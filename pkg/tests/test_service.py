import dataclasses
import threading
import time

import numpy as np
import pytest
from support import make_service, request_for, submit

from qtee_qos.circuit import Circuit, gate
from qtee_qos.client.files import RawResults
from qtee_qos.client.workflow import prepare_bundle, recover_results
from qtee_qos.crypto import SealedBlob
from qtee_qos.handoff import ControllerResult
from qtee_qos.qos.jobs import JobState
from qtee_qos.qos.service import MigrationError, QOSError, QOSService
from qtee_qos.qos.store import JobStore
from qtee_qos.workloads import bell, ghz, random_circuit


@pytest.fixture
def svc(tmp_path):
    service, backends, _ = make_service(tmp_path / "store")
    yield service, backends
    service.stop()
    service.store.close()


def test_submit_then_fetch_done(svc):
    service, backends = svc
    job_id, _, record = submit(service, backends["sim-a"], bell(), shots=200)
    assert service.handle_status(job_id, "alice") == "Queued"
    assert service.handle_fetch(job_id, "alice").results is None
    assert service.drain() == 1
    fetched = service.handle_fetch(job_id, "alice")
    assert fetched.state == "Done"
    raw = RawResults(job_id, fetched.results.bitstrings, fetched.results.sealed_output_metadata)
    assert set(recover_results(raw, record)) <= {"00", "11"}


def test_idempotent_resubmit(svc):
    service, backends = svc
    bundle, _ = prepare_bundle(bell(), backends["sim-a"], "combined", 8)
    first = service.handle_submit(request_for(bundle))
    second = service.handle_submit(request_for(bundle))
    assert first == second
    assert len(service.store) == 1


def test_token_reuse_by_other_client_refused(svc):
    service, backends = svc
    bundle, _ = prepare_bundle(bell(), backends["sim-a"], "combined", 8)
    service.handle_submit(request_for(bundle))
    with pytest.raises(QOSError) as info:
        service.handle_submit(request_for(bundle, "mallory"))
    assert info.value.code == "unauthorized"


def test_unknown_backend(svc):
    service, backends = svc
    bundle, _ = prepare_bundle(bell(), backends["sim-a"], "combined", 8)
    req = dataclasses.replace(request_for(bundle), backend_id="sim-z")
    with pytest.raises(QOSError) as info:
        service.handle_submit(req)
    assert info.value.code == "unknown-backend"


def test_malformed_schedule_and_sizes(svc):
    service, backends = svc
    bundle, _ = prepare_bundle(ghz(5), backends["sim-a"], "combined", 8)
    req = request_for(bundle)
    for bad, code in [
        (dataclasses.replace(req, schedule=b"junk"), "malformed-schedule"),
        (dataclasses.replace(req, backend_id="sim-c"), "malformed-schedule"),  # 5 qubits on 3
        (dataclasses.replace(req, sealed_metadata=b"\x00"), "bad-request"),
        (dataclasses.replace(req, client_ephemeral_public=b"x"), "bad-request"),
        (dataclasses.replace(req, shots=0), "bad-request"),
    ]:
        with pytest.raises(QOSError) as info:
            service.handle_submit(dataclasses.replace(bad, idempotency_token=None))
        assert info.value.code == code


def test_fifo_and_pinning(svc):
    service, backends = svc
    rng = np.random.default_rng(0)
    submitted = {bid: [] for bid in backends}
    for i in range(30):
        bid = sorted(backends)[int(rng.integers(3))]
        c = random_circuit(rng, max_qubits=backends[bid].num_qubits, max_gates=6)
        job_id, _, _ = submit(service, backends[bid], c, shots=4)
        submitted[bid].append(job_id)
    service.drain()
    assert all(pinned == ran for _, pinned, ran in service.dispatch_log)
    assert service.completions == submitted


def test_threaded_lanes_complete_in_order(svc):
    service, backends = svc
    service.start()
    ids = {bid: [] for bid in backends}
    for i in range(15):
        bid = sorted(backends)[i % 3]
        ids[bid].append(submit(service, backends[bid], bell(), shots=4)[0])
    deadline = time.time() + 10
    while time.time() < deadline and sum(map(len, service.completions.values())) < 15:
        time.sleep(0.01)
    service.stop()
    assert service.completions == ids


def test_ownership_checked(svc):
    service, backends = svc
    job_id, _, _ = submit(service, backends["sim-a"], bell())
    with pytest.raises(QOSError) as info:
        service.handle_fetch(job_id, "mallory")
    assert info.value.code == "unauthorized"
    with pytest.raises(QOSError) as info:
        service.handle_status("job-999999", "alice")
    assert info.value.code == "unknown-job"


def test_tampered_metadata_fails_job(svc):
    service, backends = svc
    bundle, _ = prepare_bundle(bell(), backends["sim-a"], "combined", 8)
    blob = bundle.sealed_metadata
    ct = bytearray(blob.ciphertext)
    ct[0] ^= 1
    req = dataclasses.replace(
        request_for(bundle), sealed_metadata=SealedBlob(blob.key_id, blob.nonce, bytes(ct)).to_bytes()
    )
    job_id = service.handle_submit(req)
    service.drain()
    assert service.handle_status(job_id, "alice") == "Failed(metadata-auth)"
    assert service.handle_fetch(job_id, "alice").results is None


def test_bundle_for_other_backend_fails_auth(svc):
    # a sim-b bundle routed to sim-a passes intake but not the controller
    service, backends = svc
    bundle, _ = prepare_bundle(bell(), backends["sim-b"], "combined", 8)
    job_id = service.handle_submit(dataclasses.replace(request_for(bundle), backend_id="sim-a"))
    service.drain()
    assert service.handle_status(job_id, "alice") == "Failed(metadata-auth)"


def test_single_shot(svc):
    service, backends = svc
    job_id, _, record = submit(service, backends["sim-a"], Circuit(1, (gate("x", 0),)), shots=1)
    service.drain()
    r = service.handle_fetch(job_id, "alice").results
    assert recover_results(RawResults(job_id, r.bitstrings, r.sealed_output_metadata), record) == ["1"]


def test_capacity_failure(tmp_path):
    service, backends, secrets = make_service(tmp_path, specs=(("big", 14),))
    job_id, _, _ = submit(service, backends["big"], Circuit(13, ()), scheme="dummy-only", shots=2)
    service.drain()
    assert service.handle_status(job_id, "alice") == "Failed(capacity)"


def test_misrouted_controller_detected(tmp_path):
    service, backends, _ = make_service(tmp_path)
    job_id, _, _ = submit(service, backends["sim-a"], bell())
    job = service.schedule_next("sim-a")
    wrong = service._lanes["sim-b"].controller
    with pytest.raises(MigrationError):
        service.dispatch_and_collect(job, wrong)
    assert service.dispatch_log == [(job_id, "sim-a", "sim-b")]


def test_short_result_marks_failure(tmp_path):
    class Short:
        backend_id = "sim-a"

        def run(self, handoff):
            return ControllerResult(("00",), SealedBlob("", b"n" * 12, b""))

    _, backends, _ = make_service(tmp_path / "x")
    service = QOSService(JobStore(tmp_path / "y", fsync=False), backends, {"sim-a": Short()})
    job_id, _, _ = submit(service, backends["sim-a"], bell(), shots=4)
    service.drain()
    assert service.handle_status(job_id, "alice") == "Failed(controller-error)"


def test_concurrent_submits_get_distinct_ids(svc):
    service, backends = svc
    out = []
    lock = threading.Lock()

    def worker():
        for _ in range(10):
            job_id, _, _ = submit(service, backends["sim-a"], bell(), shots=2)
            with lock:
                out.append(job_id)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(out)) == 40
    assert service.store.queued("sim-a") == sorted(out)
