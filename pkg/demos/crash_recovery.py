"""
Surviving a crash mid-append
============================

Tear a journal write with the fault injector, reopen the store and finish the
work that was committed.
"""

import tempfile
from pathlib import Path

import numpy as np

from qtee_qos.circuit import BackendDescriptor, encode_schedule
from qtee_qos.client.workflow import prepare_bundle
from qtee_qos.controller import TrustedController
from qtee_qos.crypto import generate_keypair
from qtee_qos.qos import JobStore, QOSService, SubmitRequest
from qtee_qos.qos.faults import SimulatedCrash, TornWriteInjector
from qtee_qos.workloads import bell

secret, public = generate_keypair(np.random.default_rng(0))
backend = BackendDescriptor("sim-a", 5, public)
controllers = {"sim-a": TrustedController(backend, secret)}
store_dir = Path(tempfile.mkdtemp(prefix="qtee-store-"))


def request(bundle):
    return SubmitRequest("alice", bundle.backend_id, encode_schedule(bundle.schedule),
                         bundle.sealed_metadata.to_bytes(), bundle.client_ephemeral_public,
                         bundle.shots, bundle.idempotency_token)


bundles = [prepare_bundle(bell(), backend, "combined", 100)[0] for _ in range(5)]

# four submissions and one claim commit; the fifth submission is torn in half
service = QOSService(JobStore(store_dir, opener=TornWriteInjector(6)), [backend], controllers)
for b in bundles[:4]:
    print("accepted", service.handle_submit(request(b)))
print("claimed", service.schedule_next("sim-a").job_id)
try:
    service.handle_submit(request(bundles[4]))
except SimulatedCrash as exc:
    print("crash:", exc)

print("journal bytes on disk:", (store_dir / "journal.log").stat().st_size)

store = JobStore(store_dir)
for job in store.jobs():
    print(f"  {job.job_id} {job.state_label}")

service = QOSService(store, [backend], controllers)
print("ran", service.drain(), "jobs after recovery")
print([job.state_label for job in store.jobs()])

# the torn submission was never acknowledged; resubmitting it is safe
print("resubmitted as", service.handle_submit(request(bundles[4])))
store.close()
