"""Shared builders for the service-level tests."""

import numpy as np

from qtee_qos.circuit import BackendDescriptor, encode_schedule
from qtee_qos.client.workflow import prepare_bundle
from qtee_qos.controller import TrustedController
from qtee_qos.crypto import generate_keypair
from qtee_qos.qos.service import QOSService, SubmitRequest
from qtee_qos.qos.store import JobStore

BACKEND_SPECS = (("sim-a", 5), ("sim-b", 5), ("sim-c", 3))


def make_backends(seed=0, specs=BACKEND_SPECS):
    rng = np.random.default_rng(seed)
    backends, secrets = {}, {}
    for bid, n in specs:
        secret, public = generate_keypair(rng)
        backends[bid] = BackendDescriptor(bid, n, public)
        secrets[bid] = secret
    return backends, secrets


def make_service(path, *, seed=0, controller_seed=1, store_kwargs=None, specs=BACKEND_SPECS):
    backends, secrets = make_backends(seed, specs)
    controllers = {
        bid: TrustedController(b, secrets[bid], seed=controller_seed) for bid, b in backends.items()
    }
    store = JobStore(path, fsync=False, **(store_kwargs or {}))
    return QOSService(store, backends, controllers), backends, secrets


def request_for(bundle, client_id="alice", token=True):
    return SubmitRequest(
        client_id=client_id,
        backend_id=bundle.backend_id,
        schedule=encode_schedule(bundle.schedule),
        sealed_metadata=bundle.sealed_metadata.to_bytes(),
        client_ephemeral_public=bundle.client_ephemeral_public,
        shots=bundle.shots,
        idempotency_token=bundle.idempotency_token if token else None,
    )


def submit(service, backend, circuit, *, scheme="combined", shots=16, seed=None, client_id="alice"):
    bundle, record = prepare_bundle(circuit, backend, scheme, shots, seed=seed)
    return service.handle_submit(request_for(bundle, client_id)), bundle, record


class Capture:
    """Transport tap that keeps every frame seen on one side."""

    def __init__(self):
        self.frames = []

    def __call__(self, direction, data):
        self.frames.append((direction, bytes(data)))

    @property
    def blob(self):
        return b"".join(d for _, d in self.frames)
