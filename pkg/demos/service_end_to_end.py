"""
A full deployment on localhost
==============================

Write keys and configs, start the server, and drive it the way the ``qtee``
command does: prepare, submit, fetch, recover.
"""

import tempfile
import time
from pathlib import Path

from qtee_qos.circuit import encode_schedule, parse_circuit
from qtee_qos.client.cli import ClientConfig
from qtee_qos.client.files import RawResults
from qtee_qos.client.workflow import count_outcomes, format_counts, prepare_bundle, recover_results
from qtee_qos.crypto import SealedBlob
from qtee_qos.deploy import build_server, init_deployment
from qtee_qos.qos.protocol import RESULTS, QOSClient
from qtee_qos.qos.server import load_server_config

root = Path(tempfile.mkdtemp(prefix="qtee-demo-"))
init_deployment(root, listen="127.0.0.1:0")
server = build_server(load_server_config(root / "server.json")).start()
print("server on", server.address)

config = ClientConfig.load(root / "client-alice.json")
circuit = parse_circuit("""
# three-qubit GHZ
qubits 3
h 0
cx 0 1
cx 1 2
measure all
""")

with QOSClient(server.address, config.client_id, config.session_key) as client:
    jobs = []
    for backend_id in ("sim-a", "sim-b", "sim-c"):
        bundle, record = prepare_bundle(circuit, config.backends[backend_id], "combined", 500)
        job_id = client.submit(
            backend_id=bundle.backend_id,
            schedule=encode_schedule(bundle.schedule),
            sealed_metadata=bundle.sealed_metadata.to_bytes(),
            client_ephemeral_public=bundle.client_ephemeral_public,
            shots=bundle.shots,
            idempotency_token=bundle.idempotency_token,
        )
        print(f"{job_id} pinned to {backend_id}: {client.status(job_id)}")
        jobs.append((job_id, record))

    for job_id, record in jobs:
        while (reply := client.fetch(job_id)).kind != RESULTS:
            time.sleep(0.05)
        raw = RawResults(job_id, tuple(reply.fields["bitstrings"]),
                         SealedBlob.from_bytes(reply.fields["sealed_output_metadata"]))
        print(f"\n{job_id} recovered counts:")
        print(format_counts(count_outcomes(recover_results(raw, record))), end="")

server.stop()
server.service.store.close()
