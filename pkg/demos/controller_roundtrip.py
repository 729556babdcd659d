"""
Inside the trust boundary
=========================

Seal a circuit for one backend, let that backend's controller open it, run it
with output flips, and undo the flips on the client.
"""

import numpy as np

from qtee_qos.circuit import BackendDescriptor
from qtee_qos.client.files import RawResults
from qtee_qos.client.workflow import count_outcomes, prepare_bundle, recover_results
from qtee_qos.controller import TrustedController
from qtee_qos.crypto import AuthenticationFailure, generate_keypair
from qtee_qos.handoff import Handoff
from qtee_qos.workloads import bell

# pre-provisioned backend key; clients only ever hold the public half
secret, public = generate_keypair(np.random.default_rng(1))
backend = BackendDescriptor("sim-a", 5, public)

bundle, record = prepare_bundle(bell(), backend, "combined", 1000, seed=3)
print(f"bundle: {len(bundle.schedule)} slots, sealed metadata {len(bundle.sealed_metadata.ciphertext)} bytes")

controller = TrustedController(backend, secret, seed=11)
job = Handoff("job-000001", bundle.backend_id, bundle.schedule, bundle.sealed_metadata,
              bundle.client_ephemeral_public, bundle.shots)
result = controller.run(job)

# the provider only ever sees flipped outcomes: all four values show up
print("provider view:", count_outcomes(result.bitstrings))

raw = RawResults(job.job_id, result.bitstrings, result.sealed_output_metadata)
print("client view:  ", count_outcomes(recover_results(raw, record)))

# another backend cannot open the metadata
other_secret, other_public = generate_keypair(np.random.default_rng(2))
intruder = TrustedController(BackendDescriptor("sim-a", 5, other_public), other_secret)
try:
    intruder.run(job)
except AuthenticationFailure as exc:
    print("wrong controller:", exc)
