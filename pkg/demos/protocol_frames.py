"""
Example frames
==============

Reproduce the hex frames quoted in PROTOCOL.md.  All randomness comes from one
seeded generator so the output is stable.
"""

import struct

import numpy as np

from qtee_qos.circuit import BackendDescriptor, encode_schedule
from qtee_qos.client.workflow import prepare_bundle
from qtee_qos.crypto import generate_keypair, seal
from qtee_qos.qos.protocol import (
    ACCEPTED,
    STATUS,
    SUBMIT,
    Message,
    derive_session_key,
    encode_hello,
    encode_welcome,
)
from qtee_qos.workloads import bell

rng = np.random.default_rng(2024)
master = bytes(range(32))
client_nonce, server_nonce = rng.bytes(16), rng.bytes(16)


def frame(body):
    return struct.pack(">I", len(body)) + body


def show(title, data):
    print(f"{title} ({len(data)} bytes)")
    for i in range(0, len(data), 32):
        print("  " + data[i : i + 32].hex(" "))
    print()


show("HELLO", frame(encode_hello("alice", client_nonce)))
show("WELCOME", frame(encode_welcome(0, server_nonce)))

key = derive_session_key(master, "alice", client_nonce, server_nonce)
print("session key:", key.hex(), "\n")


def sealed(msg, seq):
    blob = seal(msg.encode(), key, struct.pack(">Q", seq), rng)
    return msg.encode(), frame(blob.nonce + blob.ciphertext)


_, public = generate_keypair(rng)
bundle, _ = prepare_bundle(bell(), BackendDescriptor("sim-a", 5, public), "swap-only", 4, seed=1)
submit = Message(SUBMIT, {
    "idempotency_token": bundle.idempotency_token,
    "client_id": "alice",
    "backend_id": "sim-a",
    "schedule": encode_schedule(bundle.schedule),
    "sealed_metadata": bundle.sealed_metadata.to_bytes(),
    "client_ephemeral_public": bundle.client_ephemeral_public,
    "shots": 4,
})
for title, msg, seq in [
    ("SUBMIT", submit, 0),
    ("ACCEPTED", Message(ACCEPTED, {"job_id": "job-000001"}), 1),
    ("STATUS", Message(STATUS, {"job_id": "job-000001"}), 2),
]:
    plain, wire = sealed(msg, seq)
    show(f"{title} plaintext, seq {seq}", plain)
    show(f"{title} frame", wire)
