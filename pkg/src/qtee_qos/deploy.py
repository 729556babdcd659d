"""Deployment wiring: key files, config files, and the ``qtee-server`` command.

This is the only module that puts trusted controllers and the QOS service in
one process, standing in for the physical link between the cloud host and the
quantum machines.  Backend static keys are assumed pre-provisioned (written by
``qtee-server init``); the public halves are copied into client configs the
way a published attestation certificate would be.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuit import ALL_OPCODES, BackendDescriptor, Opcode
from .controller import TrustedController
from .crypto import generate_keypair, public_from_secret, random_bytes
from .qos.server import QOSServer, ServerConfig, load_server_config
from .qos.service import QOSService
from .qos.store import JobStore

log = logging.getLogger(__name__)


def write_key_file(path: Path, backend_id: str, secret: bytes) -> bytes:
    public = public_from_secret(secret)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"backend_id": backend_id, "secret": secret.hex(), "public": public.hex()}))
    os.chmod(path, 0o600)
    return public


def read_key_file(path: Path) -> tuple[str, bytes]:
    raw = json.loads(Path(path).read_text())
    return raw["backend_id"], bytes.fromhex(raw["secret"])


def _opcodes(names: Sequence[str] | None) -> frozenset[Opcode]:
    return ALL_OPCODES if names is None else frozenset(Opcode(n) for n in names)


def build_server(config: ServerConfig, *, tap=None, controller_seed: int | None = None) -> QOSServer:
    """Construct store, controllers, service and TCP server from a config."""
    descriptors = {}
    controllers = {}
    for entry in config.backends:
        key_backend, secret = read_key_file(entry.key_file)
        if key_backend != entry.backend_id:
            raise ValueError(f"{entry.key_file} holds keys for {key_backend}, not {entry.backend_id}")
        desc = BackendDescriptor(
            entry.backend_id, entry.num_qubits, public_from_secret(secret), _opcodes(entry.supported_opcodes)
        )
        descriptors[entry.backend_id] = desc
        seed = entry.seed if entry.seed is not None else controller_seed
        controllers[entry.backend_id] = TrustedController(desc, secret, seed=seed)
    store = JobStore(config.storage, snapshot_every=config.snapshot_every)
    service = QOSService(store, descriptors, controllers)
    return QOSServer(service, config.clients, config.listen, tap=tap)


def init_deployment(
    directory: str | os.PathLike,
    backends: Sequence[tuple[str, int]] = (("sim-a", 5), ("sim-b", 5), ("sim-c", 3)),
    clients: Sequence[str] = ("alice",),
    *,
    listen: str = "127.0.0.1:7788",
    seed: int | None = None,
) -> Path:
    """Write keys, ``server.json`` and one ``client-<id>.json`` per client."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed) if seed is not None else None
    backend_entries = []
    public_entries = []
    for backend_id, num_qubits in backends:
        secret, _ = generate_keypair(rng)
        key_file = Path("keys") / f"{backend_id}.key.json"
        public = write_key_file(root / key_file, backend_id, secret)
        backend_entries.append({"backend_id": backend_id, "num_qubits": num_qubits, "key_file": str(key_file)})
        public_entries.append(
            {
                "backend_id": backend_id,
                "num_qubits": num_qubits,
                "metadata_public_key": public.hex(),
                "supported_opcodes": sorted(o.value for o in ALL_OPCODES),
            }
        )
    client_entries = []
    for client_id in clients:
        session_key = random_bytes(32, rng)
        client_entries.append({"client_id": client_id, "session_key": session_key.hex()})
        (root / f"client-{client_id}.json").write_text(
            json.dumps(
                {
                    "client_id": client_id,
                    "session_key": session_key.hex(),
                    "server": listen,
                    "backends": public_entries,
                },
                indent=2,
            )
        )
    (root / "server.json").write_text(
        json.dumps(
            {
                "listen": listen,
                "storage": "store",
                "snapshot_every": 256,
                "backends": backend_entries,
                "clients": client_entries,
            },
            indent=2,
        )
    )
    return root / "server.json"


def _backend_arg(text: str) -> tuple[str, int]:
    name, sep, n = text.partition(":")
    if not sep or not n.isdigit():
        raise argparse.ArgumentTypeError("expected ID:QUBITS")
    return name, int(n)


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="qtee-server", description="QOS server for trusted quantum backends")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write keys and example server/client configs")
    p.add_argument("--dir", required=True, type=Path)
    p.add_argument("--backend", action="append", type=_backend_arg, help="ID:QUBITS (repeatable)")
    p.add_argument("--client", action="append", help="client id (repeatable)")
    p.add_argument("--listen", default="127.0.0.1:7788")

    p = sub.add_parser("serve", help="run the server")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--controller-seed", type=int, help="harness mode: reproducible shots and flips")

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "init":
        path = init_deployment(
            args.dir,
            args.backend or (("sim-a", 5), ("sim-b", 5), ("sim-c", 3)),
            args.client or ("alice",),
            listen=args.listen,
        )
        print(path)
        return 0
    config = load_server_config(args.config)
    server = build_server(config, controller_seed=args.controller_seed)
    print(f"listening on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
