"""``qtee``: prepare, submit, fetch and recover protected quantum jobs.

Exit codes: 0 ok, 1 usage, 2 server or network error, 3 authentication or
integrity failure, 4 job not finished yet.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..circuit import ALL_OPCODES, BackendDescriptor, CircuitParseError, encode_schedule, parse_circuit
from ..crypto import AuthenticationFailure, SealedBlob
from ..encoding import EncodingError
from ..obfuscation import Scheme
from ..qos.protocol import RESULTS, QOSClient, ServerError, TransportError
from .files import Bundle, RawResults, write_atomic
from .secrets import SecretStore, SecretStoreError
from .workflow import (
    IntegrityError,
    ValidationError,
    count_outcomes,
    format_counts,
    prepare_bundle,
    recover_results,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SERVER = 2
EXIT_AUTH = 3
EXIT_PENDING = 4

ENV_CONFIG = "QTEE_CLIENT_CONFIG"
ENV_SERVER = "QTEE_SERVER"
ENV_SECRETS = "QTEE_SECRETS_DIR"
ENV_PASSPHRASE = "QTEE_PASSPHRASE"


class UsageError(Exception):
    pass


@dataclass
class ClientConfig:
    client_id: str
    session_key: bytes
    server: str | None
    backends: dict[str, BackendDescriptor]

    @classmethod
    def load(cls, path: str | os.PathLike) -> ClientConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"client config {path} not found (set --config or {ENV_CONFIG})") from None
        backends = {}
        for b in raw.get("backends", []):
            backends[b["backend_id"]] = BackendDescriptor(
                b["backend_id"],
                int(b["num_qubits"]),
                bytes.fromhex(b["metadata_public_key"]),
                frozenset(b.get("supported_opcodes") or ALL_OPCODES),
            )
        return cls(raw["client_id"], bytes.fromhex(raw["session_key"]), raw.get("server"), backends)


def _config(args) -> ClientConfig:
    path = args.config or os.environ.get(ENV_CONFIG) or "client.json"
    return ClientConfig.load(path)


def _server(args, config: ClientConfig) -> str:
    server = args.server or os.environ.get(ENV_SERVER) or config.server
    if not server:
        raise UsageError(f"no server address (use --server or {ENV_SERVER})")
    return server


def _secrets(args, *, creating: bool = False) -> SecretStore:
    directory = args.secrets or os.environ.get(ENV_SECRETS)
    if not directory:
        raise UsageError(f"no secrets directory (use --secrets or {ENV_SECRETS})")
    passphrase = os.environ.get(args.passphrase_env) or None
    insecure = getattr(args, "insecure_store", False)
    if creating and not passphrase and not insecure:
        raise UsageError(
            f"set {args.passphrase_env} to encrypt the secret record, or pass --insecure-store"
        )
    return SecretStore(directory, passphrase, insecure=insecure)


def cmd_prepare(args) -> int:
    config = _config(args)
    backend = config.backends.get(args.backend)
    if backend is None:
        raise UsageError(f"unknown backend {args.backend!r}; configured: {', '.join(sorted(config.backends))}")
    store = _secrets(args, creating=True)
    try:
        circuit = parse_circuit(Path(args.circuit).read_text())
    except CircuitParseError as exc:
        print(f"{args.circuit}:{exc.line}: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    try:
        bundle, record = prepare_bundle(
            circuit, backend, args.scheme, args.shots, dummy_count=args.dummy_count, seed=args.seed
        )
    except ValidationError as exc:
        for v in exc.violations:
            print(f"{args.circuit}: {v}", file=sys.stderr)
        return EXIT_USAGE
    write_atomic(args.out, bundle.to_bytes())
    store.save(record)
    print(f"wrote {args.out} ({len(bundle.schedule)} slots, token {bundle.idempotency_token})")
    return EXIT_OK


def cmd_submit(args) -> int:
    config = _config(args)
    server = _server(args, config)
    bundle = Bundle.from_bytes(Path(args.bundle).read_bytes())
    delay = 0.2
    for attempt in range(args.retries + 1):
        try:
            with QOSClient(server, config.client_id, config.session_key) as client:
                job_id = client.submit(
                    backend_id=bundle.backend_id,
                    schedule=encode_schedule(bundle.schedule),
                    sealed_metadata=bundle.sealed_metadata.to_bytes(),
                    client_ephemeral_public=bundle.client_ephemeral_public,
                    shots=bundle.shots,
                    idempotency_token=bundle.idempotency_token,
                )
            break
        except TransportError as exc:
            if attempt == args.retries:
                print(f"error: {exc}", file=sys.stderr)
                print("hint: rerun the same submit; the bundle's idempotency token prevents duplicates",
                      file=sys.stderr)
                return EXIT_SERVER
            time.sleep(delay)
            delay *= 2
    if args.secrets or os.environ.get(ENV_SECRETS):
        _secrets(args).attach_job(bundle.idempotency_token, job_id)
    print(job_id)
    return EXIT_OK


def cmd_fetch(args) -> int:
    config = _config(args)
    server = _server(args, config)
    with QOSClient(server, config.client_id, config.session_key) as client:
        reply = client.fetch(args.job)
    if reply.kind != RESULTS:
        print(reply.fields["state"])
        return EXIT_PENDING
    raw = RawResults(
        reply.fields["job_id"],
        tuple(reply.fields["bitstrings"]),
        SealedBlob.from_bytes(reply.fields["sealed_output_metadata"]),
    )
    write_atomic(args.out, raw.to_bytes())
    print(f"wrote {args.out} ({len(raw.bitstrings)} shots)")
    return EXIT_OK


def cmd_recover(args) -> int:
    raw = RawResults.from_bytes(Path(args.results).read_bytes())
    record = _secrets(args).for_job(raw.job_id)
    try:
        outcomes = recover_results(raw, record)
    except AuthenticationFailure:
        print(f"error: output metadata invalid for this job ({raw.job_id})", file=sys.stderr)
        return EXIT_AUTH
    except IntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUTH
    if args.shots_out:
        Path(args.shots_out).write_text("".join(o + "\n" for o in outcomes))
    sys.stdout.write(format_counts(count_outcomes(outcomes)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtee", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help=f"client config JSON (env {ENV_CONFIG}, default ./client.json)")
    parser.add_argument("--passphrase-env", default=ENV_PASSPHRASE, metavar="VAR",
                        help="environment variable holding the secrets passphrase")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="obfuscate and seal a circuit into a bundle")
    p.add_argument("--circuit", required=True)
    p.add_argument("--backend", required=True)
    p.add_argument("--scheme", required=True, choices=[s.value for s in Scheme])
    p.add_argument("--shots", required=True, type=int)
    p.add_argument("--dummy-count", type=int)
    p.add_argument("--seed", type=int, help="reproducible bundle (testing only: makes keys predictable)")
    p.add_argument("--out", required=True)
    p.add_argument("--secrets", help=f"secrets directory (env {ENV_SECRETS})")
    p.add_argument("--insecure-store", action="store_true", help="store the secret record unencrypted")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("submit", help="send a bundle to the QOS")
    p.add_argument("--bundle", required=True)
    p.add_argument("--server", help=f"HOST:PORT (env {ENV_SERVER})")
    p.add_argument("--secrets", help=f"secrets directory (env {ENV_SECRETS})")
    p.add_argument("--retries", type=int, default=2)
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("fetch", help="download flipped outcomes and sealed output metadata")
    p.add_argument("--job", required=True)
    p.add_argument("--server", help=f"HOST:PORT (env {ENV_SERVER})")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("recover", help="undo the output flips and print counts")
    p.add_argument("--results", required=True)
    p.add_argument("--secrets", help=f"secrets directory (env {ENV_SECRETS})")
    p.add_argument("--shots-out", help="also write per-shot outcomes, one per line")
    p.set_defaults(func=cmd_recover)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ServerError as exc:
        print(f"server error: {exc.code}: {exc.message}", file=sys.stderr)
        return EXIT_AUTH if exc.code == "unauthorized" else EXIT_SERVER
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("hint: check the server address and retry", file=sys.stderr)
        return EXIT_SERVER
    except SecretStoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUTH
    except (EncodingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
