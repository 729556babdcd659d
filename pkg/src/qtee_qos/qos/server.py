"""Threaded TCP front end for :class:`~qtee_qos.qos.service.QOSService`."""

from __future__ import annotations

import json
import logging
import os
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..crypto import AuthenticationFailure, random_bytes
from ..encoding import EncodingError, require
from .protocol import (
    ACCEPTED,
    FETCH,
    HANDSHAKE_NONCE,
    RESULTS,
    STATE,
    STATUS,
    SUBMIT,
    WELCOME_OK,
    WELCOME_UNKNOWN_CLIENT,
    FramedSocket,
    Message,
    ProtocolError,
    SecureChannel,
    Tap,
    TransportError,
    decode_hello,
    derive_session_key,
    encode_welcome,
    error_message,
    parse_address,
)
from .service import QOSError, QOSService, SubmitRequest

log = logging.getLogger(__name__)

ENV_LISTEN = "QTEE_LISTEN"
ENV_STORAGE = "QTEE_STORAGE"


@dataclass
class BackendEntry:
    backend_id: str
    num_qubits: int
    key_file: Path
    supported_opcodes: list[str] | None = None
    seed: int | None = None


@dataclass
class ServerConfig:
    listen: str
    storage: Path
    backends: list[BackendEntry]
    clients: dict[str, bytes] = field(default_factory=dict)
    snapshot_every: int = 256


def load_server_config(path: str | os.PathLike, environ: Mapping[str, str] | None = None) -> ServerConfig:
    """Read a JSON server config.  ``QTEE_LISTEN``/``QTEE_STORAGE`` override it.

    Relative paths inside the file resolve against the file's directory.
    """
    environ = os.environ if environ is None else environ
    path = Path(path)
    raw = json.loads(path.read_text())
    base = path.parent
    backends = [
        BackendEntry(
            backend_id=b["backend_id"],
            num_qubits=int(b["num_qubits"]),
            key_file=base / b["key_file"],
            supported_opcodes=b.get("supported_opcodes"),
            seed=b.get("seed"),
        )
        for b in raw["backends"]
    ]
    ids = [b.backend_id for b in backends]
    if len(set(ids)) != len(ids):
        raise ValueError("backend ids must be unique")
    clients = {c["client_id"]: bytes.fromhex(c["session_key"]) for c in raw.get("clients", [])}
    storage = environ.get(ENV_STORAGE) or raw["storage"]
    return ServerConfig(
        listen=environ.get(ENV_LISTEN) or raw.get("listen", "127.0.0.1:7788"),
        storage=base / storage,
        backends=backends,
        clients=clients,
        snapshot_every=int(raw.get("snapshot_every", 256)),
    )


def handle_message(service: QOSService, client_id: str, msg: Message) -> Message:
    """Map one decoded request to one response.  Never raises for request errors."""
    try:
        if msg.kind == SUBMIT:
            f = msg.fields
            require(
                f,
                ["client_id", "backend_id", "schedule", "sealed_metadata",
                 "client_ephemeral_public", "shots"],
            )
            if f["client_id"] != client_id:
                raise QOSError("unauthorized", "client_id does not match the session")
            job_id = service.handle_submit(
                SubmitRequest(
                    client_id=client_id,
                    backend_id=f["backend_id"],
                    schedule=f["schedule"],
                    sealed_metadata=f["sealed_metadata"],
                    client_ephemeral_public=f["client_ephemeral_public"],
                    shots=f["shots"],
                    idempotency_token=f.get("idempotency_token"),
                )
            )
            return Message(ACCEPTED, {"job_id": job_id})
        if msg.kind == STATUS:
            require(msg.fields, ["job_id"])
            return Message(STATE, {"state": service.handle_status(msg.fields["job_id"], client_id)})
        if msg.kind == FETCH:
            require(msg.fields, ["job_id"])
            res = service.handle_fetch(msg.fields["job_id"], client_id)
            if res.results is None:
                return Message(STATE, {"state": res.state})
            return Message(
                RESULTS,
                {
                    "job_id": msg.fields["job_id"],
                    "bitstrings": list(res.results.bitstrings),
                    "sealed_output_metadata": res.results.sealed_output_metadata.to_bytes(),
                },
            )
        return error_message("bad-request", f"unexpected message {msg.name}")
    except QOSError as exc:
        return error_message(exc.code, exc.message)
    except EncodingError as exc:
        return error_message("bad-request", str(exc))


class _Handler(socketserver.BaseRequestHandler):
    server: _TCPServer

    def handle(self) -> None:
        qos = self.server.qos
        framed = FramedSocket(self.request, qos.tap)
        try:
            client_id, client_nonce = decode_hello(framed.recv_frame())
            master = qos.clients.get(client_id)
            if master is None:
                framed.send_frame(encode_welcome(WELCOME_UNKNOWN_CLIENT))
                return
            server_nonce = random_bytes(HANDSHAKE_NONCE)
            framed.send_frame(encode_welcome(WELCOME_OK, server_nonce))
            key = derive_session_key(master, client_id, client_nonce, server_nonce)
            channel = SecureChannel(framed, key, is_client=False)
            while True:
                msg = channel.recv()
                channel.send(handle_message(qos.service, client_id, msg))
        except TransportError:
            pass
        except (AuthenticationFailure, ProtocolError, EncodingError) as exc:
            log.warning("dropping connection from %s: %s", self.client_address, exc)
        finally:
            framed.close()


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    qos: QOSServer


class QOSServer:
    def __init__(
        self,
        service: QOSService,
        clients: Mapping[str, bytes],
        address: str | tuple[str, int] = "127.0.0.1:0",
        *,
        tap: Tap | None = None,
    ) -> None:
        self.service = service
        self.clients = dict(clients)
        self.tap = tap
        addr = parse_address(address) if isinstance(address, str) else address
        self._tcp = _TCPServer(addr, _Handler)
        self._tcp.qos = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._tcp.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> QOSServer:
        self.service.start()
        self._thread = threading.Thread(target=self._tcp.serve_forever, name="qos-server", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.service.start()
        try:
            self._tcp.serve_forever()
        finally:
            self.service.stop()

    def stop(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        self.service.stop()
        if self._thread is not None:
            self._thread.join(5)

    def __enter__(self) -> QOSServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
