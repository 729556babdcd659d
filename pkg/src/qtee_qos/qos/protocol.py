"""Client <-> QOS wire protocol.  See PROTOCOL.md for the byte-level layout.

Every frame is a 4-byte big-endian length followed by the body.  The first
exchange is a cleartext handshake (HELLO / WELCOME) that fixes the client id
and two fresh nonces; everything after it is sealed with a per-connection key
derived from the client's configured session key and those nonces.  The
associated data of frame ``k`` on a connection is ``k`` as a u64: requests
take even numbers and responses odd ones, so frames cannot be replayed,
reordered or reflected.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field
from typing import Any, Callable

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..crypto import NONCE_SIZE, AuthenticationFailure, SealedBlob, open_blob, random_bytes, seal
from ..encoding import EncodingError, Reader, Writer, decode_fields, encode_fields

MAX_FRAME = 16 * 1024 * 1024
HANDSHAKE_MAGIC = b"QTEE"
PROTOCOL_VERSION = 1
HANDSHAKE_NONCE = 16

SUBMIT = 0x01
STATUS = 0x02
FETCH = 0x03
ACCEPTED = 0x81
STATE = 0x82
RESULTS = 0x83
ERROR = 0x8F

MESSAGE_NAMES = {
    SUBMIT: "SUBMIT",
    STATUS: "STATUS",
    FETCH: "FETCH",
    ACCEPTED: "ACCEPTED",
    STATE: "STATE",
    RESULTS: "RESULTS",
    ERROR: "ERROR",
}

WELCOME_OK = 0
WELCOME_UNKNOWN_CLIENT = 1

Tap = Callable[[str, bytes], None]


class ProtocolError(Exception):
    pass


class TransportError(ConnectionError):
    """Network-level failure; safe to retry with the same idempotency token."""


class ServerError(Exception):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


@dataclass
class Message:
    kind: int
    fields: dict[str, Any] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return MESSAGE_NAMES.get(self.kind, f"0x{self.kind:02x}")

    def encode(self) -> bytes:
        return bytes([self.kind]) + encode_fields(self.fields)

    @classmethod
    def decode(cls, data: bytes) -> Message:
        if not data:
            raise EncodingError("empty message")
        kind = data[0]
        if kind not in MESSAGE_NAMES:
            raise EncodingError(f"unknown message kind 0x{kind:02x}")
        return cls(kind, decode_fields(data[1:]))


def error_message(code: str, message: str) -> Message:
    return Message(ERROR, {"code": code, "message": message})


# --- framing -------------------------------------------------------------------


class FramedSocket:
    """Length-prefixed frames over a connected stream socket."""

    def __init__(self, sock: socket.socket, tap: Tap | None = None) -> None:
        self.sock = sock
        self.tap = tap

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            chunk = self.sock.recv(min(n, 65536))
            if not chunk:
                raise TransportError("connection closed mid-frame" if chunks else "connection closed")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def send_frame(self, body: bytes) -> None:
        if len(body) > MAX_FRAME:
            raise ProtocolError(f"frame of {len(body)} bytes exceeds limit")
        data = struct.pack(">I", len(body)) + body
        if self.tap:
            self.tap("send", data)
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(str(exc)) from None

    def recv_frame(self) -> bytes:
        try:
            header = self._recv_exact(4)
            (length,) = struct.unpack(">I", header)
            if length > MAX_FRAME:
                raise ProtocolError(f"frame of {length} bytes exceeds limit")
            body = self._recv_exact(length)
        except OSError as exc:
            if isinstance(exc, TransportError):
                raise
            raise TransportError(str(exc)) from None
        if self.tap:
            self.tap("recv", header + body)
        return body

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


# --- handshake ---------------------------------------------------------------------


def encode_hello(client_id: str, nonce: bytes) -> bytes:
    return Writer().raw(HANDSHAKE_MAGIC).u8(PROTOCOL_VERSION).text(client_id).raw(nonce).getvalue()


def decode_hello(body: bytes) -> tuple[str, bytes]:
    r = Reader(body)
    if r.raw(4) != HANDSHAKE_MAGIC or r.u8() != PROTOCOL_VERSION:
        raise ProtocolError("bad HELLO")
    client_id = r.text()
    nonce = r.raw(HANDSHAKE_NONCE)
    r.expect_end()
    return client_id, nonce


def encode_welcome(status: int, nonce: bytes = b"\x00" * HANDSHAKE_NONCE) -> bytes:
    return Writer().raw(HANDSHAKE_MAGIC).u8(status).raw(nonce).getvalue()


def decode_welcome(body: bytes) -> tuple[int, bytes]:
    r = Reader(body)
    if r.raw(4) != HANDSHAKE_MAGIC:
        raise ProtocolError("bad WELCOME")
    status = r.u8()
    nonce = r.raw(HANDSHAKE_NONCE)
    r.expect_end()
    return status, nonce


def derive_session_key(master: bytes, client_id: str, client_nonce: bytes, server_nonce: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=client_nonce + server_nonce,
        info=b"qtee-qos/session/v1/" + client_id.encode("utf-8"),
    ).derive(master)


class SecureChannel:
    """Sealed message exchange over a :class:`FramedSocket` after the handshake."""

    def __init__(self, framed: FramedSocket, key: bytes, *, is_client: bool) -> None:
        self.framed = framed
        self._key = key
        self._send_seq = 0 if is_client else 1
        self._recv_seq = 1 if is_client else 0

    def send(self, msg: Message) -> None:
        blob = seal(msg.encode(), self._key, struct.pack(">Q", self._send_seq))
        self._send_seq += 2
        self.framed.send_frame(blob.nonce + blob.ciphertext)

    def recv(self) -> Message:
        body = self.framed.recv_frame()
        if len(body) < NONCE_SIZE:
            raise AuthenticationFailure()
        blob = SealedBlob("", body[:NONCE_SIZE], body[NONCE_SIZE:])
        plaintext = open_blob(blob, self._key, struct.pack(">Q", self._recv_seq))
        self._recv_seq += 2
        return Message.decode(plaintext)


# --- client ----------------------------------------------------------------------------


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be HOST:PORT, got {address!r}")
    return host or "127.0.0.1", int(port)


class QOSClient:
    """Blocking client for one server.  Use as a context manager."""

    def __init__(
        self,
        address: str | tuple[str, int],
        client_id: str,
        session_key: bytes,
        *,
        timeout: float = 30.0,
        tap: Tap | None = None,
    ) -> None:
        self.address = parse_address(address) if isinstance(address, str) else address
        self.client_id = client_id
        self._master = session_key
        self.timeout = timeout
        self.tap = tap
        self._channel: SecureChannel | None = None

    def connect(self) -> QOSClient:
        try:
            sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach {self.address[0]}:{self.address[1]}: {exc}") from None
        framed = FramedSocket(sock, self.tap)
        try:
            client_nonce = random_bytes(HANDSHAKE_NONCE)
            framed.send_frame(encode_hello(self.client_id, client_nonce))
            status, server_nonce = decode_welcome(framed.recv_frame())
        except (ProtocolError, EncodingError, TransportError):
            framed.close()
            raise
        if status == WELCOME_UNKNOWN_CLIENT:
            framed.close()
            raise ServerError("unauthorized", f"server does not know client {self.client_id!r}")
        key = derive_session_key(self._master, self.client_id, client_nonce, server_nonce)
        self._channel = SecureChannel(framed, key, is_client=True)
        return self

    def close(self) -> None:
        if self._channel is not None:
            self._channel.framed.close()
            self._channel = None

    def __enter__(self) -> QOSClient:
        if self._channel is None:
            self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(self, msg: Message) -> Message:
        if self._channel is None:
            self.connect()
        assert self._channel is not None
        self._channel.send(msg)
        reply = self._channel.recv()
        if reply.kind == ERROR:
            raise ServerError(reply.fields.get("code", "error"), reply.fields.get("message", ""))
        return reply

    def submit(
        self,
        *,
        backend_id: str,
        schedule: bytes,
        sealed_metadata: bytes,
        client_ephemeral_public: bytes,
        shots: int,
        idempotency_token: str,
    ) -> str:
        reply = self.request(
            Message(
                SUBMIT,
                {
                    "idempotency_token": idempotency_token,
                    "client_id": self.client_id,
                    "backend_id": backend_id,
                    "schedule": schedule,
                    "sealed_metadata": sealed_metadata,
                    "client_ephemeral_public": client_ephemeral_public,
                    "shots": shots,
                },
            )
        )
        if reply.kind != ACCEPTED:
            raise ProtocolError(f"expected ACCEPTED, got {reply.name}")
        return reply.fields["job_id"]

    def status(self, job_id: str) -> str:
        reply = self.request(Message(STATUS, {"job_id": job_id}))
        if reply.kind != STATE:
            raise ProtocolError(f"expected STATE, got {reply.name}")
        return reply.fields["state"]

    def fetch(self, job_id: str) -> Message:
        """RESULTS (``bitstrings`` + ``sealed_output_metadata``) or STATE."""
        reply = self.request(Message(FETCH, {"job_id": job_id}))
        if reply.kind not in (RESULTS, STATE):
            raise ProtocolError(f"expected RESULTS or STATE, got {reply.name}")
        return reply
