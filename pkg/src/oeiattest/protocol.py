"""Challenge-response transport.

Every message is a frame: a 4-byte big-endian payload length, a 1-byte type
and the payload.

=========  ====  =========================================================
type       code  payload
=========  ====  =========================================================
CHALLENGE  1     nonce (16) | op id (u16 BE) | UTF-8 JSON request descriptor
BLOB       2     count (u16 BE) | count * (length u32 BE | encoded blob)
ERROR      3     UTF-8 message
=========  ====  =========================================================
"""
from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field

from .instrument import InstrumentedProgram
from .measure import AttestationBlob, DeviceKey, decode_blob
from .measure.session import DEFAULT_CAPACITY
from .prover import FaultSpec, InterruptEvent, run
from .verifier import ReplaySet, VerificationReport, verify

log = logging.getLogger(__name__)

CHALLENGE = 1
BLOB = 2
ERROR = 3
TYPES = (CHALLENGE, BLOB, ERROR)
HEADER = struct.Struct(">IB")
DEFAULT_MAX_FRAME = 1 << 20
NONCE_SIZE = 16


def max_frame_default() -> int:
    return int(os.environ.get("OEI_MAX_FRAME", DEFAULT_MAX_FRAME))


class ProtocolError(Exception):
    """Framing violation or a peer-reported error."""


class FramingError(ProtocolError):
    pass


class RemoteError(ProtocolError):
    pass


@dataclass(frozen=True)
class Frame:
    type: int
    payload: bytes

    def encode(self) -> bytes:
        return encode_frame(self.type, self.payload)


def encode_frame(ftype: int, payload: bytes) -> bytes:
    if ftype not in TYPES:
        raise FramingError(f"unknown frame type {ftype}")
    return HEADER.pack(len(payload), ftype) + payload


def decode_frame(data: bytes, max_frame: int = DEFAULT_MAX_FRAME) -> Frame:
    """Decode exactly one frame from ``data``."""
    if len(data) < HEADER.size:
        raise FramingError("truncated frame header")
    length, ftype = HEADER.unpack_from(data)
    if ftype not in TYPES:
        raise FramingError(f"unknown frame type {ftype}")
    if length > max_frame:
        raise FramingError(f"frame of {length} bytes exceeds limit {max_frame}")
    if len(data) != HEADER.size + length:
        raise FramingError("frame length does not match payload")
    return Frame(ftype, bytes(data[HEADER.size:]))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise FramingError("connection closed mid-frame" if buf else "connection closed")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket, max_frame: int = DEFAULT_MAX_FRAME) -> Frame:
    length, ftype = HEADER.unpack(_recv_exact(sock, HEADER.size))
    if ftype not in TYPES:
        raise FramingError(f"unknown frame type {ftype}")
    if length > max_frame:
        raise FramingError(f"frame of {length} bytes exceeds limit {max_frame}")
    return Frame(ftype, _recv_exact(sock, length))


def write_frame(sock: socket.socket, ftype: int, payload: bytes) -> None:
    sock.sendall(encode_frame(ftype, payload))


# -- payloads ------------------------------------------------------------------

@dataclass(frozen=True)
class Challenge:
    nonce: bytes
    op_id: int
    inputs: tuple[int, ...] = ()
    interrupts: tuple[InterruptEvent, ...] = ()

    def encode(self) -> bytes:
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError("nonce must be 16 bytes")
        desc = {"inputs": list(self.inputs),
                "interrupts": [e.to_json() for e in self.interrupts]}
        return self.nonce + struct.pack(">H", self.op_id) + json.dumps(desc).encode()

    @classmethod
    def decode(cls, payload: bytes) -> "Challenge":
        if len(payload) < NONCE_SIZE + 2:
            raise FramingError("short challenge")
        nonce = payload[:NONCE_SIZE]
        (op_id,) = struct.unpack_from(">H", payload, NONCE_SIZE)
        try:
            desc = json.loads(payload[NONCE_SIZE + 2:].decode() or "{}")
            inputs = tuple(int(v) for v in desc.get("inputs", []))
            irqs = tuple(InterruptEvent.from_json(e) for e in desc.get("interrupts", []))
        except (ValueError, TypeError, KeyError, AttributeError) as e:
            raise FramingError(f"bad challenge descriptor: {e}") from None
        return cls(nonce, op_id, inputs, irqs)


def encode_blob_list(blobs: list[AttestationBlob]) -> bytes:
    out = [struct.pack(">H", len(blobs))]
    for b in blobs:
        raw = b.encode()
        out.append(struct.pack(">I", len(raw)) + raw)
    return b"".join(out)


def decode_blob_list(payload: bytes) -> list[AttestationBlob]:
    """Raises DecodeError (from the blob codec) or FramingError."""
    if len(payload) < 2:
        raise FramingError("short blob list")
    (count,) = struct.unpack_from(">H", payload)
    pos = 2
    blobs = []
    for _ in range(count):
        if pos + 4 > len(payload):
            raise FramingError("truncated blob list")
        (n,) = struct.unpack_from(">I", payload, pos)
        pos += 4
        if pos + n > len(payload):
            raise FramingError("truncated blob list")
        blobs.append(decode_blob(payload[pos:pos + n]))
        pos += n
    if pos != len(payload):
        raise FramingError("trailing bytes after blob list")
    return blobs


# -- prover service -------------------------------------------------------------

@dataclass
class ProverService:
    """What one device does for a challenge: run the program and return blobs."""

    program: InstrumentedProgram
    key: DeviceKey
    faults: tuple[FaultSpec, ...] = ()
    capacity: int = DEFAULT_CAPACITY
    max_steps: int | None = None

    def respond(self, ch: Challenge) -> list[AttestationBlob]:
        """Every operation the device executes is measured, not only the one
        asked for, so an unrequested operation shows up in the evidence."""
        kw = {} if self.max_steps is None else {"max_steps": self.max_steps}
        result = run(self.program, None, ch.inputs, nonce=ch.nonce, key=self.key,
                     faults=self.faults, interrupts=ch.interrupts, capacity=self.capacity, **kw)
        return result.blobs


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: AttestationServer = self.server  # type: ignore[assignment]
        sock = self.request
        while True:
            try:
                frame = read_frame(sock, server.max_frame)
            except FramingError as e:
                if str(e) != "connection closed":
                    log.error("closing connection from %s: %s", self.client_address, e)
                return
            except OSError:
                return
            if frame.type != CHALLENGE:
                log.error("unexpected frame type %d from %s", frame.type, self.client_address)
                write_frame(sock, ERROR, b"expected CHALLENGE")
                return
            try:
                ch = Challenge.decode(frame.payload)
                blobs = server.service.respond(ch)
                write_frame(sock, BLOB, encode_blob_list(blobs))
            except FramingError as e:
                log.error("bad challenge from %s: %s", self.client_address, e)
                write_frame(sock, ERROR, str(e).encode())
                return
            except Exception as e:  # report, keep the service alive
                log.exception("prover failed")
                write_frame(sock, ERROR, f"prover error: {e}".encode())


class AttestationServer(socketserver.ThreadingTCPServer):
    """Threaded service; each connection runs its own interpreter instances."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, service: ProverService, address=("127.0.0.1", 0),
                 max_frame: int | None = None):
        self.service = service
        self.max_frame = max_frame or max_frame_default()
        self._thread: threading.Thread | None = None
        super().__init__(address, _Handler)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "AttestationServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve(program: InstrumentedProgram, key: DeviceKey, endpoint: str = "127.0.0.1:0", *,
          faults=(), capacity: int = DEFAULT_CAPACITY, max_frame: int | None = None,
          block: bool = True) -> AttestationServer:
    """Start the prover service; with ``block`` this never returns."""
    server = AttestationServer(ProverService(program, key, tuple(faults), capacity),
                               parse_endpoint(endpoint), max_frame)
    if block:
        log.info("serving on %s", server.endpoint)
        try:
            server.serve_forever()
        finally:
            server.server_close()
    return server


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


# -- verifier client ---------------------------------------------------------------

@dataclass
class VerifierClient:
    """Issues nonces, collects blobs and verifies them.  One replay set per client."""

    bundle: dict
    public_key: bytes
    timeout: float = 10.0
    max_frame: int = field(default_factory=max_frame_default)
    replay: ReplaySet = field(default_factory=ReplaySet)

    def fetch(self, endpoint: str, ch: Challenge) -> list[AttestationBlob]:
        with socket.create_connection(parse_endpoint(endpoint), timeout=self.timeout) as sock:
            sock.settimeout(self.timeout)
            write_frame(sock, CHALLENGE, ch.encode())
            frame = read_frame(sock, self.max_frame)
        if frame.type == ERROR:
            raise RemoteError(frame.payload.decode(errors="replace"))
        if frame.type != BLOB:
            raise FramingError(f"expected BLOB, got type {frame.type}")
        return decode_blob_list(frame.payload)

    def request(self, endpoint: str, op_id: int, inputs=(), interrupts=()) -> VerificationReport:
        nonce = os.urandom(NONCE_SIZE)
        blobs = self.fetch(endpoint, Challenge(nonce, op_id, tuple(inputs), tuple(interrupts)))
        return self.check(blobs, op_id, nonce)

    def check(self, blobs, op_id: int, nonce: bytes) -> VerificationReport:
        return verify(blobs, self.bundle, op_id, nonce, self.public_key, replay=self.replay)


def request_attestation(endpoint: str, op_id: int, inputs, public_key: bytes, bundle: dict, *,
                        interrupts=(), timeout: float = 10.0,
                        client: VerifierClient | None = None) -> VerificationReport:
    """Fresh nonce, CHALLENGE, BLOB, verify.  Timeouts raise socket.timeout,
    framing problems FramingError, malformed blobs DecodeError."""
    client = client or VerifierClient(bundle, public_key, timeout)
    return client.request(endpoint, op_id, inputs, interrupts)
