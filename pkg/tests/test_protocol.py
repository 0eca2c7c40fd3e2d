import random
import socket
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from oeiattest import corpus
from oeiattest.analysis import analyze, export_bundle
from oeiattest.instrument import instrument_analysis
from oeiattest.measure import DecodeError
from oeiattest.prover import InterruptEvent
from oeiattest.protocol import (BLOB, CHALLENGE, ERROR, AttestationServer, Challenge,
                                FramingError, ProtocolError, ProverService, RemoteError,
                                VerifierClient, decode_blob_list, decode_frame,
                                encode_blob_list, encode_frame, read_frame, write_frame)


@pytest.fixture(scope="module")
def rover():
    e = corpus.load("rover")
    a = analyze(e.program)
    return e, instrument_analysis(a), export_bundle(a)


@pytest.fixture(scope="module")
def server(rover, key):
    _, ip, _ = rover
    with AttestationServer(ProverService(ip, key)) as srv:
        yield srv


def test_frame_round_trip():
    for t in (CHALLENGE, BLOB, ERROR):
        for payload in (b"", b"x", bytes(range(256))):
            f = decode_frame(encode_frame(t, payload))
            assert (f.type, f.payload) == (t, payload)
    with pytest.raises(FramingError):
        encode_frame(9, b"")
    with pytest.raises(FramingError):
        decode_frame(b"\x00\x00\x00\x05\x07hello")
    with pytest.raises(FramingError):
        decode_frame(encode_frame(BLOB, b"abc")[:-1])


def test_challenge_round_trip():
    ch = Challenge(b"\x05" * 16, 513, (1, -2, 3), (InterruptEvent(4, 2),))
    assert Challenge.decode(ch.encode()) == ch
    with pytest.raises(FramingError):
        Challenge.decode(b"\x00" * 18 + b"{not json")


def test_blob_list_round_trip(rover, key):
    from blobgen import random_blob
    rng = random.Random(4)
    blobs = [random_blob(rng, key) for _ in range(3)]
    assert decode_blob_list(encode_blob_list(blobs)) == blobs
    with pytest.raises(FramingError):
        decode_blob_list(encode_blob_list(blobs) + b"\x00")


def test_loopback_attestation(rover, server, key):
    e, _, bundle = rover
    client = VerifierClient(bundle, key.public_bytes)
    rep = client.request(server.endpoint, e.operation, e.inputs)
    assert rep.passed, rep.message


def test_replayed_response_rejected(rover, server, key):
    e, _, bundle = rover
    client = VerifierClient(bundle, key.public_bytes)
    nonce = b"\x11" * 16
    blobs = client.fetch(server.endpoint, Challenge(nonce, e.operation, e.inputs))
    assert client.check(blobs, e.operation, nonce).passed
    assert client.check(blobs, e.operation, nonce).failure == "NONCE_MISMATCH"
    # the same evidence offered in a fresh session with a new nonce
    assert client.check(blobs, e.operation, b"\x12" * 16).failure == "NONCE_MISMATCH"


def test_oversized_frame_refused(rover, key):
    _, ip, _ = rover
    with AttestationServer(ProverService(ip, key), max_frame=64) as srv:
        host, port = srv.server_address
        with socket.create_connection((host, port), timeout=5) as s:
            s.sendall(encode_frame(CHALLENGE, bytes(16) + b"\x00\x01" + b" " * 100))
            assert s.recv(1) == b""          # server drops the connection
    client = VerifierClient({}, b"", max_frame=8)
    with pytest.raises(FramingError, match="exceeds"):
        with AttestationServer(ProverService(ip, key)) as srv:
            client.fetch(srv.endpoint, Challenge(bytes(16), 1, (60, 10, 20)))


def test_wrong_frame_type_gets_error(server):
    with socket.create_connection(server.server_address, timeout=5) as s:
        write_frame(s, BLOB, b"")
        f = read_frame(s)
    assert f.type == ERROR


def test_prover_error_reported(rover, key):
    _, ip, bundle = rover
    with AttestationServer(ProverService(ip, key, max_steps=3)) as srv:
        client = VerifierClient(bundle, key.public_bytes)
        rep = client.request(srv.endpoint, 1, (60, 10, 20))
        # the step limit aborts the run: incomplete evidence, never a pass
        assert not rep.passed


def test_concurrent_sessions(rover, server, key):
    e, _, bundle = rover
    client = VerifierClient(bundle, key.public_bytes)
    with ThreadPoolExecutor(8) as pool:
        reports = list(pool.map(lambda _: client.request(server.endpoint, e.operation, e.inputs),
                                range(24)))
    assert all(r.passed for r in reports)
    assert len(client.replay) == 24


class HostileProxy:
    """Forwards one request and tampers with the response bytes."""

    def __init__(self, upstream, tamper):
        self.upstream = upstream
        self.tamper = tamper
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen()
        self.endpoint = "127.0.0.1:%d" % self.sock.getsockname()[1]
        self.thread = threading.Thread(target=self.serve, daemon=True)
        self.thread.start()

    def serve(self):
        conn, _ = self.sock.accept()
        with conn, socket.create_connection(self.upstream, timeout=5) as up:
            req = read_frame(conn)
            write_frame(up, req.type, req.payload)
            resp = read_frame(up)
            raw = encode_frame(resp.type, resp.payload)
            out = self.tamper(raw)
            if out:
                conn.sendall(out)
        self.sock.close()


def _flip(seed):
    def tamper(raw):
        rng = random.Random(seed)
        b = bytearray(raw)
        i = rng.randrange(5, len(b))
        b[i] ^= rng.randrange(1, 256)
        return bytes(b)
    return tamper


def _truncate(seed):
    return lambda raw: raw[:random.Random(seed).randrange(0, len(raw))]


def _duplicate_chunk(seed):
    def tamper(raw):
        rng = random.Random(seed)
        i = rng.randrange(5, len(raw) - 1)
        j = rng.randrange(i + 1, len(raw))
        body = raw[5:j] + raw[i:]        # raw[i:j] appears twice
        return encode_frame(raw[4], body)
    return tamper


@pytest.mark.parametrize("tamper", [_flip(s) for s in range(12)]
                         + [_truncate(s) for s in range(6)]
                         + [_duplicate_chunk(s) for s in range(6)])
def test_hostile_transport_never_passes(rover, server, key, tamper):
    e, _, bundle = rover
    proxy = HostileProxy(server.server_address, tamper)
    client = VerifierClient(bundle, key.public_bytes, timeout=2)
    try:
        rep = client.request(proxy.endpoint, e.operation, e.inputs)
    except (ProtocolError, DecodeError, socket.timeout, ConnectionError):
        return
    assert not rep.passed
    assert rep.failure in ("SIGNATURE", "NONCE_MISMATCH")


def test_remote_error_surfaces(rover, key):
    class Broken(ProverService):
        def respond(self, ch):
            raise RuntimeError("boom")
    _, ip, bundle = rover
    with AttestationServer(Broken(ip, key)) as srv:
        with pytest.raises(RemoteError, match="boom"):
            VerifierClient(bundle, key.public_bytes).request(srv.endpoint, 1)
