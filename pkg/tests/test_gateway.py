import io
import socket
import threading

import pytest
from hypothesis import given, settings, strategies as st

from vitalwire.errors import BindError, DownstreamUnreachable, MidStreamDisconnect
from vitalwire.gateway import Endpoint, ForwarderConfig, forward_stream, parse_endpoint, run_forwarder


def run(data: bytes, chunk=143, read_sizes=None):
    src = io.BytesIO(data)
    sizes = iter(read_sizes or [])
    sent = []
    stats = forward_stream(lambda: src.read(next(sizes, 4096)), sent.append, chunk)
    return stats, sent


def test_286_bytes_two_full_chunks():
    stats, sent = run(bytes(range(256)) + bytes(30))
    assert [len(c) for c in sent] == [143, 143]
    assert (stats.chunks, stats.partial_chunks, stats.bytes_out) == (2, 0, 286)


def test_100_bytes_one_partial_chunk():
    stats, sent = run(b"x" * 100)
    assert [len(c) for c in sent] == [100]
    assert stats.partial_chunks == 1


def test_empty_input():
    stats, sent = run(b"")
    assert sent == [] and stats.chunks == 0 and stats.bytes_in == 0


def test_chunks_assembled_across_small_reads():
    stats, sent = run(bytes(300), read_sizes=[1, 2, 100, 50, 7])
    assert [len(c) for c in sent] == [143, 143, 14]


@settings(max_examples=200, deadline=None)
@given(data=st.binary(max_size=2000), chunk=st.integers(1, 300),
       sizes=st.lists(st.integers(1, 500), max_size=30))
def test_stream_preserved(data, chunk, sizes):
    stats, sent = run(data, chunk, sizes)
    assert b"".join(sent) == data
    assert all(len(c) == chunk for c in sent[:-1])
    assert stats.chunks == -(-len(data) // chunk)


def test_upstream_drop_flushes_and_raises():
    reads = iter([b"a" * 200])
    sent = []

    def read():
        try:
            return next(reads)
        except StopIteration:
            raise ConnectionResetError("gone") from None

    with pytest.raises(MidStreamDisconnect) as info:
        forward_stream(read, sent.append, 143)
    assert [len(c) for c in sent] == [143, 57]
    assert info.value.stats.bytes_out == 200


def test_downstream_failure_raises():
    def send(_):
        raise BrokenPipeError("closed")

    with pytest.raises(MidStreamDisconnect):
        forward_stream(io.BytesIO(b"z" * 500).read, send, 143)


def test_config_validation_and_endpoints():
    with pytest.raises(ValueError):
        ForwarderConfig(Endpoint("127.0.0.1", 0), chunk_size=0)
    assert ForwarderConfig(Endpoint("h", 1)).downstream.port == 9999
    assert parse_endpoint("10.0.0.1:80") == Endpoint("10.0.0.1", 80)
    assert parse_endpoint(":81") == Endpoint("127.0.0.1", 81)
    assert parse_endpoint("host", default_port=9999) == Endpoint("host", 9999)
    for bad in ["host", "h:x", "h:70000"]:
        with pytest.raises(ValueError):
            parse_endpoint(bad)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_tcp_forwarding_end_to_end():
    sink = socket.create_server(("127.0.0.1", 0))
    server = socket.create_server(("127.0.0.1", 0))
    received = bytearray()

    def downstream():
        conn, _ = sink.accept()
        with conn:
            while chunk := conn.recv(1000):
                received.extend(chunk)

    cfg = ForwarderConfig(Endpoint(*server.getsockname()[:2]), Endpoint(*sink.getsockname()[:2]), 143)
    result = {}
    t_sink = threading.Thread(target=downstream)
    t_fwd = threading.Thread(target=lambda: result.setdefault("stats", run_forwarder(cfg, server=server)))
    t_sink.start()
    t_fwd.start()
    payload = bytes(range(256)) * 4
    with socket.create_connection((cfg.listen.host, cfg.listen.port)) as client:
        client.sendall(payload)
    t_fwd.join(10)
    t_sink.join(10)
    server.close()
    sink.close()
    assert bytes(received) == payload
    stats = result["stats"][0]
    assert stats.bytes_out == 1024 and stats.chunks == 8 and stats.partial_chunks == 1


def test_bind_error():
    with socket.create_server(("127.0.0.1", 0)) as taken:
        port = taken.getsockname()[1]
        with pytest.raises(BindError):
            run_forwarder(ForwarderConfig(Endpoint("127.0.0.1", port)))


def test_downstream_unreachable():
    server = socket.create_server(("127.0.0.1", 0))
    cfg = ForwarderConfig(Endpoint(*server.getsockname()[:2]), Endpoint("127.0.0.1", free_port()))
    errors = []

    def go():
        try:
            run_forwarder(cfg, server=server)
        except DownstreamUnreachable as exc:
            errors.append(exc)

    t = threading.Thread(target=go)
    t.start()
    with socket.create_connection(server.getsockname()[:2]):
        t.join(10)
    server.close()
    assert len(errors) == 1
