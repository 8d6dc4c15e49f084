"""Byte-stream forwarder: relay an upstream stream downstream in fixed chunks.

The forwarder is transport-agnostic at its core (:func:`forward_stream`
takes a ``read`` and a ``send`` callable); :func:`run_forwarder` wires it
to TCP sockets. Chunking is a framing convenience only. The downstream
byte stream always equals the upstream one.
"""

from __future__ import annotations

import logging
import socket
from dataclasses import dataclass
from typing import Callable

from .errors import BindError, DownstreamUnreachable, MidStreamDisconnect

logger = logging.getLogger(__name__)

DEFAULT_DOWNSTREAM_PORT = 9999
DEFAULT_CHUNK_SIZE = 143


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    def __str__(self):
        return f"{self.host}:{self.port}"


def parse_endpoint(text: str, default_port: int | None = None, default_host: str = "127.0.0.1") -> Endpoint:
    """``host:port``, ``:port`` or ``host`` (when ``default_port`` is given)."""
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = text, ""
    if not port:
        if default_port is None:
            raise ValueError(f"endpoint {text!r} has no port")
        port = str(default_port)
    try:
        number = int(port)
    except ValueError:
        raise ValueError(f"endpoint {text!r}: port {port!r} is not a number") from None
    if not 0 <= number <= 0xFFFF:
        raise ValueError(f"endpoint {text!r}: port out of range")
    return Endpoint(host.strip("[]") or default_host, number)


@dataclass(frozen=True)
class ForwarderConfig:
    listen: Endpoint
    downstream: Endpoint = Endpoint("127.0.0.1", DEFAULT_DOWNSTREAM_PORT)
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be at least 1")


@dataclass
class ForwardStats:
    bytes_in: int = 0
    bytes_out: int = 0
    chunks: int = 0
    partial_chunks: int = 0


def forward_stream(read: Callable[[], bytes], send: Callable[[bytes], object],
                   chunk_size: int = DEFAULT_CHUNK_SIZE) -> ForwardStats:
    """Pump ``read()`` into ``send()`` in ``chunk_size`` pieces until EOF.

    ``read`` returns ``b""`` at end of stream. Whatever is buffered at EOF
    goes out as one short chunk. If ``read`` fails mid-stream the buffer is
    flushed the same way and :class:`MidStreamDisconnect` is raised with the
    statistics; a failing ``send`` raises it without a flush.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be at least 1")
    stats = ForwardStats()
    buf = bytearray()

    def emit(piece: bytes):
        try:
            send(piece)
        except OSError as exc:
            raise MidStreamDisconnect(f"downstream failed after {stats.bytes_out} bytes: {exc}", stats) from exc
        stats.bytes_out += len(piece)
        stats.chunks += 1
        if len(piece) < chunk_size:
            stats.partial_chunks += 1

    def flush():
        if buf:
            emit(bytes(buf))
            buf.clear()

    while True:
        try:
            data = read()
        except OSError as exc:
            logger.warning("upstream dropped after %d bytes, flushing %d buffered", stats.bytes_in, len(buf))
            flush()
            raise MidStreamDisconnect(f"upstream disconnected after {stats.bytes_in} bytes: {exc}", stats) from exc
        if not data:
            break
        stats.bytes_in += len(data)
        buf += data
        full = len(buf) - len(buf) % chunk_size
        for start in range(0, full, chunk_size):
            emit(bytes(buf[start:start + chunk_size]))
        del buf[:full]
    flush()
    return stats


def _listen(endpoint: Endpoint) -> socket.socket:
    try:
        server = socket.create_server((endpoint.host, endpoint.port))
    except OSError as exc:
        raise BindError(f"cannot listen on {endpoint}: {exc}") from exc
    return server


def run_forwarder(config: ForwarderConfig, connections: int = 1,
                  server: socket.socket | None = None, recv_size: int = 4096) -> list[ForwardStats]:
    """Accept ``connections`` upstream clients one after another and relay each.

    A fresh downstream connection is opened per upstream client. Pass an
    already-bound ``server`` socket to pick the port up front (tests).
    """
    own = server is None
    server = _listen(config.listen) if own else server
    results = []
    try:
        for _ in range(connections):
            upstream, peer = server.accept()
            logger.info("upstream connected from %s:%s", *peer[:2])
            with upstream:
                try:
                    downstream = socket.create_connection((config.downstream.host, config.downstream.port))
                except OSError as exc:
                    raise DownstreamUnreachable(f"cannot reach {config.downstream}: {exc}") from exc
                with downstream:
                    stats = forward_stream(lambda: upstream.recv(recv_size), downstream.sendall, config.chunk_size)
                    downstream.shutdown(socket.SHUT_WR)
            logger.info("stream closed: %d bytes in %d chunks", stats.bytes_out, stats.chunks)
            results.append(stats)
    finally:
        if own:
            server.close()
    return results
