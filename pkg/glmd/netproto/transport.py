"""Frame channels for the coordinator/worker exchange.

Two modes share one interface:

* ``in_process`` pairs of in-memory queues; workers run as threads
* ``socket``     TCP connections to a ``host:port`` endpoint

A :class:`Transport` describes the mode and its timeouts.  The coordinator
calls :meth:`Transport.listen` and accepts one :class:`Channel` per worker;
workers call :meth:`Transport.dial`.  Channels carry complete frames and are
reliable and ordered.
"""

from __future__ import annotations

import os
import queue
import socket
import threading
import time
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

# Optional python-dotenv; without it only real environment variables count.
try:
    from dotenv import load_dotenv  # type: ignore
except ModuleNotFoundError:  # pragma: no cover

    def load_dotenv(*_args, **_kwargs):  # type: ignore
        return False

from glmd.errors import ArgumentError, TransportError
from glmd.logger import get_logger
from glmd.netproto.codec import HEADER, decode_header


log = get_logger(__name__)

load_dotenv()

DEFAULT_HANDSHAKE_TIMEOUT_S = 30.0
DEFAULT_ROUND_TIMEOUT_S = 300.0


def _env_seconds(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = float(raw)
    except ValueError:
        log.warning("Ignoring non-numeric %s=%r", name, raw)
        return default
    return value if value > 0 else default


def handshake_timeout_default() -> float:
    return _env_seconds("GLMD_HANDSHAKE_TIMEOUT_S", DEFAULT_HANDSHAKE_TIMEOUT_S)


def round_timeout_default() -> float:
    return _env_seconds("GLMD_ROUND_TIMEOUT_S", DEFAULT_ROUND_TIMEOUT_S)


def parse_endpoint(endpoint: str) -> Tuple[str, int]:
    """Split ``host:port`` (port 0 lets the OS choose when listening)."""

    host, sep, port = endpoint.rpartition(":")
    if not sep or not host:
        raise ArgumentError(f"endpoint must look like host:port, got {endpoint!r}")
    try:
        number = int(port)
    except ValueError:
        raise ArgumentError(f"endpoint port is not an integer: {endpoint!r}") from None
    if not 0 <= number <= 65535:
        raise ArgumentError(f"endpoint port out of range: {endpoint!r}")
    return host.strip("[]"), number


class TransportMode(str, Enum):
    IN_PROCESS = "in_process"
    SOCKET = "socket"


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------


class Channel(ABC):
    """One bidirectional, ordered frame stream with traffic counters."""

    def __init__(self, peer: str) -> None:
        self.peer = peer
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_sent: Counter = Counter()
        self.frames_received: Counter = Counter()

    def send(self, frame: bytes) -> None:
        self._send(frame)
        self.bytes_sent += len(frame)
        self.frames_sent[frame[5]] += 1

    def recv(self, timeout: Optional[float]) -> bytes:
        frame = self._recv(timeout)
        self.bytes_received += len(frame)
        self.frames_received[frame[5]] += 1
        return frame

    @abstractmethod
    def _send(self, frame: bytes) -> None: ...

    @abstractmethod
    def _recv(self, timeout: Optional[float]) -> bytes: ...

    @abstractmethod
    def close(self) -> None: ...


_CLOSED = object()


class QueueChannel(Channel):
    def __init__(self, inbox: "queue.Queue", outbox: "queue.Queue", peer: str) -> None:
        super().__init__(peer)
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    def _send(self, frame: bytes) -> None:
        if self._closed:
            raise TransportError(f"channel to {self.peer} is closed")
        self._outbox.put(bytes(frame))

    def _recv(self, timeout: Optional[float]) -> bytes:
        if self._closed:
            raise TransportError(f"channel to {self.peer} is closed")
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"timed out after {timeout}s waiting for {self.peer}") from None
        if item is _CLOSED:
            self._closed = True
            raise TransportError(f"connection closed by {self.peer}")
        return item

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._outbox.put(_CLOSED)
        # Wake a reader of this end that may be blocked in another thread.
        self._inbox.put(_CLOSED)


class SocketChannel(Channel):
    def __init__(self, sock: socket.socket, peer: str) -> None:
        super().__init__(peer)
        self._sock = sock
        self._lock = threading.Lock()

    def _send(self, frame: bytes) -> None:
        try:
            with self._lock:
                self._sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send to {self.peer} failed: {exc}") from exc

    def _read_exact(self, count: int, deadline: Optional[float]) -> bytes:
        chunks = bytearray()
        while len(chunks) < count:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportError(f"timed out waiting for {self.peer}")
                self._sock.settimeout(remaining)
            else:
                self._sock.settimeout(None)
            try:
                chunk = self._sock.recv(count - len(chunks))
            except socket.timeout:
                raise TransportError(f"timed out waiting for {self.peer}") from None
            except OSError as exc:
                raise TransportError(f"receive from {self.peer} failed: {exc}") from exc
            if not chunk:
                raise TransportError(f"connection closed by {self.peer}")
            chunks.extend(chunk)
        return bytes(chunks)

    def _recv(self, timeout: Optional[float]) -> bytes:
        deadline = None if timeout is None else time.monotonic() + timeout
        header = self._read_exact(HEADER.size, deadline)
        _, length = decode_header(header)
        return header + self._read_exact(length, deadline)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# ---------------------------------------------------------------------------
# Listeners
# ---------------------------------------------------------------------------


class Listener(ABC):
    transport: "Transport"

    @abstractmethod
    def accept(self, timeout: Optional[float]) -> Channel: ...

    @abstractmethod
    def close(self) -> None: ...


class _InProcessHub:
    def __init__(self) -> None:
        self.pending: "queue.Queue" = queue.Queue()
        self.closed = False
        self.counter = 0
        self.lock = threading.Lock()


class InProcessListener(Listener):
    def __init__(self, transport: "Transport") -> None:
        # Each listen() starts a fresh rendezvous point so a transport can be reused.
        transport._hub = _InProcessHub()
        self.transport = transport
        self._hub = transport._hub

    def accept(self, timeout: Optional[float]) -> Channel:
        try:
            return self._hub.pending.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"no worker connected within {timeout}s") from None

    def close(self) -> None:
        with self._hub.lock:
            self._hub.closed = True
        while True:
            try:
                self._hub.pending.get_nowait().close()
            except queue.Empty:
                break


class SocketListener(Listener):
    def __init__(self, transport: "Transport") -> None:
        host, port = parse_endpoint(transport.endpoint)
        self._server = socket.create_server((host, port))
        self._server.listen()
        bound_host, bound_port = self._server.getsockname()[:2]
        self.endpoint = f"{host}:{bound_port}"
        self.transport = Transport(
            TransportMode.SOCKET,
            self.endpoint,
            handshake_timeout=transport.handshake_timeout,
            round_timeout=transport.round_timeout,
        )
        log.info("Coordinator listening on %s", self.endpoint)

    def accept(self, timeout: Optional[float]) -> Channel:
        self._server.settimeout(timeout)
        try:
            conn, addr = self._server.accept()
        except socket.timeout:
            raise TransportError(f"no worker connected within {timeout}s") from None
        except OSError as exc:
            raise TransportError(f"accept failed: {exc}") from exc
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return SocketChannel(conn, f"{addr[0]}:{addr[1]}")

    def close(self) -> None:
        self._server.close()


# ---------------------------------------------------------------------------
# Transport description
# ---------------------------------------------------------------------------


@dataclass
class Transport:
    mode: TransportMode = TransportMode.IN_PROCESS
    endpoint: str = ""
    handshake_timeout: float = field(default_factory=handshake_timeout_default)
    round_timeout: float = field(default_factory=round_timeout_default)
    _hub: _InProcessHub = field(default_factory=_InProcessHub, repr=False, compare=False)

    @classmethod
    def in_process(cls, **kwargs) -> "Transport":
        return cls(TransportMode.IN_PROCESS, "", **kwargs)

    @classmethod
    def tcp(cls, endpoint: str, **kwargs) -> "Transport":
        parse_endpoint(endpoint)
        return cls(TransportMode.SOCKET, endpoint, **kwargs)

    def listen(self) -> Listener:
        if self.mode is TransportMode.IN_PROCESS:
            return InProcessListener(self)
        return SocketListener(self)

    def dial(self) -> Channel:
        """Connect to the coordinator, retrying until the handshake timeout."""

        if self.mode is TransportMode.IN_PROCESS:
            return self._dial_in_process()
        return self._dial_socket()

    def _dial_in_process(self) -> Channel:
        hub = self._hub
        with hub.lock:
            if hub.closed:
                raise TransportError("in-process coordinator is closed")
            hub.counter += 1
            name = f"in-process#{hub.counter}"
        to_worker: "queue.Queue" = queue.Queue()
        to_coordinator: "queue.Queue" = queue.Queue()
        hub.pending.put(QueueChannel(to_coordinator, to_worker, peer=name))
        return QueueChannel(to_worker, to_coordinator, peer="coordinator")

    def _dial_socket(self) -> Channel:
        host, port = parse_endpoint(self.endpoint)
        deadline = time.monotonic() + self.handshake_timeout
        attempt = 0
        while True:
            attempt += 1
            remaining = deadline - time.monotonic()
            try:
                sock = socket.create_connection((host, port), timeout=max(remaining, 0.01))
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return SocketChannel(sock, self.endpoint)
            except OSError as exc:
                if time.monotonic() + 0.05 >= deadline:
                    raise TransportError(
                        f"could not reach coordinator at {self.endpoint} after {attempt} attempts: {exc}"
                    ) from exc
                log.debug("Dial attempt %s to %s failed: %s", attempt, self.endpoint, exc)
                time.sleep(min(0.05 * attempt, 1.0, max(deadline - time.monotonic(), 0.0)))
