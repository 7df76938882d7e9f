"""Two transports with the same frame protocol: in-process queues and TCP.

The learner side is a *hub*: one bounded inbound queue of ``(peer, message)``
shared by all actors (a full queue blocks senders) plus a reply path per
peer. The actor side is a *link* with blocking ``send`` and ``recv``.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass

from .wire import FrameDecoder, ProtocolError, decode_frame, encode_frame

log = logging.getLogger(__name__)

DEFAULT_QUEUE = 1024


class ChannelClosed(ConnectionError):
    pass


@dataclass(frozen=True)
class PeerLost:
    """Delivered to the learner in place of a message when a connection ends."""

    reason: str


def parse_endpoint(endpoint: str):
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host, int(port)


# -- in-process ----------------------------------------------------------------

class InprocLink:
    def __init__(self, peer, inbound: queue.Queue, replies: queue.Queue):
        self.peer = peer
        self._inbound = inbound
        self._replies = replies
        self.closed = False

    def send(self, msg):
        if self.closed:
            raise ChannelClosed("link closed")
        self._inbound.put((self.peer, encode_frame(msg)))

    def recv(self, timeout=None):
        """Next message, or None if ``timeout`` elapses first."""
        try:
            frame = self._replies.get(timeout=timeout) if timeout != 0 else self._replies.get_nowait()
        except queue.Empty:
            return None
        return decode_frame(frame)

    def close(self):
        self.closed = True


class InprocHub:
    def __init__(self, maxsize: int = DEFAULT_QUEUE):
        self._inbound = queue.Queue(maxsize)
        self._replies = {}

    def connect(self, peer) -> InprocLink:
        self._replies[peer] = queue.Queue()
        return InprocLink(peer, self._inbound, self._replies[peer])

    def recv(self, timeout=None):
        try:
            peer, frame = self._inbound.get(timeout=timeout)
        except queue.Empty:
            return None
        if isinstance(frame, PeerLost):
            return peer, frame
        return peer, decode_frame(frame)

    def lost(self, peer, reason: str):
        """Report that the actor behind ``peer`` has stopped."""
        self._inbound.put((peer, PeerLost(reason)))

    def send(self, peer, msg):
        self._replies[peer].put(encode_frame(msg))

    def close(self):
        pass


# -- sockets -------------------------------------------------------------------

def _read_into(sock, decoder: FrameDecoder):
    data = sock.recv(1 << 16)
    if not data:
        raise ChannelClosed("peer closed the connection")
    return decoder.feed(data)


class SocketHub:
    """Listening side. Each accepted connection gets a reader thread."""

    def __init__(self, endpoint: str, maxsize: int = DEFAULT_QUEUE):
        host, port = parse_endpoint(endpoint)
        self._server = socket.create_server((host, port))
        self.address = self._server.getsockname()[:2]
        self._inbound = queue.Queue(maxsize)
        self._conns = {}
        self._locks = {}
        self._next_peer = 0
        self._closing = threading.Event()
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()

    @property
    def endpoint(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    def _accept_loop(self):
        while not self._closing.is_set():
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            peer = self._next_peer
            self._next_peer += 1
            self._conns[peer] = conn
            self._locks[peer] = threading.Lock()
            threading.Thread(target=self._reader, args=(peer, conn), daemon=True).start()

    def _reader(self, peer, conn):
        decoder = FrameDecoder()
        try:
            while True:
                for msg in _read_into(conn, decoder):
                    self._inbound.put((peer, msg))
        except (ChannelClosed, OSError) as exc:
            if not self._closing.is_set():
                log.debug("peer %s disconnected: %s", peer, exc)
                self._inbound.put((peer, PeerLost(str(exc))))
        except ProtocolError as exc:
            log.error("peer %s sent a malformed frame, dropping it: %s", peer, exc)
            conn.close()
            self._inbound.put((peer, PeerLost(f"protocol error: {exc}")))

    def recv(self, timeout=None):
        try:
            return self._inbound.get(timeout=timeout)
        except queue.Empty:
            return None

    def send(self, peer, msg):
        frame = encode_frame(msg)
        try:
            with self._locks[peer]:
                self._conns[peer].sendall(frame)
        except OSError as exc:
            raise ChannelClosed(f"send to peer {peer} failed: {exc}") from exc

    def close(self):
        self._closing.set()
        try:
            # wakes the blocked accept(); close() alone leaves the listener alive
            self._server.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._server.close()
        self._acceptor.join(timeout=5)
        for conn in list(self._conns.values()):
            try:
                conn.close()
            except OSError:
                pass


class SocketLink:
    """Connecting side, with bounded retry and exponential backoff."""

    def __init__(self, endpoint: str, retries: int = 8, backoff: float = 0.05, timeout: float = 10.0):
        self.host, self.port = parse_endpoint(endpoint)
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sock = None
        self._decoder = None
        self._ready = []
        self.connect()

    def connect(self):
        last = None
        for attempt in range(self.retries + 1):
            try:
                sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._sock, self._decoder, self._ready = sock, FrameDecoder(), []
                return
            except OSError as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise ChannelClosed(f"could not reach {self.host}:{self.port} after "
                            f"{self.retries + 1} attempts: {last}")

    def send(self, msg):
        try:
            self._sock.settimeout(None)  # recv may have left it non-blocking
            self._sock.sendall(encode_frame(msg))
        except OSError as exc:
            raise ChannelClosed(f"send failed: {exc}") from exc

    def recv(self, timeout=None):
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self._ready:
            remaining = None if deadline is None else max(deadline - time.monotonic(), 0.0)
            if remaining == 0.0 and timeout is not None and timeout > 0:
                return None
            self._sock.settimeout(remaining if remaining is not None else None)
            try:
                self._ready.extend(_read_into(self._sock, self._decoder))
            except (socket.timeout, BlockingIOError):
                return None
            except OSError as exc:
                raise ChannelClosed(f"receive failed: {exc}") from exc
            if timeout == 0 and not self._ready:
                return None
        return self._ready.pop(0)

    def close(self):
        if self._sock is not None:
            self._sock.close()
