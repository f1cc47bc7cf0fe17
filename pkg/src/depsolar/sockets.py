"""Stream-socket transport carrying framed protocol messages between endpoints.

Each endpoint listens on a loopback port. A sender keeps one outgoing
connection per peer; every accepted connection gets a reader thread that
decodes frames into a shared thread-safe mailbox.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from collections.abc import Callable

from .messages import ProtocolMessage
from .netsim import NetStats, RoutingError
from .wire import FrameDecoder, ProtocolError, encode_frame


class SocketTransport:
    def __init__(self, endpoints, clock: Callable[[], float] | None = None, host: str = "127.0.0.1"):
        self.host = host
        self.clock = clock or (lambda: time.monotonic() * 1000.0)
        self.stats = NetStats()
        self.malformed = 0
        self._mail: queue.Queue = queue.Queue()
        self._closed = threading.Event()
        self._listeners: dict[int, socket.socket] = {}
        self._ports: dict[int, int] = {}
        self._out: dict[tuple[int, int], socket.socket] = {}
        self._out_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._accepted: list[socket.socket] = []
        for ep in endpoints:
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            srv.bind((host, 0))
            srv.listen()
            srv.settimeout(0.1)
            self._listeners[ep] = srv
            self._ports[ep] = srv.getsockname()[1]
            self._spawn(self._accept_loop, ep, srv)

    def _spawn(self, fn, *args):
        th = threading.Thread(target=fn, args=args, daemon=True)
        th.start()
        self._threads.append(th)

    def _accept_loop(self, ep: int, srv: socket.socket):
        while not self._closed.is_set():
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(0.1)
            self._accepted.append(conn)
            self._spawn(self._read_loop, ep, conn)

    def _read_loop(self, ep: int, conn: socket.socket):
        dec = FrameDecoder()
        while not self._closed.is_set():
            try:
                data = conn.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                return
            if not data:
                return
            try:
                msgs = dec.feed(data)
            except ProtocolError:
                self.malformed += 1
                return
            now = self.clock()
            for msg in msgs:
                self._mail.put((ep, msg, now))

    def _conn(self, src: int, dst: int) -> socket.socket:
        with self._out_lock:
            s = self._out.get((src, dst))
            if s is None:
                s = socket.create_connection((self.host, self._ports[dst]))
                s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._out[(src, dst)] = s
            return s

    def send(self, msg: ProtocolMessage, src: int, dst: int) -> None:
        if dst not in self._ports:
            raise RoutingError(f"unknown destination {dst}")
        self.stats.sent += 1
        self._conn(src, dst).sendall(encode_frame(msg))

    def poll(self) -> list[tuple[int, ProtocolMessage, float]]:
        out = []
        while True:
            try:
                out.append(self._mail.get_nowait())
            except queue.Empty:
                break
        self.stats.delivered += len(out)
        return out

    def close(self) -> None:
        self._closed.set()
        for s in [*self._out.values(), *self._accepted, *self._listeners.values()]:
            try:
                s.close()
            except OSError:
                pass
        for th in self._threads:
            th.join(timeout=1.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
