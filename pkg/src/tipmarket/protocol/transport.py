"""Frame transports. Every endpoint carries serialized frames, so framing is
exercised identically in-process and over TCP.

Topology is a star around the broker: buyer <-> broker <-> seller.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time

from ..ckks.errors import MalformedFrame
from .messages import MsgType, SessionMessage, TransportTimeout

ROLES = ("buyer", "seller", "broker")
MAX_FRAME = 1 << 28
DEFAULT_TCP_TIMEOUT = 30.0
_LEN = struct.Struct(">I")


class Endpoint:
    """One role's view of the transport."""

    role: str
    timeout: float | None = None

    def send_bytes(self, peer: str, data: bytes) -> None:
        raise NotImplementedError

    def recv_bytes(self, peer: str) -> bytes:
        raise NotImplementedError

    def send(self, peer: str, msg: SessionMessage) -> int:
        data = msg.to_bytes()
        self.send_bytes(peer, data)
        return len(data)

    def recv(self, peer: str) -> SessionMessage:
        return SessionMessage.from_bytes(self.recv_bytes(peer))

    def close(self) -> None:
        pass


# -- in-process ------------------------------------------------------------


class _QueueEndpoint(Endpoint):
    def __init__(self, hub: "InProcessTransport", role: str):
        self.hub, self.role = hub, role
        self.timeout = hub.timeout

    def send_bytes(self, peer, data):
        if self.hub.tamper is not None:
            data = self.hub.tamper(self.role, peer, data)
        self.hub.queues[(self.role, peer)].put(bytes(data))

    def recv_bytes(self, peer):
        try:
            return self.hub.queues[(peer, self.role)].get(timeout=self.timeout)
        except queue.Empty:
            raise TransportTimeout(f"{self.role}: no frame from {peer} within {self.timeout}s") from None


class InProcessTransport:
    """Queues between roles. ``tamper(src, dst, frame_bytes)`` may rewrite frames in flight."""

    def __init__(self, timeout: float | None = None, tamper=None):
        self.timeout = timeout
        self.tamper = tamper
        self.queues = {(a, b): queue.Queue() for a in ROLES for b in ROLES if a != b}

    def endpoint(self, role: str) -> Endpoint:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        return _QueueEndpoint(self, role)

    def close(self):
        pass


# -- TCP -------------------------------------------------------------------


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            raise TransportTimeout("socket receive timed out") from None
        if not chunk:
            raise MalformedFrame("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def send_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(_LEN.pack(len(data)) + data)


def recv_frame(sock: socket.socket) -> bytes:
    (n,) = _LEN.unpack(_recv_exact(sock, 4))
    if n > MAX_FRAME:
        raise MalformedFrame(f"frame length {n} exceeds limit")
    return _recv_exact(sock, n)


_REGISTER_SID = b"\x00" * 16


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


class TcpBrokerEndpoint(Endpoint):
    """Listens for the buyer and the seller; each registers with an Ack frame naming its role."""

    role = "broker"

    def __init__(self, listen: str = "127.0.0.1:0", timeout: float | None = DEFAULT_TCP_TIMEOUT):
        self.timeout = timeout
        self._srv = socket.create_server(parse_address(listen))
        self.address = "%s:%d" % self._srv.getsockname()[:2]
        self._peers: dict[str, socket.socket] = {}
        self._ready = threading.Event()

    def accept_peers(self) -> None:
        self._srv.settimeout(self.timeout)
        while len(self._peers) < 2:
            try:
                conn, _ = self._srv.accept()
            except socket.timeout:
                raise TransportTimeout("peers did not connect in time") from None
            conn.settimeout(self.timeout)
            msg = SessionMessage.from_bytes(recv_frame(conn))
            role = msg.payload.decode(errors="replace")
            if msg.msg_type is not MsgType.ACK or role not in ("buyer", "seller") or role in self._peers:
                conn.close()
                continue
            self._peers[role] = conn
            send_frame(conn, SessionMessage(_REGISTER_SID, MsgType.ACK, 0, b"registered").to_bytes())
        self._ready.set()

    def send_bytes(self, peer, data):
        send_frame(self._peers[peer], data)

    def recv_bytes(self, peer):
        return recv_frame(self._peers[peer])

    def close(self):
        for s in self._peers.values():
            s.close()
        self._srv.close()


class TcpClientEndpoint(Endpoint):
    def __init__(self, role: str, connect: str, timeout: float | None = DEFAULT_TCP_TIMEOUT):
        if role not in ("buyer", "seller"):
            raise ValueError("only buyer and seller connect to the broker")
        self.role, self.timeout = role, timeout
        deadline = time.monotonic() + (timeout or DEFAULT_TCP_TIMEOUT)
        while True:
            try:
                self._sock = socket.create_connection(parse_address(connect), timeout=timeout)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportTimeout(f"could not reach broker at {connect}") from None
                time.sleep(0.05)
        self._sock.settimeout(timeout)
        send_frame(self._sock, SessionMessage(_REGISTER_SID, MsgType.ACK, 0, role.encode()).to_bytes())
        ack = SessionMessage.from_bytes(recv_frame(self._sock))
        if ack.msg_type is not MsgType.ACK:
            raise MalformedFrame("broker refused registration")

    def send_bytes(self, peer, data):
        if peer != "broker":
            raise ValueError(f"{self.role} can only talk to the broker")
        send_frame(self._sock, data)

    def recv_bytes(self, peer):
        if peer != "broker":
            raise ValueError(f"{self.role} can only talk to the broker")
        return recv_frame(self._sock)

    def close(self):
        self._sock.close()


class TcpTransport:
    """Loopback TCP with all three roles in this process (one thread each)."""

    def __init__(self, listen: str = "127.0.0.1:0", timeout: float | None = DEFAULT_TCP_TIMEOUT):
        self.broker = TcpBrokerEndpoint(listen, timeout)
        self.timeout = timeout
        self._clients: dict[str, TcpClientEndpoint] = {}
        self._accept = threading.Thread(target=self.broker.accept_peers, daemon=True)
        self._accept.start()

    def endpoint(self, role: str) -> Endpoint:
        if role == "broker":
            self._accept.join()
            return self.broker
        ep = TcpClientEndpoint(role, self.broker.address, self.timeout)
        self._clients[role] = ep
        return ep

    def close(self):
        for ep in self._clients.values():
            ep.close()
        self.broker.close()
