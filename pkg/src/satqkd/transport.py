"""Classical channel abstraction: reliable, ordered, duplex.

Frames are 1-byte message type + 4-byte big-endian length + payload. Message
sends are logged with a per-direction sequence number so transcripts merge
deterministically regardless of thread scheduling.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading

from .errors import ProtocolError

MSG_TAGS = 1
MSG_BASES = 2
MSG_QBER_SAMPLE = 3
MSG_QBER_RESULT = 4
MSG_SYNDROME_PKT = 5
MSG_EXTRACTOR = 6
MSG_DATA_ENVELOPE = 7
MSG_ABORT = 8

MSG_NAMES = {
    MSG_TAGS: "TAGS",
    MSG_BASES: "BASES",
    MSG_QBER_SAMPLE: "QBER_SAMPLE",
    MSG_QBER_RESULT: "QBER_RESULT",
    MSG_SYNDROME_PKT: "SYNDROME_PKT",
    MSG_EXTRACTOR: "EXTRACTOR",
    MSG_DATA_ENVELOPE: "DATA_ENVELOPE",
    MSG_ABORT: "ABORT",
}

# messages carrying a Wegman-Carter tag; everything else is unauthenticated
AUTHENTICATED_TYPES = {MSG_SYNDROME_PKT}


class TranscriptLog:
    """Thread-safe send log; entries are (seq, direction, type, length)."""

    def __init__(self):
        self._entries = []
        self._lock = threading.Lock()
        self._seq = {"a->b": 0, "b->a": 0}

    def record(self, direction: str, msg_type: int, length: int) -> None:
        with self._lock:
            seq = self._seq[direction]
            self._seq[direction] = seq + 1
            self._entries.append((seq, direction, msg_type, length))

    def lines(self) -> list[str]:
        """Deterministic merge: per-direction sequence, a->b first on ties."""
        ordered = sorted(self._entries, key=lambda e: (e[0], e[1]))
        return [f"{d} {MSG_NAMES[t]} {ln}" for _, d, t, ln in ordered]


class ChannelEndpoint:
    """Common framing/logging over a concrete transport."""

    def __init__(self, role: str, log: TranscriptLog | None):
        self.role = role
        self.peer = "b" if role == "a" else "a"
        self.log = log

    def send(self, msg_type: int, payload: bytes) -> None:
        if self.log is not None:
            self.log.record(f"{self.role}->{self.peer}", msg_type, len(payload))
        self._send(struct.pack(">BI", msg_type, len(payload)) + payload)

    def recv(self, timeout: float = 60.0) -> tuple[int, bytes]:
        header = self._recv_exact(5, timeout)
        msg_type, length = struct.unpack(">BI", header)
        payload = self._recv_exact(length, timeout) if length else b""
        return msg_type, payload

    def expect(self, msg_type: int, timeout: float = 60.0) -> bytes:
        got, payload = self.recv(timeout)
        if got == MSG_ABORT and msg_type != MSG_ABORT:
            raise PeerAbort(payload.decode())
        if got != msg_type:
            raise ProtocolError(
                f"expected {MSG_NAMES.get(msg_type)}, got {MSG_NAMES.get(got, got)}"
            )
        return payload

    def _send(self, frame: bytes) -> None:
        raise NotImplementedError

    def _recv_exact(self, n: int, timeout: float) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class PeerAbort(ProtocolError):
    """The peer announced a session abort."""


class _QueueEndpoint(ChannelEndpoint):
    def __init__(self, role, inbox: queue.Queue, outbox: queue.Queue, log):
        super().__init__(role, log)
        self._inbox = inbox
        self._outbox = outbox
        self._buffer = b""

    def _send(self, frame: bytes) -> None:
        self._outbox.put(frame)

    def _recv_exact(self, n: int, timeout: float) -> bytes:
        while len(self._buffer) < n:
            try:
                chunk = self._inbox.get(timeout=timeout)
            except queue.Empty:
                raise ProtocolError("channel receive timed out") from None
            if chunk is None:
                raise ProtocolError("channel closed by peer")
            self._buffer += chunk
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def close(self) -> None:
        self._outbox.put(None)


class _SocketEndpoint(ChannelEndpoint):
    def __init__(self, role, sock: socket.socket, log):
        super().__init__(role, log)
        self._sock = sock

    def _send(self, frame: bytes) -> None:
        self._sock.sendall(frame)

    def _recv_exact(self, n: int, timeout: float) -> bytes:
        self._sock.settimeout(timeout)
        buf = b""
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except socket.timeout:
                raise ProtocolError("channel receive timed out") from None
            if not chunk:
                raise ProtocolError("channel closed by peer")
            buf += chunk
        return buf

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def inproc_pair(log: TranscriptLog | None = None) -> tuple[ChannelEndpoint, ChannelEndpoint]:
    """In-process duplex queue pair (endpoint a, endpoint b)."""
    q_ab: queue.Queue = queue.Queue()
    q_ba: queue.Queue = queue.Queue()
    return (_QueueEndpoint("a", q_ba, q_ab, log), _QueueEndpoint("b", q_ab, q_ba, log))


def socket_pair(log: TranscriptLog | None = None) -> tuple[ChannelEndpoint, ChannelEndpoint]:
    """Duplex pair over a local socket pair (same framing, real sockets)."""
    sa, sb = socket.socketpair()
    return (_SocketEndpoint("a", sa, log), _SocketEndpoint("b", sb, log))
