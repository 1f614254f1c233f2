"""Fixed-size cells, fragmentation/reassembly, transports and the relay pump.

Every wire unit is a 512-byte cell: a 10-byte header (circuit id, sequence
number, fragment count, fragment length) followed by 502 payload bytes,
zero-padded past ``frag_len``.  Two interchangeable transports move cells:
in-process queues (default for tests and benchmarks) and TCP sockets
carrying raw back-to-back cells with no extra framing.

Directory traffic rides the reserved circuit id 0; inside that reassembled
stream each message is prefixed with its 4-byte big-endian length.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from . import onion
from .errors import FrameError, QsorError, TransportError
from .kem import KemKeyPair, SchemeRegistry

CELL_SIZE = 512
CELL_HEADER_SIZE = 10
CELL_PAYLOAD_SIZE = CELL_SIZE - CELL_HEADER_SIZE
MAX_FRAGMENTS = 0xFFFF
DIRECTORY_CIRCUIT_ID = 0

_CELL_HEADER = struct.Struct(">IHHH")
_DIR_PREFIX = struct.Struct(">I")


@dataclass(frozen=True)
class Cell:
    circuit_id: int
    seq: int
    total: int
    frag_len: int
    payload: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.circuit_id <= 0xFFFFFFFF:
            raise FrameError(f"circuit_id {self.circuit_id} out of range")
        if not 0 <= self.seq < self.total <= MAX_FRAGMENTS:
            raise FrameError(f"invalid seq/total {self.seq}/{self.total}")
        if not 0 <= self.frag_len <= CELL_PAYLOAD_SIZE:
            raise FrameError(f"frag_len {self.frag_len} exceeds {CELL_PAYLOAD_SIZE}")
        if len(self.payload) != CELL_PAYLOAD_SIZE:
            raise FrameError(f"cell payload must be {CELL_PAYLOAD_SIZE} bytes")

    def to_bytes(self) -> bytes:
        return _CELL_HEADER.pack(self.circuit_id, self.seq, self.total, self.frag_len) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Cell":
        if len(data) != CELL_SIZE:
            raise FrameError(f"cell must be {CELL_SIZE} bytes, got {len(data)}")
        circuit_id, seq, total, frag_len = _CELL_HEADER.unpack_from(data)
        return cls(circuit_id, seq, total, frag_len, data[CELL_HEADER_SIZE:])


def fragment(message: bytes, circuit_id: int) -> list[Cell]:
    """Split a message into cells; ceil(len/502) of them, zero-padded."""
    if not message:
        raise ValueError("cannot fragment an empty message")
    total = -(-len(message) // CELL_PAYLOAD_SIZE)
    if total > MAX_FRAGMENTS:
        raise ValueError(f"message needs {total} cells, limit is {MAX_FRAGMENTS}")
    cells = []
    for seq in range(total):
        chunk = message[seq * CELL_PAYLOAD_SIZE : (seq + 1) * CELL_PAYLOAD_SIZE]
        cells.append(
            Cell(circuit_id, seq, total, len(chunk), chunk.ljust(CELL_PAYLOAD_SIZE, b"\x00"))
        )
    return cells


def reassemble(cells) -> bytes:
    """Inverse of :func:`fragment`; accepts cells in any order."""
    cells = sorted(cells, key=lambda c: c.seq)
    if not cells:
        raise FrameError("no cells to reassemble")
    total = cells[0].total
    circuit_id = cells[0].circuit_id
    if len(cells) != total:
        raise FrameError(f"have {len(cells)} cells, expected {total}")
    parts = []
    for seq, cell in enumerate(cells):
        if cell.seq != seq or cell.total != total or cell.circuit_id != circuit_id:
            raise FrameError("inconsistent cell sequence")
        parts.append(cell.payload[: cell.frag_len])
    return b"".join(parts)


def packets_needed_paper_metric(message_size: int) -> int:
    """ceil(size / 512): packet count over the raw message, headers ignored."""
    if message_size < 0:
        raise ValueError("message size must be >= 0")
    return -(-message_size // CELL_SIZE)


def packets_needed_transport_metric(message_size: int) -> int:
    """ceil(size / 502): actual cell count once the 10-byte header is paid."""
    if message_size < 0:
        raise ValueError("message size must be >= 0")
    return -(-message_size // CELL_PAYLOAD_SIZE)


class Reassembler:
    """Per-(peer, circuit) reassembly buffers with expiry.

    A buffer opens only on a circuit's first cell (seq 0); later cells for
    unknown circuits are dropped, as are buffers older than ``timeout``
    seconds.  Out-of-order cells within a known circuit are fine.
    """

    def __init__(self, timeout: float = 5.0, clock=time.monotonic):
        self.timeout = timeout
        self.drops: list[str] = []
        self._clock = clock
        self._buffers: dict[tuple, dict] = {}

    def add(self, peer, cell: Cell) -> bytes | None:
        self._expire()
        key = (peer, cell.circuit_id)
        buf = self._buffers.get(key)
        if buf is None:
            if cell.seq != 0:
                self.drops.append(
                    f"cell seq {cell.seq} for unknown circuit {cell.circuit_id}"
                )
                return None
            buf = {"total": cell.total, "parts": {}, "deadline": self._clock() + self.timeout}
            self._buffers[key] = buf
        if cell.total != buf["total"]:
            self.drops.append(f"total mismatch on circuit {cell.circuit_id}")
            del self._buffers[key]
            return None
        buf["parts"][cell.seq] = cell.payload[: cell.frag_len]
        if len(buf["parts"]) < buf["total"]:
            return None
        del self._buffers[key]
        return b"".join(buf["parts"][seq] for seq in range(buf["total"]))

    def forget(self, peer, circuit_id: int) -> None:
        self._buffers.pop((peer, circuit_id), None)

    def _expire(self) -> None:
        now = self._clock()
        for key in [k for k, b in self._buffers.items() if b["deadline"] < now]:
            self.drops.append(f"reassembly timeout on circuit {key[1]}")
            del self._buffers[key]


def encode_directory_message(body: bytes) -> bytes:
    return _DIR_PREFIX.pack(len(body)) + body


def decode_directory_message(stream: bytes) -> bytes:
    if len(stream) < _DIR_PREFIX.size:
        raise FrameError("directory message shorter than its length prefix")
    (length,) = _DIR_PREFIX.unpack_from(stream)
    body = stream[_DIR_PREFIX.size :]
    if len(body) != length:
        raise FrameError(f"directory message length {len(body)} != declared {length}")
    return body


class InProcNetwork:
    """In-process cell switch: one mailbox per registered address.

    Thread-safe; cells from one sender arrive in send order.  Test hooks can
    corrupt or drop cells on a specific (src, dst) link.
    """

    def __init__(self):
        self._mailboxes: dict[str, queue.Queue] = {}
        self._faults: dict[tuple[str, str], object] = {}
        self._lock = threading.Lock()

    def endpoint(self, address: str) -> "InProcEndpoint":
        with self._lock:
            if address in self._mailboxes:
                raise TransportError(f"address {address!r} already registered")
            self._mailboxes[address] = queue.Queue()
        return InProcEndpoint(self, address)

    def add_link_fault(self, src: str, dst: str, mutate) -> None:
        """Install fault injection on a link: mutate(bytes) -> bytes or None to drop."""
        self._faults[(src, dst)] = mutate

    def deliver(self, src: str, dst: str, data: bytes) -> None:
        mutate = self._faults.get((src, dst))
        if mutate is not None:
            data = mutate(data)
            if data is None:
                return
        with self._lock:
            box = self._mailboxes.get(dst)
        if box is None:
            raise TransportError(f"no endpoint at {dst!r}")
        box.put((src, data))

    def mailbox(self, address: str) -> queue.Queue:
        return self._mailboxes[address]


class InProcEndpoint:
    def __init__(self, network: InProcNetwork, address: str):
        self._network = network
        self.address = address

    def send(self, dest: str, cell: Cell) -> None:
        self._network.deliver(self.address, dest, cell.to_bytes())

    def recv(self, timeout: float | None = None) -> tuple[str, Cell] | None:
        try:
            src, data = self._network.mailbox(self.address).get(timeout=timeout)
        except queue.Empty:
            return None
        return src, Cell.from_bytes(data)

    def close(self) -> None:
        pass


class _TcpConn:
    """One direction-agnostic TCP connection delivering 512-byte cells."""

    def __init__(self, sock: socket.socket, inbound: queue.Queue):
        self._sock = sock
        self._send_lock = threading.Lock()
        self._inbound = inbound
        self.peer_name = "%s:%d" % sock.getpeername()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def send_bytes(self, data: bytes) -> None:
        with self._send_lock:
            self._sock.sendall(data)

    def _read_loop(self) -> None:
        try:
            while True:
                data = b""
                while len(data) < CELL_SIZE:
                    chunk = self._sock.recv(CELL_SIZE - len(data))
                    if not chunk:
                        return  # EOF; a partial trailing cell is discarded
                    data += chunk
                self._inbound.put((self, data))
        except OSError:
            return

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __str__(self) -> str:
        return self.peer_name


class TcpEndpoint:
    """Cell endpoint bound to a TCP listening socket.

    Outbound sends to an ``"host:port"`` address reuse one connection per
    destination; replies can target the connection a cell arrived on.
    """

    def __init__(self, bind_address: str):
        host, port = _split_hostport(bind_address)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self.address = "%s:%d" % self._listener.getsockname()
        self._inbound: queue.Queue = queue.Queue()
        self._conns: list[_TcpConn] = []
        self._dialed: dict[str, _TcpConn] = {}
        self._lock = threading.Lock()
        self._closed = False
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()

    def _accept_loop(self) -> None:
        try:
            while True:
                sock, _ = self._listener.accept()
                with self._lock:
                    self._conns.append(_TcpConn(sock, self._inbound))
        except OSError:
            return

    def _dial(self, address: str) -> _TcpConn:
        with self._lock:
            conn = self._dialed.get(address)
            if conn is None:
                sock = socket.create_connection(_split_hostport(address), timeout=5)
                conn = _TcpConn(sock, self._inbound)
                self._dialed[address] = conn
                self._conns.append(conn)
        return conn

    def send(self, dest, cell: Cell) -> None:
        if self._closed:
            raise TransportError("endpoint is closed")
        try:
            conn = dest if isinstance(dest, _TcpConn) else self._dial(dest)
            conn.send_bytes(cell.to_bytes())
        except OSError as exc:
            raise TransportError(f"send to {dest} failed: {exc}") from exc

    def recv(self, timeout: float | None = None) -> tuple[_TcpConn, Cell] | None:
        try:
            conn, data = self._inbound.get(timeout=timeout)
        except queue.Empty:
            return None
        return conn, Cell.from_bytes(data)

    def close(self) -> None:
        self._closed = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            for conn in self._conns:
                conn.close()


def _split_hostport(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise TransportError(f"expected host:port, got {address!r}")
    return host, int(port)


def send_message(endpoint, dest, circuit_id: int, message: bytes) -> int:
    """Fragment a message and push all its cells to dest; returns cell count."""
    cells = fragment(message, circuit_id)
    for cell in cells:
        endpoint.send(dest, cell)
    return len(cells)


@dataclass
class RelayLogEntry:
    event: str  # "forward", "deliver" or "drop"
    circuit_id: int
    prev_hop: str
    next_hop: str = ""
    detail: str = ""


@dataclass
class RelayState:
    """Everything a relay holds: keys, buffers, routes, sink and log."""

    nickname: str
    keys: KemKeyPair | tuple[KemKeyPair, KemKeyPair]
    reassembler: Reassembler
    forwarding: dict[int, str] = field(default_factory=dict)
    sink: list[bytes] = field(default_factory=list)
    log: list[RelayLogEntry] = field(default_factory=list)


class RelayNode:
    """A relay: reassembles circuit messages, peels one layer, forwards or delivers."""

    def __init__(
        self,
        nickname: str,
        endpoint,
        keys: KemKeyPair | tuple[KemKeyPair, KemKeyPair],
        *,
        registry: SchemeRegistry | None = None,
        reassembly_timeout: float = 5.0,
    ):
        self.endpoint = endpoint
        self.registry = registry
        self.state = RelayState(nickname, keys, Reassembler(reassembly_timeout))
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return self.endpoint.address

    @property
    def sink(self) -> list[bytes]:
        return self.state.sink

    @property
    def log(self) -> list[RelayLogEntry]:
        return self.state.log

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self.run, name=f"relay-{self.state.nickname}", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.endpoint.close()

    def run(self) -> None:
        """Pump cells until stopped; malformed cells are dropped, not fatal."""
        while not self._stop.is_set():
            try:
                item = self.endpoint.recv(timeout=0.05)
                if item is not None:
                    self.handle_cell(*item)
            except QsorError as exc:
                self.state.log.append(RelayLogEntry("drop", 0, "", detail=str(exc)))

    def handle_cell(self, peer, cell: Cell) -> None:
        state = self.state
        if cell.circuit_id == DIRECTORY_CIRCUIT_ID:
            state.log.append(
                RelayLogEntry("drop", cell.circuit_id, str(peer), detail="directory circuit")
            )
            return
        before = len(state.reassembler.drops)
        message = state.reassembler.add(peer, cell)
        for reason in state.reassembler.drops[before:]:
            state.log.append(RelayLogEntry("drop", cell.circuit_id, str(peer), detail=reason))
        if message is None:
            return
        try:
            next_hop, inner = onion.unwrap_layer(state.keys, message, registry=self.registry)
        except QsorError as exc:
            state.forwarding.pop(cell.circuit_id, None)
            state.reassembler.forget(peer, cell.circuit_id)
            state.log.append(
                RelayLogEntry("drop", cell.circuit_id, str(peer), detail=f"unwrap: {exc}")
            )
            return
        if next_hop:
            state.forwarding[cell.circuit_id] = next_hop
            try:
                send_message(self.endpoint, next_hop, cell.circuit_id, inner)
            except TransportError as exc:
                state.log.append(
                    RelayLogEntry("drop", cell.circuit_id, str(peer), next_hop, str(exc))
                )
                return
            state.log.append(RelayLogEntry("forward", cell.circuit_id, str(peer), next_hop))
        else:
            state.sink.append(inner)
            state.log.append(RelayLogEntry("deliver", cell.circuit_id, str(peer)))
