"""Node descriptors, consensus documents and client path selection.

A single authoritative directory collects descriptors and snapshots them
into a consensus (sorted by nickname, so equal stores give byte-identical
documents).  Clients select uniformly random, pairwise-distinct relay paths
from a consensus and turn each descriptor into a :class:`~qsor.onion.HopSpec`
according to the active migration policy (classical, post-quantum or hybrid
onion keys).

On the wire, descriptors and consensus documents are line-oriented text with
base64-encoded keys.  The directory answers two requests over the transport
module, on the reserved circuit id 0 with 4-byte length-prefixed bodies::

    PUBLISH\\n<descriptor>          ->  OK\\n            | ERR <reason>\\n
    GET_CONSENSUS <epoch>\\n        ->  OK\\n<consensus> | ERR <reason>\\n
"""

from __future__ import annotations

import base64
import random
import threading
import time
from dataclasses import dataclass
from enum import Enum

from . import kem, transport
from .errors import (
    DescriptorError,
    DirectoryError,
    InsufficientRelaysError,
    QsorError,
    TransportError,
    UnknownSchemeError,
)
from .kem import HybridScheme, KemKeyPair, SchemeRegistry
from .onion import HopSpec, Protocol

ONION_KEY_ROLE = "onion_key"
EPOCH_DURATION = 3600  # seconds of validity granted per epoch

OnionKeyEntry = tuple  # (scheme_id, bytes) or (HybridScheme, (bytes, bytes))


class KeyMode(str, Enum):
    CLASSICAL = "classical"
    POST_QUANTUM = "post_quantum"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class MigrationPolicy:
    """Which kind of onion key relays use and which schemes realize it."""

    onion_key_mode: KeyMode
    classical_scheme: int | str | None = None
    pq_scheme: int | str | None = None

    def __post_init__(self) -> None:
        mode = self.onion_key_mode
        if mode in (KeyMode.CLASSICAL, KeyMode.HYBRID) and self.classical_scheme is None:
            raise ValueError(f"{mode.value} mode needs a classical scheme")
        if mode in (KeyMode.POST_QUANTUM, KeyMode.HYBRID) and self.pq_scheme is None:
            raise ValueError(f"{mode.value} mode needs a post-quantum scheme")

    @property
    def protocol(self) -> Protocol:
        return {
            KeyMode.CLASSICAL: Protocol.SO,
            KeyMode.POST_QUANTUM: Protocol.QSO,
            KeyMode.HYBRID: Protocol.HSO,
        }[self.onion_key_mode]

    def onion_scheme(self, registry: SchemeRegistry | None = None) -> int | HybridScheme:
        registry = kem._registry(registry)
        if self.onion_key_mode is KeyMode.CLASSICAL:
            return registry.get(self.classical_scheme).scheme_id
        if self.onion_key_mode is KeyMode.POST_QUANTUM:
            return registry.get(self.pq_scheme).scheme_id
        return registry.hybrid(self.classical_scheme, self.pq_scheme)

    def generate_keys(
        self, rng: random.Random | None = None, *, registry: SchemeRegistry | None = None
    ) -> KemKeyPair | tuple[KemKeyPair, KemKeyPair]:
        scheme = self.onion_scheme(registry)
        if isinstance(scheme, HybridScheme):
            return (
                kem.keygen(scheme.classical, rng, registry=registry),
                kem.keygen(scheme.post_quantum, rng, registry=registry),
            )
        return kem.keygen(scheme, rng, registry=registry)


@dataclass
class NodeDescriptor:
    nickname: str
    address: str
    role_keys: dict[str, OnionKeyEntry]
    published_at: int

    @property
    def onion_key(self) -> OnionKeyEntry:
        return self.role_keys[ONION_KEY_ROLE]


@dataclass(frozen=True)
class ConsensusDocument:
    epoch: int
    nodes: tuple[NodeDescriptor, ...]
    valid_until: int


def build_descriptor(
    nickname: str,
    address: str,
    keys: KemKeyPair | tuple[KemKeyPair, KemKeyPair],
    *,
    registry: SchemeRegistry | None = None,
    published_at: int | None = None,
) -> NodeDescriptor:
    """Descriptor advertising the public halves of a relay's onion keys."""
    registry = kem._registry(registry)
    if isinstance(keys, tuple):
        classical, pq = keys
        entry = (
            registry.hybrid(classical.scheme_id, pq.scheme_id),
            (classical.public_key, pq.public_key),
        )
    else:
        entry = (keys.scheme_id, keys.public_key)
    return NodeDescriptor(
        nickname=nickname,
        address=address,
        role_keys={ONION_KEY_ROLE: entry},
        published_at=int(time.time()) if published_at is None else published_at,
    )


def _validate_descriptor(descriptor: NodeDescriptor, registry: SchemeRegistry) -> None:
    if not descriptor.nickname or any(c.isspace() for c in descriptor.nickname):
        raise DescriptorError(f"bad nickname {descriptor.nickname!r}")
    if not descriptor.address or any(c.isspace() for c in descriptor.address):
        raise DescriptorError(f"bad address {descriptor.address!r}")
    if descriptor.published_at < 0:
        raise DescriptorError("published_at must be >= 0")
    if ONION_KEY_ROLE not in descriptor.role_keys:
        raise DescriptorError("descriptor has no onion key")
    scheme, public_key = descriptor.onion_key
    for scheme_id, key in _key_components(scheme, public_key):
        try:
            profile = registry.get(scheme_id)
        except UnknownSchemeError as exc:
            raise DescriptorError(str(exc)) from None
        if len(key) != profile.public_key_size:
            raise DescriptorError(
                f"{profile.name} public key must be {profile.public_key_size} bytes, "
                f"got {len(key)}"
            )


def _key_components(scheme, public_key) -> list[tuple[int, bytes]]:
    if isinstance(scheme, HybridScheme):
        if not (isinstance(public_key, tuple) and len(public_key) == 2):
            raise DescriptorError("hybrid onion key needs two public keys")
        return [(scheme.classical, public_key[0]), (scheme.post_quantum, public_key[1])]
    if not isinstance(public_key, (bytes, bytearray)):
        raise DescriptorError("single-scheme onion key needs raw key bytes")
    return [(scheme, bytes(public_key))]


# --- text serialization ----------------------------------------------------

def descriptor_to_text(descriptor: NodeDescriptor, *, registry: SchemeRegistry | None = None) -> str:
    registry = kem._registry(registry)
    scheme, public_key = descriptor.onion_key
    lines = [
        f"node {descriptor.nickname}",
        f"address {descriptor.address}",
        f"published-at {descriptor.published_at}",
    ]
    for scheme_id, key in _key_components(scheme, public_key):
        name = registry.get(scheme_id).name
        lines.append(f"onion-key {name} {base64.b64encode(key).decode()}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _parse_descriptor_lines(lines: list[str], registry: SchemeRegistry) -> NodeDescriptor:
    fields: dict[str, str] = {}
    key_lines: list[tuple[str, bytes]] = []
    for line in lines:
        tag, _, rest = line.partition(" ")
        if tag == "onion-key":
            name, _, encoded = rest.partition(" ")
            try:
                key_lines.append((name, base64.b64decode(encoded, validate=True)))
            except Exception:
                raise DescriptorError(f"bad base64 in onion-key line for {name!r}") from None
        elif tag in ("node", "address", "published-at"):
            fields[tag] = rest
        else:
            raise DescriptorError(f"unknown descriptor line {line!r}")
    missing = {"node", "address", "published-at"} - fields.keys()
    if missing:
        raise DescriptorError(f"descriptor missing fields: {sorted(missing)}")
    try:
        published_at = int(fields["published-at"])
    except ValueError:
        raise DescriptorError("published-at is not an integer") from None

    entry: OnionKeyEntry
    if len(key_lines) == 1:
        name, key = key_lines[0]
        entry = (registry.get(name).scheme_id, key)
    elif len(key_lines) == 2:
        (name1, key1), (name2, key2) = key_lines
        try:
            hybrid = registry.hybrid(name1, name2)
        except QsorError as exc:
            raise DescriptorError(f"bad hybrid onion key: {exc}") from None
        entry = (hybrid, (key1, key2))
    else:
        raise DescriptorError(f"descriptor carries {len(key_lines)} onion-key lines")
    return NodeDescriptor(fields["node"], fields["address"], {ONION_KEY_ROLE: entry}, published_at)


def parse_descriptor(text: str, *, registry: SchemeRegistry | None = None) -> NodeDescriptor:
    registry = kem._registry(registry)
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[-1] != "end":
        raise DescriptorError("descriptor does not end with 'end'")
    descriptor = _parse_descriptor_lines(lines[:-1], registry)
    _validate_descriptor(descriptor, registry)
    return descriptor


def consensus_to_text(consensus: ConsensusDocument, *, registry: SchemeRegistry | None = None) -> str:
    parts = [
        "consensus",
        f"epoch {consensus.epoch}",
        f"valid-until {consensus.valid_until}",
        f"node-count {len(consensus.nodes)}",
    ]
    body = "\n".join(parts) + "\n"
    for node in consensus.nodes:
        body += descriptor_to_text(node, registry=registry)
    return body + "end-consensus\n"


def parse_consensus(text: str, *, registry: SchemeRegistry | None = None) -> ConsensusDocument:
    registry = kem._registry(registry)
    lines = text.splitlines()
    if len(lines) < 5 or lines[0] != "consensus" or lines[-1] != "end-consensus":
        raise DirectoryError("malformed consensus framing")
    try:
        header = dict(line.split(" ", 1) for line in lines[1:4])
        epoch = int(header["epoch"])
        valid_until = int(header["valid-until"])
        node_count = int(header["node-count"])
    except (KeyError, ValueError):
        raise DirectoryError("malformed consensus header") from None
    nodes = []
    block: list[str] = []
    for line in lines[4:-1]:
        if line == "end":
            nodes.append(_parse_descriptor_lines(block, registry))
            block = []
        else:
            block.append(line)
    if block:
        raise DirectoryError("trailing descriptor lines in consensus")
    if len(nodes) != node_count:
        raise DirectoryError(f"consensus lists {len(nodes)} nodes, header says {node_count}")
    return ConsensusDocument(epoch, tuple(nodes), valid_until)


# --- directory authority ----------------------------------------------------

class DirectoryAuthority:
    """Single-writer descriptor store producing deterministic consensuses."""

    def __init__(self, *, registry: SchemeRegistry | None = None):
        self.registry = kem._registry(registry)
        self._store: dict[str, NodeDescriptor] = {}
        self._lock = threading.Lock()

    def publish(self, descriptor: NodeDescriptor) -> None:
        """Accept a descriptor; the newest published_at per nickname wins."""
        _validate_descriptor(descriptor, self.registry)
        with self._lock:
            existing = self._store.get(descriptor.nickname)
            if existing is None or descriptor.published_at >= existing.published_at:
                self._store[descriptor.nickname] = descriptor

    def make_consensus(self, epoch: int) -> ConsensusDocument:
        with self._lock:
            nodes = sorted(self._store.values(), key=lambda d: d.nickname)
        if len(nodes) < 3:
            raise InsufficientRelaysError(
                f"insufficient relays: {len(nodes)} published, need at least 3"
            )
        return ConsensusDocument(epoch, tuple(nodes), (epoch + 1) * EPOCH_DURATION)

    def __len__(self) -> int:
        with self._lock:
            return len(self._store)


# --- path selection ----------------------------------------------------------

def _hop_from_descriptor(
    descriptor: NodeDescriptor, policy: MigrationPolicy, registry: SchemeRegistry
) -> HopSpec | None:
    """Convert per policy; None if this node cannot serve the requested mode."""
    scheme, public_key = descriptor.onion_key
    components = dict(_key_components(scheme, public_key))

    def single(wanted) -> HopSpec | None:
        wanted_id = registry.get(wanted).scheme_id
        key = components.get(wanted_id)
        if key is None:
            return None
        return HopSpec(descriptor.address, wanted_id, key)

    if policy.onion_key_mode is KeyMode.CLASSICAL:
        return single(policy.classical_scheme)
    if policy.onion_key_mode is KeyMode.POST_QUANTUM:
        return single(policy.pq_scheme)
    hybrid = registry.hybrid(policy.classical_scheme, policy.pq_scheme)
    classical_key = components.get(hybrid.classical)
    pq_key = components.get(hybrid.post_quantum)
    if classical_key is None or pq_key is None:
        return None
    return HopSpec(descriptor.address, hybrid, (classical_key, pq_key))


def select_path(
    consensus: ConsensusDocument,
    length: int = 3,
    rng: random.Random | None = None,
    *,
    policy: MigrationPolicy,
    registry: SchemeRegistry | None = None,
) -> list[HopSpec]:
    """Uniformly sample ``length`` distinct relays usable under the policy."""
    registry = kem._registry(registry)
    rng = kem._rng(rng)
    hops = []
    for node in consensus.nodes:
        hop = _hop_from_descriptor(node, policy, registry)
        if hop is not None:
            hops.append(hop)
    if len(hops) < length:
        raise InsufficientRelaysError(
            f"insufficient relays: consensus offers {len(hops)} usable nodes, "
            f"path needs {length}"
        )
    return rng.sample(hops, length)


# --- directory protocol over the transport ----------------------------------

def _request_bytes(body: str) -> bytes:
    return transport.encode_directory_message(body.encode("utf-8"))


class DirectoryServer:
    """Serves PUBLISH / GET_CONSENSUS over an endpoint on circuit id 0."""

    def __init__(self, endpoint, authority: DirectoryAuthority | None = None, *,
                 registry: SchemeRegistry | None = None):
        self.endpoint = endpoint
        self.authority = authority or DirectoryAuthority(registry=registry)
        self.registry = self.authority.registry
        self._reassembler = transport.Reassembler()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return self.endpoint.address

    def start(self) -> None:
        self._thread = threading.Thread(target=self.run, name="directory", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.endpoint.close()

    def run(self) -> None:
        while not self._stop.is_set():
            try:
                item = self.endpoint.recv(timeout=0.05)
            except QsorError:
                continue
            if item is None:
                continue
            peer, cell = item
            if cell.circuit_id != transport.DIRECTORY_CIRCUIT_ID:
                continue
            stream = self._reassembler.add(peer, cell)
            if stream is None:
                continue
            response = self._handle(stream)
            transport.send_message(
                self.endpoint, peer, transport.DIRECTORY_CIRCUIT_ID,
                transport.encode_directory_message(response),
            )

    def _handle(self, stream: bytes) -> bytes:
        try:
            body = transport.decode_directory_message(stream).decode("utf-8")
        except (QsorError, UnicodeDecodeError) as exc:
            return f"ERR {exc}\n".encode()
        command, _, rest = body.partition("\n")
        try:
            if command == "PUBLISH":
                self.authority.publish(parse_descriptor(rest, registry=self.registry))
                return b"OK\n"
            if command.startswith("GET_CONSENSUS"):
                _, _, epoch_text = command.partition(" ")
                consensus = self.authority.make_consensus(int(epoch_text))
                return b"OK\n" + consensus_to_text(consensus, registry=self.registry).encode()
            return f"ERR unknown command {command!r}\n".encode()
        except (QsorError, ValueError) as exc:
            return f"ERR {exc}\n".encode()


class DirectoryClient:
    """Blocking request/response client for the directory protocol."""

    def __init__(self, endpoint, directory_address: str, *, timeout: float = 5.0,
                 registry: SchemeRegistry | None = None):
        self.endpoint = endpoint
        self.directory_address = directory_address
        self.timeout = timeout
        self.registry = kem._registry(registry)
        self._reassembler = transport.Reassembler(timeout=timeout)

    def _request(self, body: str) -> str:
        transport.send_message(
            self.endpoint, self.directory_address, transport.DIRECTORY_CIRCUIT_ID,
            _request_bytes(body),
        )
        deadline = time.monotonic() + self.timeout
        while time.monotonic() < deadline:
            item = self.endpoint.recv(timeout=0.05)
            if item is None:
                continue
            peer, cell = item
            if cell.circuit_id != transport.DIRECTORY_CIRCUIT_ID:
                continue
            stream = self._reassembler.add(peer, cell)
            if stream is not None:
                return transport.decode_directory_message(stream).decode("utf-8")
        raise TransportError(f"no directory response within {self.timeout}s")

    def publish(self, descriptor: NodeDescriptor) -> None:
        response = self._request("PUBLISH\n" + descriptor_to_text(descriptor, registry=self.registry))
        if response != "OK\n":
            raise DirectoryError(response.strip())

    def fetch_consensus(self, epoch: int) -> ConsensusDocument:
        response = self._request(f"GET_CONSENSUS {epoch}\n")
        if not response.startswith("OK\n"):
            raise DirectoryError(response.strip())
        return parse_consensus(response[3:], registry=self.registry)
