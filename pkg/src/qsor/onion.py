"""Layered onion messages: wrap, peel one layer, and analytic size accounting.

Wire format of one layer, all integers big-endian::

    layer  := version(1, =0x01) || protocol(1) || block || [block if hybrid]
              || nonce(12) || sealed(len(plain) + 16)
    block  := scheme_id(1) || ct_len(2) || ct
    plain  := next_hop_len(1) || next_hop || inner

``protocol`` is 0 for SO (classical), 1 for QSO (post-quantum), 2 for HSO
(hybrid; classical block first).  ``sealed`` is AES-256-GCM over ``plain``
with everything preceding the nonce bound as associated data, so a single
flipped bit anywhere in a layer is rejected.  The innermost layer carries an
empty ``next_hop`` as the exit marker.  There is no padding: serialized size
is an exact function of schemes, payload length and embedded addresses.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import kem
from .errors import AuthenticationError, FrameError, UnknownSchemeError
from .kem import HybridScheme, KemKeyPair, SchemeRegistry, SharedSecret

LAYER_VERSION = 0x01
DEFAULT_MAX_PAYLOAD = 1 << 20
MAX_ADDRESS_LEN = 255

_NONCE_LEN = 12
_TAG_LEN = 16


class Protocol(IntEnum):
    """Circuit-creation protocol: classical, post-quantum, or hybrid KEMs."""

    SO = 0
    QSO = 1
    HSO = 2


@dataclass(frozen=True)
class HopSpec:
    """One relay in a circuit: where to reach it and how to encrypt to it.

    ``scheme`` is a scheme id for SO/QSO and a :class:`HybridScheme` for
    HSO, in which case ``public_key`` is the (classical, post-quantum) pair.
    """

    address: str
    scheme: int | HybridScheme
    public_key: bytes | tuple[bytes, bytes]


@dataclass(frozen=True)
class OnionMessage:
    protocol: Protocol
    data: bytes

    def __len__(self) -> int:
        return len(self.data)


def _encode_plain(next_hop: str, inner: bytes) -> bytes:
    addr = next_hop.encode("utf-8")
    if len(addr) > MAX_ADDRESS_LEN:
        raise ValueError(f"next-hop address exceeds {MAX_ADDRESS_LEN} bytes: {next_hop!r}")
    return bytes([len(addr)]) + addr + inner


def _check_hop(protocol: Protocol, hop: HopSpec, registry: SchemeRegistry) -> None:
    if protocol is Protocol.HSO:
        if not isinstance(hop.scheme, HybridScheme):
            raise ValueError(f"HSO hop {hop.address!r} needs a HybridScheme")
        if not (isinstance(hop.public_key, tuple) and len(hop.public_key) == 2):
            raise ValueError(f"HSO hop {hop.address!r} needs (classical, pq) public keys")
        return
    if isinstance(hop.scheme, HybridScheme):
        raise ValueError(f"{protocol.name} hop {hop.address!r} must use a single scheme")
    family = registry.get(hop.scheme).family
    if protocol is Protocol.SO and family is not kem.Family.CLASSICAL:
        raise ValueError(f"SO requires a classical scheme, got {registry.get(hop.scheme).name}")
    if protocol is Protocol.QSO and family is kem.Family.CLASSICAL:
        raise ValueError(f"QSO requires a post-quantum scheme, got {registry.get(hop.scheme).name}")


def _seal_layer(
    protocol: Protocol,
    hop: HopSpec,
    next_hop: str,
    inner: bytes,
    rng: random.Random,
    registry: SchemeRegistry,
) -> bytes:
    if protocol is Protocol.HSO:
        assert isinstance(hop.scheme, HybridScheme)
        pk1, pk2 = hop.public_key  # type: ignore[misc]
        ct1, ct2, secret = kem.hybrid_encapsulate(hop.scheme, pk1, pk2, rng, registry=registry)
        blocks = [(hop.scheme.classical, ct1.data), (hop.scheme.post_quantum, ct2.data)]
    else:
        scheme_id = registry.get(hop.scheme).scheme_id
        ct, secret = kem.encapsulate(scheme_id, hop.public_key, rng, registry=registry)
        blocks = [(scheme_id, ct.data)]

    header = bytearray([LAYER_VERSION, protocol])
    for scheme_id, ct_data in blocks:
        header += struct.pack(">BH", scheme_id, len(ct_data))
        header += ct_data
    nonce = rng.randbytes(_NONCE_LEN)
    sealed = AESGCM(secret.key).encrypt(nonce, _encode_plain(next_hop, inner), bytes(header))
    return bytes(header) + nonce + sealed


def wrap(
    payload: bytes,
    hops: Sequence[HopSpec],
    protocol: Protocol,
    rng: random.Random | None = None,
    *,
    registry: SchemeRegistry | None = None,
    max_payload: int = DEFAULT_MAX_PAYLOAD,
) -> OnionMessage:
    """Nest one encryption layer per hop around the payload, innermost first.

    Each layer seals the next hop's address (empty at the exit) together
    with the inner bytes under a secret freshly encapsulated to that hop's
    key(s).  The returned message is the layer addressed to ``hops[0]``.
    """
    registry = kem._registry(registry)
    rng = kem._rng(rng)
    protocol = Protocol(protocol)
    if not hops:
        raise ValueError("hop list is empty")
    if len(payload) > max_payload:
        raise ValueError(f"payload of {len(payload)} bytes exceeds maximum {max_payload}")
    for hop in hops:
        if not hop.address:
            raise ValueError("every hop needs a non-empty address")
        _check_hop(protocol, hop, registry)

    inner = payload
    for i in range(len(hops) - 1, -1, -1):
        next_hop = hops[i + 1].address if i + 1 < len(hops) else ""
        inner = _seal_layer(protocol, hops[i], next_hop, inner, rng, registry)
    return OnionMessage(protocol, inner)


def _keypairs_for(
    protocol: Protocol, node_keys: KemKeyPair | tuple[KemKeyPair, KemKeyPair]
) -> list[KemKeyPair]:
    if protocol is Protocol.HSO:
        if not (isinstance(node_keys, tuple) and len(node_keys) == 2):
            raise AuthenticationError("layer is hybrid but node holds a single keypair")
        return list(node_keys)
    if isinstance(node_keys, tuple):
        raise AuthenticationError("layer is single-scheme but node holds hybrid keypairs")
    return [node_keys]


def unwrap_layer(
    node_keys: KemKeyPair | tuple[KemKeyPair, KemKeyPair],
    layer: bytes,
    *,
    registry: SchemeRegistry | None = None,
) -> tuple[str, bytes]:
    """Peel one layer with this node's keys; returns (next_hop, inner bytes).

    ``node_keys`` is a single keypair for SO/QSO layers and a
    (classical, post-quantum) pair for HSO.  Raises a typed error on any
    mismatch, truncation or tampering; never returns corrupted plaintext.
    """
    registry = kem._registry(registry)
    if len(layer) < 2:
        raise FrameError("layer shorter than fixed header")
    if layer[0] != LAYER_VERSION:
        raise FrameError(f"unsupported layer version {layer[0]}")
    try:
        protocol = Protocol(layer[1])
    except ValueError:
        raise FrameError(f"unknown protocol byte {layer[1]}") from None
    keypairs = _keypairs_for(protocol, node_keys)

    offset = 2
    secrets: list[SharedSecret] = []
    for keypair in keypairs:
        if len(layer) < offset + 3:
            raise FrameError("layer truncated inside KEM block header")
        scheme_id, ct_len = struct.unpack_from(">BH", layer, offset)
        offset += 3
        if scheme_id != keypair.scheme_id:
            raise AuthenticationError(
                f"layer is for scheme {scheme_id}, node key is scheme {keypair.scheme_id}"
            )
        profile = registry.get(scheme_id)
        if ct_len != profile.ciphertext_size:
            raise FrameError(
                f"declared ciphertext length {ct_len} does not match "
                f"{profile.name} profile ({profile.ciphertext_size})"
            )
        if len(layer) < offset + ct_len:
            raise FrameError("layer truncated inside KEM ciphertext")
        ct = layer[offset : offset + ct_len]
        offset += ct_len
        secrets.append(kem.decapsulate(scheme_id, keypair.private_key, ct, registry=registry))

    header = layer[:offset]
    if len(layer) < offset + _NONCE_LEN + _TAG_LEN + 1:
        raise FrameError("layer truncated before sealed blob")
    nonce = layer[offset : offset + _NONCE_LEN]
    sealed = layer[offset + _NONCE_LEN :]

    secret = secrets[0] if len(secrets) == 1 else kem.hybrid_combine(secrets[0], secrets[1])
    try:
        plain = AESGCM(secret.key).decrypt(nonce, sealed, header)
    except InvalidTag:
        raise AuthenticationError("layer failed authenticated decryption") from None

    next_hop_len = plain[0]
    if len(plain) < 1 + next_hop_len:
        raise FrameError("sealed plaintext shorter than its address field")
    try:
        next_hop = plain[1 : 1 + next_hop_len].decode("utf-8")
    except UnicodeDecodeError:
        raise FrameError("next-hop address is not valid UTF-8") from None
    return next_hop, plain[1 + next_hop_len :]


def _ciphertext_sizes(
    protocol: Protocol, scheme: int | HybridScheme, registry: SchemeRegistry
) -> list[int]:
    if protocol is Protocol.HSO:
        if not isinstance(scheme, HybridScheme):
            raise UnknownSchemeError("HSO size accounting needs a HybridScheme")
        return [
            registry.get(scheme.classical).ciphertext_size,
            registry.get(scheme.post_quantum).ciphertext_size,
        ]
    if isinstance(scheme, HybridScheme):
        raise UnknownSchemeError(f"{protocol.name} size accounting needs a single scheme")
    return [registry.get(scheme).ciphertext_size]


def onion_size(
    protocol: Protocol,
    schemes: int | HybridScheme | Sequence[int | HybridScheme],
    payload_len: int,
    addresses: Sequence[str],
    *,
    registry: SchemeRegistry | None = None,
) -> int:
    """Exact serialized size of ``wrap`` for these inputs, without encrypting.

    ``addresses`` is the ordered hop address list; the first hop's address
    never appears inside the message (the client dials it directly), so only
    ``addresses[1:]`` contribute.  ``schemes`` is one scheme applied to all
    hops or a per-hop sequence.
    """
    registry = kem._registry(registry)
    protocol = Protocol(protocol)
    hop_count = len(addresses)
    if hop_count == 0:
        raise ValueError("hop list is empty")
    if isinstance(schemes, (int, HybridScheme)):
        per_hop = [schemes] * hop_count
    else:
        per_hop = list(schemes)
        if len(per_hop) != hop_count:
            raise ValueError(f"{len(per_hop)} schemes for {hop_count} hops")

    size = payload_len
    for i in range(hop_count - 1, -1, -1):
        next_hop_len = len(addresses[i + 1].encode("utf-8")) if i + 1 < hop_count else 0
        ct_sizes = _ciphertext_sizes(protocol, per_hop[i], registry)
        header = 2 + sum(3 + ct for ct in ct_sizes)
        size = header + _NONCE_LEN + (1 + next_hop_len + size) + _TAG_LEN
    return size
