"""Key encapsulation: scheme profiles, profile-backed KEMs and the hybrid combiner.

The built-in registry carries size profiles for two RSA baselines and six
quantum-safe schemes.  By default every scheme is backed by a *profile KEM*:
a deterministic stand-in that reproduces the scheme's public-key, private-key
and ciphertext byte sizes exactly and behaves like a KEM (round-trips a
32-byte secret, rejects tampered ciphertexts) without claiming any
cryptographic security.  Real backends can be registered behind the same
interface.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass
from enum import Enum

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import (
    IntegrityError,
    LengthError,
    RegistryError,
    UnknownSchemeError,
)

SHARED_SECRET_LEN = 32

# Profile-KEM ciphertext layout: nonce || sealed secret (32 + 16 tag) || padding.
_SEED_LEN = 32
_NONCE_LEN = 12
_TAG_LEN = 16
_MIN_CIPHERTEXT = _NONCE_LEN + SHARED_SECRET_LEN + _TAG_LEN

_SYSTEM_RNG = random.SystemRandom()


class Family(str, Enum):
    """Coarse classification of a scheme's underlying hardness assumption."""

    CLASSICAL = "classical"
    LATTICE = "lattice"
    ISOGENY = "isogeny"


@dataclass(frozen=True)
class SchemeProfile:
    """Byte-size profile of one KEM scheme.

    Sizes are what the scheme puts on the wire; they drive all onion size
    and packet accounting.
    """

    scheme_id: int
    name: str
    public_key_size: int
    private_key_size: int
    ciphertext_size: int
    family: Family

    def __post_init__(self) -> None:
        if not 1 <= self.scheme_id <= 255:
            raise RegistryError(f"scheme_id must fit one byte, got {self.scheme_id}")
        if min(self.public_key_size, self.private_key_size, self.ciphertext_size) <= 0:
            raise RegistryError(f"{self.name}: all sizes must be positive")


@dataclass(frozen=True)
class KemKeyPair:
    scheme_id: int
    public_key: bytes
    private_key: bytes


@dataclass(frozen=True)
class KemCiphertext:
    scheme_id: int
    data: bytes


@dataclass(frozen=True)
class SharedSecret:
    """A 256-bit symmetric key produced by encapsulation."""

    key: bytes

    def __post_init__(self) -> None:
        if len(self.key) != SHARED_SECRET_LEN:
            raise LengthError(
                f"shared secret must be {SHARED_SECRET_LEN} bytes, got {len(self.key)}"
            )


@dataclass(frozen=True)
class HybridScheme:
    """A classical scheme paired with a post-quantum one.

    Construct through :meth:`SchemeRegistry.hybrid` so the family
    constraints are checked against actual profiles.
    """

    classical: int
    post_quantum: int

    def __post_init__(self) -> None:
        if self.classical == self.post_quantum:
            raise RegistryError("hybrid components must be distinct schemes")


class KemBackend:
    """Interface a KEM implementation exposes to the rest of the package."""

    profile: SchemeProfile

    def keygen(self, rng: random.Random) -> KemKeyPair:
        raise NotImplementedError

    def encapsulate(
        self, public_key: bytes, rng: random.Random
    ) -> tuple[KemCiphertext, SharedSecret]:
        raise NotImplementedError

    def decapsulate(self, private_key: bytes, ciphertext: bytes) -> SharedSecret:
        raise NotImplementedError


class ProfileKem(KemBackend):
    """Size-faithful stand-in KEM.

    keygen draws a 32-byte master seed and pads both keys to profile size
    with pseudorandom filler derived from it.  Encapsulation seals a fresh
    32-byte secret with AES-GCM under a key derived from the seed (which is
    recoverable from either key half), padding the ciphertext to profile
    size; the padding is authenticated as associated data so any flipped bit
    anywhere in the ciphertext is rejected.
    """

    def __init__(self, profile: SchemeProfile):
        if profile.public_key_size < _SEED_LEN or profile.private_key_size < _SEED_LEN:
            raise RegistryError(
                f"{profile.name}: profile KEM needs key sizes >= {_SEED_LEN} bytes"
            )
        if profile.ciphertext_size < _MIN_CIPHERTEXT:
            raise RegistryError(
                f"{profile.name}: profile KEM needs ciphertext size >= {_MIN_CIPHERTEXT} bytes"
            )
        self.profile = profile

    @staticmethod
    def _fill(tag: bytes, seed: bytes, n: int) -> bytes:
        return hashlib.shake_256(b"qsor.profile-kem." + tag + b"." + seed).digest(n)

    @staticmethod
    def _wrap_key(seed: bytes) -> bytes:
        return hashlib.sha256(b"qsor.profile-kem.wrap." + seed).digest()

    def keygen(self, rng: random.Random) -> KemKeyPair:
        p = self.profile
        seed = rng.randbytes(_SEED_LEN)
        public = seed + self._fill(b"pk", seed, p.public_key_size - _SEED_LEN)
        private = seed + self._fill(b"sk", seed, p.private_key_size - _SEED_LEN)
        return KemKeyPair(p.scheme_id, public, private)

    def encapsulate(
        self, public_key: bytes, rng: random.Random
    ) -> tuple[KemCiphertext, SharedSecret]:
        p = self.profile
        if len(public_key) != p.public_key_size:
            raise LengthError(
                f"{p.name}: public key must be {p.public_key_size} bytes, "
                f"got {len(public_key)}"
            )
        seed = public_key[:_SEED_LEN]
        secret = rng.randbytes(SHARED_SECRET_LEN)
        nonce = rng.randbytes(_NONCE_LEN)
        padding = rng.randbytes(p.ciphertext_size - _MIN_CIPHERTEXT)
        sealed = AESGCM(self._wrap_key(seed)).encrypt(nonce, secret, padding)
        return KemCiphertext(p.scheme_id, nonce + sealed + padding), SharedSecret(secret)

    def decapsulate(self, private_key: bytes, ciphertext: bytes) -> SharedSecret:
        p = self.profile
        if len(private_key) != p.private_key_size:
            raise LengthError(
                f"{p.name}: private key must be {p.private_key_size} bytes, "
                f"got {len(private_key)}"
            )
        if len(ciphertext) != p.ciphertext_size:
            raise LengthError(
                f"{p.name}: ciphertext must be {p.ciphertext_size} bytes, "
                f"got {len(ciphertext)}"
            )
        seed = private_key[:_SEED_LEN]
        nonce = ciphertext[:_NONCE_LEN]
        sealed = ciphertext[_NONCE_LEN:_MIN_CIPHERTEXT]
        padding = ciphertext[_MIN_CIPHERTEXT:]
        try:
            secret = AESGCM(self._wrap_key(seed)).decrypt(nonce, sealed, padding)
        except InvalidTag:
            raise IntegrityError(f"{p.name}: ciphertext failed authentication") from None
        return SharedSecret(secret)


# Built-in profiles.  RSA sizes are fixed at their upper bound so that
# accounting stays deterministic.
_BUILTIN_PROFILES = (
    SchemeProfile(1, "RSA-1024", 128, 128, 128, Family.CLASSICAL),
    SchemeProfile(2, "RSA-2048", 256, 256, 256, Family.CLASSICAL),
    SchemeProfile(3, "Frodo-640-AES", 9616, 19888, 9720, Family.LATTICE),
    SchemeProfile(4, "Frodo-640-SHAKE", 9616, 19888, 9720, Family.LATTICE),
    SchemeProfile(5, "Kyber512", 800, 1632, 736, Family.LATTICE),
    SchemeProfile(6, "NewHope-512-CCA", 928, 1888, 1120, Family.LATTICE),
    SchemeProfile(7, "NTRU-HPS-2048-509", 699, 935, 699, Family.LATTICE),
    SchemeProfile(8, "Sike-p503", 378, 434, 402, Family.ISOGENY),
)

# Short names accepted on the command line and in config files.
_ALIASES = {
    "rsa1024": "RSA-1024",
    "rsa2048": "RSA-2048",
    "frodoaes": "Frodo-640-AES",
    "frodoshake": "Frodo-640-SHAKE",
    "kyber": "Kyber512",
    "newhope": "NewHope-512-CCA",
    "ntru": "NTRU-HPS-2048-509",
    "sike": "Sike-p503",
}


def _normalize(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


class SchemeRegistry:
    """Lookup table from scheme id or name to profile and backend.

    Extensible at runtime: :meth:`register` adds a profile (backed by a
    :class:`ProfileKem` unless a backend is supplied) and
    :meth:`load_config` reads extra schemes from a text file with one
    record per line::

        scheme <name> id=<1-255> family=<classical|lattice|isogeny> pk=<n> sk=<n> ct=<n>
    """

    def __init__(self, *, include_builtin: bool = True):
        self._by_id: dict[int, SchemeProfile] = {}
        self._by_name: dict[str, SchemeProfile] = {}
        self._backends: dict[int, KemBackend] = {}
        if include_builtin:
            for profile in _BUILTIN_PROFILES:
                self.register(profile)

    def register(self, profile: SchemeProfile, backend: KemBackend | None = None) -> None:
        if profile.scheme_id in self._by_id:
            raise RegistryError(f"scheme_id {profile.scheme_id} already registered")
        key = _normalize(profile.name)
        if key in self._by_name:
            raise RegistryError(f"scheme name {profile.name!r} already registered")
        if backend is None:
            backend = ProfileKem(profile)
        self._by_id[profile.scheme_id] = profile
        self._by_name[key] = profile
        self._backends[profile.scheme_id] = backend

    def get(self, scheme: int | str | SchemeProfile) -> SchemeProfile:
        if isinstance(scheme, SchemeProfile):
            scheme = scheme.scheme_id
        if isinstance(scheme, int):
            try:
                return self._by_id[scheme]
            except KeyError:
                raise UnknownSchemeError(f"no scheme with id {scheme}") from None
        key = _normalize(scheme)
        key = _normalize(_ALIASES.get(key, key))
        try:
            return self._by_name[key]
        except KeyError:
            raise UnknownSchemeError(f"no scheme named {scheme!r}") from None

    def backend(self, scheme: int | str | SchemeProfile) -> KemBackend:
        return self._backends[self.get(scheme).scheme_id]

    def profiles(self) -> list[SchemeProfile]:
        return sorted(self._by_id.values(), key=lambda p: p.scheme_id)

    def hybrid(
        self, classical: int | str | SchemeProfile, post_quantum: int | str | SchemeProfile
    ) -> HybridScheme:
        cp = self.get(classical)
        qp = self.get(post_quantum)
        if cp.family is not Family.CLASSICAL:
            raise RegistryError(f"{cp.name} is not a classical scheme")
        if qp.family is Family.CLASSICAL:
            raise RegistryError(f"{qp.name} is not a post-quantum scheme")
        return HybridScheme(cp.scheme_id, qp.scheme_id)

    def load_config(self, path) -> int:
        """Register schemes from a config file; returns how many were added."""
        count = 0
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    self.register(_parse_config_line(line))
                except RegistryError as exc:
                    raise RegistryError(f"{path}:{lineno}: {exc}") from None
                count += 1
        return count


def _parse_config_line(line: str) -> SchemeProfile:
    parts = line.split()
    if len(parts) != 7 or parts[0] != "scheme":
        raise RegistryError(f"expected 'scheme <name> id=.. family=.. pk=.. sk=.. ct=..', got {line!r}")
    name = parts[1]
    fields = {}
    for part in parts[2:]:
        key, _, value = part.partition("=")
        if not value:
            raise RegistryError(f"malformed field {part!r}")
        fields[key] = value
    missing = {"id", "family", "pk", "sk", "ct"} - fields.keys()
    if missing:
        raise RegistryError(f"missing fields: {sorted(missing)}")
    try:
        family = Family(fields["family"])
    except ValueError:
        raise RegistryError(f"unknown family {fields['family']!r}") from None
    try:
        return SchemeProfile(
            scheme_id=int(fields["id"]),
            name=name,
            public_key_size=int(fields["pk"]),
            private_key_size=int(fields["sk"]),
            ciphertext_size=int(fields["ct"]),
            family=family,
        )
    except ValueError:
        raise RegistryError(f"non-integer size in {line!r}") from None


DEFAULT_REGISTRY = SchemeRegistry()


def _registry(registry: SchemeRegistry | None) -> SchemeRegistry:
    return DEFAULT_REGISTRY if registry is None else registry


def _rng(rng: random.Random | None) -> random.Random:
    return _SYSTEM_RNG if rng is None else rng


def keygen(
    scheme: int | str | SchemeProfile,
    rng: random.Random | None = None,
    *,
    registry: SchemeRegistry | None = None,
) -> KemKeyPair:
    """Generate a keypair whose halves have exactly the profile sizes."""
    return _registry(registry).backend(scheme).keygen(_rng(rng))


def encapsulate(
    scheme: int | str | SchemeProfile,
    public_key: bytes,
    rng: random.Random | None = None,
    *,
    registry: SchemeRegistry | None = None,
) -> tuple[KemCiphertext, SharedSecret]:
    """Produce (ciphertext, fresh 32-byte secret) under the given public key."""
    return _registry(registry).backend(scheme).encapsulate(public_key, _rng(rng))


def decapsulate(
    scheme: int | str | SchemeProfile,
    private_key: bytes,
    ciphertext: KemCiphertext | bytes,
    *,
    registry: SchemeRegistry | None = None,
) -> SharedSecret:
    """Recover the secret sealed in a ciphertext produced under the matching public key."""
    reg = _registry(registry)
    profile = reg.get(scheme)
    if isinstance(ciphertext, KemCiphertext):
        if ciphertext.scheme_id != profile.scheme_id:
            raise UnknownSchemeError(
                f"ciphertext is for scheme {ciphertext.scheme_id}, not {profile.scheme_id}"
            )
        ciphertext = ciphertext.data
    return reg.backend(profile).decapsulate(private_key, ciphertext)


def hybrid_combine(k1: SharedSecret, k2: SharedSecret) -> SharedSecret:
    """Bytewise XOR of two component secrets into the data-encryption key."""
    return SharedSecret(bytes(a ^ b for a, b in zip(k1.key, k2.key)))


def hybrid_encapsulate(
    hybrid: HybridScheme,
    classical_public_key: bytes,
    pq_public_key: bytes,
    rng: random.Random | None = None,
    *,
    registry: SchemeRegistry | None = None,
) -> tuple[KemCiphertext, KemCiphertext, SharedSecret]:
    """Encapsulate two independent fresh secrets and XOR them.

    Returns (classical ciphertext, post-quantum ciphertext, combined secret);
    recovering the combined secret requires decapsulating both.
    """
    rng = _rng(rng)
    ct1, k1 = encapsulate(hybrid.classical, classical_public_key, rng, registry=registry)
    ct2, k2 = encapsulate(hybrid.post_quantum, pq_public_key, rng, registry=registry)
    return ct1, ct2, hybrid_combine(k1, k2)


def hybrid_decapsulate(
    hybrid: HybridScheme,
    classical_private_key: bytes,
    pq_private_key: bytes,
    classical_ciphertext: KemCiphertext | bytes,
    pq_ciphertext: KemCiphertext | bytes,
    *,
    registry: SchemeRegistry | None = None,
) -> SharedSecret:
    """Decapsulate both components and XOR the recovered secrets."""
    k1 = decapsulate(hybrid.classical, classical_private_key, classical_ciphertext, registry=registry)
    k2 = decapsulate(hybrid.post_quantum, pq_private_key, pq_ciphertext, registry=registry)
    return hybrid_combine(k1, k2)
