import random

import pytest

from qsor.errors import IntegrityError, LengthError, RegistryError, UnknownSchemeError
from qsor.kem import (
    Family,
    SchemeProfile,
    SchemeRegistry,
    SharedSecret,
    decapsulate,
    encapsulate,
    hybrid_combine,
    hybrid_decapsulate,
    hybrid_encapsulate,
    keygen,
)

# (name, public key, private key, ciphertext) byte sizes of the built-in schemes.
EXPECTED_SIZES = [
    ("RSA-1024", 128, 128, 128),
    ("RSA-2048", 256, 256, 256),
    ("Frodo-640-AES", 9616, 19888, 9720),
    ("Frodo-640-SHAKE", 9616, 19888, 9720),
    ("Kyber512", 800, 1632, 736),
    ("NewHope-512-CCA", 928, 1888, 1120),
    ("NTRU-HPS-2048-509", 699, 935, 699),
    ("Sike-p503", 378, 434, 402),
]

ALL_SCHEMES = [row[0] for row in EXPECTED_SIZES]


def test_builtin_registry_has_exactly_the_expected_rows():
    reg = SchemeRegistry()
    rows = [
        (p.name, p.public_key_size, p.private_key_size, p.ciphertext_size)
        for p in reg.profiles()
    ]
    assert rows == EXPECTED_SIZES


def test_builtin_families():
    reg = SchemeRegistry()
    assert reg.get("RSA-1024").family is Family.CLASSICAL
    assert reg.get("RSA-2048").family is Family.CLASSICAL
    assert reg.get("Sike-p503").family is Family.ISOGENY
    for name in ("Frodo-640-AES", "Frodo-640-SHAKE", "Kyber512", "NewHope-512-CCA", "NTRU-HPS-2048-509"):
        assert reg.get(name).family is Family.LATTICE


@pytest.mark.parametrize("name,pk_size,sk_size,ct_size", EXPECTED_SIZES)
def test_keygen_and_encapsulate_sizes(name, pk_size, sk_size, ct_size):
    rng = random.Random(42)
    pair = keygen(name, rng)
    assert len(pair.public_key) == pk_size
    assert len(pair.private_key) == sk_size
    ct, secret = encapsulate(name, pair.public_key, rng)
    assert len(ct.data) == ct_size
    assert len(secret.key) == 32


def test_keygen_with_different_seeds_gives_distinct_keys():
    a = keygen("Kyber512", random.Random(1))
    b = keygen("Kyber512", random.Random(2))
    assert a.private_key != b.private_key
    assert a.public_key != b.public_key


def test_name_aliases_resolve():
    reg = SchemeRegistry()
    assert reg.get("kyber512").name == "Kyber512"
    assert reg.get("kyber").name == "Kyber512"
    assert reg.get("sike-p503").name == "Sike-p503"
    assert reg.get("ntru").name == "NTRU-HPS-2048-509"
    assert reg.get("RSA_2048").name == "RSA-2048"
    assert reg.get(5).name == "Kyber512"
    with pytest.raises(UnknownSchemeError):
        reg.get("unknown-name")
    with pytest.raises(UnknownSchemeError):
        reg.get(99)


@pytest.mark.parametrize("name", ALL_SCHEMES)
def test_roundtrip_100_random_keypairs(name):
    rng = random.Random(hash(name) & 0xFFFF)
    for _ in range(100):
        pair = keygen(name, rng)
        ct, secret = encapsulate(name, pair.public_key, rng)
        assert decapsulate(name, pair.private_key, ct) == secret


def test_tamper_any_bit_is_detected():
    rng = random.Random(7)
    pair = keygen("Kyber512", rng)
    ct, _ = encapsulate("Kyber512", pair.public_key, rng)
    n_bits = len(ct.data) * 8
    for pos in rng.sample(range(n_bits), 100):
        flipped = bytearray(ct.data)
        flipped[pos // 8] ^= 1 << (pos % 8)
        with pytest.raises(IntegrityError):
            decapsulate("Kyber512", pair.private_key, bytes(flipped))


def test_length_errors_are_distinct_from_integrity_errors():
    rng = random.Random(8)
    pair = keygen("NTRU-HPS-2048-509", rng)
    ct, _ = encapsulate("NTRU-HPS-2048-509", pair.public_key, rng)
    with pytest.raises(LengthError):
        decapsulate("NTRU-HPS-2048-509", pair.private_key, ct.data[:-1])
    with pytest.raises(LengthError):
        decapsulate("NTRU-HPS-2048-509", pair.private_key[:-1], ct.data)
    with pytest.raises(LengthError):
        encapsulate("NTRU-HPS-2048-509", pair.public_key + b"\x00", rng)
    assert not issubclass(LengthError, IntegrityError)
    assert not issubclass(IntegrityError, LengthError)


def test_decapsulate_with_wrong_key_fails():
    rng = random.Random(9)
    a = keygen("Sike-p503", rng)
    b = keygen("Sike-p503", rng)
    ct, _ = encapsulate("Sike-p503", a.public_key, rng)
    with pytest.raises(IntegrityError):
        decapsulate("Sike-p503", b.private_key, ct)


def test_shared_secret_length_is_enforced():
    with pytest.raises(LengthError):
        SharedSecret(b"short")


def test_hybrid_combine_identity_and_self_inverse():
    k = SharedSecret(bytes(range(32)))
    zero = SharedSecret(bytes(32))
    assert hybrid_combine(zero, k) == k
    assert hybrid_combine(k, k) == zero


def test_hybrid_combine_commutes():
    rng = random.Random(10)
    for _ in range(100):
        a = SharedSecret(rng.randbytes(32))
        b = SharedSecret(rng.randbytes(32))
        assert hybrid_combine(a, b) == hybrid_combine(b, a)


def test_hybrid_encapsulate_ciphertext_sizes():
    reg = SchemeRegistry()
    rng = random.Random(11)
    rsa = keygen("RSA-2048", rng)

    kyber = keygen("Kyber512", rng)
    ct1, ct2, _ = hybrid_encapsulate(
        reg.hybrid("RSA-2048", "Kyber512"), rsa.public_key, kyber.public_key, rng
    )
    assert (len(ct1.data), len(ct2.data)) == (256, 736)

    sike = keygen("Sike-p503", rng)
    ct1, ct2, _ = hybrid_encapsulate(
        reg.hybrid("RSA-2048", "Sike-p503"), rsa.public_key, sike.public_key, rng
    )
    assert (len(ct1.data), len(ct2.data)) == (256, 402)


def test_hybrid_roundtrip():
    reg = SchemeRegistry()
    rng = random.Random(12)
    hybrid = reg.hybrid("RSA-2048", "NTRU-HPS-2048-509")
    rsa = keygen("RSA-2048", rng)
    ntru = keygen("NTRU-HPS-2048-509", rng)
    ct1, ct2, combined = hybrid_encapsulate(hybrid, rsa.public_key, ntru.public_key, rng)
    recovered = hybrid_decapsulate(hybrid, rsa.private_key, ntru.private_key, ct1, ct2)
    assert recovered == combined


def test_hybrid_secret_depends_on_both_components():
    rng = random.Random(13)
    for _ in range(100):
        k1 = SharedSecret(rng.randbytes(32))
        k2 = SharedSecret(rng.randbytes(32))
        combined = hybrid_combine(k1, k2)
        fresh = SharedSecret(rng.randbytes(32))
        assert hybrid_combine(fresh, k2) != combined
        assert hybrid_combine(k1, fresh) != combined


def test_hybrid_family_constraints():
    reg = SchemeRegistry()
    with pytest.raises(RegistryError):
        reg.hybrid("Kyber512", "NTRU-HPS-2048-509")
    with pytest.raises(RegistryError):
        reg.hybrid("RSA-2048", "RSA-1024")


def test_register_rejects_duplicates_and_bad_sizes():
    reg = SchemeRegistry()
    with pytest.raises(RegistryError):
        reg.register(SchemeProfile(5, "Other", 100, 100, 100, Family.LATTICE))
    with pytest.raises(RegistryError):
        reg.register(SchemeProfile(9, "Kyber512", 100, 100, 100, Family.LATTICE))
    with pytest.raises(RegistryError):
        SchemeProfile(10, "Empty", 0, 10, 10, Family.LATTICE)
    # Profile backend cannot seal a secret into fewer than 60 bytes.
    with pytest.raises(RegistryError):
        reg.register(SchemeProfile(11, "TinyCt", 64, 64, 59, Family.LATTICE))


def test_load_config_registers_extra_schemes(tmp_path):
    config = tmp_path / "schemes.cfg"
    config.write_text(
        "# extra schemes\n"
        "\n"
        "scheme Toy-KEM id=40 family=lattice pk=100 sk=120 ct=80\n"
    )
    reg = SchemeRegistry()
    assert reg.load_config(config) == 1
    profile = reg.get("toy-kem")
    assert (profile.scheme_id, profile.ciphertext_size) == (40, 80)
    rng = random.Random(14)
    pair = keygen("Toy-KEM", rng, registry=reg)
    ct, secret = encapsulate(40, pair.public_key, rng, registry=reg)
    assert len(ct.data) == 80
    assert decapsulate(40, pair.private_key, ct, registry=reg) == secret


def test_load_config_rejects_malformed_lines(tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("scheme Broken id=41 family=plastic pk=100 sk=100 ct=100\n")
    with pytest.raises(RegistryError):
        SchemeRegistry().load_config(config)
