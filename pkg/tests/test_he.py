import random

import pytest
from hypothesis import given, settings, strategies as st

from mpso import he


def test_round_trip_edge_messages(small_keypair):
    pk, sk = small_keypair.public, small_keypair.private
    rng = random.Random(1)
    for m in (0, 1, 2, pk.n - 1, pk.n // 2):
        c = he.encrypt(pk, m, rng)
        assert he.decrypt(sk, c) == m


def test_ciphertexts_are_randomized(small_keypair):
    pk = small_keypair.public
    rng = random.Random(2)
    a = he.encrypt(pk, 5, rng)
    b = he.encrypt(pk, 5, rng)
    assert a.value != b.value
    assert he.decrypt(small_keypair.private, a) == he.decrypt(
        small_keypair.private, b) == 5


@given(raw1=st.integers(min_value=0, max_value=2**140),
       raw2=st.integers(min_value=0, max_value=2**140))
@settings(max_examples=100)
def test_additive_homomorphism(small_keypair, raw1, raw2):
    pk, sk = small_keypair.public, small_keypair.private
    m1, m2 = raw1 % pk.n, raw2 % pk.n
    rng = random.Random(raw1 ^ raw2)
    total = he.add(pk, he.encrypt(pk, m1, rng), he.encrypt(pk, m2, rng))
    assert he.decrypt(sk, total) == (m1 + m2) % pk.n


@given(raw_m=st.integers(min_value=0, max_value=2**140),
       raw_a=st.integers(min_value=1, max_value=2**140))
@settings(max_examples=100)
def test_scalar_multiplication(small_keypair, raw_m, raw_a):
    pk, sk = small_keypair.public, small_keypair.private
    m = raw_m % pk.n
    a = 1 + raw_a % (pk.n - 1)
    rng = random.Random(raw_m * 31 + raw_a)
    c = he.scalar_pow(pk, he.encrypt(pk, m, rng), a)
    assert he.decrypt(sk, c) == (a * m) % pk.n


def test_rerandomization_changes_value_not_plaintext(small_keypair):
    pk, sk = small_keypair.public, small_keypair.private
    rng = random.Random(3)
    c = he.encrypt(pk, 7, rng)
    fresh = he.add(pk, c, he.encrypt(pk, 0, rng))
    assert fresh.value != c.value
    assert he.decrypt(sk, fresh) == 7


def test_scalar_range_enforced(small_keypair):
    pk = small_keypair.public
    c = he.encrypt(pk, 3, random.Random(4))
    with pytest.raises(ValueError):
        he.scalar_pow(pk, c, 0)
    with pytest.raises(ValueError):
        he.scalar_pow(pk, c, pk.n)


def test_message_range_enforced(small_keypair):
    pk = small_keypair.public
    rng = random.Random(5)
    with pytest.raises(ValueError):
        he.encrypt(pk, -1, rng)
    with pytest.raises(ValueError):
        he.encrypt(pk, pk.n, rng)


def test_key_binding(small_keypair):
    other = he.keygen(128, rng=random.Random(99))
    c = he.encrypt(small_keypair.public, 9, random.Random(6))
    with pytest.raises(he.KeyMismatchError):
        he.decrypt(other.private, c)
    with pytest.raises(he.KeyMismatchError):
        he.add(other.public, c, he.encrypt(other.public, 1, random.Random(7)))


def test_random_nonzero_never_zero(small_keypair):
    pk, sk = small_keypair.public, small_keypair.private
    rng = random.Random(8)
    for _ in range(32):
        assert he.decrypt(sk, he.encrypt_random_nonzero(pk, rng)) != 0


def test_keygen_shape_and_determinism():
    a = he.keygen(128, rng=random.Random(11))
    b = he.keygen(128, rng=random.Random(11))
    c = he.keygen(128, rng=random.Random(12))
    assert a.public.n == b.public.n
    assert a.public.n != c.public.n
    assert a.public.n.bit_length() == 128
    assert a.public.n % 2 == 1
    assert a.public.g == a.public.n + 1
    assert a.public.n_sq == a.public.n ** 2


def test_keygen_rejects_bad_sizes():
    with pytest.raises(ValueError):
        he.keygen(127, rng=random.Random(0))
    with pytest.raises(ValueError):
        he.keygen(64, rng=random.Random(0))


def test_serialization_round_trips(small_keypair):
    pk, sk = small_keypair.public, small_keypair.private
    pk2 = he.public_key_from_bytes(he.public_key_to_bytes(pk))
    assert pk2 == pk
    sk2 = he.private_key_from_bytes(he.private_key_to_bytes(sk))
    assert sk2 == sk
    c = he.encrypt(pk, 42, random.Random(13))
    c2 = he.ciphertext_from_bytes(he.ciphertext_to_bytes(c))
    assert c2 == c
    assert he.decrypt(sk2, c2) == 42


def test_non_invertible_ciphertext_rejected(small_keypair):
    sk = small_keypair.private
    bogus = he.Ciphertext(value=small_keypair.public.n,
                          key_id=small_keypair.public.key_id)
    with pytest.raises(ValueError):
        he.decrypt(sk, bogus)
