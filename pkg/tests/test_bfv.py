import numpy as np
import pytest
from sympy import isprime

from hepim.bfv import (Ciphertext, Plaintext, ciphertext_bytes, crt_reconstruct, decode,
                       decrypt, deserialize, encode, encrypt, he_add, he_mul, he_mul_plain,
                       he_mul_scalar, keygen, make_params, noise_budget, op_trace, serialize,
                       to_rns)
from hepim.errors import CapacityError, ParameterError
from hepim.ntt import negacyclic_convolve_naive
from hepim.presets import load_preset


@pytest.fixture(scope="module")
def desk():
    return load_preset("desk")


@pytest.fixture(scope="module")
def wide():
    # room for one ciphertext-ciphertext product at N=128
    return make_params(128, 30, 2, 257)


def enc(values, params, sk, rng, **kw):
    return encrypt(encode(values, params, **kw), sk, rng)


class TestMakeParams:
    def test_paper_primes(self):
        p = make_params(4096, 36, 3, 65537)
        assert len(p.primes) == 3
        for q in p.primes:
            assert q.bit_length() == 36 and isprime(q) and q % 8192 == 1
        # nothing smaller qualifies: scan every candidate below the first
        for q in range(2**35 + 1, p.primes[0], 8192):
            assert q % 8192 == 1
            assert not isprime(q)
        assert list(p.primes) == sorted(p.primes)

    def test_desk_12bit(self):
        p = make_params(128, 12, 1, 257)
        assert p.primes == (3329,)
        # trial-division oracle
        assert all(3329 % d for d in range(2, 58))
        assert 3329 % 256 == 1 and 3329 == 13 * 2**8 + 1

    def test_not_power_of_two(self):
        with pytest.raises(ParameterError):
            make_params(3, 12, 1, 5)

    def test_no_prime_in_range(self):
        with pytest.raises(ParameterError):
            make_params(1024, 12, 1, 5)

    def test_deterministic(self):
        assert make_params(256, 20, 2, 257) == make_params(256, 20, 2, 257)


class TestEncoding:
    def test_zero(self, desk):
        assert not encode([0] * 10, desk).coeffs.any()

    def test_direct_placement(self):
        p = make_params(8, 8, 1, 17)
        assert encode([5], p).coeffs.tolist() == [5, 0, 0, 0, 0, 0, 0, 0]

    def test_roundtrip(self, desk):
        assert decode(encode([3, 7, 2], desk))[:4] == [3, 7, 2, 0]

    def test_capacity(self):
        p = make_params(8, 8, 1, 17)
        with pytest.raises(CapacityError):
            encode(list(range(9)), p)

    def test_slots_roundtrip(self, desk, rng):
        v = rng.integers(0, 257, 128).tolist()
        assert decode(encode(v, desk, slots=True), slots=True) == v


class TestEncryptDecrypt:
    def test_roundtrip(self, desk, rng):
        sk = keygen(desk, rng)
        m = rng.integers(0, desk.t, desk.n)
        assert (decrypt(enc(m, desk, sk, rng), sk).coeffs == m).all()

    def test_zero(self, desk, rng):
        sk = keygen(desk, rng)
        assert not decrypt(enc([0], desk, sk, rng), sk).coeffs.any()

    def test_fresh_randomness(self, desk, rng):
        sk = keygen(desk, rng)
        a, b = enc([9, 9], desk, sk, rng), enc([9, 9], desk, sk, rng)
        assert not all((x == y).all() for x, y in zip(a.parts, b.parts))

    def test_paper_params_roundtrip(self, rng):
        p = load_preset("paper")
        sk = keygen(p, rng)
        m = rng.integers(0, p.t, p.n)
        ct = enc(m, p, sk, rng)
        assert (decrypt(ct, sk).coeffs == m).all()
        assert noise_budget(ct, sk) > 0


class TestHomomorphisms:
    def test_add_zero(self, desk, rng):
        sk = keygen(desk, rng)
        m = rng.integers(0, desk.t, desk.n)
        assert (decrypt(he_add(enc(m, desk, sk, rng), enc([], desk, sk, rng)), sk).coeffs == m).all()

    def test_add_many_pairs(self, desk, rng):
        sk = keygen(desk, rng)
        for _ in range(1000):
            a = rng.integers(0, desk.t, desk.n)
            b = rng.integers(0, desk.t, desk.n)
            got = decrypt(he_add(enc(a, desk, sk, rng), enc(b, desk, sk, rng)), sk).coeffs
            assert (got == (a + b) % desk.t).all()

    def test_784_term_accumulation(self, rng):
        p = make_params(16, 30, 2, 65537)  # Q must dwarf t**2 for sums near t
        sk = keygen(p, rng)
        terms = rng.integers(0, 50, size=(784, 16))
        acc = enc(terms[0], p, sk, rng)
        for row in terms[1:]:
            acc = he_add(acc, enc(row, p, sk, rng))
        assert decrypt(acc, sk).coeffs.tolist() == terms.sum(axis=0).tolist()

    @pytest.mark.parametrize("k", [0, 1, 7])
    def test_scalar(self, desk, rng, k):
        sk = keygen(desk, rng)
        m = rng.integers(0, desk.t, desk.n)
        m[0] = 5
        got = decrypt(he_mul_scalar(enc(m, desk, sk, rng), k), sk).coeffs
        assert (got == k * m % desk.t).all()
        if k == 7:
            assert got[0] == 35

    def test_scalar_range(self, desk, rng):
        sk = keygen(desk, rng)
        with pytest.raises(ParameterError):
            he_mul_scalar(enc([1], desk, sk, rng), desk.t)

    def test_plain_identity(self, desk, rng):
        sk = keygen(desk, rng)
        m = rng.integers(0, desk.t, desk.n)
        assert (decrypt(he_mul_plain(enc(m, desk, sk, rng), encode([1], desk)), sk).coeffs == m).all()

    def test_plain_monomial_n8(self, rng):
        p = make_params(8, 20, 1, 17)
        sk = keygen(p, rng)
        m = [1, 2, 3, 4, 5, 6, 7, 8]
        got = decrypt(he_mul_plain(enc(m, p, sk, rng), encode([0, 1], p)), sk).coeffs.tolist()
        # X * m(X) mod X^8 + 1: shift up one, top coefficient wraps with a sign flip
        assert got == [(-8) % 17, 1, 2, 3, 4, 5, 6, 7]
        assert got == negacyclic_convolve_naive(m, [0, 1, 0, 0, 0, 0, 0, 0], None, 17)

    def test_plain_random_n128(self, desk, rng):
        sk = keygen(desk, rng)
        for _ in range(20):
            m = rng.integers(0, desk.t, desk.n)
            pt = rng.integers(0, 4, desk.n)  # small plaintext keeps desk noise in budget
            got = decrypt(he_mul_plain(enc(m, desk, sk, rng), encode(pt, desk)), sk).coeffs
            assert got.tolist() == negacyclic_convolve_naive(m, pt, None, desk.t)

    def test_plain_random_wide(self, wide, rng):
        sk = keygen(wide, rng)
        for _ in range(10):
            m, pt = rng.integers(0, 257, 128), rng.integers(0, 257, 128)
            got = decrypt(he_mul_plain(enc(m, wide, sk, rng), encode(pt, wide)), sk).coeffs
            assert got.tolist() == negacyclic_convolve_naive(m, pt, None, 257)

    def test_scalar_matches_plain(self, desk, rng):
        sk = keygen(desk, rng)
        for k in (0, 1, 3, 5):
            ct = enc(rng.integers(0, desk.t, desk.n), desk, sk, rng)
            assert (decrypt(he_mul_scalar(ct, k), sk).coeffs
                    == decrypt(he_mul_plain(ct, encode([k], desk)), sk).coeffs).all()

    def test_slot_products_are_elementwise(self, wide, rng):
        p = make_params(128, 30, 2, 257)
        sk = keygen(p, rng)
        a, b = rng.integers(0, 257, 128), rng.integers(0, 257, 128)
        ct = he_mul_plain(enc(a, p, sk, rng, slots=True), encode(b, p, slots=True))
        assert decode(decrypt(ct, sk), slots=True) == ((a * b) % 257).tolist()


class TestCiphertextProduct:
    def test_identity(self, wide, rng):
        sk = keygen(wide, rng)
        m = rng.integers(0, 257, 128)
        prod = he_mul(enc(m, wide, sk, rng), enc([1], wide, sk, rng))
        assert prod.degree == 3
        assert (decrypt(prod, sk).coeffs == m).all()

    def test_zero(self, wide, rng):
        sk = keygen(wide, rng)
        prod = he_mul(enc([0], wide, sk, rng), enc(rng.integers(0, 257, 128), wide, sk, rng))
        assert not decrypt(prod, sk).coeffs.any()

    def test_random(self, wide, rng):
        sk = keygen(wide, rng)
        for _ in range(5):
            a, b = rng.integers(0, 257, 128), rng.integers(0, 257, 128)
            got = decrypt(he_mul(enc(a, wide, sk, rng), enc(b, wide, sk, rng)), sk).coeffs
            assert got.tolist() == negacyclic_convolve_naive(a, b, None, 257)

    def test_degree_limit(self, wide, rng):
        sk = keygen(wide, rng)
        a = enc([1], wide, sk, rng)
        with pytest.raises(ParameterError):
            he_mul(he_mul(a, a), a)


class TestNoiseBudget:
    def test_fresh_positive(self, rng):
        for name in ("desk", "paper"):
            p = load_preset(name)
            sk = keygen(p, rng)
            assert noise_budget(enc([1], p, sk, rng), sk) > 0

    def test_grows_with_modulus(self, rng):
        small, big = make_params(128, 30, 1, 257), make_params(128, 30, 2, 257)
        b = []
        for p in (small, big):
            sk = keygen(p, rng)
            b.append(noise_budget(enc([1], p, sk, rng), sk))
        assert b[1] > b[0]

    def test_mul_strictly_decreases(self, wide, rng):
        sk = keygen(wide, rng)
        a, b = enc([3, 4], wide, sk, rng), enc([5], wide, sk, rng)
        ba, bb = noise_budget(a, sk), noise_budget(b, sk)
        assert noise_budget(he_mul(a, b), sk) < min(ba, bb)
        assert noise_budget(he_mul_plain(a, encode(rng.integers(0, 257, 128), wide)), sk) < ba

    def test_never_increases(self, desk, rng):
        sk = keygen(desk, rng)
        for _ in range(30):
            a = enc(rng.integers(0, 257, 128), desk, sk, rng)
            b = enc(rng.integers(0, 257, 128), desk, sk, rng)
            ba, bb = noise_budget(a, sk), noise_budget(b, sk)
            for out in (he_add(a, b), he_mul_scalar(a, int(rng.integers(0, 257))),
                        he_mul_plain(a, encode(rng.integers(0, 3, 128), desk))):
                assert noise_budget(out, sk) <= max(ba, bb)
            assert noise_budget(he_add(a, b), sk) <= min(ba, bb)

    def test_exhaustion_shows_up_as_wrong_decryption(self, rng):
        p = load_preset("tiny")
        sk = keygen(p, rng)
        m = rng.integers(0, p.t, p.n)
        ct = enc(m, p, sk, rng)
        expected = m.copy()
        first_bad = None
        for step in range(40):
            budget = noise_budget(ct, sk)
            ok = (decrypt(ct, sk).coeffs == expected).all()
            if budget > 0:
                assert ok, f"decryption wrong with {budget} bits left at step {step}"
            if not ok:
                first_bad = step
                break
            ct = he_mul_scalar(ct, 2)
            expected = expected * 2 % p.t
        assert first_bad is not None
        assert noise_budget(ct, sk) == 0


def test_ciphertext_bytes():
    assert ciphertext_bytes(load_preset("paper")) == 110_592 == 2 * 3 * 36 * 4096 // 8
    assert ciphertext_bytes(make_params(128, 12, 1, 257)) == 2 * 12 * 128 // 8
    assert ciphertext_bytes(make_params(512, 14, 1, 257)) == 2 * ciphertext_bytes(make_params(256, 14, 1, 257))


def test_rns_consistency(rng):
    p = load_preset("paper")
    vals = [int(v) for v in rng.integers(0, 2**62, 64)] + [p.modulus - 1, 0]
    vals = [v * 123456789 % p.modulus for v in vals]
    res = to_rns(vals, p)
    back = crt_reconstruct(res, p)
    assert back == vals
    for i, q in enumerate(p.primes):
        assert [v % q for v in back] == res[i].tolist()


class TestWireFormat:
    def test_ciphertext_roundtrip(self, desk, rng):
        sk = keygen(desk, rng)
        ct = enc([1, 2, 3], desk, sk, rng)
        blob = serialize(ct)
        assert blob[:4] == b"RBFV"
        assert len(blob) == 16 + 2 * 1 * 128 * 3
        back = deserialize(blob, desk)
        assert isinstance(back, Ciphertext)
        assert all((x == y).all() for x, y in zip(back.parts, ct.parts))

    def test_plaintext_roundtrip(self, desk):
        pt = encode([1, 256, 7], desk)
        back = deserialize(serialize(pt), desk)
        assert isinstance(back, Plaintext) and (back.coeffs == pt.coeffs).all()

    def test_paper_word_width(self, rng):
        p = load_preset("paper")
        sk = keygen(p, rng)
        blob = serialize(enc([1], p, sk, rng))
        assert len(blob) == 16 + 2 * 3 * 4096 * 5

    def test_rejects_wrong_params(self, desk, rng):
        sk = keygen(desk, rng)
        with pytest.raises(ParameterError):
            deserialize(serialize(enc([1], desk, sk, rng)), load_preset("tiny"))


def test_op_trace_records(desk, rng):
    sk = keygen(desk, rng)
    a = enc([1], desk, sk, rng)
    with op_trace() as log:
        he_add(a, a)
        he_mul_scalar(a, 2)
    assert log == ["he_add", "he_mul_scalar"]
