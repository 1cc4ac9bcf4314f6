import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hepim.errors import ParameterError
from hepim.ntt import (build_tables, forward_ntt, inverse_ntt, negacyclic_convolve_naive,
                       ntt_multiply, pointwise_mul, reduce_shift_add, shift_schedule)

Q36 = 34359754753  # smallest 36-bit prime = 1 mod 8192


def test_tables_q3329_n128():
    tab = build_tables(3329, 128)
    assert pow(tab.psi, 128, 3329) == 3328
    assert pow(tab.psi, 256, 3329) == 1
    assert len(tab.twiddles) == 128


def test_tables_q17_n4_smallest_root():
    # exhaustive search over Z_17 for x**4 == -1
    roots = [x for x in range(17) if pow(x, 4, 17) == 16]
    assert roots == [2, 8, 9, 15]
    tab = build_tables(17, 4)
    assert tab.psi == 2
    assert pow(tab.psi, 4, 17) == 16


@pytest.mark.parametrize("q,n", [(13, 4), (3329, 3), (3329, 512)])
def test_tables_reject_bad_params(q, n):
    with pytest.raises(ParameterError):
        build_tables(q, n)


def test_zero_fixed_point(backend):
    tab = build_tables(7681, 16)
    z = np.zeros(16, dtype=np.int64)
    assert not forward_ntt(z.copy(), tab, backend=backend).any()
    assert not inverse_ntt(z.copy(), tab, backend=backend).any()


def test_delta_roundtrip(backend):
    tab = build_tables(3329, 128)
    d = np.zeros(128, dtype=np.int64)
    d[0] = 1
    f = forward_ntt(d.copy(), tab, backend=backend)
    # constant polynomial evaluates to 1 everywhere
    assert (f == 1).all()
    assert (inverse_ntt(f, tab, backend=backend) == d).all()


@pytest.mark.parametrize("q,n", [(17, 4), (7681, 16), (3329, 128), (Q36, 16), (Q36, 128)])
def test_roundtrip_batch(backend, rng, q, n):
    tab = build_tables(q, n)
    x = rng.integers(0, q, size=(200, n))
    y = inverse_ntt(forward_ntt(x.copy(), tab, backend=backend), tab, backend=backend)
    assert (y == x).all()


@pytest.mark.parametrize("q,n", [(7681, 16), (Q36, 16), (3329, 128)])
def test_product_matches_naive(backend, rng, q, n):
    tab = build_tables(q, n)
    for _ in range(10):
        a = rng.integers(0, q, n)
        b = rng.integers(0, q, n)
        assert ntt_multiply(a, b, tab, backend=backend).tolist() == negacyclic_convolve_naive(a, b, q)


def test_backends_agree(rng):
    tab = build_tables(Q36, 128)
    x = rng.integers(0, Q36, size=(8, 128))
    assert (forward_ntt(x.copy(), tab, backend="numba")
            == forward_ntt(x.copy(), tab, backend="numpy")).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 3328), st.integers(0, 3328), st.integers(0, 2**32))
def test_linearity(alpha, beta, seed):
    tab = build_tables(3329, 16)
    r = np.random.default_rng(seed)
    x, y = r.integers(0, 3329, 16), r.integers(0, 3329, 16)
    lhs = forward_ntt((alpha * x + beta * y) % 3329, tab)
    rhs = (alpha * forward_ntt(x.copy(), tab) + beta * forward_ntt(y.copy(), tab)) % 3329
    assert (lhs == rhs).all()


def test_naive_wrap_sign():
    n = 8
    x1 = [0, 1] + [0] * 6
    xn1 = [0] * 7 + [1]
    assert negacyclic_convolve_naive(x1, xn1, 97) == [96] + [0] * 7
    delta = [1] + [0] * 7
    b = list(range(8))
    assert negacyclic_convolve_naive(delta, b, 97) == b


def test_naive_commutes(rng):
    a, b = rng.integers(0, 97, 16), rng.integers(0, 97, 16)
    assert negacyclic_convolve_naive(a, b, 97) == negacyclic_convolve_naive(b, a, 97)


def test_pointwise_mul_36bit(rng):
    a = rng.integers(0, Q36, 1000)
    b = rng.integers(0, Q36, 1000)
    got = pointwise_mul(a, b, Q36)
    assert got.tolist() == [int(x) * int(y) % Q36 for x, y in zip(a, b)]


class TestShiftAddReduction:
    def test_identity_below_q(self):
        assert reduce_shift_add(1234, 3329) == 1234

    def test_q_reduces_to_zero(self):
        assert reduce_shift_add(3329, 3329) == 0

    def test_exhaustive_q3329(self):
        q = 3329
        x = np.arange(q * q, dtype=np.int64)
        assert (reduce_shift_add(x, q) == x % q).all()

    def test_sampled_36bit(self, rng):
        s = shift_schedule(Q36)
        xs = [int(v) for v in rng.integers(0, 2**62, 20000)]
        xs = [v * 4 % (Q36 * Q36) for v in xs] + [Q36 * Q36 - 1, Q36, Q36 - 1, 0]
        assert all(reduce_shift_add(v, Q36, s) == v % Q36 for v in xs)

    def test_schedule_only_uses_shifts(self):
        s = shift_schedule(3329)
        assert s.shift == 2 * 12 + 1
        assert sum(1 << i for i in s.m_shifts) == s.m
        assert sum(1 << i for i in s.q_shifts) == 3329
