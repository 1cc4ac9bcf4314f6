"""Negacyclic number-theoretic transform and modular-reduction kernels.

Forward transform: iterative Cooley-Tukey (decimation in time) over a
bit-reversed table of powers of ``psi``, natural-order input, bit-reversed
output.  Inverse: Gentleman-Sande with the inverse table, bit-reversed input,
natural-order output, scaled by ``N^-1``.  Pointwise products in between give
multiplication modulo ``X^N + 1``.

Moduli must be below 2**40 so that the split multiply in :func:`_mulmod`
stays inside int64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sympy import isprime

from ._backend import njit, pick
from .errors import ParameterError

MAX_MODULUS_BITS = 40
_SPLIT = 20
_LO_MASK = (1 << _SPLIT) - 1


def is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def bit_reverse(i: int, bits: int) -> int:
    r = 0
    for _ in range(bits):
        r = (r << 1) | (i & 1)
        i >>= 1
    return r


@dataclass(frozen=True)
class NttTables:
    q: int
    n: int
    psi: int
    psi_inv: int
    n_inv: int
    twiddles: np.ndarray = field(repr=False)
    inv_twiddles: np.ndarray = field(repr=False)

    @property
    def log_n(self) -> int:
        return self.n.bit_length() - 1


def _primitive_root_2n(q: int, n: int) -> int:
    """Smallest ``psi`` with ``psi**n == -1 (mod q)``."""
    exponent = (q - 1) // (2 * n)
    z = 2
    while True:
        base = pow(z, exponent, q)
        if pow(base, n, q) == q - 1:
            break
        z += 1
    # every primitive 2n-th root is an odd power of one of them
    best = q
    power = base
    square = base * base % q
    for _ in range(n):
        best = min(best, power)
        power = power * square % q
    return best


def build_tables(q: int, n: int) -> NttTables:
    if not is_power_of_two(n):
        raise ParameterError(f"transform length {n} is not a power of two")
    if q.bit_length() > MAX_MODULUS_BITS:
        raise ParameterError(f"modulus {q} exceeds {MAX_MODULUS_BITS} bits")
    if (q - 1) % (2 * n) != 0:
        raise ParameterError(f"{q} is not congruent to 1 mod {2 * n}")
    if not isprime(q):
        raise ParameterError(f"{q} is not prime")
    psi = _primitive_root_2n(q, n)
    psi_inv = pow(psi, -1, q)
    log_n = n.bit_length() - 1
    tw = np.empty(n, dtype=np.int64)
    itw = np.empty(n, dtype=np.int64)
    for i in range(n):
        e = bit_reverse(i, log_n)
        tw[i] = pow(psi, e, q)
        itw[i] = pow(psi_inv, e, q)
    tw.flags.writeable = False
    itw.flags.writeable = False
    return NttTables(q=q, n=n, psi=psi, psi_inv=psi_inv, n_inv=pow(n, -1, q),
                     twiddles=tw, inv_twiddles=itw)


# --- kernels -----------------------------------------------------------------

@njit(inline="always")
def _mulmod(a, b, q):
    r = (a * (b >> 20)) % q
    return ((r << 20) + a * (b & 0xFFFFF)) % q


def _mulmod_np(a, b, q):
    r = (a * (b >> _SPLIT)) % q
    return ((r << _SPLIT) + a * (b & _LO_MASK)) % q


@njit
def _forward_numba(a, tw, q):
    rows, n = a.shape
    for r in range(rows):
        t = n
        m = 1
        while m < n:
            t >>= 1
            for i in range(m):
                j1 = 2 * i * t
                s = tw[m + i]
                for j in range(j1, j1 + t):
                    u = a[r, j]
                    v = _mulmod(a[r, j + t], s, q)
                    x = u + v
                    a[r, j] = x - q if x >= q else x
                    y = u - v
                    a[r, j + t] = y + q if y < 0 else y
            m <<= 1


@njit
def _inverse_numba(a, itw, q, n_inv):
    rows, n = a.shape
    for r in range(rows):
        t = 1
        m = n
        while m > 1:
            j1 = 0
            h = m >> 1
            for i in range(h):
                s = itw[h + i]
                for j in range(j1, j1 + t):
                    u = a[r, j]
                    v = a[r, j + t]
                    x = u + v
                    a[r, j] = x - q if x >= q else x
                    y = u - v
                    if y < 0:
                        y += q
                    a[r, j + t] = _mulmod(y, s, q)
                j1 += 2 * t
            t <<= 1
            m = h
        for j in range(n):
            a[r, j] = _mulmod(a[r, j], n_inv, q)


def _stage_index(n: int, m: int, t: int):
    groups = np.arange(m)
    top = (2 * t * groups[:, None] + np.arange(t)[None, :]).ravel()
    return top, np.repeat(groups, t)


def _forward_numpy(a, tw, q):
    n = a.shape[1]
    t, m = n, 1
    while m < n:
        t >>= 1
        top, grp = _stage_index(n, m, t)
        s = tw[m + grp]
        u = a[:, top]
        v = _mulmod_np(a[:, top + t], s, q)
        a[:, top] = (u + v) % q
        a[:, top + t] = (u - v) % q
        m <<= 1


def _inverse_numpy(a, itw, q, n_inv):
    n = a.shape[1]
    t, m = 1, n
    while m > 1:
        h = m >> 1
        top, grp = _stage_index(n, h, t)
        s = itw[h + grp]
        u = a[:, top]
        v = a[:, top + t]
        a[:, top] = (u + v) % q
        a[:, top + t] = _mulmod_np((u - v) % q, s, q)
        t <<= 1
        m = h
    a[:] = _mulmod_np(a, np.int64(n_inv), q)


def _as_batch(x, tables: NttTables):
    arr = np.ascontiguousarray(x, dtype=np.int64)
    if arr.shape[-1] != tables.n:
        raise ParameterError(f"expected length {tables.n}, got {arr.shape[-1]}")
    return arr.reshape(-1, tables.n)


def forward_ntt(coeffs, tables: NttTables, *, backend: str | None = None) -> np.ndarray:
    """Transform one vector (or a stack of them) into the evaluation domain.

    A fresh int64 array is returned; when ``coeffs`` already is a contiguous
    int64 array it is transformed in place and returned.
    """
    arr = np.asarray(coeffs)
    batch = _as_batch(arr, tables)
    pick(_forward_numba, _forward_numpy, backend)(batch, tables.twiddles, np.int64(tables.q))
    return batch.reshape(arr.shape)


def inverse_ntt(evals, tables: NttTables, *, backend: str | None = None) -> np.ndarray:
    arr = np.asarray(evals)
    batch = _as_batch(arr, tables)
    pick(_inverse_numba, _inverse_numpy, backend)(
        batch, tables.inv_twiddles, np.int64(tables.q), np.int64(tables.n_inv))
    return batch.reshape(arr.shape)


def pointwise_mul(a, b, q: int) -> np.ndarray:
    return _mulmod_np(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64), np.int64(q))


def ntt_multiply(a, b, tables: NttTables, *, backend: str | None = None) -> np.ndarray:
    """Negacyclic product of two coefficient vectors modulo ``tables.q``."""
    fa = forward_ntt(np.array(a, dtype=np.int64), tables, backend=backend)
    fb = forward_ntt(np.array(b, dtype=np.int64), tables, backend=backend)
    return inverse_ntt(pointwise_mul(fa, fb, tables.q), tables, backend=backend)


def negacyclic_convolve_naive(a, b, q: int | None = None, t: int | None = None) -> list[int]:
    """Schoolbook product modulo ``X^N + 1`` over exact integers.

    Reduced mod ``q`` when given, then mod ``t`` when given (results in
    ``[0, t)``).  With neither, the exact signed coefficients are returned.
    """
    a = [int(v) for v in a]
    b = [int(v) for v in b]
    n = len(a)
    if len(b) != n or not is_power_of_two(n):
        raise ParameterError("operands must have equal power-of-two length")
    out = [0] * n
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            k = i + j
            if k < n:
                out[k] += ai * bj
            else:
                out[k - n] -= ai * bj
    if q is not None:
        out = [v % q for v in out]
    if t is not None:
        out = [v % t for v in out]
    return out


# --- shift/add modular reduction ----------------------------------------------

@dataclass(frozen=True)
class ShiftSchedule:
    """Constants for Barrett reduction expressed as shifts and adds.

    ``x * m`` is the sum of ``x << i`` over ``m_shifts``; the quotient estimate
    is that sum shifted right by ``shift``; ``qhat * q`` is the sum of
    ``qhat << i`` over ``q_shifts``.  ``shift = 2 * bits + 1`` keeps the
    estimate within one of the true quotient for every ``x < q**2``.
    """

    q: int
    bits: int
    shift: int
    m: int
    m_shifts: tuple[int, ...]
    q_shifts: tuple[int, ...]


def set_bits(v: int) -> tuple[int, ...]:
    return tuple(i for i in range(v.bit_length()) if v >> i & 1)


def shift_schedule(q: int) -> ShiftSchedule:
    if q < 2:
        raise ParameterError("modulus must be at least 2")
    bits = q.bit_length()
    shift = 2 * bits + 1
    m = (1 << shift) // q
    return ShiftSchedule(q=q, bits=bits, shift=shift, m=m,
                         m_shifts=set_bits(m), q_shifts=set_bits(q))


def reduce_shift_add(x, q: int, schedule: ShiftSchedule | None = None):
    """``x mod q`` for ``0 <= x < q**2`` using only shifts, adds and subtracts.

    Works on Python ints and elementwise on integer numpy arrays (int64 is
    enough while ``x * m`` stays below 2**63).
    """
    s = schedule or shift_schedule(q)
    if s.q != q:
        raise ParameterError("schedule was built for a different modulus")
    acc = 0
    for i in s.m_shifts:
        acc = acc + (x << i)
    qhat = acc >> s.shift
    prod = 0
    for i in s.q_shifts:
        prod = prod + (qhat << i)
    r = x - prod
    if isinstance(r, np.ndarray):
        return np.where(r >= q, r - q, r)
    return r - q if r >= q else r
