"""BFV homomorphic arithmetic over a residue number system.

Symmetric-key only. Polynomials live in ``Z_Q[X]/(X^N + 1)`` with
``Q = prod(primes)``, stored as one residue row per prime. Products go through
the negacyclic NTT of :mod:`hepim.ntt`; ciphertext-ciphertext products are
computed exactly in an auxiliary prime basis, then scaled by ``t/Q`` with
integer rounding. Ciphertexts are never relinearized: a product has three
parts and decrypts with ``s**2``.
"""

from __future__ import annotations

import math
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from sympy import isprime

from .errors import CapacityError, ParameterError
from .ntt import (NttTables, build_tables, forward_ntt, inverse_ntt, is_power_of_two,
                  pointwise_mul)

DEFAULT_NOISE_STDDEV = 3.2
NOISE_TAIL_SIGMAS = 6.0

WIRE_MAGIC = b"RBFV"
WIRE_VERSION = 1
_HEADER = struct.Struct("<4sHIHHH")


@lru_cache(maxsize=None)
def tables_for(q: int, n: int) -> NttTables:
    return build_tables(q, n)


def find_ntt_primes(n: int, bits: int, count: int, exclude=()) -> list[int]:
    """The ``count`` smallest ``bits``-bit primes congruent to 1 mod ``2n``."""
    step = 2 * n
    lo, hi = 1 << (bits - 1), 1 << bits
    q = ((lo - 1) // step + 1) * step + 1
    found = []
    while q < hi and len(found) < count:
        if q not in exclude and isprime(q):
            found.append(q)
        q += step
    if len(found) < count:
        raise ParameterError(
            f"only {len(found)} primes of {bits} bits are congruent to 1 mod {step}; need {count}")
    return found


@dataclass(frozen=True)
class EncryptionParams:
    n: int
    primes: tuple[int, ...]
    t: int
    noise_stddev: float = DEFAULT_NOISE_STDDEV

    def __post_init__(self):
        object.__setattr__(self, "primes", tuple(int(q) for q in self.primes))
        if not is_power_of_two(self.n):
            raise ParameterError(f"ring degree {self.n} is not a power of two")
        if not self.primes:
            raise ParameterError("at least one RNS prime is required")
        if len(set(self.primes)) != len(self.primes):
            raise ParameterError("RNS primes must be distinct")
        for q in self.primes:
            if (q - 1) % (2 * self.n):
                raise ParameterError(f"prime {q} is not congruent to 1 mod {2 * self.n}")
        if self.t < 2 or any(self.t >= q for q in self.primes):
            raise ParameterError(f"plaintext modulus {self.t} must be in [2, min prime)")
        if self.noise_stddev < 0:
            raise ParameterError("noise_stddev must be non-negative")

    @property
    def prime_count(self) -> int:
        return len(self.primes)

    @property
    def prime_bits(self) -> int:
        return max(q.bit_length() for q in self.primes)

    @cached_property
    def modulus(self) -> int:
        return math.prod(self.primes)

    @cached_property
    def delta(self) -> int:
        return self.modulus // self.t

    @cached_property
    def delta_residues(self) -> np.ndarray:
        return np.array([self.delta % q for q in self.primes], dtype=np.int64)

    @cached_property
    def qarr(self) -> np.ndarray:
        return np.array(self.primes, dtype=np.int64)[:, None]

    @cached_property
    def _crt(self):
        big_q = self.modulus
        cofactors = [big_q // q for q in self.primes]
        inverses = [pow(c % q, -1, q) for c, q in zip(cofactors, self.primes)]
        return cofactors, inverses

    @property
    def tables(self) -> list[NttTables]:
        return [tables_for(q, self.n) for q in self.primes]

    @property
    def slots_enabled(self) -> bool:
        return (self.t - 1) % (2 * self.n) == 0 and isprime(self.t)


def make_params(n: int, prime_bits: int, prime_count: int, t: int,
                noise_stddev: float = DEFAULT_NOISE_STDDEV) -> EncryptionParams:
    if not is_power_of_two(n):
        raise ParameterError(f"ring degree {n} is not a power of two")
    need = math.ceil(math.log2(2 * n)) + 1
    if prime_bits < need:
        raise ParameterError(f"prime_bits must be at least {need} for N={n}")
    primes = find_ntt_primes(n, prime_bits, prime_count)
    return EncryptionParams(n=n, primes=tuple(primes), t=t, noise_stddev=noise_stddev)


# --- RNS helpers -------------------------------------------------------------

def to_rns(values, params: EncryptionParams) -> np.ndarray:
    """Reduce integers (any sign, any size) into a ``(k, N)`` residue stack."""
    vals = list(values)
    out = np.empty((params.prime_count, len(vals)), dtype=np.int64)
    for i, q in enumerate(params.primes):
        out[i] = [int(v) % q for v in vals]
    return out


def crt_reconstruct(residues: np.ndarray, params: EncryptionParams) -> list[int]:
    """Integers in ``[0, Q)`` from a ``(k, N)`` residue stack."""
    cofactors, inverses = params._crt
    total = [0] * residues.shape[1]
    for row, q, c, inv in zip(residues, params.primes, cofactors, inverses):
        scaled = pointwise_mul(row, np.int64(inv), q).tolist()
        total = [acc + v * c for acc, v in zip(total, scaled)]
    big_q = params.modulus
    return [v % big_q for v in total]


def centered(v: int, modulus: int) -> int:
    v %= modulus
    return v - modulus if v > modulus // 2 else v


@dataclass(frozen=True)
class RnsPolynomial:
    residues: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.residues, dtype=np.int64)
        if r.ndim != 2:
            raise ParameterError("residues must be a (prime_count, N) array")
        object.__setattr__(self, "residues", r)

    def check(self, params: EncryptionParams):
        r = self.residues
        if r.shape != (params.prime_count, params.n):
            raise ParameterError(f"residue shape {r.shape} does not match params")
        if (r < 0).any() or (r >= params.qarr).any():
            raise ParameterError("residue out of range for its prime")
        return self


def _poly_mul(x: np.ndarray, y: np.ndarray, params: EncryptionParams) -> np.ndarray:
    out = np.empty_like(x)
    for i, tab in enumerate(params.tables):
        fx = forward_ntt(x[i].copy(), tab)
        fy = forward_ntt(y[i].copy(), tab)
        out[i] = inverse_ntt(pointwise_mul(fx, fy, tab.q), tab)
    return out


# --- operation trace ---------------------------------------------------------

_trace_stack: list[list[str]] = []


def _record(name: str):
    for log in _trace_stack:
        log.append(name)


@contextmanager
def op_trace():
    """Record the names of homomorphic operations executed inside the block."""
    log: list[str] = []
    _trace_stack.append(log)
    try:
        yield log
    finally:
        _trace_stack.remove(log)


# --- carriers ----------------------------------------------------------------

@dataclass(frozen=True)
class Plaintext:
    coeffs: np.ndarray
    params: EncryptionParams

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.int64)
        if c.shape != (self.params.n,):
            raise ParameterError(f"plaintext must have exactly {self.params.n} coefficients")
        if (c < 0).any() or (c >= self.params.t).any():
            raise ParameterError("plaintext coefficient outside [0, t)")
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True, eq=False)
class Ciphertext:
    parts: tuple[np.ndarray, ...]
    params: EncryptionParams
    level_meta: tuple[str, ...] = ()
    budget_ceiling: float | None = None
    _budget_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not 2 <= len(self.parts) <= 3:
            raise ParameterError(f"a ciphertext has 2 or 3 parts, got {len(self.parts)}")
        shape = (self.params.prime_count, self.params.n)
        for p in self.parts:
            if p.shape != shape:
                raise ParameterError("ciphertext part shape does not match params")

    @property
    def degree(self) -> int:
        return len(self.parts)


@dataclass(frozen=True)
class SecretKey:
    s: np.ndarray
    params: EncryptionParams

    @cached_property
    def residues(self) -> np.ndarray:
        return to_rns(self.s.tolist(), self.params)

    @cached_property
    def square(self) -> np.ndarray:
        return _poly_mul(self.residues, self.residues, self.params)


def keygen(params: EncryptionParams, rng: np.random.Generator) -> SecretKey:
    s = rng.integers(-1, 2, size=params.n, dtype=np.int64)
    return SecretKey(s=s, params=params)


def sample_noise(params: EncryptionParams, rng: np.random.Generator) -> np.ndarray:
    """Centered discrete Gaussian, resampled beyond the tail cut."""
    sigma = params.noise_stddev
    bound = NOISE_TAIL_SIGMAS * sigma
    e = np.rint(rng.normal(0.0, sigma, params.n))
    bad = np.abs(e) > bound
    while bad.any():
        e[bad] = np.rint(rng.normal(0.0, sigma, int(bad.sum())))
        bad = np.abs(e) > bound
    return e.astype(np.int64)


# --- encoding ----------------------------------------------------------------

def encode(values, params: EncryptionParams, *, slots: bool = False) -> Plaintext:
    """Place ``values`` (reduced mod t) into a plaintext.

    Coefficient encoding puts value j at coefficient j.  With ``slots=True``
    the values are evaluation points of the plaintext polynomial, so plaintext
    products act elementwise; this needs a prime t congruent to 1 mod 2N.
    """
    vals = [int(v) % params.t for v in values]
    if len(vals) > params.n:
        raise CapacityError(f"{len(vals)} values do not fit N={params.n}")
    coeffs = np.zeros(params.n, dtype=np.int64)
    coeffs[:len(vals)] = vals
    if slots:
        if not params.slots_enabled:
            raise ParameterError("slot encoding needs a prime t congruent to 1 mod 2N")
        coeffs = inverse_ntt(coeffs, tables_for(params.t, params.n))
    return Plaintext(coeffs, params)


def decode(pt: Plaintext, *, slots: bool = False) -> list[int]:
    if slots:
        return forward_ntt(pt.coeffs.copy(), tables_for(pt.params.t, pt.params.n)).tolist()
    return pt.coeffs.tolist()


# --- encryption --------------------------------------------------------------

def encrypt(pt: Plaintext, sk: SecretKey, rng: np.random.Generator) -> Ciphertext:
    params = pt.params
    if sk.params != params:
        raise ParameterError("plaintext and key use different params")
    _record("encrypt")
    qs = params.qarr
    a = np.stack([rng.integers(0, q, size=params.n, dtype=np.int64) for q in params.primes])
    e = to_rns(sample_noise(params, rng).tolist(), params)
    scaled_m = pointwise_mul(pt.coeffs[None, :], params.delta_residues[:, None], qs)
    c0 = (e + scaled_m - _poly_mul(a, sk.residues, params)) % qs
    return Ciphertext((c0, a), params, ("encrypt",))


def _evaluate(ct: Ciphertext, sk: SecretKey) -> list[int]:
    """``c0 + c1*s (+ c2*s^2)`` reconstructed to integers in ``[0, Q)``."""
    params = ct.params
    qs = params.qarr
    acc = ct.parts[0] + _poly_mul(ct.parts[1], sk.residues, params)
    if ct.degree == 3:
        acc = acc + _poly_mul(ct.parts[2], sk.square, params)
    return crt_reconstruct(acc % qs, params)


def decrypt(ct: Ciphertext, sk: SecretKey) -> Plaintext:
    _record("decrypt")
    params = ct.params
    big_q, t = params.modulus, params.t
    coeffs = [((2 * t * x + big_q) // (2 * big_q)) % t for x in _evaluate(ct, sk)]
    return Plaintext(np.array(coeffs, dtype=np.int64), params)


def noise_budget(ct: Ciphertext, sk: SecretKey) -> float:
    """Remaining noise headroom in bits, clamped at zero.

    Measures the invariant noise ``t * ct(s) mod Q`` (centered) and returns
    ``floor(log2(Q) - log2(2 * |noise|_inf))``, i.e. whole bits as SEAL
    reports them.  A ciphertext derived from operands whose budgets had
    already been measured never reports more than the smallest of those.
    Noise past half of Q wraps and cannot be told apart from small noise, so
    a budget of zero is a warning sign, not a proof of failure.
    """
    key = id(sk)
    if key in ct._budget_cache:
        return ct._budget_cache[key]
    params = ct.params
    big_q, t = params.modulus, params.t
    worst = max(abs(centered(t * x, big_q)) for x in _evaluate(ct, sk))
    if worst == 0:
        bits = float(big_q.bit_length() - 2)
    else:
        bits = float(math.floor(math.log2(big_q) - math.log2(2 * worst)))
    bits = max(0.0, bits)
    if ct.budget_ceiling is not None:
        bits = min(bits, ct.budget_ceiling)
    ct._budget_cache[key] = bits
    return bits


def _ceiling(*cts: Ciphertext) -> float | None:
    known = [b for c in cts for b in c._budget_cache.values()]
    known += [c.budget_ceiling for c in cts if c.budget_ceiling is not None]
    return min(known) if known else None


# --- homomorphic operations --------------------------------------------------

def _same_params(a: Ciphertext, b):
    if a.params != b.params:
        raise ParameterError("operands use different encryption params")


def he_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _same_params(a, b)
    if a.degree != b.degree:
        raise ParameterError("he_add needs ciphertexts of the same degree")
    _record("he_add")
    qs = a.params.qarr
    parts = tuple((x + y) % qs for x, y in zip(a.parts, b.parts))
    return Ciphertext(parts, a.params, a.level_meta + ("add",), _ceiling(a, b))


def he_mul_scalar(a: Ciphertext, k: int) -> Ciphertext:
    params = a.params
    if not 0 <= k < params.t:
        raise ParameterError(f"scalar {k} outside [0, t)")
    _record("he_mul_scalar")
    qs = params.qarr
    parts = tuple(pointwise_mul(p, np.int64(k), qs) for p in a.parts)
    return Ciphertext(parts, params, a.level_meta + ("mul_scalar",), _ceiling(a))


def he_mul_plain(a: Ciphertext, p: Plaintext) -> Ciphertext:
    _same_params(a, p)
    _record("he_mul_plain")
    params = a.params
    lifted = to_rns([centered(int(v), params.t) for v in p.coeffs], params)
    parts = tuple(_poly_mul(x, lifted, params) for x in a.parts)
    return Ciphertext(parts, params, a.level_meta + ("mul_plain",), _ceiling(a))


@lru_cache(maxsize=None)
def _extension_basis(n: int, bound_bits: int, exclude: tuple[int, ...]) -> tuple[int, ...]:
    bits = 39
    count = bound_bits // (bits - 1) + 1
    return tuple(find_ntt_primes(n, bits, count, exclude=set(exclude)))


def _exact_products(pairs, params: EncryptionParams, magnitude_bits: int) -> list[list[int]]:
    """Exact negacyclic products of signed integer polynomials.

    Each entry of ``pairs`` is a list of ``(x, y)`` whose products are summed.
    Work is done modulo an auxiliary prime basis wide enough for the result.
    """
    n = params.n
    bound_bits = 2 * magnitude_bits + n.bit_length() + 3
    basis = _extension_basis(n, bound_bits, params.primes)
    ext = EncryptionParams(n=n, primes=basis, t=2)
    results = []
    for terms in pairs:
        acc = np.zeros((len(basis), n), dtype=np.int64)
        for x, y in terms:
            acc = (acc + _poly_mul(to_rns(x, ext), to_rns(y, ext), ext)) % ext.qarr
        big_p = ext.modulus
        results.append([centered(v, big_p) for v in crt_reconstruct(acc, ext)])
    return results


def _scale_round(values: list[int], num: int, den: int) -> list[int]:
    out = []
    for v in values:
        mag = (2 * abs(v) * num + den) // (2 * den)
        out.append(-mag if v < 0 else mag)
    return out


def he_mul(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Ciphertext product without relinearization (result has three parts)."""
    _same_params(a, b)
    if a.degree != 2 or b.degree != 2:
        raise ParameterError("he_mul supports degree-2 operands only (no relinearization)")
    _record("he_mul")
    params = a.params
    big_q = params.modulus
    lift = [[centered(v, big_q) for v in crt_reconstruct(p, params)] for p in (*a.parts, *b.parts)]
    a0, a1, b0, b1 = lift
    d0, d1, d2 = _exact_products(
        [[(a0, b0)], [(a0, b1), (a1, b0)], [(a1, b1)]], params, big_q.bit_length())
    parts = tuple(to_rns(_scale_round(d, params.t, big_q), params) for d in (d0, d1, d2))
    return Ciphertext(parts, params, a.level_meta + b.level_meta + ("mul",), _ceiling(a, b))


def ciphertext_bytes(params: EncryptionParams, parts: int = 2) -> int:
    """Bit-packed ciphertext size: parts x primes x prime_bits x N / 8."""
    return parts * params.prime_count * params.prime_bits * params.n // 8


# --- wire format -------------------------------------------------------------

def _word_bytes(bits: int) -> int:
    return (bits + 7) // 8


def _pack_words(arr: np.ndarray, width: int) -> bytes:
    raw = np.ascontiguousarray(arr, dtype="<u8").reshape(-1, 1).view(np.uint8)
    return raw[:, :width].tobytes()


def _unpack_words(buf: bytes, width: int, count: int) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=np.uint8)
    if raw.size != width * count:
        raise ParameterError("payload length does not match header")
    full = np.zeros((count, 8), dtype=np.uint8)
    full[:, :width] = raw.reshape(count, width)
    return full.view("<u8").ravel().astype(np.int64)


def serialize(obj: Plaintext | Ciphertext) -> bytes:
    """Little-endian wire encoding: 16-byte header, then fixed-width words."""
    params = obj.params
    if isinstance(obj, Plaintext):
        width = _word_bytes(params.t.bit_length())
        header = _HEADER.pack(WIRE_MAGIC, WIRE_VERSION, params.n, 1, 0, width)
        return header + _pack_words(obj.coeffs, width)
    width = _word_bytes(params.prime_bits)
    header = _HEADER.pack(WIRE_MAGIC, WIRE_VERSION, params.n, params.prime_count,
                          obj.degree, width)
    return header + b"".join(_pack_words(p, width) for p in obj.parts)


def deserialize(data: bytes, params: EncryptionParams) -> Plaintext | Ciphertext:
    if len(data) < _HEADER.size:
        raise ParameterError("truncated header")
    magic, version, n, prime_count, parts, width = _HEADER.unpack_from(data)
    if magic != WIRE_MAGIC or version != WIRE_VERSION:
        raise ParameterError("not an RBFV payload of a supported version")
    if n != params.n:
        raise ParameterError(f"payload ring degree {n} does not match params ({params.n})")
    body = data[_HEADER.size:]
    if parts == 0:
        return Plaintext(_unpack_words(body, width, n), params)
    if prime_count != params.prime_count:
        raise ParameterError("payload prime count does not match params")
    words = _unpack_words(body, width, parts * prime_count * n)
    stack = words.reshape(parts, prime_count, n)
    ct = Ciphertext(tuple(stack[i].copy() for i in range(parts)), params, ("wire",))
    for p in ct.parts:
        RnsPolynomial(p).check(params)
    return ct
