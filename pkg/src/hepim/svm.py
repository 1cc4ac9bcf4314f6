"""Integer one-vs-all SVM with a homogeneous degree-2 polynomial kernel.

Inference is split in two.  The untrusted accelerator computes encrypted dot
products ``x . sv_j`` for every support vector at once (one ciphertext per
input dimension, support vectors laid out across coefficients) using only
plaintext-scalar multiplies and additions.  The key holder decrypts, squares,
weights by the dual coefficients, adds the bias and takes the argmax.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .bfv import (Ciphertext, EncryptionParams, SecretKey, decrypt, encode, encrypt, he_add,
                  he_mul_scalar, noise_budget)
from .errors import CapacityError, DimensionError, IntegrityError, ModelParseError

QMAX = 7  # 3-bit features and support-vector entries


def round_half_away(v):
    v = np.asarray(v, dtype=np.float64)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class Quantizer:
    """Per-feature affine map ``(raw - offset) * scale`` onto ``0..7``."""
    scale: np.ndarray
    offset: np.ndarray

    @classmethod
    def identity(cls, dimension: int) -> "Quantizer":
        return cls(np.ones(dimension), np.zeros(dimension))

    @classmethod
    def from_range(cls, lo, hi) -> "Quantizer":
        lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
        span = np.where(hi > lo, hi - lo, 1.0)
        return cls(QMAX / span, lo)

    @property
    def dimension(self) -> int:
        return len(self.scale)


def quantize_input(raw, q: Quantizer) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (q.dimension,):
        raise DimensionError(f"expected {q.dimension} features, got {raw.shape}")
    return np.clip(round_half_away((raw - q.offset) * q.scale), 0, QMAX)


@dataclass(frozen=True, eq=False)
class SvmModel:
    """One binary machine per class; ``support_vectors[c]`` is ``M_c x D``."""
    support_vectors: tuple[np.ndarray, ...]
    alphas: tuple[np.ndarray, ...]
    biases: tuple[int, ...]
    quantizer: Quantizer
    labels: tuple = ()

    def __post_init__(self):
        if not self.support_vectors:
            raise DimensionError("model has no classes")
        if not (len(self.support_vectors) == len(self.alphas) == len(self.biases)):
            raise DimensionError("per-class fields disagree on the class count")
        d = self.dimension
        if d < 1 or d != self.quantizer.dimension:
            raise DimensionError("dimension must be >= 1 and match the quantizer")
        for sv, a in zip(self.support_vectors, self.alphas):
            if sv.ndim != 2 or sv.shape[1] != d or len(a) != sv.shape[0]:
                raise DimensionError("support vector / alpha shapes disagree")
            if sv.size and (sv.min() < 0 or sv.max() > QMAX):
                raise CapacityError("support-vector entries must lie in 0..7")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(self.class_count)))

    @property
    def class_count(self) -> int:
        return len(self.support_vectors)

    @property
    def dimension(self) -> int:
        return self.support_vectors[0].shape[1]

    @property
    def max_support_vectors(self) -> int:
        return max(sv.shape[0] for sv in self.support_vectors)

    @classmethod
    def build(cls, support_vectors, alphas, biases, quantizer=None, labels=()) -> "SvmModel":
        svs = tuple(np.asarray(s, dtype=np.int64).reshape(len(a), -1)
                    for s, a in zip(support_vectors, alphas))
        q = quantizer or Quantizer.identity(svs[0].shape[1])
        return cls(svs, tuple(np.asarray(a, dtype=np.int64) for a in alphas),
                   tuple(int(b) for b in biases), q, tuple(labels))


# ---------------------------------------------------------------- libSVM text

_HEADER_INT = {"nr_class", "total_sv"}
_HEADER_LIST = {"rho", "label", "nr_sv", "probA", "probB"}


def _parse_blocks(text: str):
    """Yield ``(header, rows)`` per concatenated model; rows are (line, coef, feats)."""
    header, rows, in_sv = {}, [], False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if in_sv and not line.startswith("svm_type"):
            parts = line.split()
            try:
                coef = float(parts[0])
            except ValueError:
                raise ModelParseError(lineno, f"non-numeric coefficient {parts[0]!r}") from None
            feats = {}
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ModelParseError(lineno, f"expected index:value, got {tok!r}")
                try:
                    i, v = int(idx), float(val)
                except ValueError:
                    raise ModelParseError(lineno, f"non-numeric field {tok!r}") from None
                if i < 1:
                    raise ModelParseError(lineno, f"feature index {i} out of range")
                feats[i] = v
            rows.append((lineno, coef, feats))
            continue
        if line.startswith("svm_type") and in_sv:
            yield header, rows
            header, rows, in_sv = {}, [], False
        if line == "SV":
            if "rho" not in header:
                raise ModelParseError(lineno, "header is missing rho")
            in_sv = True
            continue
        key, _, rest = line.partition(" ")
        if not rest or not key.isidentifier():
            raise ModelParseError(lineno, f"malformed header line {line!r}")
        try:
            if key in _HEADER_INT:
                header[key] = int(rest)
            elif key in _HEADER_LIST:
                header[key] = [float(v) for v in rest.split()]
            elif key in ("gamma", "coef0", "degree"):
                header[key] = float(rest)
            else:
                header[key] = rest.strip()
        except ValueError:
            raise ModelParseError(lineno, f"non-numeric value in {key}") from None
        header["_line"] = header.get("_line", lineno)
    if not in_sv:
        raise ModelParseError(len(text.splitlines()) + 1, "no SV section")
    yield header, rows


def _vector(value, d, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(d, float(arr))
    if arr.shape != (d,):
        raise DimensionError(f"sidecar {name} has {arr.size} entries, model has {d} features")
    return arr


def load_libsvm_model(text: str, sidecar: dict | str | None = None, *,
                      capacity: int = 4096) -> SvmModel:
    """Parse libSVM model text into an integer one-vs-all model.

    A single binary model yields two classes with decision values ``f`` and
    ``-f``.  Several concatenated binary models are read as one-vs-all
    machines, one class each, named by the first label of each block.
    ``sidecar`` holds ``{"scale", "offset", "alpha_scale"}`` (scalars or
    per-feature lists) and optionally ``"dimension"``.
    """
    if isinstance(sidecar, str):
        sidecar = json.loads(sidecar)
    sidecar = dict(sidecar or {})
    blocks = list(_parse_blocks(text))
    dim = sidecar.get("dimension")
    seen = max((max(f, default=0) for _, rows in blocks for _, _, f in rows), default=0)
    if dim is None:
        dim = max(seen, 1)
    elif seen > dim:
        for _, rows in blocks:
            for lineno, _, feats in rows:
                if feats and max(feats) > dim:
                    raise ModelParseError(lineno, f"feature index {max(feats)} exceeds {dim}")
    quant = Quantizer(_vector(sidecar.get("scale", 1.0), dim, "scale"),
                      _vector(sidecar.get("offset", 0.0), dim, "offset"))
    alpha_scale = float(sidecar.get("alpha_scale", 1.0))

    machines = []
    for header, rows in blocks:
        if header.get("nr_class", 2) != 2 or len(header["rho"]) != 1:
            raise ModelParseError(header.get("_line", 1), "only binary models are supported")
        if header.get("kernel_type", "polynomial") not in ("polynomial", "poly"):
            warnings.warn(f"kernel_type {header['kernel_type']} read as degree-2 polynomial")
        sv = np.zeros((len(rows), dim))
        for r, (_, _, feats) in enumerate(rows):
            for i, v in feats.items():
                sv[r, i - 1] = v
        sv_q = np.clip(round_half_away((sv - quant.offset) * quant.scale), 0, QMAX)
        alpha = round_half_away(np.array([c for _, c, _ in rows]) * alpha_scale)
        bias = int(round_half_away(-header["rho"][0] * alpha_scale))
        labels = header.get("label", [0, 1])
        machines.append((sv_q.reshape(len(rows), dim), alpha, bias, labels))

    if len(machines) == 1:
        sv, a, b, labels = machines[0]
        machines = [(sv, a, b, labels[0]), (sv, -a, -b, labels[1] if len(labels) > 1 else 1)]
    else:
        machines = [(sv, a, b, labels[0]) for sv, a, b, labels in machines]

    svs, alphas, biases, names = [], [], [], []
    for c, (sv, a, b, name) in enumerate(machines):
        if len(a) > capacity:
            keep = np.argsort(-np.abs(a), kind="stable")[:capacity]
            warnings.warn(f"class {c}: {len(a)} support vectors truncated to {capacity} by |alpha|")
            sv, a = sv[keep], a[keep]
        svs.append(sv.astype(np.int64))
        alphas.append(a.astype(np.int64))
        biases.append(b)
        names.append(int(name) if float(name).is_integer() else name)
    return SvmModel(tuple(svs), tuple(alphas), tuple(biases), quant, tuple(names))


def read_samples_csv(source, dimension: int | None = None) -> np.ndarray:
    """One sample per row; a non-numeric first row is taken as a header."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    out = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    if out.size == 0:
        out = out.reshape(0, dimension or 0)
    if dimension is not None and out.shape[1] != dimension:
        raise DimensionError(f"samples have {out.shape[1]} columns, model expects {dimension}")
    return out


# ------------------------------------------------------------ plaintext path

def _check_input(m: SvmModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (m.dimension,):
        raise DimensionError(f"input has shape {x.shape}, model dimension is {m.dimension}")
    if x.size and (x.min() < 0 or x.max() > QMAX):
        raise CapacityError("input entries must lie in 0..7")
    return x


def plaintext_dot_products(m: SvmModel, x) -> list[np.ndarray]:
    x = _check_input(m, x)
    return [sv @ x for sv in m.support_vectors]


def class_scores(m: SvmModel, dots) -> list[int]:
    # python ints: alpha * dot**2 summed over 4096 vectors can pass 2**63
    return [sum(int(a) * int(d) ** 2 for a, d in zip(alpha, dot)) + b
            for alpha, dot, b in zip(m.alphas, dots, m.biases)]


def argmax_low(scores) -> int:
    best = 0
    for c, s in enumerate(scores):
        if s > scores[best]:
            best = c
    return best


def plaintext_reference_inference(m: SvmModel, x) -> int:
    return argmax_low(class_scores(m, plaintext_dot_products(m, x)))


# --------------------------------------------------------- homomorphic path

@dataclass(frozen=True, eq=False)
class EncryptedModel:
    columns: tuple[tuple[Ciphertext, ...], ...]  # [class][dimension]
    sv_counts: tuple[int, ...]
    params: EncryptionParams

    @property
    def dimension(self) -> int:
        return len(self.columns[0])


@dataclass(frozen=True, eq=False)
class PartialResult:
    ciphertexts: tuple[Ciphertext, ...]
    sv_counts: tuple[int, ...]


def encrypt_model(m: SvmModel, sk: SecretKey, rng: np.random.Generator) -> EncryptedModel:
    params = sk.params
    if m.max_support_vectors > params.n:
        raise CapacityError(f"{m.max_support_vectors} support vectors exceed N={params.n}")
    cols = tuple(tuple(encrypt(encode(sv[:, d], params), sk, rng) for d in range(m.dimension))
                 for sv in m.support_vectors)
    return EncryptedModel(cols, tuple(sv.shape[0] for sv in m.support_vectors), params)


def rodent_linear_phase(em: EncryptedModel, x) -> PartialResult:
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (em.dimension,):
        raise DimensionError(f"input has shape {x.shape}, model dimension is {em.dimension}")
    if x.size and (x.min() < 0 or x.max() > QMAX):
        raise CapacityError("input entries must lie in 0..7")
    out = []
    for cols in em.columns:
        acc = he_mul_scalar(cols[0], int(x[0]))
        for ct, xd in zip(cols[1:], x[1:]):
            acc = he_add(acc, he_mul_scalar(ct, int(xd)))
        out.append(acc)
    return PartialResult(tuple(out), em.sv_counts)


def decrypt_dot_products(pr: PartialResult, sk: SecretKey) -> list[np.ndarray]:
    dots = []
    for ct, count in zip(pr.ciphertexts, pr.sv_counts):
        if noise_budget(ct, sk) <= 0:
            raise IntegrityError("noise budget exhausted on a partial result")
        dots.append(decrypt(ct, sk).coeffs[:count].copy())
    return dots


def fly_finish(pr: PartialResult, sk: SecretKey, m: SvmModel) -> int:
    return argmax_low(class_scores(m, decrypt_dot_products(pr, sk)))


# ---------------------------------------------------------------- budgeting

@dataclass(frozen=True)
class OverflowReport:
    dimension: int
    max_dot: int
    max_score: int | None
    t: int

    @property
    def fits(self) -> bool:
        return self.max_dot < self.t

    @property
    def advice(self) -> str:
        if self.fits:
            return ""
        return (f"worst-case dot product {self.max_dot} reaches t={self.t}; use a plaintext "
                f"modulus above {self.max_dot} or at most {(self.t - 1) // QMAX**2} features")


def overflow_budget(m: SvmModel | int, params: EncryptionParams) -> OverflowReport:
    """Worst-case magnitudes; only the dot products are reduced mod ``t``."""
    dim = m if isinstance(m, int) else m.dimension
    max_dot = dim * QMAX * QMAX
    score = None
    if not isinstance(m, int):
        score = max(int(np.abs(a).sum()) * max_dot**2 + abs(b)
                    for a, b in zip(m.alphas, m.biases))
    return OverflowReport(dim, max_dot, score, params.t)


def random_model(rng: np.random.Generator, *, classes: int, dimension: int, max_svs: int,
                 alpha_bound: int = 50, bias_bound: int = 1000) -> SvmModel:
    """Random integer model for property tests and benchmarks."""
    svs, alphas, biases = [], [], []
    for _ in range(classes):
        count = int(rng.integers(1, max_svs + 1))
        svs.append(rng.integers(0, QMAX + 1, size=(count, dimension)))
        alphas.append(rng.integers(-alpha_bound, alpha_bound + 1, size=count))
        biases.append(int(rng.integers(-bias_bound, bias_bound + 1)))
    return SvmModel.build(svs, alphas, biases)

