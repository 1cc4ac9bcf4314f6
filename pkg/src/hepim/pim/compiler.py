"""Layout planning and lowering of RNS-BFV kernels onto the computation arrays.

Every logical row (one polynomial coefficient) lives in one physical row; a
field is a run of columns holding one little-endian integer per row.  Rows are
filled ``rows_per_array`` at a time down each array-column, so the stride of
an NTT stage either pairs rows inside an array or pairs the same local row of
two arrays ``stride / rows_per_array`` apart.

Programs carry their word matrix, the lines each word drives, an execution
schedule of ``(start, stop, count)`` ranges, a preload image (twiddles and
row constants written before the first instruction) and named input and
output fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import CapacityError, ParameterError, ValidationError
from ..ntt import NttTables, build_tables, ntt_multiply, forward_ntt, inverse_ntt, shift_schedule
from .emit import ONE, ZERO, Arith, Emitter, Scratch
from .energy import MtjParams, PeripheralModel, opcode_line_table
from .grid import ArrayGrid, _run_nb, _run_np, data_rows_for, validate_words
from .._backend import pick
from .isa import NOP_WORD, Op, listing

GRID_SHAPE = (16, 3, 512)
INPUT_BITS = 3


def modmul_scratch(bits: int) -> int:
    """Scratch columns a ``bits``-wide modular multiply needs at its peak."""
    return 2 * bits + reduce_scratch(2 * bits, bits)


def reduce_scratch(width: int, bits: int) -> int:
    """Scratch columns to reduce a ``width``-bit value modulo a ``bits``-bit prime."""
    return width + 2 * bits + 9


@dataclass(frozen=True)
class Field:
    name: str
    array_col: int
    cols: tuple[int, ...]

    @property
    def width(self) -> int:
        return len(self.cols)

    @property
    def bits(self) -> list[int]:
        return list(self.cols)


@dataclass
class LayoutPlan:
    array_rows: int
    array_cols: int
    size: int
    rows_per_array: int
    n_rows: int
    fields: dict[str, Field]
    scratch: dict[int, tuple[int, ...]]
    spare_rows: tuple[int, ...]
    workload: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.array_rows, self.array_cols, self.size

    def __getitem__(self, name: str) -> Field:
        try:
            return self.fields[name]
        except KeyError:
            raise ParameterError(f"layout has no field {name!r}") from None

    def global_rows(self) -> np.ndarray:
        n = np.arange(self.n_rows)
        return (n // self.rows_per_array) * self.size + n % self.rows_per_array

    def row_mask(self) -> np.ndarray:
        mask = np.zeros((self.array_rows, self.size), dtype=bool)
        for g in self.global_rows():
            mask[g // self.size, g % self.size] = True
        return mask

    def column_mask(self, cols) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[np.asarray(cols) % self.size] = True
        return mask

    def scratch_pool(self) -> Scratch:
        return Scratch({j: list(c) for j, c in self.scratch.items()}, self.size)

    def to_json(self) -> str:
        return json.dumps({
            "grid": list(self.shape), "rows_per_array": self.rows_per_array, "rows": self.n_rows,
            "fields": {k: [f.array_col, list(f.cols)] for k, f in self.fields.items()},
            "scratch": {str(j): len(c) for j, c in self.scratch.items()},
            "spare_rows": list(self.spare_rows), "workload": self.workload,
        }, sort_keys=True)


class _Allocator:
    def __init__(self, shape, n_rows, rows_per_array, workload):
        self.ar, self.ac, self.S = shape
        self.n_rows, self.rpa = n_rows, rows_per_array
        self.next = [0] * self.ac
        self.fields: dict[str, Field] = {}
        self.reserve = dict.fromkeys(range(self.ac), 0)
        self.workload = workload

    def add(self, name: str, j: int, width: int) -> Field:
        if name in self.fields:
            raise ValidationError(f"field {name!r} defined twice")
        if not 0 <= j < self.ac:
            raise CapacityError(f"field {name!r} placed in missing array-column {j}")
        start = self.next[j]
        self.next[j] += width
        f = Field(name, j, tuple(j * self.S + start + i for i in range(width)))
        self.fields[name] = f
        return f

    def need_scratch(self, j: int, n: int):
        self.reserve[j] = max(self.reserve[j], n)

    def finish(self, spare_needed: int = 0) -> LayoutPlan:
        usable = self.S - 2
        for j in range(self.ac):
            need = self.next[j] + self.reserve[j]
            if need > usable:
                raise CapacityError(
                    f"array-column {j} needs {self.next[j]} field columns + {self.reserve[j]} "
                    f"scratch = {need} > {usable} usable columns")
        spare = tuple(range(self.rpa, self.S - 4))
        if spare_needed > len(spare):
            raise CapacityError(f"needs {spare_needed} spare rows per array, only {len(spare)} free")
        scratch = {j: tuple(range(j * self.S + self.next[j], j * self.S + usable)) for j in range(self.ac)}
        return LayoutPlan(self.ar, self.ac, self.S, self.rpa, self.n_rows, self.fields, scratch,
                          spare, self.workload)


def _rows_geometry(n_rows: int, grid, rows_per_array):
    ar, ac, S = grid
    rpa = rows_per_array or data_rows_for(S)
    if rpa & (rpa - 1) or rpa > data_rows_for(S):
        raise ParameterError(f"rows per array must be a power of two <= {data_rows_for(S)}")
    if n_rows > ar * rpa:
        raise CapacityError(f"{n_rows} rows exceed {ar} arrays x {rpa} rows")
    return rpa


def plan_layout(params, workload: dict, *, grid=GRID_SHAPE, rows_per_array: int | None = None) -> LayoutPlan:
    """Place the fields a workload needs; raises CapacityError naming the violated bound.

    ``workload["kind"]`` is one of ``arith``, ``ntt``, ``polymult`` or ``svm_linear``.
    """
    kind = workload.get("kind")
    n = params.n if params is not None else workload.get("n")
    if n is None:
        raise ParameterError("workload needs a row count")
    rpa = _rows_geometry(n, grid, rows_per_array)
    al = _Allocator(grid, n, rpa, dict(workload))
    if kind == "arith":
        for name, (j, width) in workload["fields"].items():
            al.add(name, j, width)
        for j in range(grid[1]):
            al.need_scratch(j, workload.get("scratch", 0))
        return al.finish()
    if kind in ("ntt", "polymult"):
        return _plan_ntt(al, workload, polymult=kind == "polymult")
    if kind == "svm_linear":
        return _plan_svm(al, params, workload)
    raise ParameterError(f"unknown workload kind {kind!r}")


def _plan_ntt(al: _Allocator, workload: dict, *, polymult: bool) -> LayoutPlan:
    q = workload["modulus"]
    b = q.bit_length()
    n, ac = al.n_rows, al.ac
    log_n = n.bit_length() - 1
    work = 1 if ac >= 2 else 0
    fwd_col = 0
    inv_col = 2 if ac >= 3 else fwd_col
    al.add("V", work, b)
    al.add("Y", work, b)
    al.need_scratch(work, b + modmul_scratch(b))
    al.add("ROWBITS", fwd_col, max(log_n, 1))
    for s in range(log_n):
        al.add(f"TWF{s}", fwd_col, b)
    for s in range(log_n):
        al.add(f"TWI{s}", inv_col, b)
    if polymult:
        al.add("A", 0, b)
        al.add("B", 0, b)
    cross = max(0, log_n - (al.rpa.bit_length() - 1)) if n > al.rpa else 0
    return al.finish(spare_needed=2 + 2 * cross)


def svm_guard_bits(dimension: int, bits: int) -> int:
    """Headroom bits above the residue width for lazy accumulation (at least 3)."""
    want = (7 * max(dimension, 1)).bit_length()
    return max(3, min(want, 8, bits - 2))


def _plan_svm(al: _Allocator, params, workload: dict) -> LayoutPlan:
    D, C = workload["dimension"], workload["classes"]
    streamed = workload.get("streamed", False)
    primes = params.primes
    widths = [q.bit_length() for q in primes]
    g = workload.get("guard_bits") or svm_guard_bits(D, max(widths))
    al.workload["guard_bits"] = g
    ac = al.ac
    lanes = [1 % ac] * C if streamed else [c % ac for c in range(C)]
    xs = 1 if streamed else D
    for d in range(xs):
        al.add(f"x{d}", 0, INPUT_BITS)
    if any(w >= 2 for w in lanes):
        for d in range(xs):
            al.add(f"x{d}@1", 1, INPUT_BITS)
    model_classes = [0] if streamed else range(C)
    for c in model_classes:
        mcol = 0 if streamed else lanes[c]
        for d in range(xs):
            for p in range(2):
                for i, w in enumerate(widths):
                    al.add(f"m.c{c}.d{d}.p{p}.r{i}", mcol, w)
    acc_classes = [0] if streamed else range(C)
    for c in acc_classes:
        for p in range(2):
            for i, w in enumerate(widths):
                al.add(f"acc.c{c}.p{p}.r{i}", lanes[c], w + g)
    out_classes = [0] if streamed else range(C)
    for c in out_classes:
        for p in range(2):
            for i, w in enumerate(widths):
                al.add(f"out.c{c}.p{p}.r{i}", 0, w)
    b = max(widths)
    chunk = svm_chunk(primes, g)
    for c in range(C):
        j = lanes[c]
        need = reduce_scratch(b + g, b) + (b if j else 0)
        if D > chunk:
            need = max(need, b + reduce_scratch(b + g, b))
        al.need_scratch(j, max(need, b + 6))
    if any(j >= 2 for j in lanes):
        al.need_scratch(1, b)
    return al.finish()


def svm_chunk(primes, guard_bits: int) -> int:
    """Features that fit in an accumulator between reductions."""
    per_step = 7 * (max(primes) - 1)
    room = min(1 << (q.bit_length() + guard_bits) for q in primes)
    return max(1, (room - max(primes)) // per_step)


# ------------------------------------------------------------------ programs

@dataclass
class Program:
    words: np.ndarray
    lines: np.ndarray
    schedule: np.ndarray
    layout: LayoutPlan
    rom: list = field(default_factory=list)
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)
    oracle: Callable | None = field(default=None, repr=False)

    @property
    def array_cols(self) -> int:
        return self.words.shape[1]

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def steps(self) -> int:
        """Executed steps with the schedule expanded."""
        s = self.schedule
        return int(((s[:, 1] - s[:, 0]) * s[:, 2]).sum())

    def _per_step(self, values: np.ndarray) -> float:
        c = np.concatenate([[0.0], np.cumsum(values, dtype=np.float64)])
        s = self.schedule
        return float(((c[s[:, 1]] - c[s[:, 0]]) * s[:, 2]).sum())

    def instruction_count(self) -> int:
        """Driver instructions issued, no-ops excluded, schedule expanded."""
        return int(self._per_step((self.words != np.uint64(NOP_WORD)).sum(axis=1)))

    def line_count(self) -> int:
        return int(self._per_step(self.lines.sum(axis=1)))

    def step_energies(self, mtj: MtjParams, peripheral: PeripheralModel) -> np.ndarray:
        """Energy of each stored step, including the peripheral share."""
        ops = (self.words >> np.uint64(37)).astype(np.int64) & 7
        raw = (opcode_line_table(mtj)[ops] * self.lines).sum(axis=1)
        issued = (self.words != np.uint64(NOP_WORD)).sum(axis=1)
        return raw * peripheral.multiplier + issued * peripheral.per_instruction

    def energy(self, mtj: MtjParams, peripheral: PeripheralModel) -> float:
        return self._per_step(self.step_energies(mtj, peripheral))

    def latency(self, clock_hz: float) -> float:
        return self.steps / clock_hz

    def listing(self, driver: int | None = None) -> str:
        """Instruction-memory contents; one driver column, or all interleaved by step."""
        return listing(self.words if driver is None else self.words[:, driver])

    def expanded_words(self) -> np.ndarray:
        return np.concatenate([np.tile(self.words[a:b], (c, 1)) for a, b, c in self.schedule]) \
            if len(self.schedule) else self.words[:0]

    # ---- grid binding
    def fresh_grid(self) -> ArrayGrid:
        g = ArrayGrid(*self.layout.shape)
        for rows, cols, bits in self.rom:
            g.cells[np.ix_(rows, cols)] = bits
        return g

    def load(self, grid: ArrayGrid, values: dict):
        rows = self.layout.global_rows()
        for name, v in values.items():
            f = self.layout[name]
            v = np.broadcast_to(np.asarray(v, dtype=object), (len(rows),))
            bits = np.array([[(int(x) >> k) & 1 for k in range(f.width)] for x in v], dtype=np.uint8)
            if any(int(x) >> f.width for x in v) or any(int(x) < 0 for x in v):
                raise CapacityError(f"value does not fit field {name!r} ({f.width} bits)")
            grid.cells[np.ix_(rows, f.cols)] = bits

    def read(self, grid: ArrayGrid, name: str) -> np.ndarray:
        f = self.layout[name]
        bits = grid.cells[np.ix_(self.layout.global_rows(), f.cols)].astype(object)
        weights = np.array([1 << k for k in range(f.width)], dtype=object)
        out = bits.dot(weights)
        return out.astype(np.int64) if f.width < 63 else out

    def run(self, grid: ArrayGrid | None = None, inputs: dict | None = None, *, backend=None,
            validate: bool = True) -> ArrayGrid:
        grid = grid if grid is not None else self.fresh_grid()
        if inputs:
            self.load(grid, inputs)
        if validate:
            validate_words(self.words, *self.layout.shape)
        run = pick(_run_nb, _run_np, backend)
        for a, b, c in self.schedule:
            for _ in range(int(c)):
                err = run(grid.cells, grid.rp, grid.cp, grid.row_latch, grid.col_latch,
                          self.words, int(a), int(b), grid.size)
                if err >= 0:
                    raise ValidationError(f"word {err}: write to the valid bitmask copy")
        return grid

    def flat_steps(self):
        """Yield stored step indices in execution order."""
        for a, b, c in self.schedule:
            for _ in range(int(c)):
                yield from range(int(a), int(b))


def _finish(em: Emitter, layout: LayoutPlan, **kw) -> Program:
    words, lines = em.matrices()
    return Program(words, lines, em.schedule(), layout, **kw)


def _start(layout: LayoutPlan) -> tuple[Emitter, Arith]:
    em = Emitter(*layout.shape)
    mask = layout.row_mask()
    for j in range(layout.array_cols):
        em.set_rows(j, mask)
    return em, Arith(em, layout.scratch_pool())


def _rom_field(layout: LayoutPlan, name: str, values) -> tuple:
    f = layout[name]
    bits = np.array([[(int(v) >> k) & 1 for k in range(f.width)] for v in values], dtype=np.uint8)
    return layout.global_rows(), np.array(f.cols), bits


# --------------------------------------------------------- unit lowerings

def _distinct(layout: LayoutPlan, *names):
    cols = [set(layout[n].cols) for n in names]
    for i in range(len(cols)):
        for k in range(i + 1, len(cols)):
            if cols[i] & cols[k]:
                raise ValidationError(f"fields {names[i]!r} and {names[k]!r} overlap")


def _reachable(layout: LayoutPlan, dst: str, *srcs):
    """Row gates read only their own or an adjacent array-column."""
    j = layout[dst].array_col
    for s in srcs:
        if abs(layout[s].array_col - j) > 1:
            raise ValidationError(f"field {s!r} is {abs(layout[s].array_col - j)} array-columns from {dst!r}; "
                                  "place operands in the same or an adjacent array-column")


def lower_add(layout: LayoutPlan, a: str, b: str, dst: str, *, carry: str | None = None) -> Program:
    """Row-parallel ripple-carry ``dst = a + b``; the final carry goes to ``carry`` if given."""
    _distinct(layout, *[n for n in (a, b, dst, carry) if n])
    _reachable(layout, dst, a, b)
    if carry:
        _reachable(layout, carry, a, b)
    em, ar = _start(layout)
    ar.add(layout[a].bits, layout[b].bits, layout[dst].bits,
           cout=layout[carry].cols[0] if carry else None)
    w = layout[dst].width
    oracle = lambda v: {dst: (np.asarray(v[a], dtype=object) + v[b]) % (1 << w),  # noqa: E731
                        **({carry: (np.asarray(v[a], dtype=object) + v[b]) >> w} if carry else {})}
    return _finish(em, layout, inputs=(a, b), outputs=(dst,) + ((carry,) if carry else ()),
                   meta={"op": "add"}, oracle=oracle)


def lower_mult_scalar(layout: LayoutPlan, k: int, src: str, dst: str) -> Program:
    """``dst = k * src`` for a small constant, one shifted add per set bit."""
    if k < 0:
        raise ParameterError("scalar must be non-negative")
    _distinct(layout, src, dst)
    _reachable(layout, dst, src)
    em, ar = _start(layout)
    ar.mul_const(layout[src].bits, k, layout[dst].bits)
    w = layout[dst].width
    return _finish(em, layout, inputs=(src,), outputs=(dst,), meta={"op": "mult_scalar", "k": k},
                   oracle=lambda v: {dst: (np.asarray(v[src], dtype=object) * k) % (1 << w)})


def lower_mult(layout: LayoutPlan, a: str, b: str, dst: str) -> Program:
    _distinct(layout, a, b, dst)
    _reachable(layout, dst, a, b)
    em, ar = _start(layout)
    ar.mul_bits(layout[a].bits, layout[b].bits, layout[dst].bits)
    w = layout[dst].width
    return _finish(em, layout, inputs=(a, b), outputs=(dst,), meta={"op": "mult"},
                   oracle=lambda v: {dst: (np.asarray(v[a], dtype=object) * v[b]) % (1 << w)})


def lower_mod_reduce(layout: LayoutPlan, q: int, src: str, dst: str) -> Program:
    """``dst = src mod q`` through the shift-add quotient estimate; ``src < q**2``."""
    _distinct(layout, src, dst)
    _reachable(layout, dst, src)
    if layout[dst].width < q.bit_length():
        raise CapacityError(f"destination needs {q.bit_length()} bits")
    em, ar = _start(layout)
    ar.mod_reduce(layout[src].bits, q, layout[dst].bits)
    return _finish(em, layout, inputs=(src,), outputs=(dst,),
                   meta={"op": "mod_reduce", "q": q, "schedule": shift_schedule(q)},
                   oracle=lambda v: {dst: np.asarray(v[src], dtype=object) % q})


# -------------------------------------------------------------------- NTT

def _stage_factors(tables: NttTables, direction: str) -> list[np.ndarray]:
    n, q = tables.n, tables.q
    r = np.arange(n)
    out = []
    for s in range(tables.log_n):
        if direction == "forward":
            t = n >> (s + 1)
            base, table = 1 << s, tables.twiddles
        else:
            t = 1 << s
            base, table = n >> (s + 1), tables.inv_twiddles
        bottom = (r // t) & 1
        f = np.where(bottom == 1, table[base + r // (2 * t)], 1).astype(object)
        if direction == "inverse" and s == tables.log_n - 1:
            f = f * tables.n_inv % q
        out.append(f)
    return out


def ntt_rom(layout: LayoutPlan, tables: NttTables) -> list:
    """Preload image: stage twiddles, row-index bits and the cross-array select rows."""
    rom = [_rom_field(layout, "ROWBITS", np.arange(layout.n_rows))]
    for direction, prefix in (("forward", "TWF"), ("inverse", "TWI")):
        for s, f in enumerate(_stage_factors(tables, direction)):
            if f"{prefix}{s}" in layout.fields:
                rom.append(_rom_field(layout, f"{prefix}{s}", f))
    S, rpa = layout.size, layout.rows_per_array
    ycols = np.array(layout["Y"].cols)
    k = 1
    idx = 0
    while k * rpa < layout.n_rows:
        f_row, g_row = layout.spare_rows[2 + 2 * idx], layout.spare_rows[3 + 2 * idx]
        for i in range(layout.array_rows):
            top = (i // k) % 2 == 0
            for row, val in ((f_row, top), (g_row, not top)):
                rom.append((np.array([i * S + row]), ycols,
                            np.full((1, len(ycols)), int(val), dtype=np.uint8)))
        k *= 2
        idx += 1
    return rom


def _col_copy(em: Emitter, j: int, src: tuple[int, int], out_row: int):
    em.col_preset(j, 1, out_row)
    em.col_gate(j, Op.AND, src, src, out_row)


def _col_nand(em: Emitter, j: int, a, b, out_row: int):
    em.col_preset(j, 0, out_row)
    em.col_gate(j, Op.NAND, a, b, out_row)


def exchange_partners(em: Emitter, layout: LayoutPlan, stride: int):
    """Swap field ``Y`` between rows ``r`` and ``r ^ stride`` using column logic."""
    j = layout["Y"].array_col
    S, rpa = layout.size, layout.rows_per_array
    s0, s1 = S - 4, S - 3
    local = min(layout.n_rows, rpa)
    if stride < rpa:
        for r in range(local):
            if (r // stride) % 2:
                continue
            p = r + stride
            _col_copy(em, j, (r, 0), s0)
            _col_copy(em, j, (p, 0), r)
            _col_copy(em, j, (s0, 0), p)
        return
    k = stride // rpa
    level = (k.bit_length() - 1)
    u0, u1 = layout.spare_rows[0], layout.spare_rows[1]
    f_row, g_row = layout.spare_rows[2 + 2 * level], layout.spare_rows[3 + 2 * level]
    down, up = (s0, s1), (u0, u1)
    for r in range(local):
        src = r
        for h in range(k):
            _col_copy(em, j, (src, 1), down[h % 2])
            src = down[h % 2]
        d_row = src
        src = r
        for h in range(k):
            _col_copy(em, j, (src, -1), up[h % 2])
            src = up[h % 2]
        u_row = src
        t1, t2 = down[k % 2], up[k % 2]
        _col_nand(em, j, (d_row, 0), (f_row, 0), t1)
        _col_nand(em, j, (u_row, 0), (g_row, 0), t2)
        _col_nand(em, j, (t1, 0), (t2, 0), r)


def _emit_ntt(em: Emitter, ar: Arith, layout: LayoutPlan, q: int, direction: str):
    V, Y = layout["V"].bits, layout["Y"].bits
    flags = layout["ROWBITS"].bits
    n = layout.n_rows
    log_n = n.bit_length() - 1
    wj = layout["V"].array_col
    b = len(V)
    em.set_cols(wj, layout.column_mask(Y))
    for s in range(log_n):
        if direction == "forward":
            stride = n >> (s + 1)
            with ar.tmp(wj, b) as P:
                ar.mod_mul(V, layout[f"TWF{s}"].bits, q, P)
                ar.copy_field(P, Y)
                exchange_partners(em, layout, stride)
                with ar.tmp(wj, 2 * b) as T:
                    S_, D_ = T[:b], T[b:]
                    ar.mod_add(P, Y, q, S_)
                    ar.mod_sub(Y, P, q, D_)
                    ar.mux(flags[stride.bit_length() - 1], D_, S_, V)
        else:
            stride = 1 << s
            ar.copy_field(V, Y)
            exchange_partners(em, layout, stride)
            with ar.tmp(wj, 2 * b) as T:
                S_, D_ = T[:b], T[b:]
                ar.mod_add(V, Y, q, S_)
                ar.mod_sub(Y, V, q, D_)
                ar.mux(flags[s], D_, S_, V)
            with ar.tmp(wj, b) as M:
                ar.copy_field(V, M)
                ar.mod_mul(M, layout[f"TWI{s}"].bits, q, V)


def lower_ntt(layout: LayoutPlan, tables: NttTables, direction: str = "forward") -> Program:
    """On-grid negacyclic NTT of field ``V``; ``direction`` is ``forward``, ``inverse`` or ``roundtrip``."""
    if direction not in ("forward", "inverse", "roundtrip"):
        raise ParameterError(f"unknown direction {direction!r}")
    if layout.workload.get("kind") not in ("ntt", "polymult") or layout.n_rows != tables.n:
        raise ValidationError("layout was not planned for this transform")
    if layout.workload.get("modulus") != tables.q:
        raise ValidationError("layout was planned for a different modulus")
    em, ar = _start(layout)
    for d in (("forward", "inverse") if direction == "roundtrip" else (direction,)):
        _emit_ntt(em, ar, layout, tables.q, d)

    def oracle(v):
        x = np.array(v["V"], dtype=np.int64)
        if direction == "forward":
            return {"V": forward_ntt(x, tables)}
        if direction == "inverse":
            return {"V": inverse_ntt(x, tables)}
        return {"V": x % tables.q}

    return _finish(em, layout, rom=ntt_rom(layout, tables), inputs=("V",), outputs=("V",),
                   meta={"op": "ntt", "direction": direction, "q": tables.q, "n": tables.n},
                   oracle=oracle)


def compile_poly_mult(n: int, bitwidth: int, *, q: int | None = None, grid=GRID_SHAPE,
                      rows_per_array: int | None = None) -> Program:
    """NTT, pointwise product, inverse NTT: ``A * B`` in ``Z_q[X]/(X^n + 1)``, result in ``A``."""
    from ..bfv import find_ntt_primes

    q = q or find_ntt_primes(n, bitwidth, 1)[0]
    tables = build_tables(q, n)
    ar_needed = -(-n // (rows_per_array or data_rows_for(grid[2])))
    grid = (max(1, min(grid[0], ar_needed)),) + tuple(grid[1:])
    layout = plan_layout(None, {"kind": "polymult", "n": n, "modulus": q}, grid=grid,
                         rows_per_array=rows_per_array)
    em, ar = _start(layout)
    V, A, B = layout["V"].bits, layout["A"].bits, layout["B"].bits
    ar.copy_field(A, V)
    _emit_ntt(em, ar, layout, q, "forward")
    ar.copy_field(V, A)
    ar.copy_field(B, V)
    _emit_ntt(em, ar, layout, q, "forward")
    wj = layout["V"].array_col
    with ar.tmp(wj, len(V)) as M:
        ar.copy_field(V, M)
        ar.mod_mul(M, A, q, V)
    _emit_ntt(em, ar, layout, q, "inverse")
    ar.copy_field(V, A)

    def oracle(v):
        return {"A": ntt_multiply(np.array(v["A"], dtype=np.int64),
                                  np.array(v["B"], dtype=np.int64), tables)}

    return _finish(em, layout, rom=ntt_rom(layout, tables), inputs=("A", "B"), outputs=("A",),
                   meta={"op": "polymult", "n": n, "bitwidth": bitwidth, "q": q}, oracle=oracle)


# -------------------------------------------------------------------- SVM

def _route(ar: Arith, src: list[int], dst: list[int]):
    """Copy a field across array-columns one hop at a time."""
    S = ar.S
    j0, j1 = src[0] // S, dst[0] // S
    cur = src
    held = []
    while abs(cur[0] // S - j1) > 1:
        step = cur[0] // S + (1 if j1 > j0 else -1)
        hop = ar.sc.take(step, len(src))
        held.append(hop)
        ar.copy_field(cur, hop)
        cur = hop
    ar.copy_field(cur, dst)
    for h in held:
        ar.sc.give(h)


def compile_svm_linear(model_meta: dict, params, layout: LayoutPlan | None = None, *,
                       streamed: bool = False, guard_bits: int | None = None,
                       grid=GRID_SHAPE) -> Program:
    """Scalar-multiply-and-accumulate every model ciphertext by the quantized input.

    ``model_meta`` gives ``dimension`` and ``classes``.  Unless ``streamed``,
    every model ciphertext is resident and the program is bit-exact.  In
    streamed mode one model slot and one input slot are reused for every
    ``(class, feature)`` pair, which is what a full-size model needs; such a
    program is meant for counting, not for bit-level execution.
    """
    D, C = int(model_meta["dimension"]), int(model_meta["classes"])
    if layout is None:
        rows = params.n
        ar_needed = -(-rows // data_rows_for(grid[2]))
        layout = plan_layout(params, {"kind": "svm_linear", "dimension": D, "classes": C,
                                      "streamed": streamed, "guard_bits": guard_bits},
                             grid=(min(grid[0], ar_needed),) + tuple(grid[1:]))
    g = layout.workload["guard_bits"]
    primes = params.primes
    em, ar = _start(layout)
    S = layout.size
    lane = {c: layout[f"acc.c{0 if streamed else c}.p0.r0"].array_col for c in range(C)}

    def x_bits(d, j):
        name = f"x{0 if streamed else d}"
        if j >= 2:
            name += "@1"
        return layout[name].bits

    if any(j >= 2 for j in lane.values()):
        for d in range(1 if streamed else D):
            ar.copy_field(layout[f"x{d}"].bits, layout[f"x{d}@1"].bits)

    def acc_name(c, p, i):
        return f"acc.c{0 if streamed else c}.p{p}.r{i}"

    def model_name(c, d, p, i):
        return f"m.c{0 if streamed else c}.d{0 if streamed else d}.p{p}.r{i}"

    def reduce_in_place(acc, q, j):
        b = q.bit_length()
        with ar.tmp(j, b) as r:
            ar.mod_reduce(acc, q, r)
            ar.copy_field(r, acc)

    def feature(c, d):
        j = lane[c]
        xb = x_bits(d, j)
        for p in range(2):
            for i, q in enumerate(primes):
                acc = layout[acc_name(c, p, i)].bits
                ct = layout[model_name(c, d, p, i)].bits
                b = len(ct)
                with ar.tmp(j, b) as pp:
                    for k in range(INPUT_BITS):
                        for m, col in enumerate(ct):
                            ar.and_(col, xb[k], pp[m])
                        ar.add(acc[k:], pp, acc[k:])

    def reduce_all(c):
        for p in range(2):
            for i, q in enumerate(primes):
                reduce_in_place(layout[acc_name(c, p, i)].bits, q, lane[c])

    per_step = 7 * (max(primes) - 1)
    room = min(1 << (q.bit_length() + g) for q in primes)
    chunk = svm_chunk(primes, g)

    blocks = {}

    def class_body(c):
        for p in range(2):
            for i in range(len(primes)):
                ar.fill(layout[acc_name(c, p, i)].bits, 0)
        if streamed:
            done = 0
            while done < D:
                k = min(chunk, D - done)
                if "feature" in blocks:
                    em.replay(blocks["feature"], k)
                else:
                    with em.block() as blocks["feature"]:
                        feature(c, 0)
                    em.replay(blocks["feature"], k - 1)
                done += k
                if done < D:
                    if "reduce" in blocks:
                        em.replay(blocks["reduce"])
                    else:
                        with em.block() as blocks["reduce"]:
                            reduce_all(c)
        else:
            bound = 0
            for d in range(D):
                if bound + per_step >= room:
                    reduce_all(c)
                    bound = max(primes) - 1
                feature(c, d)
                bound += per_step
        for p in range(2):
            for i, q in enumerate(primes):
                out = layout[f"out.c{0 if streamed else c}.p{p}.r{i}"].bits
                acc = layout[acc_name(c, p, i)].bits
                if lane[c] == 0:
                    ar.mod_reduce(acc, q, out)
                    continue
                with ar.tmp(lane[c], len(out)) as r:
                    ar.mod_reduce(acc, q, r)
                    _route(ar, r, out)

    if streamed:
        with em.block() as body:
            class_body(0)
        em.replay(body, C - 1)
    else:
        for c in range(C):
            class_body(c)

    def oracle(v):
        res = {}
        for c in range(C):
            for p in range(2):
                for i, q in enumerate(primes):
                    acc = sum(int(v[f"x{d}"]) * np.asarray(v[f"m.c{c}.d{d}.p{p}.r{i}"], dtype=object)
                              for d in range(D))
                    res[f"out.c{c}.p{p}.r{i}"] = np.asarray(acc, dtype=object) % q
        return res

    outs = tuple(f"out.c{c}.p{p}.r{i}" for c in range(1 if streamed else C) for p in range(2)
                 for i in range(len(primes)))
    return _finish(em, layout, inputs=tuple(f"x{d}" for d in range(1 if streamed else D)),
                   outputs=outs, meta={"op": "svm_linear", "dimension": D, "classes": C,
                                       "streamed": streamed, "guard_bits": g, "chunk": chunk},
                   oracle=None if streamed else oracle)


def svm_inputs(prog: Program, em_model, x) -> dict:
    """Field values for a resident-model program: quantized input plus model residues."""
    vals = {f"x{d}": int(v) for d, v in enumerate(x)}
    for c, cols in enumerate(em_model.columns):
        for d, ct in enumerate(cols):
            for p in range(2):
                for i in range(len(ct.params.primes)):
                    vals[f"m.c{c}.d{d}.p{p}.r{i}"] = ct.parts[p][i]
    return vals


def svm_partial_result(prog: Program, grid: ArrayGrid, em_model):
    """Read the per-class accumulators back into ciphertexts."""
    from ..bfv import Ciphertext
    from ..svm import PartialResult

    params = em_model.params
    k = len(params.primes)
    cts = []
    for c in range(prog.meta["classes"]):
        parts = tuple(np.stack([prog.read(grid, f"out.c{c}.p{p}.r{i}").astype(np.int64) for i in range(k)])
                      for p in range(2))
        cts.append(Ciphertext(parts, params))
    return PartialResult(tuple(cts), em_model.sv_counts)


# ----------------------------------------------------------- verification

@dataclass
class VerifyReport:
    passed: bool
    checked: int
    field: str | None = None
    row: int | None = None
    bit: int | None = None
    cell: tuple[int, int] | None = None
    expected: int | None = None
    got: int | None = None

    def __str__(self) -> str:
        if self.passed:
            return f"PASS ({self.checked} fields)"
        return (f"FAIL field {self.field} row {self.row} bit {self.bit} cell {self.cell}: "
                f"expected {self.expected}, got {self.got}")


def verify_program(prog: Program, inputs: dict, expected: dict | None = None, *,
                   backend=None, grid: ArrayGrid | None = None) -> VerifyReport:
    """Run on a fresh grid and diff each output field against the functional result."""
    if expected is None:
        if prog.oracle is None:
            raise ParameterError("program has no functional oracle; pass expected outputs")
        expected = prog.oracle({k: np.array(v, copy=True) for k, v in inputs.items()})
    grid = prog.run(grid, {k: v for k, v in inputs.items() if k in prog.layout.fields},
                    backend=backend)
    rows = prog.layout.global_rows()
    for name, want in expected.items():
        f = prog.layout[name]
        want = np.broadcast_to(np.asarray(want, dtype=object), (len(rows),))
        got = prog.read(grid, name)
        for r in range(len(rows)):
            if int(got[r]) != int(want[r]):
                diff = int(got[r]) ^ int(want[r])
                bit = (diff & -diff).bit_length() - 1
                return VerifyReport(False, len(expected), name, r, bit,
                                    (int(rows[r]), f.cols[bit]), int(want[r]), int(got[r]))
    return VerifyReport(True, len(expected))
