"""Bit-level state of the computation-array grid and the instruction executor.

Cells of every array live in one ``uint8`` matrix of shape
``(array_rows * S, array_cols * S)``.  In each array the two highest local
columns hold the two row-bitmask copies and the two highest local rows hold
the two column-bitmask copies; rows ``S-4`` and ``S-3`` are scratch rows for
column-logic moves.  Parity bits select the valid copy and, like the cells,
survive power loss.  The row and column latches are volatile.

Gates use preset-then-conditional-switch semantics: NOT, NAND and NOR can only
switch a cell to 1 and AND, OR only to 0, so re-running any instruction, whole
or on a subset of its lines, converges to the same state.
"""

from __future__ import annotations

import struct

import numpy as np

from .._backend import njit, pick
from ..errors import CapabilityError, ValidationError
from .isa import ALL, COL, FANIN, GATES, MASK_WRITE, NOP_WORD, ROW, Instr, Op, decode, encode
from .isa import split_col_addr
from .energy import EnergyLedger, MtjParams, PeripheralModel, read_energy

_NOP = NOP_WORD
SNAPSHOT_MAGIC = b"PIMG"
SNAPSHOT_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sHHHH")


def data_rows_for(size: int) -> int:
    """Largest power of two that leaves the scratch and mask rows free."""
    usable = size - 4
    return 1 << (usable.bit_length() - 1)


# --------------------------------------------------------------- executors

@njit(inline="always")
def _apply(op, x, y, v):
    if op == 0:
        return v | (1 - x)
    if op == 1:
        return v & (x & y)
    if op == 2:
        return v | (1 - (x & y))
    if op == 3:
        return v & (x | y)
    if op == 4:
        return v | (1 - (x | y))
    if op == 5:
        return 0
    return 1


@njit
def _exec_word_nb(cells, rp, cp, rl, cl, w, j, S):
    ar = rp.shape[0]
    op = (w >> 37) & 7
    orient = (w >> 36) & 1
    a = (w >> 24) & 0xFFF
    b = (w >> 12) & 0xFFF
    o = w & 0xFFF
    if op == 7:
        if a == 0xFFF:
            return 0
        for i in range(ar):
            if orient == 0:
                if a == 1:
                    rp[i, j] = 0
                elif a == 2:
                    rp[i, j] = 1
                col = j * S + S - 2 + rp[i, j]
                for r in range(S):
                    rl[i, j, r] = cells[i * S + r, col]
            else:
                if a == 1:
                    cp[i, j] = 0
                elif a == 2:
                    cp[i, j] = 1
                row = i * S + S - 2 + cp[i, j]
                for c in range(S):
                    cl[i, j, c] = cells[row, j * S + c]
        return 0
    if (op == 5 or op == 6) and (a & 0x800) != 0:
        copy = a & 1
        val = op - 5
        for i in range(ar):
            if b != 0xFFF and b != i:
                continue
            par = rp[i, j] if orient == 0 else cp[i, j]
            if par == copy:
                return 1
        for i in range(ar):
            if b != 0xFFF and b != i:
                continue
            lo, hi = (0, S - 2) if o == 0xFFF else (o, o + 1)
            for line in range(lo, hi):
                if orient == 0:
                    cells[i * S + line, j * S + S - 2 + copy] = val
                else:
                    cells[i * S + S - 2 + copy, j * S + line] = val
        return 0
    if orient == 0:
        for i in range(ar):
            for r in range(S):
                if rl[i, j, r]:
                    g = i * S + r
                    cells[g, o] = _apply(op, cells[g, a], cells[g, b], cells[g, o])
        return 0
    offa = (a >> 9) & 7
    offb = (b >> 9) & 7
    if offa >= 4:
        offa -= 8
    if offb >= 4:
        offb -= 8
    for i in range(ar):
        ia = i + offa
        ib = i + offb
        if op < 5 and (ia < 0 or ia >= ar):
            continue
        if 0 < op < 5 and (ib < 0 or ib >= ar):
            continue
        ra = ia * S + (a & 0x1FF)
        rb = ib * S + (b & 0x1FF)
        ro = i * S + (o & 0x1FF)
        for c in range(S):
            if cl[i, j, c]:
                gc = j * S + c
                x = cells[ra, gc] if op < 5 else 0
                y = cells[rb, gc] if 0 < op < 5 else 0
                cells[ro, gc] = _apply(op, x, y, cells[ro, gc])
    return 0


@njit
def _run_nb(cells, rp, cp, rl, cl, words, start, stop, S):
    for k in range(start, stop):
        for j in range(words.shape[1]):
            w = np.int64(words[k, j])
            if w == _NOP:
                continue
            err = _exec_word_nb(cells, rp, cp, rl, cl, w, j, S)
            if err:
                return k * words.shape[1] + j
    return -1


def _apply_np(op, x, y, v):
    if op == Op.NOT:
        return v | (1 - x)
    if op == Op.AND:
        return v & (x & y)
    if op == Op.NAND:
        return v | (1 - (x & y))
    if op == Op.OR:
        return v & (x | y)
    if op == Op.NOR:
        return v | (1 - (x | y))
    return np.full_like(v, 0 if op == Op.PRESET0 else 1)


def _exec_word_np(cells, rp, cp, rl, cl, w, j, S):
    ins = decode(w)
    ar = rp.shape[0]
    op, a, b, o = ins.op, ins.a, ins.b, ins.out
    if op == Op.ACTIVATE:
        if a == ALL:
            return 0
        par = rp if ins.orient == ROW else cp
        if a in (1, 2):
            par[:, j] = a - 1
        for i in range(ar):
            if ins.orient == ROW:
                rl[i, j] = cells[i * S:(i + 1) * S, j * S + S - 2 + int(par[i, j])]
            else:
                cl[i, j] = cells[i * S + S - 2 + int(par[i, j]), j * S:(j + 1) * S]
        return 0
    if ins.is_mask_write:
        copy, val = a & 1, int(op) - 5
        arrays = range(ar) if b == ALL else [b]
        par = rp if ins.orient == ROW else cp
        if any(par[i, j] == copy for i in arrays):
            return 1
        lines = slice(0, S - 2) if o == ALL else slice(o, o + 1)
        for i in arrays:
            if ins.orient == ROW:
                cells[i * S:(i + 1) * S, j * S + S - 2 + copy][lines] = val
            else:
                cells[i * S + S - 2 + copy, j * S:(j + 1) * S][lines] = val
        return 0
    if ins.orient == ROW:
        g = np.flatnonzero(rl[:, j, :].reshape(-1))
        if g.size:
            cells[g, o] = _apply_np(op, cells[g, a], cells[g, b], cells[g, o])
        return 0
    (offa, la), (offb, lb), (_, lo) = split_col_addr(a), split_col_addr(b), split_col_addr(o)
    for i in range(ar):
        ia, ib = i + offa, i + offb
        if op in GATES and not 0 <= ia < ar:
            continue
        if op in GATES and op != Op.NOT and not 0 <= ib < ar:
            continue
        cols = j * S + np.flatnonzero(cl[i, j])
        if not cols.size:
            continue
        x = cells[ia * S + la, cols] if op in GATES else 0
        y = cells[ib * S + lb, cols] if op in GATES and op != Op.NOT else 0
        cells[i * S + lo, cols] = _apply_np(op, x, y, cells[i * S + lo, cols])
    return 0


def _run_np(cells, rp, cp, rl, cl, words, start, stop, S):
    for k in range(start, stop):
        for j in range(words.shape[1]):
            w = int(words[k, j])
            if w == NOP_WORD:
                continue
            if _exec_word_np(cells, rp, cp, rl, cl, w, j, S):
                return k * words.shape[1] + j
    return -1


# -------------------------------------------------------------- validation

def validate_words(words: np.ndarray, array_rows: int, array_cols: int, size: int):
    """Static checks on a ``steps x array_cols`` word matrix; raises on the first violation."""
    words = np.asarray(words, dtype=np.uint64)
    if words.ndim != 2 or words.shape[1] != array_cols:
        raise ValidationError(f"program needs {array_cols} driver streams")
    if words.size and int(words.max()) >> 40:
        raise ValidationError("instruction word wider than 40 bits")
    op = (words >> np.uint64(37)).astype(np.int64) & 7
    orient = (words >> np.uint64(36)).astype(np.int64) & 1
    a = (words >> np.uint64(24)).astype(np.int64) & 0xFFF
    b = (words >> np.uint64(12)).astype(np.int64) & 0xFFF
    o = words.astype(np.int64) & 0xFFF
    S = size
    drv = np.broadcast_to(np.arange(array_cols), words.shape)
    nop = words == np.uint64(NOP_WORD)
    gate = op < 5
    preset = (op == 5) | (op == 6)
    mask_w = preset & (a >= MASK_WRITE)
    plain_preset = preset & ~mask_w
    act = (op == 7) & ~nop
    row, colo = orient == ROW, orient == COL
    bad = np.zeros(words.shape, dtype=bool)
    why = np.empty(words.shape, dtype=object)

    def flag(cond, reason):
        new = cond & ~bad
        why[new] = reason
        bad[:] |= cond

    flag(act & ~np.isin(a, (0, 1, 2)), "ACTIVATE mode must be 0, 1 or 2")
    flag(mask_w & ~np.isin(a, (MASK_WRITE, MASK_WRITE | 1)), "bad bitmask copy selector")
    flag(mask_w & (b != ALL) & (b >= array_rows), "bitmask write names a missing array-row")
    flag(mask_w & (o != ALL) & (o >= S - 2), "bitmask lines exclude the mask lines themselves")
    flag(plain_preset & (a != 0), "preset carries no inputs")
    # row logic: global columns, output in the driver's own array-column
    for name, addr in (("output", o), ("input a", a), ("input b", b)):
        used = (gate | plain_preset) & row if name == "output" else gate & row
        if name == "input b":
            used = used & (op != Op.NOT)
        flag(used & (addr >= array_cols * S), f"{name} column beyond the grid")
        flag(used & (addr % S >= S - 2), f"{name} addresses a bitmask column")
        dist = np.abs(addr // S - drv)
        limit = 0 if name == "output" else 1
        flag(used & (dist > limit), f"{name} is not reachable from this driver's arrays")
    flag(gate & row & (o == a), "output collides with input a")
    flag(gate & row & (op != Op.NOT) & (o == b), "output collides with input b")
    # column logic: signed array offset + local row
    off = lambda x: np.where((x >> 9 & 7) >= 4, (x >> 9 & 7) - 8, x >> 9 & 7)  # noqa: E731
    loc = lambda x: x & 0x1FF  # noqa: E731
    used_c = (gate | plain_preset) & colo
    flag(used_c & (off(o) != 0), "column-logic output must be in the executing array")
    flag(used_c & (loc(o) >= S - 2), "output addresses a bitmask row")
    for addr, uses in ((a, gate & colo), (b, gate & colo & (op != Op.NOT))):
        flag(uses & (np.abs(off(addr)) > 1), "vertical link reaches only the adjacent array")
        flag(uses & (loc(addr) >= S - 2), "input addresses a bitmask row")
        flag(uses & (off(addr) == 0) & (loc(addr) == loc(o)), "output collides with an input")
        flag(uses & (off(addr) != 0) & (loc(addr) == loc(o)),
             "linked input row is written by the neighbouring array in the same step")
    # an array-column lending its bitlines to a neighbour must idle that step
    cross = gate & row & ((a // S != drv) | ((op != Op.NOT) & (b // S != drv)))
    for j in range(array_cols):
        for k in (j - 1, j + 1):
            if 0 <= k < array_cols:
                uses_k = cross[:, j] & ((a[:, j] // S == k) | ((op[:, j] != Op.NOT) & (b[:, j] // S == k)))
                flag_rows = uses_k & ~nop[:, k]
                cond = np.zeros(words.shape, dtype=bool)
                cond[:, j] = flag_rows
                flag(cond, f"array-column {k} must idle while its bitlines are borrowed")
    if bad.any():
        k, j = np.argwhere(bad)[0]
        raise ValidationError(f"step {k} driver {j}: {why[k, j]} ({decode(int(words[k, j]))})")


# -------------------------------------------------------------------- grid

class ArrayGrid:
    """``array_rows x array_cols`` computation arrays of ``size x size`` cells."""

    def __init__(self, array_rows: int = 16, array_cols: int = 3, size: int = 512):
        if size & (size - 1) or not 8 <= size <= 512:
            raise ValidationError("array size must be a power of two in 8..512")
        if array_cols * size > 4096 or array_cols < 1 or array_rows < 1:
            raise ValidationError("grid does not fit 12-bit column addresses")
        self.array_rows, self.array_cols, self.size = array_rows, array_cols, size
        self.cells = np.zeros((array_rows * size, array_cols * size), dtype=np.uint8)
        self.rp = np.zeros((array_rows, array_cols), dtype=np.uint8)
        self.cp = np.zeros((array_rows, array_cols), dtype=np.uint8)
        self.row_latch = np.zeros((array_rows, array_cols, size), dtype=np.uint8)
        self.col_latch = np.zeros((array_rows, array_cols, size), dtype=np.uint8)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.array_rows, self.array_cols, self.size

    @property
    def data_rows(self) -> int:
        return data_rows_for(self.size)

    @property
    def scratch_rows(self) -> tuple[int, int]:
        return self.size - 4, self.size - 3

    def copy(self) -> "ArrayGrid":
        g = ArrayGrid(*self.shape)
        for name in ("cells", "rp", "cp", "row_latch", "col_latch"):
            getattr(g, name)[...] = getattr(self, name)
        return g

    # ---- execution
    def run(self, words, start: int = 0, stop: int | None = None, *, backend=None,
            validate: bool = True):
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim == 1:
            words = words.reshape(-1, self.array_cols)
        stop = len(words) if stop is None else stop
        if validate:
            validate_words(words[start:stop], *self.shape)
        run = pick(_run_nb, _run_np, backend)
        err = run(self.cells, self.rp, self.cp, self.row_latch, self.col_latch, words,
                  start, stop, self.size)
        if err >= 0:
            k, j = divmod(int(err), self.array_cols)
            raise ValidationError(f"step {k} driver {j}: write to the valid bitmask copy")

    def execute(self, ins: Instr, driver: int | None = None, *, backend=None):
        """Run one instruction; row gates default to the output's array-column."""
        if driver is None:
            if ins.orient != ROW or ins.op == Op.ACTIVATE or ins.is_mask_write:
                raise ValidationError("this instruction needs an explicit driver")
            driver = ins.out // self.size
        step = np.full((1, self.array_cols), NOP_WORD, dtype=np.uint64)
        step[0, driver] = encode(ins)
        self.run(step, backend=backend)

    def run_partial(self, step_words, fraction: float, rng: np.random.Generator, *, backend=None):
        """Execute one step on a random subset of its lines, as if power failed mid-way."""
        step = np.ascontiguousarray(np.asarray(step_words, dtype=np.uint64).reshape(1, -1))
        saved_r, saved_c = self.row_latch.copy(), self.col_latch.copy()
        keep = step.copy()
        for j, w in enumerate(step[0]):
            ins = decode(int(w))
            if (ins.op == Op.ACTIVATE or ins.is_mask_write) and rng.random() >= fraction:
                keep[0, j] = NOP_WORD
        self.row_latch &= (rng.random(self.row_latch.shape) < fraction).astype(np.uint8)
        self.col_latch &= (rng.random(self.col_latch.shape) < fraction).astype(np.uint8)
        try:
            self.run(keep, backend=backend, validate=False)
        finally:
            # latches touched by a partial ACTIVATE are lost with the power anyway
            self.row_latch[...] = saved_r
            self.col_latch[...] = saved_c

    def power_loss(self, rng: np.random.Generator):
        """Volatile latches come back as garbage."""
        self.row_latch[...] = rng.integers(0, 2, self.row_latch.shape, dtype=np.uint8)
        self.col_latch[...] = rng.integers(0, 2, self.col_latch.shape, dtype=np.uint8)

    def activate_all(self):
        """Reload every latch from its valid bitmask copy (the restart sequence)."""
        S = self.size
        for i in range(self.array_rows):
            for j in range(self.array_cols):
                self.row_latch[i, j] = self.cells[i * S:(i + 1) * S, j * S + S - 2 + int(self.rp[i, j])]
                self.col_latch[i, j] = self.cells[i * S + S - 2 + int(self.cp[i, j]), j * S:(j + 1) * S]

    def restore_steps(self) -> np.ndarray:
        """The two-step activate sequence a restart issues, as a word matrix."""
        return np.array([[encode(Instr(Op.ACTIVATE, 0, 0, 0, ROW))] * self.array_cols,
                         [encode(Instr(Op.ACTIVATE, 0, 0, 0, COL))] * self.array_cols],
                        dtype=np.uint64)

    # ---- masks
    def mask(self, array_row: int, array_col: int, which: int, copy: int | None = None) -> np.ndarray:
        S = self.size
        i, j = array_row, array_col
        if which == ROW:
            copy = int(self.rp[i, j]) if copy is None else copy
            return self.cells[i * S:(i + 1) * S, j * S + S - 2 + copy].copy()
        copy = int(self.cp[i, j]) if copy is None else copy
        return self.cells[i * S + S - 2 + copy, j * S:(j + 1) * S].copy()

    # ---- sense amplifiers (array-column 0 only)
    def _check_readable(self, cols):
        cols = np.asarray(cols)
        if cols.size and (cols.min() < 0 or cols.max() >= self.size - 2):
            raise CapabilityError("only array-column 0 has sense amplifiers")

    def read_bits(self, global_row: int, cols, *, ledger: EnergyLedger | None = None,
                  mtj: MtjParams | None = None, peripheral: PeripheralModel | None = None):
        self._check_readable(cols)
        bits = self.cells[global_row, np.asarray(cols)].copy()
        if ledger is not None and mtj is not None:
            mult = peripheral.multiplier if peripheral else 1.0
            ledger.add("io", bits.size * read_energy(mtj) * mult)
        return bits

    def write_bits(self, rows, cols, values):
        """Direct writes through the sense-amplifier column (used by the encoder)."""
        self._check_readable(cols)
        self.cells[np.ix_(np.asarray(rows), np.asarray(cols))] = np.asarray(values, dtype=np.uint8)

    # ---- snapshots
    def snapshot(self) -> bytes:
        """Non-volatile state: header, row-major packed cells, packed parity bits."""
        head = _SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, *self.shape)
        return (head + np.packbits(self.cells, axis=None).tobytes()
                + np.packbits(self.rp, axis=None).tobytes() + np.packbits(self.cp, axis=None).tobytes())

    @classmethod
    def from_snapshot(cls, data: bytes) -> "ArrayGrid":
        magic, version, ar, ac, s = _SNAP_HEADER.unpack_from(data)
        if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
            raise ValidationError("not a grid snapshot")
        g = cls(ar, ac, s)
        off = _SNAP_HEADER.size
        n = g.cells.size
        g.cells[...] = np.unpackbits(np.frombuffer(data, np.uint8, (n + 7) // 8, off))[:n].reshape(g.cells.shape)
        off += (n + 7) // 8
        m = g.rp.size
        g.rp[...] = np.unpackbits(np.frombuffer(data, np.uint8, (m + 7) // 8, off))[:m].reshape(g.rp.shape)
        off += (m + 7) // 8
        g.cp[...] = np.unpackbits(np.frombuffer(data, np.uint8, (m + 7) // 8, off))[:m].reshape(g.cp.shape)
        return g


# ------------------------------------------------- instruction helpers

def mask_update_instrs(grid_shape, array_col: int, which: int, new_mask, current_parity: int,
                       array_row: int | None = None) -> list[Instr]:
    """Write ``new_mask`` into the invalid copy, then flip parity and activate.

    ``new_mask`` lists the data lines that should be active.  The valid copy
    is never touched, so an interruption anywhere leaves the old mask in force.
    """
    _, _, S = grid_shape
    target = 1 - current_parity
    sel = ALL if array_row is None else array_row
    out = [Instr(Op.PRESET0, MASK_WRITE | target, sel, ALL, which)]
    lines = np.flatnonzero(np.asarray(new_mask)[: S - 2])
    out += [Instr(Op.PRESET1, MASK_WRITE | target, sel, int(line), which) for line in lines]
    out.append(Instr(Op.ACTIVATE, 1 + target, 0, 0, which))
    return out


def exec_gate(grid: ArrayGrid, ins: Instr, driver: int | None = None, *, backend=None):
    if ins.op not in GATES:
        raise ValidationError(f"{ins.op.name} is not a logic gate")
    grid.execute(ins, driver, backend=backend)


def preset(grid: ArrayGrid, addr: int, orientation: int, value: int, driver: int | None = None):
    op = Op.PRESET1 if value else Op.PRESET0
    grid.execute(Instr(op, 0, 0, addr, orientation), driver)


def activate_rows(grid: ArrayGrid, array_col: int):
    grid.execute(Instr(Op.ACTIVATE, 0, 0, 0, ROW), array_col)


def activate_columns(grid: ArrayGrid, array_col: int):
    grid.execute(Instr(Op.ACTIVATE, 0, 0, 0, COL), array_col)


def update_bitmask(grid: ArrayGrid, array_col: int, which: int, new_mask,
                   array_row: int | None = None):
    parity = grid.rp if which == ROW else grid.cp
    for ins in mask_update_instrs(grid.shape, array_col, which, new_mask,
                                  int(parity[0, array_col]), array_row):
        grid.execute(ins, array_col)


def inter_array_gate(grid: ArrayGrid, ins: Instr):
    """Row gate whose inputs sit in the horizontally adjacent array-column."""
    S = grid.size
    j = ins.out // S
    srcs = [ins.a // S] + ([ins.b // S] if FANIN.get(ins.op, 0) == 2 else [])
    if ins.orient != ROW or any(abs(s - j) != 1 for s in srcs if s != j) or all(s == j for s in srcs):
        raise ValidationError("inter-array gates need inputs in an adjacent array-column")
    grid.execute(ins, j)
