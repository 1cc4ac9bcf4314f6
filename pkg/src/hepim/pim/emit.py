"""Instruction emission and bit-serial arithmetic over the computation arrays.

An :class:`Emitter` records driver instructions one step at a time together
with the number of lines each one drives, which it knows statically from a
shadow copy of the bitmasks.  :class:`Arith` builds ripple-carry adders,
shift-add multipliers and shift-add modular reduction out of presets and
two-input gates; every gate is preceded by the preset of its output, so each
instruction is idempotent on its own.

Operands are lists of global column numbers, least significant bit first.
The strings ``"0"`` and ``"1"`` stand for constant bits.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from ..errors import CapacityError, ValidationError
from ..ntt import set_bits, shift_schedule
from .isa import ADDR_MASK, ALL, COL, MASK_WRITE, NOP_WORD, ROW, Op, col_addr

ZERO, ONE = "0", "1"
FULL_ADDER_NANDS = 9


def is_const(bit) -> bool:
    return isinstance(bit, str)


def const_bits(value: int, width: int) -> list:
    return [ONE if value >> i & 1 else ZERO for i in range(width)]


@dataclass
class Block:
    """A recorded range of steps that may be replayed."""

    start: int
    stop: int = -1
    state: bytes = b""


class Emitter:
    """Append-only instruction stream for a grid of the given shape.

    Besides the words themselves the emitter keeps an execution schedule of
    ``(start, stop, count)`` ranges, so a block can be replayed without being
    stored twice.
    """

    def __init__(self, array_rows: int, array_cols: int, size: int):
        self.shape = (array_rows, array_cols, size)
        self.S = size
        self.drivers: list[int] = []
        self.words: list[int] = []
        self.lines: list[int] = []
        self._entries: list[tuple[int, int, int]] = []
        self._lin = 0
        z = lambda: np.zeros((2, array_rows, array_cols, size), dtype=bool)  # noqa: E731
        self.row_masks, self.col_masks = z(), z()
        self.row_parity = np.zeros(array_cols, dtype=np.int64)
        self.col_parity = np.zeros(array_cols, dtype=np.int64)
        self.row_latched = np.zeros((array_rows, array_cols, size), dtype=bool)
        self.col_latched = np.zeros((array_rows, array_cols, size), dtype=bool)
        self._row_count = [0] * array_cols
        self._col_count = [0] * array_cols

    def __len__(self):
        return len(self.words)

    # ---- raw emission
    def _push(self, driver: int, op: int, a: int, b: int, out: int, orient: int, lines: int):
        if not (0 <= a <= ADDR_MASK and 0 <= b <= ADDR_MASK and 0 <= out <= ADDR_MASK):
            raise ValidationError(f"address out of range in {Op(op).name} {a} {b} {out}")
        self.drivers.append(driver)
        self.words.append((op << 37) | (orient << 36) | (a << 24) | (b << 12) | out)
        self.lines.append(lines)

    def gate(self, op: Op, a, b, out: int):
        j = out // self.S
        self._push(j, int(op), a, 0 if b is None else b, out, ROW, self._row_count[j])

    def preset(self, value: int, out: int):
        j = out // self.S
        self._push(j, 6 if value else 5, 0, 0, out, ROW, self._row_count[j])

    def col_gate(self, j: int, op: Op, a: tuple[int, int], b: tuple[int, int] | None, out_row: int):
        """Column logic in array-column ``j``; ``a``/``b`` are ``(local_row, array_offset)``."""
        bb = col_addr(b[0], b[1]) if b is not None else 0
        self._push(j, int(op), col_addr(a[0], a[1]), bb, col_addr(out_row), COL, self._col_count[j])

    def col_preset(self, j: int, value: int, out_row: int):
        self._push(j, 6 if value else 5, 0, 0, col_addr(out_row), COL, self._col_count[j])

    # ---- bitmasks
    def _set_mask(self, j: int, which: int, new):
        ar, _, S = self.shape
        new = np.asarray(new, dtype=bool)
        if new.ndim == 1:
            new = np.broadcast_to(new, (ar, S))
        new = new.copy()
        if new[:, S - 2:].any():
            raise ValidationError("bitmask lines exclude the mask lines themselves")
        masks = self.row_masks if which == ROW else self.col_masks
        parity = self.row_parity if which == ROW else self.col_parity
        latched = self.row_latched if which == ROW else self.col_latched
        valid = parity[j]
        if (masks[valid, :, j] == new).all() and (latched[:, j] == new).all():
            return
        target = int(1 - valid)
        sel = MASK_WRITE | target
        self._push(j, Op.PRESET0, sel, ALL, ALL, which, ar * (S - 2))
        if (new == new[0]).all():
            for line in np.flatnonzero(new[0]):
                self._push(j, Op.PRESET1, sel, ALL, int(line), which, ar)
        else:
            for i in range(ar):
                for line in np.flatnonzero(new[i]):
                    self._push(j, Op.PRESET1, sel, i, int(line), which, 1)
        masks[target, :, j] = new
        self._push(j, Op.ACTIVATE, 1 + target, 0, 0, which, ar * S)
        parity[j] = target
        latched[:, j] = new
        counts = self._row_count if which == ROW else self._col_count
        counts[j] = int(new.sum())

    def set_rows(self, j: int, mask):
        self._set_mask(j, ROW, mask)

    def set_cols(self, j: int, mask):
        self._set_mask(j, COL, mask)

    def mask_state(self) -> bytes:
        return (self.row_latched.tobytes() + self.col_latched.tobytes()
                + self.row_masks.tobytes() + self.col_masks.tobytes()
                + self.row_parity.tobytes() + self.col_parity.tobytes())

    # ---- schedule
    def _flush(self):
        n = len(self.words)
        if n > self._lin:
            self._entries.append((self._lin, n, 1))
        self._lin = n

    @contextmanager
    def block(self):
        """Record the enclosed steps so they can be replayed later."""
        self._flush()
        rec = Block(len(self.words), state=self.mask_state())
        yield rec
        self._flush()
        rec.stop = len(self.words)
        if self.mask_state() != rec.state:
            raise ValidationError("a replayable block must leave the bitmasks unchanged")

    def replay(self, rec: Block, count: int = 1):
        if rec.stop < 0:
            raise ValidationError("block is still open")
        if self.mask_state() != rec.state:
            raise ValidationError("replaying a block under different bitmasks")
        self._flush()
        if count > 0 and rec.stop > rec.start:
            self._entries.append((rec.start, rec.stop, count))

    @contextmanager
    def repeat(self, count: int):
        """Execute the enclosed steps ``count`` times in total."""
        with self.block() as rec:
            yield rec
        self.replay(rec, count - 1)

    def schedule(self) -> np.ndarray:
        self._flush()
        return np.array(self._entries, dtype=np.int64).reshape(-1, 3)

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        n, ac = len(self.words), self.shape[1]
        words = np.full((n, ac), NOP_WORD, dtype=np.uint64)
        lines = np.zeros((n, ac), dtype=np.int64)
        idx = np.arange(n)
        drv = np.asarray(self.drivers, dtype=np.int64)
        words[idx, drv] = np.asarray(self.words, dtype=np.uint64)
        lines[idx, drv] = np.asarray(self.lines, dtype=np.int64)
        return words, lines


class Scratch:
    """Free-list of scratch columns per array-column."""

    def __init__(self, pools: dict[int, list[int]], size: int):
        self.free = {j: list(cols) for j, cols in pools.items()}
        self.size = size
        self._total = {j: len(c) for j, c in self.free.items()}
        self.peak = dict.fromkeys(self.free, 0)

    def take(self, j: int, n: int) -> list[int]:
        pool = self.free.get(j, [])
        if len(pool) < n:
            raise CapacityError(f"array-column {j} is out of scratch columns (need {n}, have {len(pool)})")
        out, self.free[j] = pool[:n], pool[n:]
        self.peak[j] = max(self.peak.get(j, 0), self._total.get(j, 0) - len(self.free[j]))
        return out

    def give(self, cols):
        for c in cols:
            if not is_const(c):
                self.free.setdefault(c // self.size, []).insert(0, c)

    @contextmanager
    def borrow(self, j: int, n: int):
        cols = self.take(j, n)
        try:
            yield cols
        finally:
            self.give(cols)


class Arith:
    def __init__(self, em: Emitter, scratch: Scratch):
        self.em, self.sc = em, scratch
        self.S = em.S

    def tmp(self, j: int, n: int):
        return self.sc.borrow(j, n)

    def _j(self, col) -> int:
        return col // self.S

    # ---- gates, each preceded by the preset of its output
    def nand(self, a, b, out):
        self.em.preset(0, out)
        self.em.gate(Op.NAND, a, b, out)

    def and_(self, a, b, out):
        self.em.preset(1, out)
        self.em.gate(Op.AND, a, b, out)

    def or_(self, a, b, out):
        self.em.preset(1, out)
        self.em.gate(Op.OR, a, b, out)

    def not_(self, a, out):
        self.em.preset(0, out)
        self.em.gate(Op.NOT, a, None, out)

    def copy(self, a, out):
        if a == out:
            return
        if is_const(a):
            self.em.preset(int(a), out)
        else:
            self.and_(a, a, out)

    def copy_field(self, src, dst):
        for a, o in zip(src, dst):
            self.copy(a, o)
        for o in dst[len(src):]:
            self.em.preset(0, o)

    def fill(self, dst, value: int):
        for o in dst:
            self.em.preset(value, o)

    # ---- adders
    def _full(self, x, y, c, dst, t):
        self.nand(x, y, t[0])
        self.nand(x, t[0], t[1])
        self.nand(y, t[0], t[2])
        self.nand(t[1], t[2], t[3])
        self.nand(t[3], c, t[1])
        self.nand(t[3], t[1], t[2])
        self.nand(c, t[1], t[3])
        self.nand(t[2], t[3], dst)
        self.nand(t[0], t[1], c)

    def _half(self, x, y, c, dst, t):
        """``dst = x ^ y``, ``c = x & y``; ``y`` may be the carry column itself."""
        self.nand(x, y, t[0])
        self.nand(x, t[0], t[1])
        self.nand(y, t[0], t[2])
        self.nand(t[1], t[2], dst)
        self.not_(t[0], c)

    def _half_plus_one(self, x, y, c, dst, t):
        """``dst = ~(x ^ y)``, ``c = x | y``: the sum bit of ``x + y + 1``."""
        self.or_(x, y, t[0])
        self.nand(x, y, t[1])
        self.nand(t[1], t[0], dst)
        self.copy(t[0], c)

    def add(self, a, b, dst, *, cin=ZERO, invert_b=False, cout=None):
        """``dst = a + b + cin`` (mod ``2**len(dst)``), optionally ``b`` bitwise inverted.

        ``dst`` may overlap ``a`` or ``b`` bit for bit.  When ``cout`` is a
        column the final carry is written there.
        """
        width = len(dst)
        if width == 0:
            return
        j = self._j(dst[0])
        pad_b = ONE if invert_b else ZERO
        a = list(a[:width]) + [ZERO] * (width - len(a))
        b = list(b[:width]) + [None] * (width - len(b))
        with self.tmp(j, 6) as t:
            carry_col, inv = t[4], t[5]
            carry = cin
            for i in range(width):
                x = a[i]
                y = b[i]
                if y is None:
                    y = pad_b
                elif invert_b:
                    if is_const(y):
                        y = ONE if y == ZERO else ZERO
                    else:
                        self.not_(y, inv)
                        y = inv
                if is_const(x) and not is_const(y):
                    x, y = y, x
                carry = self._add_bit(x, y, carry, dst[i], carry_col, t)
            if cout is not None:
                self.copy(carry, cout)

    def _add_bit(self, x, y, carry, out, ccol, t):
        if is_const(x):  # both operands constant
            s = int(x) + int(y)
            if is_const(carry):
                total = s + int(carry)
                self.em.preset(total & 1, out)
                return ONE if total >> 1 else ZERO
            if s == 0:
                self.copy(carry, out)
                return ZERO
            if s == 1:
                self.not_(carry, out)
                return carry
            self.copy(carry, out)
            return ONE
        if is_const(y):
            if is_const(carry):
                if int(y) + int(carry) == 1:
                    self.copy(x, ccol)
                    self.not_(ccol, out)
                    return ccol
                self.copy(x, out)
                return carry
            if y == ZERO:
                self._half(x, carry, ccol, out, t)
            else:
                self._half_plus_one(x, carry, ccol, out, t)
            return ccol
        if is_const(carry):
            if carry == ZERO:
                self._half(x, y, ccol, out, t)
            else:
                self._half_plus_one(x, y, ccol, out, t)
            return ccol
        self._full(x, y, carry, out, t)
        return carry

    def sub(self, a, b, dst, *, cout=None):
        """``dst = a - b`` (mod ``2**len(dst)``); ``cout`` is 1 exactly when ``a >= b``."""
        self.add(a, b, dst, cin=ONE, invert_b=True, cout=cout)

    # ---- selection
    def mux(self, sel, x, y, dst):
        """``dst = sel ? x : y`` bit by bit; ``dst`` may overlap ``x`` or ``y``."""
        j = self._j(dst[0])
        with self.tmp(j, 3) as t:
            self.not_(sel, t[2])
            for xi, yi, o in zip(x, y, dst):
                self.nand(sel, xi, t[0])
                self.nand(t[2], yi, t[1])
                self.nand(t[0], t[1], o)

    # ---- multiplication
    def mul_const(self, a, k: int, dst):
        """``dst = a * k`` truncated to ``len(dst)`` bits, one shifted add per set bit of ``k``."""
        shifts = [i for i in set_bits(k) if i < len(dst)]
        if not shifts:
            self.fill(dst, 0)
            return
        first = shifts[0]
        self.fill(dst[:first], 0)
        self.copy_field(a[: len(dst) - first], dst[first:])
        for i in shifts[1:]:
            top = dst[i:]
            self.add(top, a, top)

    def mul_bits(self, a, b, dst):
        """Shift-add product of two fields into ``dst`` (``len(a) + len(b)`` bits, truncating)."""
        j = self._j(dst[0])
        wa = len(a)
        with self.tmp(j, wa) as pp:
            for i, o in enumerate(dst[:wa]):
                self.and_(a[i], b[0], o)
            self.fill(dst[wa:wa + 1], 0)
            for k in range(1, len(b)):
                if k >= len(dst):
                    break
                hi = min(k + wa, len(dst))
                for i in range(hi - k):
                    self.and_(a[i], b[k], pp[i])
                cout = dst[hi] if hi < len(dst) else None
                self.add(dst[k:hi], pp[: hi - k], dst[k:hi], cout=cout)
            self.fill(dst[min(len(a) + len(b), len(dst)):], 0)

    # ---- modular reduction
    def cond_sub(self, r, q: int, dst):
        """``dst = r - q if r >= q else r`` for ``r < 2q``."""
        j = self._j(dst[0])
        with self.tmp(j, len(r) + 1) as t:
            d, flag = t[:-1], t[-1]
            self.add(r, const_bits(q, len(r)), d, cin=ONE, invert_b=True, cout=flag)
            self.mux(flag, d[: len(dst)], r[: len(dst)], dst)

    def mod_reduce(self, x, q: int, dst):
        """``dst = x mod q`` for ``x < q**2`` via the shift-add quotient estimate.

        ``dst`` may overlap ``x``; it is written only after ``x`` is last read.
        """
        s = shift_schedule(q)
        b = s.bits
        j = self._j(dst[0])
        acc = self.sc.take(j, len(x) + s.m.bit_length())
        prod = self.sc.take(j, b + 1)
        self.mul_const(x, s.m, acc)
        qhat = (acc[s.shift:] + [ZERO] * (b + 1))[: b + 1]
        live = [c for c in qhat if not is_const(c)]
        self.mul_const(live, q, prod) if live else self.fill(prod, 0)
        self.sc.give(acc)
        r = self.sc.take(j, b + 1)
        self.sub(x[: b + 1], prod, r)
        self.sc.give(prod)
        self.cond_sub(r, q, dst)
        self.sc.give(r)

    def mod_add(self, a, b, q: int, dst):
        j = self._j(dst[0])
        with self.tmp(j, len(dst) + 1) as s:
            self.add(a, b, s[:-1], cout=s[-1])
            self.cond_sub(s, q, dst)

    def mod_sub(self, a, b, q: int, dst):
        """``dst = (a - b) mod q`` for ``a, b < q``."""
        j = self._j(dst[0])
        w = len(dst)
        with self.tmp(j, 2 * w + 1) as t:
            d, e, ge = t[:w], t[w:2 * w], t[-1]
            self.sub(a, b, d, cout=ge)
            self.add(d, const_bits(q, w), e)
            self.mux(ge, d, e, dst)

    def mod_mul(self, a, b, q: int, dst):
        j = self._j(dst[0])
        with self.tmp(j, len(a) + len(b)) as p:
            self.mul_bits(a, b, p)
            self.mod_reduce(p, q, dst)

    def mod_mul_const(self, a, k: int, q: int, dst):
        j = self._j(dst[0])
        with self.tmp(j, len(a) + max(k.bit_length(), 1)) as p:
            self.mul_const(a, k, p)
            self.mod_reduce(p, q, dst)
