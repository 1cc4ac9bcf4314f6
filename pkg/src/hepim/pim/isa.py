"""40-bit instruction words for the computation-array drivers.

Layout, most significant first::

    opcode(3) | orientation(1) | addr_a(12) | addr_b(12) | addr_out(12)

Orientation ``R`` is row logic: every active row computes, addresses are
global column indices.  ``C`` is column logic: every active column computes,
addresses are ``(array_offset << 9) | local_row`` with a signed 3-bit offset
to the vertically neighbouring array.

Two encodings reuse opcodes beyond their plain meaning:

* ``ACTIVATE`` with ``addr_a`` 0 loads the latches of the given orientation
  from the valid bitmask copy; 1 or 2 first sets the parity bit to 0 or 1.
  ``addr_a == 0xFFF`` with orientation ``R`` is the no-op.
* ``PRESET0/1`` with ``addr_a == 0x800 | copy`` writes a single bitmask cell:
  ``addr_out`` is the line (``0xFFF`` for every data line) and ``addr_b``
  the array-row (``0xFFF`` for all of them).
"""

from __future__ import annotations

from enum import IntEnum
from typing import NamedTuple

import numpy as np

from ..errors import ValidationError


class Op(IntEnum):
    NOT = 0
    AND = 1
    NAND = 2
    OR = 3
    NOR = 4
    PRESET0 = 5
    PRESET1 = 6
    ACTIVATE = 7


ROW, COL = 0, 1
ADDR_MASK = 0xFFF
ALL = 0xFFF
MASK_WRITE = 0x800
LOCAL_ROW_BITS = 9
GATES = (Op.NOT, Op.AND, Op.NAND, Op.OR, Op.NOR)
FANIN = {Op.NOT: 1, Op.AND: 2, Op.NAND: 2, Op.OR: 2, Op.NOR: 2}


class Instr(NamedTuple):
    op: Op
    a: int = 0
    b: int = 0
    out: int = 0
    orient: int = ROW

    @property
    def is_nop(self) -> bool:
        return self.op == Op.ACTIVATE and self.a == ALL and self.orient == ROW

    @property
    def is_mask_write(self) -> bool:
        return self.op in (Op.PRESET0, Op.PRESET1) and self.a & MASK_WRITE != 0

    def __str__(self) -> str:
        return f"{self.op.name} {self.a:03X} {self.b:03X} {self.out:03X} {'RC'[self.orient]}"


NOP = Instr(Op.ACTIVATE, ALL, 0, 0, ROW)


def encode(ins: Instr) -> int:
    for v in (ins.a, ins.b, ins.out):
        if not 0 <= v <= ADDR_MASK:
            raise ValidationError(f"address {v} does not fit 12 bits")
    if ins.orient not in (ROW, COL):
        raise ValidationError("orientation must be R or C")
    return (int(ins.op) << 37) | (ins.orient << 36) | (ins.a << 24) | (ins.b << 12) | ins.out


def decode(word: int) -> Instr:
    word = int(word)
    if word >> 40:
        raise ValidationError(f"word {word:#x} is wider than 40 bits")
    return Instr(Op(word >> 37 & 7), word >> 24 & ADDR_MASK, word >> 12 & ADDR_MASK,
                 word & ADDR_MASK, word >> 36 & 1)


NOP_WORD = encode(NOP)


def col_addr(local_row: int, offset: int = 0) -> int:
    """Column-logic address of ``local_row`` in the array ``offset`` rows away."""
    if not -4 <= offset <= 3:
        raise ValidationError(f"array offset {offset} outside -4..3")
    if not 0 <= local_row < 1 << LOCAL_ROW_BITS:
        raise ValidationError(f"local row {local_row} does not fit 9 bits")
    return ((offset & 7) << LOCAL_ROW_BITS) | local_row


def split_col_addr(addr: int) -> tuple[int, int]:
    off = addr >> LOCAL_ROW_BITS & 7
    return (off - 8 if off >= 4 else off), addr & ((1 << LOCAL_ROW_BITS) - 1)


def listing(words) -> str:
    """Hex listing, one instruction per line: ``OPCODE A B OUT R|C``."""
    return "\n".join(str(decode(w)) for w in np.asarray(words, dtype=np.uint64).ravel()) + "\n"


def parse_listing(text: str) -> np.ndarray:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, a, b, o, orient = line.split()
            out.append(encode(Instr(Op[name], int(a, 16), int(b, 16), int(o, 16), "RC".index(orient))))
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"listing line {lineno}: {exc}") from None
    return np.array(out, dtype=np.uint64)
