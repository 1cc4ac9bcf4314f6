import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hepim.errors import CapabilityError, ParameterError, ValidationError
from hepim.pim.energy import (EnergyLedger, MtjParams, PeripheralModel, gate_bias, gate_energy,
                              mtj_profile, raw_line_energy, read_energy, write_energy)
from hepim.pim.grid import (ArrayGrid, activate_columns, activate_rows, data_rows_for, exec_gate,
                            inter_array_gate, mask_update_instrs, preset, update_bitmask,
                            validate_words)
from hepim.pim.isa import (ALL, COL, NOP, NOP_WORD, ROW, Instr, Op, col_addr, decode, encode,
                           listing, parse_listing, split_col_addr)

TRUTH = {Op.NOT: lambda x, y: 1 - x, Op.AND: lambda x, y: x & y, Op.NAND: lambda x, y: 1 - (x & y),
         Op.OR: lambda x, y: x | y, Op.NOR: lambda x, y: 1 - (x | y)}
# AND/OR preset their output to 1 and can only clear it; the others preset to 0
PRESET_OF = {Op.NOT: 0, Op.NAND: 0, Op.NOR: 0, Op.AND: 1, Op.OR: 1}


def small_grid(ar=2, ac=2, size=8):
    """Grid with every data row and column enabled."""
    g = ArrayGrid(ar, ac, size)
    for j in range(ac):
        update_bitmask(g, j, ROW, np.ones(size))
        update_bitmask(g, j, COL, np.ones(size))
    return g


# ------------------------------------------------------------------ ISA

class TestIsa:
    @given(st.sampled_from(list(Op)), st.integers(0, 0xFFF), st.integers(0, 0xFFF),
           st.integers(0, 0xFFF), st.sampled_from([ROW, COL]))
    def test_roundtrip(self, op, a, b, out, orient):
        ins = Instr(op, a, b, out, orient)
        w = encode(ins)
        assert w < 1 << 40
        assert decode(w) == ins

    def test_field_positions(self):
        w = encode(Instr(Op.NAND, 0x123, 0x456, 0x789, COL))
        assert w == (2 << 37) | (1 << 36) | (0x123 << 24) | (0x456 << 12) | 0x789

    def test_nop(self):
        assert decode(NOP_WORD).is_nop and NOP.is_nop
        assert not Instr(Op.ACTIVATE, 0xFFF, 0, 0, COL).is_nop

    def test_bad_fields(self):
        with pytest.raises(ValidationError):
            encode(Instr(Op.AND, 0x1000, 0, 0))
        with pytest.raises(ValidationError):
            encode(Instr(Op.AND, 0, 0, 0, 2))
        with pytest.raises(ValidationError):
            decode(1 << 40)

    @given(st.integers(0, 511), st.integers(-4, 3))
    def test_col_addr(self, row, off):
        assert split_col_addr(col_addr(row, off)) == (off, row)

    def test_col_addr_range(self):
        with pytest.raises(ValidationError):
            col_addr(512)
        with pytest.raises(ValidationError):
            col_addr(0, 4)

    def test_listing_roundtrip(self):
        words = np.array([encode(Instr(Op.NOR, 1, 2, 3)), NOP_WORD,
                          encode(Instr(Op.PRESET1, 0, 0, col_addr(5), COL))], dtype=np.uint64)
        text = listing(words)
        assert text.splitlines()[0] == "NOR 001 002 003 R"
        assert parse_listing(text).tolist() == words.tolist()

    def test_listing_errors(self):
        with pytest.raises(ValidationError, match="line 2"):
            parse_listing("NOT 000 000 001 R\nFOO 1 2 3 R\n")


# --------------------------------------------------------------- energy

class TestEnergy:
    def test_write_energy_value(self):
        m = mtj_profile("modern")
        # I^2 * mean(R_P, R_AP) * t = 1.6e-9 * 5245 * 3e-9
        assert write_energy(m) == pytest.approx(2.5176e-14, rel=1e-12)
        assert read_energy(m) == pytest.approx(write_energy(m) / 4, rel=1e-12)

    def test_not_gate_value(self):
        m = mtj_profile("modern")
        # switching path R_P + R_P(out), holding path R_AP + R_P(out)
        r_sw, r_hold = 2 * 3150.0, 7340.0 + 3150.0
        v = 40e-6 * (r_sw + r_hold) / 2
        assert gate_bias(Op.NOT, 1, m) == pytest.approx((v, v / r_sw), rel=1e-12)
        assert raw_line_energy(Op.NOT, m) == pytest.approx(v * v / r_sw * 3e-9, rel=1e-12)

    @pytest.mark.parametrize("op", list(TRUTH))
    def test_projected_cheaper(self, op):
        assert raw_line_energy(op, mtj_profile("projected")) < raw_line_energy(op, mtj_profile("modern"))

    @pytest.mark.parametrize("op", list(TRUTH))
    def test_bias_window(self, op):
        # the bias is the midpoint of the two thresholds, so the switching path carries at least I_sw
        m = mtj_profile("modern")
        v, i = gate_bias(op, 2, m)
        assert i >= m.i_switch * (1 - 1e-12)
        assert v / i < v / m.i_switch

    def test_gate_energy_linear(self):
        m, p = mtj_profile("modern"), PeripheralModel(0.5, 0.0)
        e1 = gate_energy(Op.NAND, 2, m, p, 1)
        assert gate_energy(Op.NAND, 2, m, p, 64) == pytest.approx(64 * e1)
        assert e1 == pytest.approx(1.5 * raw_line_energy(Op.NAND, m))
        assert gate_energy(Op.NAND, 2, m, p, 0) == 0.0

    def test_invalid(self):
        with pytest.raises(ParameterError):
            MtjParams("x", 10.0, 5.0, 1e-9, 1e-6)
        with pytest.raises(ParameterError):
            PeripheralModel(-1.0, 0.0)
        with pytest.raises(ParameterError):
            gate_bias(Op.PRESET0, 1, mtj_profile("modern"))
        with pytest.raises(ParameterError):
            mtj_profile("future")

    def test_ledger(self):
        L = EnergyLedger()
        L.add("compute", 2.0, 1.0)
        L.add("dead", 0.02, 0.5)
        assert L.total_energy == pytest.approx(2.02)
        assert L.percent_of_compute("dead") == pytest.approx(1.0)
        assert L.percent_of_compute("dead", latency=True) == pytest.approx(50.0)
        with pytest.raises(ValueError):
            L.add("compute", -1.0)
        with pytest.raises(KeyError):
            L.add("misc", 1.0)


# ----------------------------------------------------------------- grid

def reference_exec(cells, row_latch, col_latch, ins: Instr, j: int, S: int):
    """Cell-by-cell model of one gate or plain preset on driver ``j``."""
    ar = row_latch.shape[0]
    cells = cells.copy()
    for i in range(ar):
        if ins.orient == ROW:
            for r in range(S):
                if not row_latch[i, j, r]:
                    continue
                g = i * S + r
                if ins.op in (Op.PRESET0, Op.PRESET1):
                    cells[g, ins.out] = int(ins.op == Op.PRESET1)
                    continue
                x, y = int(cells[g, ins.a]), int(cells[g, ins.b])
                f = TRUTH[ins.op](x, y)
                cells[g, ins.out] = cells[g, ins.out] & f if PRESET_OF[ins.op] else cells[g, ins.out] | f
        else:
            oa, ra = split_col_addr(ins.a)
            ob, rb = split_col_addr(ins.b)
            _, ro = split_col_addr(ins.out)
            if ins.op not in (Op.PRESET0, Op.PRESET1):
                if not 0 <= i + oa < ar or (ins.op != Op.NOT and not 0 <= i + ob < ar):
                    continue
            for c in range(S):
                if not col_latch[i, j, c]:
                    continue
                gc = j * S + c
                if ins.op in (Op.PRESET0, Op.PRESET1):
                    cells[i * S + ro, gc] = int(ins.op == Op.PRESET1)
                    continue
                x = int(cells[(i + oa) * S + ra, gc])
                y = int(cells[(i + ob) * S + rb, gc]) if ins.op != Op.NOT else 0
                f = TRUTH[ins.op](x, y)
                cur = cells[i * S + ro, gc]
                cells[i * S + ro, gc] = cur & f if PRESET_OF[ins.op] else cur | f
    return cells


@st.composite
def row_programs(draw, S=8, ac=2):
    n = draw(st.integers(1, 12))
    prog = []
    for _ in range(n):
        j = draw(st.integers(0, ac - 1))
        cols = [j * S + c for c in range(S - 2)]
        op = draw(st.sampled_from(list(TRUTH) + [Op.PRESET0, Op.PRESET1]))
        out = draw(st.sampled_from(cols))
        a = draw(st.sampled_from([c for c in cols if c != out]))
        b = draw(st.sampled_from([c for c in cols if c != out]))
        if op in (Op.PRESET0, Op.PRESET1):
            a = b = 0
        prog.append((j, Instr(op, a, b, out, ROW)))
    return prog


class TestGrid:
    def test_data_rows(self):
        assert data_rows_for(512) == 256 and data_rows_for(8) == 4 and data_rows_for(128) == 64

    def test_bad_shape(self):
        with pytest.raises(ValidationError):
            ArrayGrid(1, 1, 100)
        with pytest.raises(ValidationError):
            ArrayGrid(1, 9, 512)

    @pytest.mark.parametrize("op", list(TRUTH))
    def test_truth_tables(self, op, backend):
        g = small_grid(1, 1, 8)
        pairs = [(0, 0), (0, 1), (1, 0), (1, 1)]
        for r, (x, y) in enumerate(pairs):
            g.cells[r, 0], g.cells[r, 1] = x, y
        preset(g, 2, ROW, PRESET_OF[op])
        exec_gate(g, Instr(op, 0, 1, 2), backend=backend)
        assert [int(g.cells[r, 2]) for r in range(4)] == [TRUTH[op](x, y) for x, y in pairs]

    @pytest.mark.parametrize("op", list(TRUTH))
    def test_column_truth_tables(self, op):
        g = small_grid(1, 1, 8)
        for c, (x, y) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            g.cells[0, c], g.cells[1, c] = x, y
        preset(g, col_addr(2), COL, PRESET_OF[op], driver=0)
        g.execute(Instr(op, col_addr(0), col_addr(1), col_addr(2), COL), 0)
        assert g.cells[2, :4].tolist() == [TRUTH[op](x, y) for x, y in [(0, 0), (0, 1), (1, 0), (1, 1)]]

    @settings(max_examples=60, deadline=None)
    @given(row_programs(), st.integers(0, 2**32 - 1))
    def test_against_reference(self, prog, seed):
        rng = np.random.default_rng(seed)
        g = small_grid(2, 2, 8)
        g.cells[...] = 0
        data = rng.integers(0, 2, (16, 16)).astype(np.uint8)
        for i in range(2):
            for j in range(2):
                data[i * 8 + 6:i * 8 + 8, :] = 0
                data[:, j * 8 + 6:j * 8 + 8] = 0
        g.cells[...] = data
        # random row masks; column masks all on
        for i in range(2):
            for j in range(2):
                g.cells[i * 8:i * 8 + 6, j * 8 + 6] = rng.integers(0, 2, 6)
        for j in range(2):
            activate_rows(g, j)
        ref = g.cells.copy()
        other = g.copy()
        for j, ins in prog:
            ref = reference_exec(ref, g.row_latch, g.col_latch, ins, j, 8)
            g.execute(ins, j, backend="numba")
            other.execute(ins, j, backend="numpy")
        assert np.array_equal(g.cells, ref)
        assert np.array_equal(other.cells, ref)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(list(TRUTH)), st.integers(0, 2**32 - 1))
    def test_idempotent(self, op, seed):
        rng = np.random.default_rng(seed)
        g = small_grid(1, 1, 8)
        g.cells[:4, :2] = rng.integers(0, 2, (4, 2))
        preset(g, 2, ROW, PRESET_OF[op])
        ins = Instr(op, 0, 1, 2)
        exec_gate(g, ins)
        once = g.cells.copy()
        exec_gate(g, ins)
        assert np.array_equal(g.cells, once)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(list(TRUTH)), st.floats(0, 1), st.integers(0, 2**32 - 1))
    def test_partial_then_full(self, op, frac, seed):
        rng = np.random.default_rng(seed)
        g = small_grid(2, 2, 8)
        g.cells[:6, :2] = rng.integers(0, 2, (6, 2))
        g.cells[8:14, :2] = rng.integers(0, 2, (6, 2))
        preset(g, 2, ROW, PRESET_OF[op])
        step = np.array([encode(Instr(op, 0, 1, 2)), NOP_WORD], dtype=np.uint64)
        clean = g.copy()
        clean.run(step.reshape(1, -1))
        g.run_partial(step, frac, rng)
        g.power_loss(rng)
        g.activate_all()
        g.run(step.reshape(1, -1))
        assert np.array_equal(g.cells, clean.cells)

    def test_validation_rules(self):
        S = 8

        def check(words, match):
            with pytest.raises(ValidationError, match=match):
                validate_words(np.array(words, dtype=np.uint64), 1, 2, S)

        check([[encode(Instr(Op.NAND, 0, 1, 0)), NOP_WORD]], "collides")
        check([[encode(Instr(Op.NAND, 0, 6, 2)), NOP_WORD]], "bitmask column")
        check([[encode(Instr(Op.NAND, S, 1, 2)), encode(Instr(Op.PRESET1, 0, 0, S + 3))]], "idle")
        check([[NOP_WORD, encode(Instr(Op.PRESET1, 0, 0, 2))]], "reachable")
        check([[encode(Instr(Op.NAND, col_addr(0, 2), col_addr(1), col_addr(2), COL)), NOP_WORD]],
              "adjacent")
        check([[encode(Instr(Op.NAND, col_addr(2, 1), col_addr(1), col_addr(2), COL)), NOP_WORD]],
              "neighbouring")
        validate_words(np.array([[encode(Instr(Op.NAND, S, 1, 2)), NOP_WORD]], dtype=np.uint64), 1, 2, S)

    def test_inter_array(self):
        g = small_grid(1, 2, 8)
        g.cells[:4, 8] = [0, 0, 1, 1]
        g.cells[:4, 1] = [0, 1, 0, 1]
        preset(g, 2, ROW, 0)
        inter_array_gate(g, Instr(Op.NAND, 8, 1, 2))
        assert g.cells[:4, 2].tolist() == [1, 1, 1, 0]
        with pytest.raises(ValidationError):
            inter_array_gate(g, Instr(Op.NAND, 0, 1, 2))

    def test_read_locality(self):
        g = small_grid(1, 2, 8)
        g.read_bits(0, [0, 1, 5])
        with pytest.raises(CapabilityError):
            g.read_bits(0, [8])
        with pytest.raises(CapabilityError):
            g.read_bits(0, [6])
        L = EnergyLedger()
        g.read_bits(0, [0, 1], ledger=L, mtj=mtj_profile("modern"))
        assert L.energy["io"] == pytest.approx(2 * read_energy(mtj_profile("modern")))

    def test_snapshot_roundtrip(self, rng):
        g = small_grid(2, 3, 16)
        g.cells[...] = rng.integers(0, 2, g.cells.shape)
        g.rp[0, 1] = 1
        h = ArrayGrid.from_snapshot(g.snapshot())
        assert np.array_equal(h.cells, g.cells) and np.array_equal(h.rp, g.rp)
        assert h.snapshot() == g.snapshot()
        with pytest.raises(ValidationError):
            ArrayGrid.from_snapshot(b"XXXX" + g.snapshot()[4:])

    def test_mask_write_guard(self):
        g = small_grid(1, 1, 8)
        with pytest.raises(ValidationError, match="valid bitmask"):
            g.execute(Instr(Op.PRESET1, 0x800 | int(g.rp[0, 0]), ALL, 0, ROW), 0)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.booleans(), min_size=6, max_size=6), st.data())
    def test_mask_update_interrupted(self, new, data):
        g = small_grid(1, 1, 8)
        old = g.row_latch[0, 0].copy()
        seq = mask_update_instrs(g.shape, 0, ROW, np.array(new + [False, False]), int(g.rp[0, 0]))
        cut = data.draw(st.integers(0, len(seq)))
        for ins in seq[:cut]:
            g.execute(ins, 0)
        g.power_loss(np.random.default_rng(cut))
        g.activate_all()
        lat = g.row_latch[0, 0]
        want_new = np.array(new + [False, False], dtype=np.uint8)
        if cut == len(seq):
            assert np.array_equal(lat, want_new)
        else:
            assert np.array_equal(lat, old)

    def test_update_bitmask(self):
        g = small_grid(2, 1, 8)
        mask = np.array([1, 0, 1, 0, 0, 0, 0, 0])
        update_bitmask(g, 0, ROW, mask)
        assert g.row_latch[0, 0].tolist() == mask.tolist() == g.row_latch[1, 0].tolist()
        update_bitmask(g, 0, COL, np.ones(8), array_row=1)
        assert g.col_latch[1, 0, :6].all()
