"""Harvested-power execution: controller state, capacitor walk, restarts and accounting.

An episode is a sequence of actions (received packets, one atomic encode,
compute steps, transmitted packets).  Each action draws ``e / efficiency``
from the capacitor over ``tau`` seconds while the harvester adds
``power * tau``.  With ``W`` the deficit below a full capacitor the walk is
``W_k = max(0, W_{k-1} + e_k / efficiency - power * tau_k)``; an action fails
when it would push ``W`` past the usable energy.  A failed action's partial
draw is dead energy, the device then recharges from ``v_off`` to ``v_on``,
re-activates every array and retries the same action.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ._backend import njit, pick
from .errors import LivelockError, ParameterError
from .pim.energy import (EnergyLedger, PeripheralModel, default_peripheral, mtj_profile,
                         profile_settings, read_energy, write_energy)

PC_BITS = 32
SR_BITS = 3
BITS_PER_JOULE_RF = 158e-12
DEFAULT_BIT_RATE = 1e6
CSV_HEADER = ("power_w", "profile", "latency_s", "energy_j", "restarts", "dead_pct", "restore_pct",
              "backup_pct", "dead_lat_pct", "restore_lat_pct")


class Phase(IntEnum):
    RECEIVE = 0
    ENCODE = 1
    COMPUTE = 2
    TRANSMIT = 3
    IDLE = 4


@dataclass(frozen=True)
class HarvesterConfig:
    power: float
    capacitance: float = 1e-3
    v_on: float = 0.700
    v_off: float = 0.400
    clock_hz: float = 30.3e6
    converter_efficiency: float = 1.0
    initial_charge: float = 1.0

    def __post_init__(self):
        if not self.v_on > self.v_off > 0:
            raise ParameterError("need v_on > v_off > 0")
        if self.power <= 0 or self.capacitance <= 0 or self.clock_hz <= 0:
            raise ParameterError("power, capacitance and clock must be positive")
        if not 0 < self.converter_efficiency <= 1:
            raise ParameterError("converter efficiency must lie in (0, 1]")
        if not 0 <= self.initial_charge <= 1:
            raise ParameterError("initial charge is a fraction of the usable energy")

    @classmethod
    def for_profile(cls, profile: str, power: float, **kw) -> "HarvesterConfig":
        return cls(power=power, **{**profile_settings(profile), **kw})

    @property
    def usable_energy(self) -> float:
        """Energy between ``v_on`` and ``v_off``: ``C (v_on^2 - v_off^2) / 2``."""
        return 0.5 * self.capacitance * (self.v_on ** 2 - self.v_off ** 2)

    @property
    def recharge_time(self) -> float:
        return self.usable_energy / self.power


@dataclass(frozen=True)
class IoSpec:
    input_elements: int = 0
    input_bits: int = 3
    output_elements: int = 0
    output_bits: int = 36
    energy_per_bit: float = BITS_PER_JOULE_RF
    bit_rate: float = DEFAULT_BIT_RATE


@dataclass(frozen=True)
class EncoderSpec:
    units: int = 1
    energy: float = 60e-6
    latency: float = 0.3e-3


# ------------------------------------------------------------ controller

class DuplicatedRegister:
    """Two copies of a value plus a parity bit naming the valid one."""

    def __init__(self, bits: int, value: int = 0):
        self.bits = bits
        self.copies = [value, value]
        self.parity = 0
        self.writes = 0

    def read(self) -> int:
        return self.copies[self.parity]

    def write(self, value: int, interrupt_after: int | None = None) -> bool:
        """Write the invalid copy bit by bit, then flip parity.

        ``interrupt_after`` stops after that many bits (``bits`` means the
        copy is complete but the parity flip never happened).
        """
        target = 1 - self.parity
        old = self.copies[target]
        n = self.bits if interrupt_after is None else min(interrupt_after, self.bits)
        keep = ~((1 << n) - 1)
        self.copies[target] = (old & keep) | (value & ((1 << n) - 1))
        self.writes += n
        if interrupt_after is not None:
            return False
        self.parity = target
        self.writes += 1
        return True


@dataclass
class ControllerState:
    sr: DuplicatedRegister = field(default_factory=lambda: DuplicatedRegister(SR_BITS, int(Phase.RECEIVE)))
    pc: DuplicatedRegister = field(default_factory=lambda: DuplicatedRegister(PC_BITS, 0))

    @property
    def phase(self) -> Phase:
        return Phase(self.sr.read())

    def set_phase(self, phase: Phase):
        self.sr.write(int(phase))


def commit_instruction(state: ControllerState, interrupt_after: int | None = None) -> bool:
    """Advance the PC after a completed instruction; False if the commit was cut short."""
    return state.pc.write(state.pc.read() + 1, interrupt_after)


class PacketBuffer:
    """Non-volatile packet store with per-packet valid bits and a completed bit."""

    def __init__(self, packets: int, bits_per_packet: int):
        self.bits_per_packet = bits_per_packet
        self.data = np.zeros(packets, dtype=object)
        self.valid = np.zeros(packets, dtype=bool)
        self.completed = False

    def store(self, i: int, value: int, interrupted: bool = False, rng=None):
        if interrupted:
            # a torn write leaves arbitrary bits but the valid bit stays clear
            self.data[i] = int(rng.integers(0, 1 << self.bits_per_packet)) if rng is not None else 0
            return
        self.data[i] = int(value)
        self.valid[i] = True
        if self.valid.all():
            self.completed = True

    def next_missing(self) -> int | None:
        missing = np.flatnonzero(~self.valid)
        return int(missing[0]) if missing.size else None


# ------------------------------------------------------------ energy walk

@njit
def _walk_nb(e, tau, sched, w0, usable, power, eta, r_net, forced, out_idx, out_avail):
    """Lindley walk over the scheduled actions; returns (deficit, events, status)."""
    w = w0
    n_ev = 0
    k = 0
    f = 0
    nf = forced.shape[0]
    for s in range(sched.shape[0]):
        a, b, c = sched[s, 0], sched[s, 1], sched[s, 2]
        for _ in range(c):
            for i in range(a, b):
                net = e[i] / eta - power * tau[i]
                while True:
                    hit = f < nf and forced[f] == k
                    if not hit and w + net <= usable:
                        break
                    if n_ev >= out_idx.shape[0]:
                        return w, n_ev, 1
                    out_idx[n_ev] = k
                    out_avail[n_ev] = usable - w
                    n_ev += 1
                    if hit:
                        f += 1
                    w = r_net if r_net > 0 else 0.0
                    if not hit and w + net > usable:
                        return w, n_ev, 2
                w = w + net
                if w < 0:
                    w = 0.0
                k += 1
    return w, n_ev, 0


def _walk_np(e, tau, sched, w0, usable, power, eta, r_net, forced, out_idx, out_avail):
    """Same walk in closed form: ``W_i = S_i - min(-W_0, min_{j<=i} S_j)`` per block."""
    net_all = e / eta - power * tau
    restored = max(r_net, 0.0)
    w = float(w0)
    n_ev = 0
    k = 0
    f = 0
    nf = len(forced)
    for a, b, c in sched:
        block = net_all[a:b]
        for _ in range(int(c)):
            pos = 0
            while pos < len(block):
                x = block[pos:]
                s = np.cumsum(x)
                before = np.minimum.accumulate(np.concatenate([[-w], s[:-1]]))
                v = s - before
                bad = np.flatnonzero(v > usable)
                first = int(bad[0]) if bad.size else len(x)
                hit = f < nf and forced[f] - k - pos <= first
                if hit:
                    first = int(forced[f] - k - pos)
                if first == len(x):
                    w = float(max(v[-1], 0.0))
                    break
                if n_ev >= len(out_idx):
                    return w, n_ev, 1
                out_idx[n_ev] = k + pos + first
                out_avail[n_ev] = usable - (w if first == 0 else max(float(v[first - 1]), 0.0))
                n_ev += 1
                w = restored
                if hit:
                    f += 1
                elif w + x[first] > usable:
                    return w, n_ev, 2
                pos += first
            k += len(block)
    return w, n_ev, 0


@dataclass
class ActionStream:
    """Per-action device energy and duration, executed in schedule order."""

    phase: Phase
    energy: np.ndarray
    duration: np.ndarray
    schedule: np.ndarray

    @property
    def length(self) -> int:
        s = self.schedule
        return int(((s[:, 1] - s[:, 0]) * s[:, 2]).sum())

    def totals(self) -> tuple[float, float]:
        def tot(v):
            c = np.concatenate([[0.0], np.cumsum(v)])
            s = self.schedule
            return float(((c[s[:, 1]] - c[s[:, 0]]) * s[:, 2]).sum())
        return tot(self.energy), tot(self.duration)

    def at(self, k: int) -> tuple[float, float]:
        """Energy and duration of the ``k``-th executed action."""
        for a, b, c in self.schedule:
            n = (b - a) * c
            if k < n:
                i = a + k % (b - a)
                return float(self.energy[i]), float(self.duration[i])
            k -= n
        raise IndexError(k)

    @classmethod
    def uniform(cls, phase: Phase, count: int, energy: float, duration: float) -> "ActionStream":
        sched = np.array([[0, 1, count]] if count else [], dtype=np.int64).reshape(-1, 3)
        return cls(phase, np.array([energy]), np.array([duration]), sched)


@dataclass
class WalkResult:
    deficit: float
    events: np.ndarray
    available: np.ndarray


def energy_walk(stream: ActionStream, harvester: HarvesterConfig, deficit: float, restore_energy: float,
                restore_time: float, forced=(), *, backend=None, max_events: int | None = None) -> WalkResult:
    usable = harvester.usable_energy
    eta = harvester.converter_efficiency
    r_net = restore_energy / eta - harvester.power * restore_time
    if r_net > usable:
        raise LivelockError("restoring the arrays needs more than one full charge")
    cap = max_events or max(16, len(forced) + 16)
    fn = pick(_walk_nb, _walk_np, backend)
    forced = np.asarray(sorted(forced), dtype=np.int64)
    while True:
        idx = np.zeros(cap, dtype=np.int64)
        avail = np.zeros(cap, dtype=np.float64)
        w, n, status = fn(np.ascontiguousarray(stream.energy, dtype=np.float64),
                          np.ascontiguousarray(stream.duration, dtype=np.float64),
                          np.ascontiguousarray(stream.schedule, dtype=np.int64), float(deficit), usable,
                          harvester.power, eta, float(r_net), forced, idx, avail)
        if status == 1:
            cap *= 4
            continue
        if status == 2:
            k = int(idx[n - 1])
            e, _ = stream.at(k)
            raise LivelockError(
                f"{stream.phase.name.lower()} action {k} needs {e / eta:.3g} J, more than one full charge")
        return WalkResult(float(w), idx[:n].copy(), avail[:n].copy())


# ------------------------------------------------------------ episodes

@dataclass
class CostModel:
    write: float
    read: float
    per_instruction: float
    multiplier: float

    @classmethod
    def build(cls, profile: str, peripheral: PeripheralModel | None = None) -> "CostModel":
        mtj = mtj_profile(profile)
        p = peripheral or default_peripheral()
        return cls(write_energy(mtj) * p.multiplier, read_energy(mtj) * p.multiplier,
                   p.per_instruction, p.multiplier)

    @property
    def backup(self) -> float:
        """Commit cost per instruction: write the spare PC copy, flip parity."""
        return (PC_BITS + 1) * self.write

    def restore(self, grid_shape) -> float:
        ar, ac, S = grid_shape
        return 2 * ac * (ar * S * self.read + self.per_instruction)


@dataclass
class RunReport:
    ledger: EnergyLedger
    charging_time: float
    phases: dict
    completed: bool = True
    transmitted: list | None = None
    snapshot: bytes | None = None
    reperformed: int = 0
    pc_trace_ok: bool = True

    @property
    def restarts(self) -> int:
        return self.ledger.restarts

    @property
    def latency(self) -> float:
        return self.ledger.total_latency + self.charging_time

    @property
    def energy(self) -> float:
        return self.ledger.total_energy

    def overheads(self) -> dict:
        L = self.ledger
        return {"dead_pct": L.percent_of_compute("dead"),
                "restore_pct": L.percent_of_compute("restore"),
                "backup_pct": L.percent_of_compute("backup"),
                "dead_lat_pct": L.percent_of_compute("dead", latency=True),
                "restore_lat_pct": L.percent_of_compute("restore", latency=True)}


def _partial(e: float, tau: float, avail: float, h: HarvesterConfig) -> tuple[float, float]:
    """Device energy and time spent on an action that dies after ``avail`` joules of charge."""
    rate = e / h.converter_efficiency / tau - h.power if tau > 0 else np.inf
    if not np.isfinite(rate) or rate <= 0:
        return e * 0.5, tau * 0.5
    t = min(max(avail, 0.0) / rate, tau)
    return e * t / tau, t


def run_episode(program=None, grid=None, harvester: HarvesterConfig | None = None, *,
                io: IoSpec | None = None, encoder: EncoderSpec | None = None,
                profile: str = "modern", peripheral: PeripheralModel | None = None,
                inputs: dict | None = None, interrupts=(), rng: np.random.Generator | None = None,
                backend=None) -> RunReport:
    """Receive, encode, compute and transmit under harvested power.

    Without ``grid`` the episode is counted from energies alone.  With a grid
    (preloaded for ``program``) every interruption is replayed on the cells:
    a random subset of the failing step's lines executes, the latches are
    scrambled, the arrays are re-activated and the step is executed again.
    ``interrupts`` adds forced power failures at the given compute steps.
    """
    if harvester is None:
        raise ParameterError("a harvester configuration is required")
    io = io or IoSpec()
    encoder = encoder or EncoderSpec()
    rng = rng if rng is not None else np.random.default_rng(0)
    cost = CostModel.build(profile, peripheral)
    h = harvester
    U = h.usable_energy
    ledger = EnergyLedger()
    phases = {}
    shape = program.layout.shape if program is not None else (16, 3, 512)
    r_e, r_t = cost.restore(shape), 2 / h.clock_hz

    streams = []
    rf = io.energy_per_bit
    if io.input_elements:
        e_in = io.input_bits * (rf + cost.write) + cost.write
        streams.append(ActionStream.uniform(Phase.RECEIVE, io.input_elements, e_in, io.input_bits / io.bit_rate))
    if encoder.units:
        streams.append(ActionStream.uniform(Phase.ENCODE, encoder.units, encoder.energy, encoder.latency))
    compute_stream = None
    if program is not None:
        mtj = mtj_profile(profile)
        step_e = program.step_energies(mtj, peripheral or default_peripheral())
        compute_stream = ActionStream(Phase.COMPUTE, step_e + cost.backup,
                                      np.full(len(step_e), 1 / h.clock_hz), program.schedule)
        streams.append(compute_stream)
    if io.output_elements:
        e_out = io.output_bits * (rf + cost.read) + cost.write
        streams.append(ActionStream.uniform(Phase.TRANSMIT, io.output_elements, e_out,
                                            io.output_bits / io.bit_rate))

    deficit = U * (1 - h.initial_charge)
    category = {Phase.RECEIVE: "io", Phase.TRANSMIT: "io", Phase.ENCODE: "encode", Phase.COMPUTE: "compute"}
    walks = {}
    charging = 0.0
    for st in streams:
        forced = interrupts if st.phase == Phase.COMPUTE else ()
        wr = energy_walk(st, h, deficit, r_e, r_t, forced, backend=backend)
        walks[st.phase] = wr
        deficit = wr.deficit
        e_tot, t_tot = st.totals()
        if st.phase == Phase.COMPUTE:
            n = st.length
            ledger.add("compute", e_tot - n * cost.backup, t_tot)
            ledger.add("backup", n * cost.backup, 0.0)
        else:
            ledger.add(category[st.phase], e_tot, t_tot)
        dead_e = dead_t = 0.0
        for k, avail in zip(wr.events, wr.available):
            e, tau = st.at(int(k))
            pe, pt = _partial(e, tau, avail * h.converter_efficiency, h)
            dead_e += pe
            dead_t += pt
        n_ev = len(wr.events)
        ledger.add("dead", dead_e, dead_t)
        ledger.add("restore", n_ev * r_e, n_ev * r_t)
        ledger.restarts += n_ev
        charging += n_ev * h.recharge_time
        phases[st.phase.name.lower()] = {"energy": e_tot, "latency": t_tot, "restarts": n_ev}

    report = RunReport(ledger, charging, phases)
    if grid is not None and program is not None:
        _replay_on_grid(report, program, grid, walks.get(Phase.COMPUTE), inputs or {}, io, cost, h, encoder,
                        rng, backend)
    return report


def packet_cost(bits: int, io: IoSpec, cost: CostModel, *, outgoing: bool = False) -> tuple[float, float]:
    """Radio bits plus buffer (incoming) or sense-amplifier (outgoing) traffic and one valid-bit write."""
    local = cost.read if outgoing else cost.write
    return bits * (io.energy_per_bit + local) + cost.write, bits / io.bit_rate


def receive(buffer: PacketBuffer, payload, io: IoSpec, cost: CostModel, *, interrupt_at: int | None = None,
            rng=None) -> tuple[EnergyLedger, bool]:
    """Store missing packets in order; an interruption tears only the packet in flight."""
    ledger = EnergyLedger()
    e, t = packet_cost(buffer.bits_per_packet, io, cost)
    for i, v in enumerate(payload):
        if buffer.valid[i]:
            continue
        if i == interrupt_at:
            buffer.store(i, v, interrupted=True, rng=rng)
            ledger.add("dead", e / 2, t / 2)
            return ledger, False
        buffer.store(i, v)
        ledger.add("io", e, t)
    return ledger, True


def transmit(values, sent: PacketBuffer, io: IoSpec, cost: CostModel, *,
             interrupt_at: int | None = None) -> tuple[list, EnergyLedger, bool]:
    """Send every unsent packet; ``sent.valid`` marks packets already delivered."""
    ledger = EnergyLedger()
    e, t = packet_cost(sent.bits_per_packet, io, cost, outgoing=True)
    radio = []
    for i, v in enumerate(values):
        if sent.valid[i]:
            continue
        if i == interrupt_at:
            ledger.add("dead", e / 2, t / 2)
            return radio, ledger, False
        radio.append((i, int(v)))
        sent.store(i, v)
        ledger.add("io", e, t)
    return radio, ledger, True


def encode_atomic(buffer: PacketBuffer, encoder: EncoderSpec, harvester: HarvesterConfig,
                  write=None, *, available: float | None = None) -> tuple[EnergyLedger, bool]:
    """One indivisible encode; with too little charge the whole attempt is dead and must be retried."""
    if not buffer.completed:
        raise ParameterError("encoding needs a completed receive buffer")
    draw = encoder.units * encoder.energy / harvester.converter_efficiency
    if draw > harvester.usable_energy + harvester.power * encoder.units * encoder.latency:
        raise LivelockError(f"encoding needs {draw:.3g} J but one charge holds {harvester.usable_energy:.3g} J")
    ledger = EnergyLedger()
    e, t = encoder.units * encoder.energy, encoder.units * encoder.latency
    if available is not None and available < draw - harvester.power * t:
        pe, pt = _partial(e, t, available * harvester.converter_efficiency, harvester)
        ledger.add("dead", pe, pt)
        return ledger, False
    if write is not None:
        write()
    ledger.add("encode", e, t)
    return ledger, True


def restart(grid, state: ControllerState, cost: CostModel, clock_hz: float) -> tuple[Phase, int, EnergyLedger]:
    """Resume after recharge: read the valid SR/PC copies and re-activate every array."""
    ledger = EnergyLedger()
    if grid is not None:
        grid.activate_all()
        shape = grid.shape
    else:
        shape = (16, 3, 512)
    ledger.add("restore", cost.restore(shape), 2 / clock_hz)
    ledger.restarts = 1
    return state.phase, state.pc.read(), ledger


def _replay_on_grid(report: RunReport, program, grid, walk: WalkResult | None, inputs: dict, io: IoSpec,
                    cost: CostModel, harvester: HarvesterConfig, encoder: EncoderSpec, rng, backend):
    """Bit-level execution with the walk's interruption points plus one torn packet each way."""
    from .pim.grid import _run_nb, _run_np

    run = pick(_run_nb, _run_np, backend)
    state = ControllerState()
    received = {n: v for n, v in inputs.items() if n.split("@")[0] in program.inputs}
    program.load(grid, {n: v for n, v in inputs.items() if n not in received})

    names = [n for n in program.inputs if n in received]
    payload = [int(received[n]) for n in names]
    buf = PacketBuffer(len(payload), max([io.input_bits] + [v.bit_length() for v in payload]))
    ok = True
    if payload:
        _, done = receive(buf, payload, io, cost, interrupt_at=int(rng.integers(len(payload))), rng=rng)
        ok &= not buf.completed or bool(buf.valid.all())
        while not done:
            _, done = receive(buf, payload, io, cost)
    else:
        buf.completed = True
    state.set_phase(Phase.ENCODE)
    got = dict(zip(names, (int(v) for v in buf.data)))

    def write():
        program.load(grid, {n: got[n.split("@")[0]] for n in received})

    # the first attempt may find a partly charged capacitor
    _, done = encode_atomic(buf, encoder, harvester, write,
                            available=harvester.usable_energy * float(rng.random()))
    while not done:
        _, done = encode_atomic(buf, encoder, harvester, write)
    state.set_phase(Phase.COMPUTE)

    events = [] if walk is None else sorted(int(k) for k in walk.events)
    words = program.words
    ev = 0
    k = 0

    def go(a, b):
        err = run(grid.cells, grid.rp, grid.cp, grid.row_latch, grid.col_latch, words, a, b, grid.size)
        if err >= 0:
            raise ParameterError(f"program wrote a valid bitmask copy at word {err}")

    def power_cycle(step):
        nonlocal ok
        pc_before = state.pc.read()
        # the failure lands during execution, during the PC write, or just before the parity flip
        stage = int(rng.integers(0, 3))
        if stage == 0:
            grid.run_partial(words[step], float(rng.random()), rng, backend=backend)
        else:
            go(step, step + 1)
            bits = int(rng.integers(0, PC_BITS)) if stage == 1 else PC_BITS
            commit_instruction(state, interrupt_after=bits)
        grid.power_loss(rng)
        phase, pc, _ = restart(grid, state, cost, harvester.clock_hz)
        ok &= phase == Phase.COMPUTE and pc == pc_before
        report.reperformed += 1

    for a, b, c in program.schedule:
        a, b = int(a), int(b)
        for _ in range(int(c)):
            pos = a
            while pos < b:
                if ev < len(events) and events[ev] < k + (b - pos):
                    fail = pos + events[ev] - k
                    go(pos, fail)
                    for _ in range(fail - pos):
                        ok &= commit_instruction(state)
                    k += fail - pos
                    while ev < len(events) and events[ev] == k:
                        power_cycle(fail)
                        ev += 1
                    pos = fail
                    continue
                go(pos, b)
                for _ in range(b - pos):
                    ok &= commit_instruction(state)
                k += b - pos
                pos = b
    ok &= state.pc.read() == k % (1 << PC_BITS)

    state.set_phase(Phase.TRANSMIT)
    out_bits = max(program.layout[n].width for n in program.outputs) if program.outputs else io.output_bits
    values = [int(v) for n in program.outputs for v in program.read(grid, n)]
    sent = PacketBuffer(len(values), out_bits)
    radio, _, done = transmit(values, sent, io, cost,
                              interrupt_at=int(rng.integers(len(values))) if values else None)
    while not done:
        more, _, done = transmit(values, sent, io, cost)
        radio += more
    delivered = dict(radio)
    report.transmitted = [delivered[i] for i in range(len(values))]
    state.set_phase(Phase.IDLE)
    report.pc_trace_ok = bool(ok)
    report.snapshot = grid.snapshot()


# ------------------------------------------------------------ sweeps

def overhead_row(power: float, profile: str, report: RunReport) -> dict:
    return {"power_w": power, "profile": profile, "latency_s": report.latency,
            "energy_j": report.energy, "restarts": report.restarts, **report.overheads()}


def sweep(program, powers, profiles=("modern", "projected"), *, io: IoSpec | None = None,
          encoder: EncoderSpec | None = None, peripheral: PeripheralModel | None = None,
          backend=None, **harvester_kw) -> list[dict]:
    rows = []
    for profile in profiles:
        for p in powers:
            h = HarvesterConfig.for_profile(profile, p, **harvester_kw)
            rep = run_episode(program, None, h, io=io, encoder=encoder, profile=profile,
                              peripheral=peripheral, backend=backend)
            rows.append(overhead_row(p, profile, rep))
    return rows


def rows_to_csv(rows) -> str:
    out = _io.StringIO()
    w = csv.DictWriter(out, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    return out.getvalue()
