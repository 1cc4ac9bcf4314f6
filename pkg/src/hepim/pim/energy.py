"""Per-operation energy of thresholded MTJ logic, plus the energy ledger.

A gate drives a bias voltage across (inputs in parallel) in series with the
output device.  The voltage sits halfway between the smallest current that
must switch the output and the largest current that must not; one driven line
then costs ``V * I * t_switch`` with ``I`` taken at the switching corner.
Peripheral circuitry adds a multiplicative share plus a fixed energy per
issued driver instruction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from ..errors import ParameterError
from .isa import FANIN, GATES, Op

CATEGORIES = ("compute", "io", "encode", "dead", "restore", "backup")


@dataclass(frozen=True)
class MtjParams:
    name: str
    r_p: float
    r_ap: float
    t_switch: float
    i_switch: float

    def __post_init__(self):
        if not self.r_ap > self.r_p > 0:
            raise ParameterError("need R_AP > R_P > 0")
        if self.t_switch <= 0 or self.i_switch <= 0:
            raise ParameterError("switching time and current must be positive")


@dataclass(frozen=True)
class PeripheralModel:
    fraction: float = 0.0
    per_instruction: float = 0.0

    def __post_init__(self):
        if self.fraction <= -1 or self.per_instruction < 0:
            raise ParameterError("peripheral multiplier must stay positive and the fixed term >= 0")

    @property
    def multiplier(self) -> float:
        return 1.0 + self.fraction


@lru_cache(maxsize=None)
def _profile_table() -> dict:
    with resources.files("hepim.data").joinpath("profiles.json").open() as fh:
        return json.load(fh)


def profile_names() -> tuple[str, ...]:
    return tuple(_profile_table()["profiles"])


def mtj_profile(name: str) -> MtjParams:
    try:
        p = _profile_table()["profiles"][name]
    except KeyError:
        raise ParameterError(f"unknown MTJ profile {name!r}") from None
    return MtjParams(name, **p["mtj"])


def profile_settings(name: str) -> dict:
    """Harvester voltages and clock for a profile."""
    if name not in _profile_table()["profiles"]:
        raise ParameterError(f"unknown MTJ profile {name!r}")
    return {k: v for k, v in _profile_table()["profiles"][name].items() if k != "mtj"}


def default_peripheral() -> PeripheralModel:
    return PeripheralModel(**_profile_table()["peripheral"])


def _parallel(*rs: float) -> float:
    return 1.0 / sum(1.0 / r for r in rs)


def gate_bias(gate: Op, fanin: int, mtj: MtjParams) -> tuple[float, float]:
    """``(V_gate, I at the switching corner)`` for a gate with ``fanin`` inputs."""
    if gate not in GATES:
        raise ParameterError(f"{gate!r} is not a logic gate")
    if gate == Op.NOT:
        fanin = 1
    if fanin < 1:
        raise ParameterError("fanin must be at least 1")
    r_out = mtj.r_ap if gate in (Op.AND, Op.OR) else mtj.r_p
    if gate == Op.NOT:
        r_sw, r_hold = mtj.r_p, mtj.r_ap
    elif gate in (Op.NAND, Op.AND):
        # switches when any input is 0; weakest switching case has a single 0
        r_sw = _parallel(mtj.r_p, *[mtj.r_ap] * (fanin - 1))
        r_hold = mtj.r_ap / fanin
    else:
        # switches only when every input is 0; strongest holding case has a single 1
        r_sw = mtj.r_p / fanin
        r_hold = _parallel(mtj.r_ap, *[mtj.r_p] * (fanin - 1))
    r_sw, r_hold = r_sw + r_out, r_hold + r_out
    v = mtj.i_switch * (r_sw + r_hold) / 2
    return v, v / r_sw


def write_energy(mtj: MtjParams) -> float:
    """Raw energy to write one cell (presets, mask cells, controller registers)."""
    return mtj.i_switch ** 2 * (mtj.r_p + mtj.r_ap) / 2 * mtj.t_switch


def read_energy(mtj: MtjParams) -> float:
    """Raw energy to sense one cell; read current is half the switching current."""
    return (mtj.i_switch / 2) ** 2 * (mtj.r_p + mtj.r_ap) / 2 * mtj.t_switch


def raw_line_energy(op: Op, mtj: MtjParams, fanin: int | None = None) -> float:
    if op in GATES:
        v, i = gate_bias(op, fanin or FANIN[op], mtj)
        return v * i * mtj.t_switch
    if op in (Op.PRESET0, Op.PRESET1):
        return write_energy(mtj)
    return read_energy(mtj)  # ACTIVATE senses the mask line into the latch


def gate_energy(gate: Op, fanin: int, mtj: MtjParams, peripheral: PeripheralModel,
                lines: int = 1) -> float:
    """Energy of one gate over ``lines`` driven lines, peripheral share included."""
    if lines <= 0:
        return 0.0
    v, i = gate_bias(gate, fanin, mtj)
    return lines * v * i * mtj.t_switch * peripheral.multiplier


def opcode_line_table(mtj: MtjParams) -> np.ndarray:
    """Raw per-line energy indexed by opcode value."""
    return np.array([raw_line_energy(Op(k), mtj) for k in range(8)])


@dataclass
class EnergyLedger:
    energy: dict = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0.0))
    latency: dict = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0.0))
    restarts: int = 0

    def add(self, category: str, joules: float = 0.0, seconds: float = 0.0):
        if category not in self.energy:
            raise KeyError(f"unknown ledger category {category!r}")
        if joules < 0 or seconds < 0:
            raise ValueError("ledger entries never decrease")
        self.energy[category] += joules
        self.latency[category] += seconds

    @property
    def total_energy(self) -> float:
        return sum(self.energy.values())

    @property
    def total_latency(self) -> float:
        return sum(self.latency.values())

    def percent_of_compute(self, category: str, *, latency: bool = False) -> float:
        table = self.latency if latency else self.energy
        base = table["compute"]
        return 100.0 * table[category] / base if base else 0.0

    def merge(self, other: "EnergyLedger"):
        for k in CATEGORIES:
            self.add(k, other.energy[k], other.latency[k])
        self.restarts += other.restarts
