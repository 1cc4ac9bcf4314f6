"""Fit the two peripheral constants to reference polynomial-multiply energies.

With raw device energy ``E_k`` and issued instruction count ``I_k`` for two
reference programs, ``(1 + fraction) * E_k + per_instruction * I_k`` is solved
exactly for the two targets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..errors import ParameterError
from .compiler import compile_poly_mult
from .energy import PeripheralModel, _profile_table, mtj_profile

# reference energies in joules for (N, bitwidth) polynomial multiplication
POLYMULT_TARGETS = {(1024, 16): 9.68e-6, (4096, 32): 54.65e-6}
CALIBRATION_PROFILE = "projected"


@dataclass(frozen=True)
class FitResult:
    profile: str
    peripheral: PeripheralModel
    raw: dict
    instructions: dict

    @property
    def physical(self) -> bool:
        return self.peripheral.fraction >= 0 and self.peripheral.per_instruction >= 0

    def predicted(self) -> dict:
        p = self.peripheral
        return {k: self.raw[k] * p.multiplier + self.instructions[k] * p.per_instruction for k in self.raw}


def measure(sizes=tuple(POLYMULT_TARGETS), profile: str = CALIBRATION_PROFILE):
    mtj = mtj_profile(profile)
    raw, instr = {}, {}
    for n, b in sizes:
        prog = compile_poly_mult(n, b)
        raw[(n, b)] = prog.energy(mtj, PeripheralModel())
        instr[(n, b)] = prog.instruction_count()
    return raw, instr


def fit_peripheral(profile: str = CALIBRATION_PROFILE, targets: dict | None = None) -> FitResult:
    targets = targets or POLYMULT_TARGETS
    keys = sorted(targets)
    raw, instr = measure(keys, profile)
    a = np.array([[raw[k], instr[k]] for k in keys])
    y = np.array([targets[k] for k in keys])
    mult, per = np.linalg.solve(a, y)
    if mult <= 0 or per < 0:
        raise ParameterError(
            f"no physical fit on profile {profile!r}: multiplier {mult:.4g}, per-instruction {per:.4g} J")
    return FitResult(profile, PeripheralModel(float(mult - 1.0), float(per)), raw, instr)


def write_profile_table(fit: FitResult, path=None):
    """Freeze the fitted constants into the bundled profile table."""
    path = path or resources.files("hepim.data").joinpath("profiles.json")
    table = json.loads(open(path).read())
    table["peripheral"] = {"fraction": fit.peripheral.fraction,
                           "per_instruction": fit.peripheral.per_instruction}
    table["calibration"] = {"profile": fit.profile,
                            "targets_j": {f"{n},{b}": POLYMULT_TARGETS[(n, b)] for n, b in fit.raw}}
    with open(path, "w") as fh:
        json.dump(table, fh, indent=2)
        fh.write("\n")
    _profile_table.cache_clear()
