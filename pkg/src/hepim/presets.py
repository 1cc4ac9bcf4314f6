"""Named parameter sets shipped with the package.

``paper`` is the full-size configuration (N=4096, three 36-bit primes).
``desk`` keeps BFV correct for the SVM pipeline while staying small enough
for bit-level grid simulation.  ``tiny`` (N=16, one 13-bit prime) is for
on-grid NTT work and for running the noise budget dry.
"""

import json
from functools import lru_cache
from importlib import resources

from .bfv import EncryptionParams, make_params
from .errors import ParameterError


@lru_cache(maxsize=None)
def preset_table() -> dict:
    with resources.files("hepim.data").joinpath("presets.json").open() as fh:
        return json.load(fh)


@lru_cache(maxsize=None)
def load_preset(name: str) -> EncryptionParams:
    table = preset_table()
    if name not in table:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return make_params(**table[name])
