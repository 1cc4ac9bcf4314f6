"""Energy and latency comparison of local inference, raw offload and nearby encrypted offload."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

from .errors import ParameterError

CIPHERTEXT_BYTES = 2 * 3 * 36 * 4096 // 8


@dataclass(frozen=True)
class Benchmark:
    name: str
    dimension: int
    classes: int
    local_energy: float            # joules for plaintext inference on the sensor
    remote_energy_ref: float       # joules, reference accelerator total
    min_power_ref: float           # watts, reference minimum accelerator power
    option1_ref: float
    option2_ref: float
    extrapolated: bool = False


BENCHMARKS = {
    "mnist": Benchmark("MNIST", 784, 10, 27e-3, 1.188716, 3.36e-3, 15680, 450),
    "har": Benchmark("HAR", 561, 6, 12.5e-3, 0.851282, 4.28e-3, 11220, 208),
    # local energy back-solved from the reference latency at 60 uW
    "adult": Benchmark("ADULT", 14, 2, 8.03 * 60e-6, 0.031736, 11.29e-3, 280, 8.03, extrapolated=True),
}


@dataclass(frozen=True)
class ScenarioConfig:
    e_ft_bit: float = 400e-6
    e_fr_bit: float = 158e-12
    p_f: float = 60e-6
    p_r: float = 3.36e-3
    e_f: float = 27e-3
    e_encrypt: float = 60e-6
    e_decrypt: float = 60e-6
    alpha: float = 0.0
    input_bits: int = 784 * 3
    result_bits: int = 10 * CIPHERTEXT_BYTES * 8
    sensitive_inputs: bool = False

    def __post_init__(self):
        for k in ("e_ft_bit", "e_fr_bit", "p_f", "p_r", "e_f", "e_encrypt", "e_decrypt"):
            if getattr(self, k) < 0:
                raise ParameterError(f"{k} must be non-negative")
        if not 0 <= self.alpha <= 1:
            raise ParameterError("alpha is a probability")
        if self.input_bits < 0 or self.result_bits < 0:
            raise ParameterError("bit counts must be non-negative")

    @property
    def e_ft(self) -> float:
        return self.input_bits * self.e_ft_bit

    @property
    def e_fr(self) -> float:
        return self.input_bits * self.e_fr_bit

    @property
    def e_rf(self) -> float:
        return self.result_bits * self.e_fr_bit

    @classmethod
    def for_benchmark(cls, key: str, **kw) -> "ScenarioConfig":
        b = BENCHMARKS[key.lower()]
        return cls(e_f=b.local_energy, input_bits=3 * b.dimension,
                   result_bits=b.classes * CIPHERTEXT_BYTES * 8, **kw)


def local_beats_remote(cfg: ScenarioConfig) -> tuple[bool, float]:
    """Local inference then sending only interesting samples, against always sending."""
    slack = cfg.e_ft - (cfg.e_f + cfg.alpha * cfg.e_ft)
    return slack > 0, slack


def alpha_threshold(cfg: ScenarioConfig) -> float:
    """Largest interesting-result probability for which local inference still saves energy."""
    if cfg.e_ft == 0:
        raise ParameterError("no transmit cost, so no threshold")
    return 1 - cfg.e_f / cfg.e_ft


def offload_beats_local(cfg: ScenarioConfig) -> tuple[bool, float]:
    """Sensor-side cost of nearby encrypted offload, against local inference."""
    spent = cfg.e_fr + cfg.e_rf + cfg.e_decrypt + (cfg.e_encrypt if cfg.sensitive_inputs else 0.0)
    slack = cfg.e_f - spent
    return slack > 0, slack


@dataclass(frozen=True)
class Latencies:
    option1: float
    option2: float
    option3: float
    min_p_r: float


def latencies(cfg: ScenarioConfig, e_r: float) -> Latencies:
    if cfg.p_f <= 0 or cfg.p_r <= 0:
        raise ParameterError("powers must be positive")
    opt1 = cfg.e_ft / cfg.p_f
    opt2 = cfg.e_f / cfg.p_f
    opt3 = cfg.e_fr / cfg.p_f + (e_r + cfg.e_rf) / cfg.p_r
    budget = opt2 - cfg.e_fr / cfg.p_f
    min_p = (e_r + cfg.e_rf) / budget if budget > 0 else float("inf")
    return Latencies(opt1, opt2, opt3, min_p)


def table3(e_r: dict | None = None, **kw) -> list[dict]:
    """Option latencies and the minimum accelerator power per benchmark, with reference values."""
    rows = []
    for key, b in BENCHMARKS.items():
        cfg = ScenarioConfig.for_benchmark(key, **kw)
        energy = (e_r or {}).get(key, b.remote_energy_ref)
        lat = latencies(cfg, energy)
        rows.append({
            "benchmark": b.name,
            "option1_s": round(lat.option1, 6), "option1_ref_s": b.option1_ref,
            "option2_s": round(lat.option2, 6), "option2_ref_s": b.option2_ref,
            "min_p_r_mw": lat.min_p_r * 1e3, "min_p_r_ref_mw": round(b.min_power_ref * 1e3, 6),
            "min_p_r_dev_pct": 100 * (lat.min_p_r - b.min_power_ref) / b.min_power_ref,
            "remote_energy_j": energy, "result_bytes": cfg.result_bits // 8,
            "extrapolated": b.extrapolated,
        })
    return rows


def format_table3(rows, fmt: str = "text") -> str:
    if fmt == "csv":
        out = io.StringIO()
        w = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return out.getvalue()
    lines = [f"{'benchmark':<10}{'option1 s':>12}{'ref':>9}{'option2 s':>12}{'ref':>9}"
             f"{'min P_R mW':>12}{'ref':>8}{'dev %':>9}"]
    for r in rows:
        star = "*" if r["extrapolated"] else " "
        lines.append(f"{r['benchmark']:<10}{r['option1_s']:>12,.2f}{r['option1_ref_s']:>9,}"
                     f"{r['option2_s']:>12.2f}{r['option2_ref_s']:>8}{star}"
                     f"{r['min_p_r_mw']:>12.3f}{r['min_p_r_ref_mw']:>8.2f}{r['min_p_r_dev_pct']:>+9.1f}")
    lines.append("* local energy back-solved from the reference latency at 60 uW; "
                 "result payload = one ciphertext per class")
    return "\n".join(lines)


def with_alpha(cfg: ScenarioConfig, alpha: float) -> ScenarioConfig:
    return replace(cfg, alpha=alpha)
