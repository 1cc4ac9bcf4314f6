import pytest
from hypothesis import given
from hypothesis import strategies as st

from hepim.errors import ParameterError
from hepim.offload import (BENCHMARKS, CIPHERTEXT_BYTES, ScenarioConfig, alpha_threshold, format_table3,
                           latencies, local_beats_remote, offload_beats_local, table3, with_alpha)


def test_ciphertext_size():
    # two polynomials, three 36-bit residues, 4096 coefficients
    assert CIPHERTEXT_BYTES == 110_592


def test_option_latencies():
    rows = {r["benchmark"]: r for r in table3()}
    assert rows["MNIST"]["option1_s"] == 15_680
    assert rows["HAR"]["option1_s"] == 11_220
    assert rows["ADULT"]["option1_s"] == 280
    assert rows["MNIST"]["option2_s"] == 450
    assert rows["HAR"]["option2_s"] == pytest.approx(208.33, abs=5e-3)


def test_result_radio_energy():
    cfg = ScenarioConfig.for_benchmark("mnist")
    assert cfg.result_bits == 10 * 110_592 * 8
    assert cfg.e_rf == pytest.approx(1.398e-3, rel=1e-3)


def test_min_accelerator_power_balances_option2():
    cfg = ScenarioConfig.for_benchmark("har")
    e_r = BENCHMARKS["har"].remote_energy_ref
    lat = latencies(cfg, e_r)
    at_min = latencies(ScenarioConfig.for_benchmark("har", p_r=lat.min_p_r), e_r)
    assert at_min.option3 == pytest.approx(at_min.option2)


def test_alpha_threshold_eight_bit_inputs():
    cfg = ScenarioConfig(input_bits=784 * 8)
    assert alpha_threshold(cfg) == pytest.approx(1 - 27e-3 / (784 * 8 * 400e-6))
    assert round(alpha_threshold(cfg), 5) == 0.98924


@given(st.floats(0, 1))
def test_local_decision_flips_at_threshold(alpha):
    cfg = ScenarioConfig.for_benchmark("mnist")
    a_star = alpha_threshold(cfg)
    wins, _ = local_beats_remote(with_alpha(cfg, alpha))
    if abs(alpha - a_star) > 1e-9:
        assert wins == (alpha < a_star)


@given(st.floats(1e-12, 1e-9), st.floats(1e-12, 1e-9))
def test_offload_slack_decreases_with_radio_cost(lo, hi):
    lo, hi = sorted((lo, hi))
    a = offload_beats_local(ScenarioConfig(e_fr_bit=lo))[1]
    b = offload_beats_local(ScenarioConfig(e_fr_bit=hi))[1]
    assert b <= a


def test_sensitive_inputs_pay_for_encryption():
    plain = offload_beats_local(ScenarioConfig())[1]
    secret = offload_beats_local(ScenarioConfig(sensitive_inputs=True))[1]
    assert plain - secret == pytest.approx(60e-6)


def test_no_budget_gives_infinite_power():
    cfg = ScenarioConfig(e_f=0.0)
    assert latencies(cfg, 1.0).min_p_r == float("inf")


@pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(p_f=-1), dict(input_bits=-1)])
def test_validation(kw):
    with pytest.raises(ParameterError):
        ScenarioConfig(**kw)


def test_zero_transmit_threshold():
    with pytest.raises(ParameterError):
        alpha_threshold(ScenarioConfig(input_bits=0))


def test_table_formats():
    rows = table3()
    text = format_table3(rows)
    assert "MNIST" in text and "ADULT" in text
    csv_text = format_table3(rows, "csv")
    assert csv_text.splitlines()[0].startswith("benchmark,option1_s")
    assert len(csv_text.splitlines()) == 4
