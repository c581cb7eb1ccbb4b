import math

import numpy as np
import pytest

from langevin_anneal.schedules import (AnnealSchedule, LogPowerSchedule, PlateauSchedule, StepSequence,
                                       varpi_estimate, varpi_profile)


def test_anneal_examples():
    s = AnnealSchedule(2.0)
    assert s.a_of(0.0) == 2.0
    assert s.a_of(math.e**2 - math.e) == pytest.approx(2 / math.sqrt(2), rel=1e-12)
    assert s.a_of(1e6) < s.a_of(1e3)


def test_plateau_examples():
    p = PlateauSchedule(C_T=10.0, beta=1.0, A=1.0)
    assert p.plateau_times(1)[0] == 10.0
    assert p.plateau_times(4)[0] == 160.0
    n = np.arange(10, 10**4 + 1)
    d = p.a_n(n) - p.a_n(n + 1)
    assert np.all(d > 0)
    band = n * np.log(n) ** 1.5 * d
    assert band.max() / band.min() < 3


def test_plateau_levels_match_schedule():
    p = PlateauSchedule(C_T=2.0, beta=1.0, A=1.5)
    for n in range(1, 30):
        T, a = p.plateau_times(n)
        assert a == float(AnnealSchedule(1.5).a_of(T))
        # the level held on [T_{n-1}, T_n) is a_n
        assert p.level(T - 1e-9) == pytest.approx(a)
        assert p.level(T) == float(p.a_n(n + 1))
    ts = np.linspace(0, 500, 1001)
    np.testing.assert_array_equal(p.levels(ts), [p.level(t) for t in ts])


def test_negative_control_decays_faster():
    ts = np.array([10.0, 1e3, 1e6])
    assert np.all(LogPowerSchedule(1.0, 1.0).a_of(ts) < AnnealSchedule(1.0).a_of(ts))


def test_step_examples():
    h = StepSequence("harmonic", 1.0)
    assert h.gamma(3) == pytest.approx(1 / 3)
    assert h.N_of(1.4) == 1
    assert h.Gamma(1) == 1.0 and h.Gamma(2) == 1.5
    p = StepSequence("power", 1.0, 0.6)
    assert p.Gamma(10**6) > 100


def test_N_of_inverts_Gamma():
    s = StepSequence("power", 0.3, 0.7)
    for k in range(0, 2000, 37):
        assert s.N_of(float(s.Gamma(k))) == k
        if k > 0:
            t = 0.5 * (s.Gamma(k) + s.Gamma(k + 1))
            assert s.Gamma(s.N_of(t)) <= t < s.Gamma(s.N_of(t) + 1)


def test_varpi_power_and_harmonic_agree():
    a = StepSequence("power", 1.0, 1.0)
    b = StepSequence("harmonic", 1.0)
    n = np.arange(1, 5000)
    np.testing.assert_allclose(varpi_profile(a, n), varpi_profile(b, n), rtol=0, atol=1e-12)


def test_varpi_power_small_and_decreasing():
    s = StepSequence("power", 1.0, 0.6)
    assert varpi_estimate(s, 10**5) <= 0.01
    assert varpi_estimate(s, 10**5) < varpi_estimate(s, 10**4)


def test_varpi_harmonic_is_inverse_gamma1():
    # (gamma_n - gamma_{n+1}) / gamma_{n+1}^2 = (n + 1) / (n gamma1) -> 1 / gamma1
    for g1 in (0.5, 1.0, 2.0):
        assert varpi_estimate(StepSequence("harmonic", g1), 10**5) == pytest.approx(1 / g1, rel=1e-4)


def test_gamma_at_plateau_ends_vanishes():
    p = PlateauSchedule(C_T=1.0, beta=1.0, A=1.0)
    n = np.arange(10, 1001, 10)
    for s in (StepSequence("harmonic", 0.5), StepSequence("power", 0.5, 0.6)):
        # log of gamma_{N(T_n)} * n^(1+beta); N(T_n) is far beyond any table here
        log_prod = np.array([s.log_gamma_at(float(p.T(k))) + 2 * math.log(k) for k in n])
        assert np.all(np.diff(log_prod) < 0)
        assert log_prod[-1] < log_prod[0] - 1


@pytest.mark.parametrize("seq", [StepSequence("power", 0.5, 0.6), StepSequence("power", 0.04, 0.51),
                                 StepSequence("harmonic", 0.5), StepSequence("constant", 0.1)])
def test_step_count_estimate_matches_table(seq):
    for t in (3.05, 50.3, 300.7):
        try:
            N = seq.N_of(t)
        except OverflowError:
            continue
        assert math.exp(seq.log_N_estimate(t)) == pytest.approx(N, abs=1.0)
        assert seq.log_gamma_at(t) == pytest.approx(math.log(seq.gamma(max(N, 1))), abs=1e-6)


def test_N_of_refuses_huge_tables():
    with pytest.raises(OverflowError):
        StepSequence("harmonic", 0.5).N_of(50.0)


def test_conditions():
    assert StepSequence("power", 1.0, 0.6).violations() == []
    assert "sum of gamma_n^2 diverges" in StepSequence("power", 1.0, 0.4).violations()
    assert StepSequence("constant", 0.1).conditions()["decreasing_to_zero"] is False
