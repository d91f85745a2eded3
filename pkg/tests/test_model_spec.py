import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclic_thermo import (AssumptionError, FormFactor, ModelSpec, PeriodicEnvelope, RadialProfile,
                           ReservoirSpec, eval_tilde_f, fermi_occupation, fourier_weight,
                           glued_weight, golden_rule_population, validate_assumptions)
from conftest import two_bath_model

finite = st.floats(-50, 50, allow_nan=False)
betas = st.floats(0.05, 20)


def test_envelope_constructors():
    env = PeriodicEnvelope.cosine(2.0, amplitude=0.5, offset=1.0)
    assert env.window == 1
    assert env.coefficient(0) == 1.0 and env.coefficient(1) == 0.25 and env.coefficient(5) == 0
    assert env(0.0) == pytest.approx(1.5)
    assert env(1.0) == pytest.approx(0.5)
    assert PeriodicEnvelope.constant(3.0, 2.0)(1.234) == 2.0


def test_envelope_rejects_bad_input():
    with pytest.raises(ValueError):
        PeriodicEnvelope(0.0)
    with pytest.raises(ValueError):
        PeriodicEnvelope(1.0, (1.0, 2.0))
    with pytest.raises(ValueError):
        PeriodicEnvelope(1.0, (1.0, 0.0, 2.0), real=True)


@given(st.floats(0, 100), st.integers(-5, 5))
def test_envelope_is_periodic(t, n):
    env = PeriodicEnvelope.from_harmonics(1.7, {0: 0.3, 1: 0.2 + 0.1j, -1: 0.2 - 0.1j, 2: 0.05, -2: 0.05})
    assert env(t + n * 1.7) == pytest.approx(env(t), abs=1e-12)


def test_complex_envelope_and_tilde_f():
    env = PeriodicEnvelope.from_harmonics(2.0, {1: 1.0}, real=False)
    ff = FormFactor(env, RadialProfile(power=1, scale=1.0))
    t = 0.3
    h = env(t)
    assert h == pytest.approx(np.exp(1j * math.pi * t))
    assert eval_tilde_f(ff, 0.5, t) == pytest.approx(h * ff.radial.phi(0.5))
    assert eval_tilde_f(ff, -0.5, t) == pytest.approx(np.conj(h) * ff.radial.phi(0.5))
    # the u < 0 branch of a complex envelope takes |c_{-m}|^2
    assert fourier_weight(ff, 1.0, 0.0, 1, -0.5) == 0.0
    assert fourier_weight(ff, 1.0, 0.0, -1, -0.5) > 0.0


def test_profile_validation():
    with pytest.raises(ValueError):
        RadialProfile(power=-1)
    with pytest.raises(ValueError):
        RadialProfile(kind="lorentzian")
    with pytest.raises(ValueError):
        RadialProfile(kind="tabulated", table_u=(0.0, 1.0), table_phi=(1.0,))
    tab = RadialProfile(kind="tabulated", table_u=(0.0, 1.0, 2.0), table_phi=(0.0, 1.0, 0.0))
    assert tab.phi(0.5) == pytest.approx(0.5)
    assert tab.phi(3.0) == 0.0


@given(betas, finite, st.floats(-30, 30))
def test_fermi_particle_hole_symmetry(beta, mu, x):
    a = fermi_occupation(beta, mu, mu + x)
    b = fermi_occupation(beta, mu, mu - x)
    assert 0.0 <= a <= 1.0
    assert a + b == pytest.approx(1.0, abs=1e-15)


def test_fermi_rejects_bad_input():
    with pytest.raises(ValueError):
        fermi_occupation(-1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        fermi_occupation(1.0, 0.0, np.nan)
    assert fermi_occupation(1e3, 0.0, 1e3) == 0.0


@settings(max_examples=60)
@given(st.floats(0.1, 5), st.floats(0.01, 12))
def test_glued_weight_detailed_balance(beta, u):
    # w(-u) = exp(-beta u) w(u) at mu = 0
    ff = FormFactor(PeriodicEnvelope.constant(1.0), RadialProfile(power=2, scale=4.0))
    w_plus = glued_weight(ff, beta, 0.0, u)
    w_minus = glued_weight(ff, beta, 0.0, -u)
    assert w_minus == pytest.approx(math.exp(-beta * u) * w_plus, rel=1e-12, abs=1e-300)


def test_glued_weight_nonrelativistic_measure():
    prof = RadialProfile(power=0, scale=2.0, measure="nonrelativistic")
    ff = FormFactor(PeriodicEnvelope.constant(1.0), prof)
    u = 1.5
    expect = 0.5 * math.sqrt(u) * prof.phi(u) ** 2 * (1 - fermi_occupation(2.0, 0.0, u))
    assert glued_weight(ff, 2.0, 0.0, u) == pytest.approx(expect, rel=1e-14)


def test_golden_rule_population_static_equilibrium():
    # one static reservoir: the Gibbs population of the upper level
    model = two_bath_model(envelope=PeriodicEnvelope.constant(1.0), betas=(1.3, 1.3))
    p = golden_rule_population(model)
    assert p == pytest.approx(fermi_occupation(1.3, 0.0, model.gap), rel=1e-14)


def test_model_spec_validation():
    res = two_bath_model().reservoirs
    with pytest.raises(ValueError):
        ModelSpec(-1.0, 0.1, res)
    with pytest.raises(ValueError):
        ModelSpec(1.0, 0.1, ())
    with pytest.raises(ValueError):
        ModelSpec(1.0, 0.1, res, initial_population=1.5)
    with pytest.raises(ValueError):
        ReservoirSpec(0.0, 0.0, res[0].form_factor)


def test_assumptions_pass_for_regular_model():
    rep = validate_assumptions(two_bath_model())
    assert rep.ok
    assert set(rep.checks) >= {"A1", "A2", "A3", "parseval"}


def test_assumption_a1_mismatched_periods():
    prof = RadialProfile(power=2, scale=4.0)
    r1 = ReservoirSpec(1.0, 0.0, FormFactor(PeriodicEnvelope.cosine(1.0, 0.5, 1.0), prof))
    r2 = ReservoirSpec(1.0, 0.0, FormFactor(PeriodicEnvelope.cosine(1.5, 0.5, 1.0), prof))
    rep = validate_assumptions(ModelSpec(1.0, 0.1, (r1, r2)))
    assert rep.failed == ["A1"]
    with pytest.raises(AssumptionError) as exc:
        rep.raise_for_failure()
    assert exc.value.failed == ["A1"]


def test_assumption_a3_zero_coupling_at_gap():
    # tabulated profile vanishing around the Bohr frequency
    prof = RadialProfile(kind="tabulated", table_u=(0.0, 1.0, 2.0), table_phi=(0.0, 1.0, 0.0))
    env = PeriodicEnvelope.constant(1.0)
    model = ModelSpec(2.0, 0.1, (ReservoirSpec(1.0, 0.0, FormFactor(env, prof)),))
    rep = validate_assumptions(model)
    assert "A3" in rep.failed
    assert rep.checks["A2"].status == "unverifiable"


def test_report_serializes():
    d = validate_assumptions(two_bath_model()).to_dict()
    assert d["A1"]["status"] == "pass"


@settings(max_examples=80)
@given(st.floats(-15, 15), st.floats(0.1, 5), st.floats(-1, 1), st.integers(-1, 1),
       st.sampled_from(["flat", "nonrelativistic"]))
def test_scalar_and_array_paths_agree(u, beta, mu, m, measure):
    env = PeriodicEnvelope.from_harmonics(1.3, {0: 0.5, 1: 0.3j}, real=False)
    ff = FormFactor(env, RadialProfile(power=3, scale=2.0, amplitude=1.5, measure=measure))
    arr = np.array([u])
    assert fermi_occupation(beta, mu, u) == pytest.approx(fermi_occupation(beta, mu, arr)[0],
                                                         rel=1e-14, abs=1e-300)
    assert fourier_weight(ff, beta, mu, m, u) == pytest.approx(
        fourier_weight(ff, beta, mu, m, arr)[0], rel=1e-13, abs=1e-300)
