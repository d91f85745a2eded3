import math

import numpy as np
import pytest

from cyclic_thermo import (FormFactor, ModelSpec, PeriodicEnvelope, RadialProfile, ReservoirSpec,
                           discretize, entropy_production_rate, heat_flux, propagate_covariance,
                           relative_entropy, simulate, thermal_covariance)
from cyclic_thermo.discretization import RecurrenceWarning
from cyclic_thermo.dynamics import (initial_entropy, load_snapshot, period_propagator,
                                    reservoir_energies, save_snapshot)
from cyclic_thermo.fock import FockSpace, fock_trajectory, propagate_fock_oracle, thermal_fock_state
from conftest import two_bath_model

# the oracle-sized baths recur within a few periods by construction
pytestmark = pytest.mark.filterwarnings("ignore::cyclic_thermo.discretization.RecurrenceWarning")


def one_mode_dm(g=0.3):
    env = PeriodicEnvelope.constant(1.0)
    prof = RadialProfile(power=0, scale=10.0)
    model = ModelSpec(1.0, g, (ReservoirSpec(50.0, 0.0, FormFactor(env, prof)),), 1.0)
    return discretize(model, M=1, u_max=6.0)


def test_rabi_oscillation():
    dm = one_mode_dm()
    lam = abs(dm.couplings(0.0)[0])
    det = 2.0 - 3.0
    Om = math.sqrt(det ** 2 + 4 * lam ** 2)
    st = thermal_covariance(dm)
    for t in (0.4, 1.3, 2.9):
        out = propagate_covariance(dm, st, 0.0, t, 0.01)
        p = 1 - 4 * lam ** 2 / Om ** 2 * math.sin(Om * t / 2) ** 2
        assert out.gamma[0, 0].real == pytest.approx(p, abs=1e-12)
        assert out.trace() == pytest.approx(st.trace(), abs=1e-13)


def test_zero_coupling_is_trivial(small_model):
    dm = discretize(small_model.replace(g=0.0, initial_population=0.3), M=6, u_max=12.0)
    tr = simulate(dm, 3, 64, 8)
    np.testing.assert_allclose(tr.entropy, initial_entropy(0.3), atol=1e-14)
    assert np.max(np.abs(tr.energies - tr.energies[0])) <= 1e-13
    assert np.all(tr.flux == 0)


def test_fock_oracle_agrees(tiny_dm):
    fk = fock_trajectory(tiny_dm, 2, steps_per_cycle=32, samples_per_cycle=4)
    tr = simulate(tiny_dm, 2, 32, 4, detail="all")
    np.testing.assert_allclose(tr.times, fk["times"], atol=1e-13)
    np.testing.assert_allclose(tr.energies, fk["energies"], atol=1e-10)
    np.testing.assert_allclose(tr.population, fk["population"], atol=1e-10)
    np.testing.assert_allclose(tr.entropy, fk["entropy"], atol=1e-10)


def test_fock_single_step(tiny_dm):
    space = FockSpace(tiny_dm)
    rho = thermal_fock_state(tiny_dm, space=space)
    assert rho.trace() == pytest.approx(1.0)
    out = propagate_fock_oracle(tiny_dm, rho, 0.0, 0.5, 0.05)
    assert out.trace() == pytest.approx(1.0, abs=1e-12)
    cov = propagate_covariance(tiny_dm, thermal_covariance(tiny_dm), 0.0, 0.5, 0.05)
    d = out.diagonal()
    assert float(d @ space.spin_up) == pytest.approx(cov.gamma[0, 0].real, abs=1e-11)


def test_fock_size_limit(small_model):
    with pytest.raises(ValueError):
        FockSpace(discretize(small_model, M=8, u_max=12.0))


def test_period_propagator_is_unitary(tiny_dm):
    W, defect = period_propagator(tiny_dm, 64)
    assert defect < 1e-12
    np.testing.assert_allclose(W @ W.conj().T, np.eye(tiny_dm.N), atol=1e-12)


def test_trajectory_invariants(tiny_dm):
    tr = simulate(tiny_dm, 3, 64, 8, detail="all")
    assert tr.balance_residual() < 1e-6
    assert tr.entropy.min() >= -1e-10
    np.testing.assert_allclose(tr.trace, tr.trace[0], atol=1e-12)
    assert tr.meta["spectrum_min"] >= -1e-12 and tr.meta["spectrum_max"] <= 1 + 1e-12
    assert tr.detailed_cycles() == [0, 1, 2]
    assert tr.boundary_values("entropy").shape == (4,)


def test_boundaries_match_direct_propagation(tiny_dm):
    tr = simulate(tiny_dm, 2, 64, 4, detail="none")
    st = propagate_covariance(tiny_dm, thermal_covariance(tiny_dm), 0.0, 2 * tiny_dm.period,
                              tiny_dm.period / 64)
    E, _ = reservoir_energies(tiny_dm, st.gamma)
    np.testing.assert_allclose(tr.boundary_values("energies")[-1], E, atol=1e-11)


def test_flux_integrates_to_energy_change(tiny_dm):
    tr = simulate(tiny_dm, 1, 512, 128, detail="all")
    idx = tr.cycle_samples(0)
    from scipy.integrate import simpson
    for i in range(2):
        q = simpson(tr.flux[idx, i], x=tr.times[idx])
        assert q == pytest.approx(-(tr.energies[idx[-1], i] - tr.energies[0, i]), abs=1e-6)  # midpoint-rule error O(dt^2)


def test_interpolating_accessors(tiny_dm):
    tr = simulate(tiny_dm, 1, 64, 8)
    t = tr.times[3]
    assert heat_flux(tr, 1, t) == tr.flux[3, 1]
    assert relative_entropy(tr, t) == tr.entropy[3]
    assert entropy_production_rate(tr, t) == tr.ep[3]
    with pytest.raises(IndexError):
        heat_flux(tr, 2, t)
    with pytest.raises(ValueError):
        relative_entropy(tr, 10 * tr.period)


def test_step_doubling_and_recurrence_warning(tiny_dm):
    with pytest.warns(RecurrenceWarning):
        tr = simulate(tiny_dm, 4, 64, 8, step_doubling=True)
    assert not tr.meta["horizon_below_recurrence"]
    assert 0 < tr.meta["step_doubling_error"] < 1e-3


def test_simulate_argument_checks(tiny_dm):
    with pytest.raises(ValueError):
        simulate(tiny_dm, 0)
    with pytest.raises(ValueError):
        simulate(tiny_dm, 1, 64, 7)


def test_snapshot_round_trip(tmp_path, tiny_dm):
    tr = simulate(tiny_dm, 1, 64, 8)
    path = tmp_path / "s.bin"
    save_snapshot(path, tr.final_state, {"note": "x"})
    st, header = load_snapshot(path)
    np.testing.assert_array_equal(st.gamma, tr.final_state.gamma)
    assert st.time == tr.final_state.time and header["note"] == "x"
    # a restarted run continues the original one
    tr2 = simulate(tiny_dm, 1, 64, 8, initial=st)
    full = simulate(tiny_dm, 2, 64, 8)
    np.testing.assert_allclose(tr2.final_state.gamma, full.final_state.gamma, atol=1e-13)


def test_snapshot_rejects_corruption(tmp_path, tiny_dm):
    path = tmp_path / "s.bin"
    save_snapshot(path, thermal_covariance(tiny_dm))
    raw = path.read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"NOTSNAPS" + raw[8:])
    with pytest.raises(ValueError, match="magic"):
        load_snapshot(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-16])
    with pytest.raises(ValueError, match="truncated"):
        load_snapshot(tmp_path / "short.bin")


def test_trajectory_csv(tmp_path, tiny_dm):
    tr = simulate(tiny_dm, 1, 64, 8)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_bytes().split(b"\r\n")
    assert lines[0].decode().split(",") == tr.columns()
    assert len(lines) == len(tr.times) + 2
