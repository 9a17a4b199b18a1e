import json
import math
from dataclasses import replace

import numpy as np
import pytest

from iongrad.analytic import (
    DemkovClosedForm,
    TaggedInfinite,
    adiabatic_signal_force,
    classical_fisher,
    demkov_closed_amplitudes,
    demkov_reduction,
    minimal_detectable,
    qfi_adiabatic,
    qfi_cho,
    squeeze_displace_params,
)
from iongrad.dynamics import AdiabaticRunResult, Trajectory
from iongrad.hilbert import BasisDescriptor, CompositeState
from iongrad.metrology import EstimationReport, qfi_numeric, sld_pure, snr_report
from iongrad.models import ForceField, MagneticField, gyromagnetic_rate


def _demkov_provider(gamma, x, t_f):
    def provider(theta):
        d = DemkovClosedForm(alpha=theta, gamma=gamma, x=x)
        cp, cm = demkov_closed_amplitudes(d, t_f, form="asymptotic")
        return np.array([cp, cm])

    return provider


# ===================== numerical QFI =====================

def test_qfi_numeric_matches_closed_form():
    gamma, x, t_f = 1.0, 2e3, 8.0
    d = DemkovClosedForm(alpha=0.45, gamma=gamma, x=x, dalpha_dF=1.0)
    closed = qfi_adiabatic(d, t_f, "force")
    numeric = qfi_numeric(_demkov_provider(gamma, x, t_f), 0.45, 1e-4)
    assert numeric == pytest.approx(closed, rel=1e-6)


def test_qfi_numeric_guards():
    with pytest.raises(ValueError, match="positive"):
        qfi_numeric(lambda th: np.array([1.0, 0.0]), 0.0, -1.0)
    with pytest.raises(ValueError, match="norm"):
        qfi_numeric(lambda th: np.array([1.0, 1.0]), 0.0, 1e-3)

    def cusp(theta):
        s = math.copysign(math.sqrt(abs(theta)), theta)
        return np.array([math.cos(s), math.sin(s)])

    with pytest.raises(RuntimeError, match="converge"):
        qfi_numeric(cusp, 0.0, 1e-3)


def test_qfi_numeric_accepts_composite_states():
    b = BasisDescriptor(num_spins=1, fock_dims=())

    def provider(theta):
        return CompositeState(
            b, np.array([math.cos(theta), math.sin(theta)], dtype=complex)
        )

    # |psi'> orthogonal to |psi| with unit norm: QFI = 4
    assert qfi_numeric(provider, 0.3, 1e-4) == pytest.approx(4.0, rel=1e-9)


# ===================== SLD =====================

def test_sld_pure_eigenpairs(rng):
    dim = 6
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    raw = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    dpsi = raw - psi * np.vdot(psi, raw)  # orthogonal derivative
    plus, minus, (lp, lm) = sld_pure(psi, dpsi)
    s = math.sqrt(float(np.vdot(dpsi, dpsi).real))
    assert lp == pytest.approx(2.0 * s, rel=1e-12)
    assert lm == pytest.approx(-2.0 * s, rel=1e-12)
    L = 2.0 * (np.outer(psi, dpsi.conj()) + np.outer(dpsi, psi.conj()))
    np.testing.assert_allclose(L @ plus, lp * plus, atol=1e-10)
    np.testing.assert_allclose(L @ minus, lm * minus, atol=1e-10)
    assert abs(np.vdot(plus, minus)) < 1e-12
    assert np.linalg.norm(plus) == pytest.approx(1.0, abs=1e-12)


def test_sld_pure_guards():
    psi = np.array([1.0, 0.0], dtype=complex)
    with pytest.raises(ValueError, match="orthogonal"):
        sld_pure(psi, psi)
    with pytest.raises(ValueError, match="different spaces"):
        sld_pure(psi, np.zeros(3, dtype=complex))
    vp, vm, (lp, lm) = sld_pure(psi, np.zeros(2, dtype=complex))
    assert lp == lm == 0.0


def test_sld_pure_wraps_composite_states():
    b = BasisDescriptor(num_spins=1, fock_dims=())
    psi = CompositeState(b, np.array([1.0, 0.0], dtype=complex))
    dpsi = CompositeState(b, np.array([0.0, 0.5], dtype=complex))
    plus, minus, (lp, lm) = sld_pure(psi, dpsi)
    assert isinstance(plus, CompositeState) and plus.basis == b
    assert lp == pytest.approx(1.0, rel=1e-12)


# ===================== report dispatch =====================

def test_spin_report_from_closed_form(fast_trap):
    f = ForceField(F=(2.0e-23, 9.5e-24), xi=0.0)
    _, s = adiabatic_signal_force(fast_trap, f)
    rep = snr_report(s, {"probe": fast_trap, "perturbation": f, "t_final": 8.0})
    assert rep.parameter == "force_difference"
    assert rep.variance == pytest.approx(1.0 - s * s, rel=1e-12)
    assert rep.snr == pytest.approx(s / math.sqrt(1.0 - s * s), rel=1e-12)
    # on the tanh curve the report's classical Fisher reduces to the
    # closed form, and the hierarchy against the quantum one holds
    assert rep.fisher_classical == pytest.approx(
        classical_fisher(fast_trap, f, "force"), rel=1e-12
    )
    d = demkov_reduction(fast_trap, f=f)
    assert rep.fisher_quantum == pytest.approx(qfi_adiabatic(d, 8.0, "force"), rel=1e-12)
    assert rep.fisher_classical <= rep.fisher_quantum * (1.0 + 1e-12)
    assert rep.cramer_rao_bound == pytest.approx(1.0 / rep.fisher_classical, rel=1e-12)
    assert rep.min_detectable == pytest.approx(
        minimal_detectable(fast_trap, "force_adiabatic"), rel=1e-12
    )
    assert rep.units["min_detectable"] == "N"
    assert "jointly" in rep.caveat


def test_spin_report_magnetic(fast_trap):
    b = MagneticField(B0=0.0, Bprime=5e-5, z_positions=(2e-5, -2e-5))
    rep = snr_report(0.2, {
        "probe": fast_trap, "perturbation": b,
        "parameter": "magnetic_gradient", "n_experiments": 100,
    })
    dz = 4e-5
    slope = gyromagnetic_rate(2.0) * dz / 1e3
    expect_cl = (math.pi * slope / (2.0 * fast_trap.gamma)) ** 2 * (1.0 - 0.04)
    assert rep.fisher_classical == pytest.approx(expect_cl, rel=1e-12)
    assert rep.cramer_rao_bound == pytest.approx(1.0 / (100 * expect_cl), rel=1e-12)
    assert rep.min_detectable == pytest.approx(
        minimal_detectable(fast_trap, "magnetic", b=b), rel=1e-12
    )
    assert rep.units["min_detectable"] == "T/m"
    assert rep.caveat == ""


def test_spin_report_rejects_saturated_signal():
    with pytest.raises(ValueError, match="signal"):
        snr_report(1.0, {})
    with pytest.raises(ValueError, match="signal"):
        snr_report(-1.2, {})


def test_report_from_run_result(fast_trap):
    res = AdiabaticRunResult(
        sigma_z=(0.6, -0.6), p_up=(0.8, 0.2),
        collective_probs={}, trajectory=None, t_final=8.0,
    )
    rep = snr_report(res)
    assert rep.signal == pytest.approx(0.6)
    assert rep.fisher_classical is None and rep.min_detectable is None


def test_phonon_report_from_squeeze_params(phonon_probe, phonon_force):
    sd = squeeze_displace_params(phonon_probe, phonon_force, "rock")
    rep = snr_report(sd, {
        "probe": phonon_probe, "phi": phonon_probe.phi[0], "xi": phonon_force.xi,
    })
    n_star = 4.0 * abs(sd.alpha) ** 2
    assert rep.signal == pytest.approx(n_star, rel=1e-10)
    assert rep.variance == pytest.approx(n_star, rel=1e-10)
    assert rep.snr == pytest.approx(math.sqrt(n_star), rel=1e-10)
    assert rep.fisher_quantum == pytest.approx(
        qfi_cho(sd, "force", phi=phonon_probe.phi[0], xi=phonon_force.xi), rel=1e-12
    )
    assert rep.min_detectable == pytest.approx(
        minimal_detectable(phonon_probe, "force_cho", mode="rock"), rel=1e-12
    )
    assert rep.units["signal"] == "phonons"


def test_phonon_report_at_other_times(phonon_probe, phonon_force):
    sd = squeeze_displace_params(phonon_probe, phonon_force, "com")
    rep = snr_report(sd, {"time": 0.4 * sd.t_star})
    assert rep.signal > 0.0
    assert rep.snr == pytest.approx(rep.signal / math.sqrt(rep.variance), rel=1e-12)


def test_trajectory_report_paths():
    traj = Trajectory(
        times=np.array([0.0, 1.0]),
        labels=("n", "n2"),
        observable_values=np.array([[0.0, 0.0], [0.5, 0.75]]),
        imag_residuals=np.zeros(2),
        final_state=None,
        norm_drift=0.0,
        norm_drift_series=np.zeros(2),
    )
    rep = snr_report(traj, {"signal_label": "n", "square_label": "n2"})
    assert rep.signal == pytest.approx(0.5)
    assert rep.variance == pytest.approx(0.5)
    spin = snr_report(traj, {"signal_label": "n"})
    assert spin.variance == pytest.approx(0.75)
    with pytest.raises(ValueError, match="signal_label"):
        snr_report(traj, {})
    with pytest.raises(ValueError, match="degenerate phonon"):
        snr_report(
            Trajectory(
                times=np.array([0.0]), labels=("n", "n2"),
                observable_values=np.array([[0.5, 0.25]]),
                imag_residuals=np.zeros(2), final_state=None,
                norm_drift=0.0, norm_drift_series=np.zeros(1),
            ),
            {"signal_label": "n", "square_label": "n2"},
        )
    with pytest.raises(TypeError):
        snr_report(object())


# ===================== serialization =====================

def test_report_packs_divergent_information(phonon_probe, phonon_force):
    sd = squeeze_displace_params(phonon_probe, phonon_force, "rock")
    sd_crit = replace(sd, zeta_sq=1.0 - 1e-10)
    rep = snr_report(sd_crit, {"probe": phonon_probe})
    assert isinstance(rep.fisher_quantum, TaggedInfinite)
    assert rep.cramer_rao_bound is None
    packed = rep.to_dict()
    assert packed["fisher_quantum"]["infinite"] is True
    assert "zeta" in packed["fisher_quantum"]["reason"]
    loaded = json.loads(rep.to_json())
    assert loaded["fisher_quantum"]["infinite"] is True


def test_report_json_is_plain_data():
    rep = EstimationReport(parameter="force_difference", signal=0.3,
                           variance=0.91, snr=0.3145)
    loaded = json.loads(rep.to_json())
    assert loaded["parameter"] == "force_difference"
    assert loaded["fisher_classical"] is None
    assert loaded["n_experiments"] == 1
