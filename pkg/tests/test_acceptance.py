"""End-to-end checks of every closed form against direct integration.

One test per advertised guarantee, in a fixed order. The heavy grids run
at sped-up parameters that preserve the dimensionless groups controlling
the physics (drive amplitude per unit decay rate, coupling per mode
frequency, signal argument per unit decay), so each grid finishes in
minutes while probing the same regime as the slow reference points.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from iongrad.analytic import (
    DemkovClosedForm,
    TaggedInfinite,
    adiabatic_signal_force,
    adiabatic_signal_magnetic,
    classical_fisher,
    demkov_closed_amplitudes,
    demkov_reduction,
    force_asymmetry,
    kappa_star_solve,
    mean_phonon_signal,
    minimal_detectable,
    qfi_adiabatic,
    qfi_cho,
    squeeze_displace_params,
)
from iongrad.dynamics import (
    PropagationConfig,
    adiabatic_protocol_run,
    demkov_integrate,
    propagate,
)
from iongrad.hilbert import annihilation_op, basis_state
from iongrad.metrology import qfi_numeric
from iongrad.models import (
    ForceField,
    MagneticField,
    ProbeParams,
    build_effective_bosonic,
    build_force_term,
    build_rabi_lattice,
    transverse_ground_state,
)
from iongrad.specfun import complex_digamma, complex_gamma


# Fast two-ion trap: ten times the decay rate and five times the mode
# frequencies of the slow reference point, with forces scaled to keep
# the tanh argument unchanged.
def _fast_probe(phi=0.0, **kw):
    base = dict(
        num_ions=2, omega0=8250.0, gamma=1.0, delta=350.0, kappa=60.0,
        g=62.5, phi=phi, x0=14.5e-9, n_max=6,
    )
    base.update(kw)
    return ProbeParams(**base)


def _endpoint(probe, perturbation, t_final, tolerance=1e-5):
    cfg = PropagationConfig(
        t_final=t_final, tolerance=tolerance, record_stride=4
    )
    return adiabatic_protocol_run(probe, perturbation, cfg=cfg)


@pytest.fixture(scope="module")
def force_grid():
    """Spin-readout runs over a 16-point phi grid for two force pairs."""
    pairs = ((3.78e-23, 9.5e-24), (2.84e-23, 9.5e-24))
    phis = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
    t0 = time.perf_counter()
    runs = []
    for pair in pairs:
        f = ForceField(F=pair, xi=0.98 * math.pi)
        for phi in phis:
            p = _fast_probe(phi=phi)
            res = _endpoint(p, f, t_final=10.0)
            _, closed = adiabatic_signal_force(p, f)
            runs.append(
                {
                    "pair": pair,
                    "phi": phi,
                    "sigma": (res.sigma_z[0], res.sigma_z[1]),
                    "closed": closed,
                    "drift": res.trajectory.norm_drift,
                }
            )
    return {"runs": runs, "elapsed": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def magnetic_grid():
    """Spin-readout runs over a decay-rate sweep for three gradients."""
    gammas = (0.5, 0.7, 0.9, 1.1, 1.3, 1.5)
    bprimes = (4e-5, 5e-5, 6e-5)
    t0 = time.perf_counter()
    runs = []
    for bp in bprimes:
        b = MagneticField(
            B0=1e-8, Bprime=bp, z_positions=(-2e-5, 2e-5), gJ=2.0
        )
        for gamma in gammas:
            p = _fast_probe(gamma=gamma, n_max=7)
            res = _endpoint(p, b, t_final=10.0 / gamma)
            closed = adiabatic_signal_magnetic(p, b)
            runs.append(
                {
                    "gamma": gamma,
                    "bprime": bp,
                    "sigma": (res.sigma_z[0], res.sigma_z[1]),
                    "closed": closed,
                    "drift": res.trajectory.norm_drift,
                }
            )
    return {"runs": runs, "elapsed": time.perf_counter() - t0}


def test_01_force_signal_tracks_closed_form_over_phase_grid(force_grid):
    devs = [abs(r["sigma"][0] - r["closed"]) for r in force_grid["runs"]]
    assert len(devs) == 32
    assert max(devs) <= 0.05
    # the closed form actually varies over the grid; the match is not a
    # comparison of constants
    closed = [r["closed"] for r in force_grid["runs"]]
    assert max(closed) - min(closed) > 0.5
    assert force_grid["elapsed"] < 600.0


def test_02_magnetic_signal_tracks_closed_form_and_rejects_offset(magnetic_grid):
    devs = [abs(r["sigma"][0] - r["closed"]) for r in magnetic_grid["runs"]]
    assert len(devs) == 18
    assert max(devs) <= 0.05

    # the closed form does not depend on the uniform offset: the offset
    # cancels in the detuning difference, so only the rounding of the
    # sum B0 + Bprime z survives
    p = _fast_probe(n_max=7)
    base = MagneticField(B0=0.0, Bprime=5e-5, z_positions=(-2e-5, 2e-5), gJ=2.0)
    s0 = adiabatic_signal_magnetic(p, base)
    for b0 in (1e-9, 1e-7, 1e-6):
        s = adiabatic_signal_magnetic(p, replace(base, B0=b0))
        assert s == pytest.approx(s0, abs=1e-12)

    # simulated offset rejection needs the two-state gap to dominate the
    # offset detuning, hence the stiffer trap here
    t0 = time.perf_counter()
    strong = _fast_probe(
        delta=7350.0, kappa=2450.0, g=1715.0, n_max=7
    )
    shifted = []
    with pytest.warns(UserWarning, match="drive amplitude"):
        for b0 in (1e-8, 1e-8 + 1e-6):
            b = MagneticField(
                B0=b0, Bprime=5e-5, z_positions=(-2e-5, 2e-5), gJ=2.0
            )
            res = _endpoint(strong, b, t_final=8.0)
            shifted.append(res.sigma_z[0])
    assert abs(shifted[1] - shifted[0]) <= 0.02
    elapsed = magnetic_grid["elapsed"] + (time.perf_counter() - t0)
    assert elapsed < 900.0


def test_03_minimal_detectable_values():
    # gradient floor at a slow decay rate and a 4 um ion spacing
    p = _fast_probe(gamma=0.05)
    b = MagneticField(B0=0.0, Bprime=1e-6, z_positions=(-2e-6, 2e-6), gJ=2.0)
    bp_min = minimal_detectable(p, "magnetic", b=b)
    assert bp_min == pytest.approx(4.0e-5, rel=0.03)

    # phonon-readout force floor on the rocking mode
    phonon = ProbeParams(
        num_ions=2, omega0=300.0, gamma=0.0, delta=0.6, kappa=0.28,
        g=2.5, phi=math.pi / 3.0, x0=14.5e-9, n_max=14,
    )
    f_min = minimal_detectable(phonon, "force_cho", mode="rock")
    assert 2.4e-24 <= f_min <= 2.5e-24


def test_04_two_state_sweep_matches_closed_forms(rng):
    # endpoint of the integrated sweep against the asymptotic plateau
    for _ in range(20):
        gamma = rng.uniform(0.5, 2.0)
        ratio = rng.uniform(0.05, 1.5)  # alpha / gamma
        x = 10.0 ** rng.uniform(3.0, math.log10(5e3))
        res = demkov_integrate(
            ratio * gamma, 2.0 * gamma * x, gamma, 8.0 / gamma
        )
        plateau = 0.5 * (1.0 + math.tanh(math.pi * ratio / 2.0))
        assert abs(abs(res.c_plus[-1]) ** 2 - plateau) <= 1e-3

    # closed Bessel-function amplitudes against the integrator at small x
    for _ in range(10):
        gamma = 1.0
        alpha = rng.uniform(0.1, 1.0)
        x = rng.uniform(2.0, 20.0)
        ode = demkov_integrate(alpha, 2.0 * x, gamma, 6.0, num_points=241)
        d = DemkovClosedForm(alpha=alpha, gamma=gamma, x=x)
        for k in (60, 120, 180, 240):
            cp, _ = demkov_closed_amplitudes(d, ode.times[k], form="bessel")
            assert abs(abs(ode.c_plus[k]) ** 2 - abs(cp) ** 2) <= 1e-6


def test_05_spin_qfi_closed_form_and_quadratic_growth(rng):
    # closed form against the numerical fidelity-based value
    t_f = 8.0
    for _ in range(10):
        alpha = rng.uniform(0.1, 1.2)
        x = rng.uniform(1e3, 5e3)
        d = DemkovClosedForm(alpha=alpha, gamma=1.0, x=x, dalpha_dF=1.0)
        closed = qfi_adiabatic(d, t_f, "force")

        def provider(theta, x=x):
            dd = DemkovClosedForm(alpha=theta, gamma=1.0, x=x)
            cp, cm = demkov_closed_amplitudes(dd, t_f, form="asymptotic")
            return np.array([cp, cm])

        numeric = qfi_numeric(provider, alpha, 1e-4)
        assert numeric == pytest.approx(closed, rel=0.01)

    # quadratic growth with readout time; the power-law window sits at
    # gap scales near the crossover point of the logarithm
    for alpha, x in ((0.3, 0.4), (1.0, 1.0)):
        d = DemkovClosedForm(alpha=alpha, gamma=1.0, x=x, dalpha_dF=1.0)
        ts = np.linspace(4.0, 10.0, 13)
        vals = np.array([qfi_adiabatic(d, t, "force") for t in ts])
        exponent = np.polyfit(np.log(ts), np.log(vals), 1)[0]
        assert exponent == pytest.approx(2.0, abs=0.05)


def test_06_three_ion_signal_senses_net_force_combination():
    g0 = 38.4615
    p = ProbeParams(
        num_ions=3, omega0=21000.0, gamma=1.0, delta=346.1538,
        kappa=92.3077, g=(g0, g0 * math.sqrt(2.0), g0),
        phi=0.9 * math.pi, x0=14.5e-9, n_max=6,
    )
    f = ForceField(F=(3.30769e-23, 1.0e-23, 7.6923e-24), xi=1.2 * math.pi)
    res = _endpoint(p, f, t_final=10.0)

    # the closed form is the tanh law in the net combination
    # F_1 - sqrt(2) F_2 + F_3 with a three-ion decay rate
    alpha = force_asymmetry(p, f)
    _, closed = adiabatic_signal_force(p, f)
    assert closed == pytest.approx(
        math.tanh(math.pi * alpha / (3.0 * p.gamma)), abs=1e-12
    )

    assert abs(res.sigma_z[0] - closed) <= 0.05
    assert abs(res.sigma_z[2] - res.sigma_z[0]) <= 0.05
    assert res.collective_probs["ddd"] <= 0.03
    assert res.collective_probs["ddu"] <= 0.03
    assert res.trajectory.norm_drift <= 1e-9


def _collective_number_obs(basis):
    root = 1.0 / math.sqrt(2.0)
    a1 = annihilation_op(basis, 0)
    a2 = annihilation_op(basis, 1)
    a_c = (a1 + a2) * root
    a_r = (a1 - a2) * root
    return {"n_com": a_c.dagger() @ a_c, "n_rock": a_r.dagger() @ a_r}


def test_07_phonon_signal_closed_form_vs_integration(phonon_probe, phonon_force):
    sd = {
        mode: squeeze_displace_params(phonon_probe, phonon_force, mode)
        for mode in ("com", "rock")
    }

    # exact closed-form bookkeeping
    for s in sd.values():
        assert abs(mean_phonon_signal(s, 0.0)) <= 1e-12
        peak = 4.0 * abs(s.alpha) ** 2
        assert mean_phonon_signal(s, s.t_star) == pytest.approx(peak, abs=1e-10)

    t_grid = np.linspace(0.0, sd["rock"].t_star, 200)

    # quadratic boson-only model reproduces the closed form to round-off
    p_eff = phonon_probe.with_n_max(16)
    bb = p_eff.boson_basis()
    cfg = PropagationConfig(
        t_final=float(t_grid[-1]), tolerance=1e-10, record_stride=199,
        observables=_collective_number_obs(bb),
    )
    eff = propagate(
        build_effective_bosonic(p_eff, phonon_force),
        basis_state(bb, fock=(0, 0)),
        cfg,
    )
    for mode, label in (("com", "n_com"), ("rock", "n_rock")):
        col = eff.observable_values[:, eff.labels.index(label)]
        closed = mean_phonon_signal(sd[mode], eff.times)
        assert np.max(np.abs(col - closed)) <= 1e-6

    # the full spin-boson model agrees at the signal maxima
    h_full = build_rabi_lattice(phonon_probe, 0.0) + build_force_term(
        phonon_probe, phonon_force
    )
    psi0 = transverse_ground_state(phonon_probe)
    obs = _collective_number_obs(phonon_probe.basis())
    for mode, label in (("com", "n_com"), ("rock", "n_rock")):
        cfg = PropagationConfig(
            t_final=sd[mode].t_star, tolerance=1e-9, record_stride=1,
            observables=obs,
        )
        traj = propagate(h_full, psi0, cfg)
        start = traj.observable_values[0, traj.labels.index(label)]
        end = traj.observable_values[-1, traj.labels.index(label)]
        peak = 4.0 * abs(sd[mode].alpha) ** 2
        assert abs(start) <= 1e-12
        assert abs(end - peak) / peak <= 0.05


def test_08_echo_hopping_root():
    star = kappa_star_solve(0.6, 0.1389, 3, 1)
    assert star.kappa == pytest.approx(0.277, abs=0.005)
    assert star.residual <= 1e-12


def test_09_phonon_qfi_identities(phonon_probe, phonon_force):
    # unit signal-to-noise force equals the inverse root of the Fisher
    # information, exactly, when the drive and force phases align
    aligned = ForceField(F=phonon_force.F, xi=phonon_probe.phi[0])
    for mode in ("com", "rock"):
        s = squeeze_displace_params(phonon_probe, aligned, mode)
        iq = qfi_cho(s, "force")
        f_min = minimal_detectable(phonon_probe, "force_cho", mode=mode)
        assert iq * f_min ** 2 == pytest.approx(4.0, rel=1e-12)

    # phase sensitivity peaks a quarter turn away from the force phase
    xi = math.pi / 4.0
    f = ForceField(F=phonon_force.F, xi=xi)
    phis = [2.0 * math.pi * k / 32.0 for k in range(32)]
    vals = [
        qfi_cho(
            squeeze_displace_params(replace(phonon_probe, phi=phi), f, "rock"),
            "phase",
        )
        for phi in phis
    ]
    k_star = 12  # phi grid index of xi + pi/2
    assert phis[k_star] == pytest.approx(xi + math.pi / 2.0, rel=1e-15)
    assert vals[k_star] == pytest.approx(max(vals), rel=1e-12)

    # divergence flagging at (effectively) critical coupling
    s = squeeze_displace_params(phonon_probe, phonon_force, "rock")
    finite = qfi_cho(replace(s, zeta_sq=1.0 - 1e-6), "force")
    assert not isinstance(finite, TaggedInfinite)
    for z2 in (1.0 - 1e-9, 1.0 - 1e-10):
        flagged = qfi_cho(replace(s, zeta_sq=z2), "force")
        assert isinstance(flagged, TaggedInfinite)
        assert "zeta" in flagged.reason


def test_10_property_suites(force_grid, magnetic_grid, rng):
    # unitarity across every recorded grid run
    drifts = [r["drift"] for r in force_grid["runs"]]
    drifts += [r["drift"] for r in magnetic_grid["runs"]]
    assert max(drifts) <= 1e-9

    # no perturbation, no signal: the bare probe has a spin-flip
    # symmetry that pins <sigma_j^z> to zero
    p0 = _fast_probe(n_max=5)
    res = _endpoint(p0, ForceField(F=(0.0, 0.0), xi=0.0), 10.0, tolerance=1e-8)
    assert abs(res.sigma_z[0]) <= 1e-6
    assert abs(res.sigma_z[1]) <= 1e-6

    # staggered order: the two ions anti-correlate in every grid run
    anti = [abs(r["sigma"][0] + r["sigma"][1]) for r in force_grid["runs"]]
    anti += [abs(r["sigma"][0] + r["sigma"][1]) for r in magnetic_grid["runs"]]
    assert max(anti) <= 0.05

    # classical readout never beats the quantum bound
    for _ in range(25):
        p = _fast_probe(
            phi=rng.uniform(0.0, 2.0 * math.pi),
            gamma=rng.uniform(0.5, 2.0),
        )
        f = ForceField(
            F=(rng.uniform(0.5e-23, 5e-23), rng.uniform(0.2e-23, 2e-23)),
            xi=rng.uniform(0.0, 2.0 * math.pi),
        )
        d = demkov_reduction(p, f)
        for t_f in (6.0 / p.gamma, 10.0 / p.gamma):
            i_cl = classical_fisher(p, f, "force")
            i_q = qfi_adiabatic(d, t_f, "force")
            assert i_cl <= i_q * (1.0 + 1e-12)
            i_cl = classical_fisher(p, f, "phase")
            i_q = qfi_adiabatic(d, t_f, "phase")
            assert i_cl <= i_q * (1.0 + 1e-12)

    # special-function identities behind the closed forms
    for p_im in (0.05, 0.3, 0.77, 1.5, 3.0):
        z = 0.5 + 1j * p_im
        modulus_sq = abs(complex_gamma(z)) ** 2
        assert modulus_sq == pytest.approx(
            math.pi / math.cosh(math.pi * p_im), rel=1e-12
        )
        lhs = complex_digamma(z + 1.0) - complex_digamma(z)
        assert abs(lhs - 1.0 / z) <= 1e-12 * abs(lhs)

    # truncation headroom: four extra levels do not move the endpoint
    ref = force_grid["runs"][0]
    p_hi = _fast_probe(phi=ref["phi"], n_max=10)
    f = ForceField(F=ref["pair"], xi=0.98 * math.pi)
    res_hi = _endpoint(p_hi, f, t_final=10.0)
    assert abs(res_hi.sigma_z[0] - ref["sigma"][0]) <= 1e-3
