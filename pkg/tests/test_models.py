import math

import numpy as np
import pytest

from iongrad.hilbert import expectation, pauli_op
from iongrad.models import (
    ForceField,
    MagneticField,
    ProbeParams,
    TrapGeometry,
    build_effective_bosonic,
    build_force_term,
    build_magnetic_term,
    build_rabi_lattice,
    collective_transform,
    drive_hierarchy_ok,
    force_drive_rate,
    gyromagnetic_rate,
    hopping_from_trap,
    parity_operator,
    rabi_drive_coupling,
    rabi_static_part,
    transverse_ground_state,
    zeta_sq,
)

HBAR = 1.054571817e-34


def test_probe_broadcast_and_validation():
    p = ProbeParams(num_ions=2, omega0=100.0, gamma=1.0, delta=10.0,
                    kappa=2.0, g=3.0, phi=0.5, x0=1e-8, n_max=3)
    assert p.g == (3.0, 3.0)
    assert p.phi == (0.5, 0.5)
    p3 = ProbeParams(num_ions=3, omega0=100.0, gamma=1.0, delta=10.0,
                     kappa=2.0, g=3.0, phi=0.0, x0=1e-8, n_max=3)
    assert p3.g == (3.0, 3.0, 3.0)
    with pytest.raises(ValueError):
        ProbeParams(num_ions=2, omega0=100.0, gamma=1.0, delta=2.0,
                    kappa=2.0, g=1.0, phi=0.0, x0=1e-8, n_max=3)
    with pytest.raises(ValueError):
        ProbeParams(num_ions=2, omega0=100.0, gamma=-0.1, delta=10.0,
                    kappa=2.0, g=1.0, phi=0.0, x0=1e-8, n_max=3)
    with pytest.raises(ValueError):
        ProbeParams(num_ions=4, omega0=100.0, gamma=1.0, delta=10.0,
                    kappa=2.0, g=1.0, phi=0.0, x0=1e-8, n_max=3)


def test_with_n_max(small_probe):
    q = small_probe.with_n_max(7)
    assert q.n_max == 7 and q.delta == small_probe.delta
    assert q.basis().fock_dims == (7, 7)


def test_drive_profile(small_probe):
    assert small_probe.drive(0.0) == small_probe.omega0
    t = 1.7
    assert small_probe.drive(t) == pytest.approx(
        small_probe.omega0 * math.exp(-small_probe.gamma * t), rel=1e-15
    )


def test_force_drive_rate_value():
    # eps = F x0 / (2 hbar), in krad/s: the number every scenario echo shows
    eps = force_drive_rate(3.78e-24, 14.5e-9)
    assert eps == pytest.approx(3.78e-24 * 14.5e-9 / (2 * HBAR) / 1e3, rel=1e-12)
    assert eps == pytest.approx(0.2599, abs=2e-4)


def test_gyromagnetic_rate_value():
    # g_J mu_B / hbar for g_J = 2, rad/(s T)
    lam = gyromagnetic_rate(2.0)
    assert lam == pytest.approx(1.7588e11, rel=1e-4)
    assert gyromagnetic_rate(1.0) == pytest.approx(lam / 2.0, rel=1e-12)


def test_magnetic_detunings():
    b = MagneticField(B0=1e-6, Bprime=5e-5, z_positions=(2e-6, -2e-6), gJ=2.0)
    lam = gyromagnetic_rate(2.0)
    d1, d2 = b.detunings()
    assert d1 == pytest.approx(lam * (1e-6 + 5e-5 * 2e-6) / 1e3, rel=1e-12)
    assert d2 == pytest.approx(lam * (1e-6 - 5e-5 * 2e-6) / 1e3, rel=1e-12)
    # the difference only sees the gradient
    assert (d1 - d2) == pytest.approx(lam * 5e-5 * 4e-6 / 1e3, rel=1e-12)


def test_collective_modes_two_ions(small_probe):
    m = collective_transform(small_probe)
    assert m.omega_c == small_probe.delta + small_probe.kappa
    assert m.omega_r == small_probe.delta - small_probe.kappa
    g = small_probe.g[0]
    assert m.J == pytest.approx(g * g * (1 / m.omega_r - 1 / m.omega_c), rel=1e-14)
    # columns of the transform are orthonormal
    mtx = m.local_from_collective
    assert np.allclose(mtx.T @ mtx, np.eye(2), atol=1e-14)


def test_collective_modes_three_ions():
    p = ProbeParams(num_ions=3, omega0=2730.0, gamma=0.13, delta=45.0,
                    kappa=12.0, g=5.0, phi=0.0, x0=14.5e-9, n_max=3)
    m = collective_transform(p)
    assert m.omega_c == pytest.approx(45.0 + math.sqrt(2) * 12.0, rel=1e-14)
    assert m.omega_r == pytest.approx(45.0 - math.sqrt(2) * 12.0, rel=1e-14)
    assert m.omega_e == 45.0
    mtx = m.local_from_collective
    assert np.allclose(mtx.T @ mtx, np.eye(3), atol=1e-14)
    # the diagonalized hopping block reproduces the mode frequencies
    hop = np.array([[45.0, 12.0, 0.0], [12.0, 45.0, 12.0], [0.0, 12.0, 45.0]])
    diag = mtx.T @ hop @ mtx
    assert np.allclose(np.diag(diag), [m.omega_c, m.omega_r, m.omega_e], atol=1e-12)
    assert np.abs(diag - np.diag(np.diag(diag))).max() < 1e-12


def test_hamiltonian_hermiticity(small_probe):
    f = ForceField(F=(3e-24, 1e-24), xi=0.7)
    b = MagneticField(B0=1e-7, Bprime=4e-5, z_positions=(2e-6, -2e-6))
    for op in (
        rabi_static_part(small_probe),
        rabi_drive_coupling(small_probe),
        build_rabi_lattice(small_probe, 0.3),
        build_force_term(small_probe, f),
        build_magnetic_term(small_probe, b),
        build_effective_bosonic(small_probe, f),
    ):
        assert op.hermiticity_defect() < 1e-12


def test_rabi_lattice_assembly(small_probe):
    t = 0.4
    full = build_rabi_lattice(small_probe, t).to_dense()
    parts = (
        rabi_static_part(small_probe).to_dense()
        + small_probe.drive(t) * rabi_drive_coupling(small_probe).to_dense()
    )
    assert np.allclose(full, parts, atol=1e-12)


def test_magnetic_term_is_diagonal_sigma_z(small_probe):
    b = MagneticField(B0=0.0, Bprime=4e-5, z_positions=(2e-6, -2e-6))
    h = build_magnetic_term(small_probe, b).to_dense()
    basis = small_probe.basis()
    d1, d2 = b.detunings()
    expect = (
        d1 * pauli_op(basis, 0, "z").to_dense()
        + d2 * pauli_op(basis, 1, "z").to_dense()
    )
    assert np.abs(h - expect).max() < 1e-12


def test_parity_symmetry(small_probe):
    par = parity_operator(small_probe)
    h0 = build_rabi_lattice(small_probe, 0.2)
    comm = (par @ h0 - h0 @ par).to_dense()
    assert np.abs(comm).max() < 1e-10
    # a force kick breaks the symmetry
    f = ForceField(F=(3e-24, 1e-24), xi=0.0)
    hf = h0 + build_force_term(small_probe, f)
    comm_f = (par @ hf - hf @ par).to_dense()
    assert np.abs(comm_f).max() > 1e-6
    # parity squares to one
    sq = (par @ par).to_dense()
    assert np.abs(sq - np.eye(small_probe.basis().dim)).max() < 1e-12


def test_transverse_ground_state(small_probe):
    psi = transverse_ground_state(small_probe)
    assert abs(psi.norm() - 1.0) < 1e-14
    basis = small_probe.basis()
    for j in range(2):
        assert expectation(psi, pauli_op(basis, j, "x")).real == pytest.approx(-1.0, abs=1e-14)
    # it is an eigenstate of the drive coupling with eigenvalue -N/2
    v = rabi_drive_coupling(small_probe)
    out = v @ psi
    assert np.allclose(out.amplitudes, -1.0 * psi.amplitudes, atol=1e-14)


def test_zeta_sq(phonon_probe):
    m = collective_transform(phonon_probe)
    z = zeta_sq(phonon_probe, m.omega_r)
    g = phonon_probe.g[0]
    assert z == pytest.approx(4 * g * g / (phonon_probe.omega0 * m.omega_r), rel=1e-14)


def test_hopping_from_trap_conventions():
    trap = TrapGeometry(mass=2.8395e-25, charge=1.602176634e-19,
                        omega_x=2 * math.pi * 2e6, dz=30e-6)
    k_si = hopping_from_trap(trap, "si")
    k_g = hopping_from_trap(trap, "gaussian")
    assert k_si == pytest.approx(k_g * 8.9875517923e9, rel=1e-9)
    # e^2/(4 pi eps0) / (2 m omega dz^3), converted to krad/s
    expect = (1.602176634e-19) ** 2 * 8.9875517923e9 / (
        2 * 2.8395e-25 * 2 * math.pi * 2e6 * (30e-6) ** 3
    ) / 1e3
    assert k_si == pytest.approx(expect, rel=1e-9)


def test_drive_hierarchy(fast_trap):
    assert drive_hierarchy_ok(fast_trap)
    weak = ProbeParams(num_ions=2, omega0=40.0, gamma=0.5, delta=10.0,
                       kappa=2.0, g=1.0, phi=0.0, x0=1e-8, n_max=3)
    assert not drive_hierarchy_ok(weak)


def test_force_field_from_drive_rates():
    f = ForceField.from_drive_rates((0.26, 0.065), xi=0.4, x0_meter=14.5e-9)
    assert f.xi == 0.4
    assert force_drive_rate(f.F[0], 14.5e-9) == pytest.approx(0.26, rel=1e-12)
    assert force_drive_rate(f.F[1], 14.5e-9) == pytest.approx(0.065, rel=1e-12)
