"""Parameter sets, unit conversions, and Hamiltonian builders.

Internal unit system: hbar = 1, frequencies in krad/s, times in ms, so
omega * t is in radians.  Forces enter in newtons and positions in
meters; the single conversion boundary to internal drive rates is
``force_drive_rate`` (eps_j = F_j x0 / 2 hbar).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import sqrt

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    BasisDescriptor,
    OperatorMatrix,
    annihilation_op,
    number_op,
    pauli_op,
    product_state,
    zero_op,
)

# ===================== physical constants (SI, CODATA 2018) =====================

HBAR_SI = 1.054571817e-34        # J s
MU_B_SI = 9.2740100783e-24       # J / T
E_CHARGE_SI = 1.602176634e-19    # C
COULOMB_K_SI = 8.9875517923e9    # N m^2 / C^2, = 1/(4 pi eps0)
ATOMIC_MASS_SI = 1.66053906892e-27  # kg

RAD_S_PER_INTERNAL = 1.0e3       # one internal frequency unit is 1 krad/s


def force_drive_rate(force_newton: float, x0_meter: float) -> float:
    """Drive rate eps = F x0 / (2 hbar), returned in krad/s."""
    return force_newton * x0_meter / (2.0 * HBAR_SI) / RAD_S_PER_INTERNAL


def drive_rate_force(eps_krad_s: float, x0_meter: float) -> float:
    """Inverse of force_drive_rate: force in newtons."""
    return eps_krad_s * RAD_S_PER_INTERNAL * 2.0 * HBAR_SI / x0_meter


def gyromagnetic_rate(gJ: float) -> float:
    """lambda = gJ mu_B / hbar in rad/(s T)."""
    return gJ * MU_B_SI / HBAR_SI


# ===================== parameter bundles =====================

@dataclass(frozen=True)
class ProbeParams:
    """Probe configuration: drive, sweep slope, phonon band, couplings.

    Frequencies (omega0, gamma, delta, kappa, g) are in krad/s; phases in
    rad; x0 in meters; n_max is the per-mode Fock dimension.
    """

    num_ions: int
    omega0: float
    gamma: float
    delta: float
    kappa: float
    g: tuple[float, ...]
    phi: tuple[float, ...]
    x0: float
    n_max: int = 12

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(float(v) for v in np.atleast_1d(self.g)))
        object.__setattr__(self, "phi", tuple(float(v) for v in np.atleast_1d(self.phi)))
        if self.num_ions not in (2, 3):
            raise ValueError("num_ions must be 2 or 3")
        if len(self.g) == 1:
            object.__setattr__(self, "g", self.g * self.num_ions)
        if len(self.phi) == 1:
            object.__setattr__(self, "phi", self.phi * self.num_ions)
        if len(self.g) != self.num_ions or len(self.phi) != self.num_ions:
            raise ValueError("g and phi must have one entry per ion")
        if not self.delta > self.kappa >= 0.0:
            raise ValueError("need delta > kappa >= 0 (positive rocking frequency)")
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")
        if self.n_max < 2:
            raise ValueError("n_max must be at least 2")

    def basis(self) -> BasisDescriptor:
        return BasisDescriptor(
            num_spins=self.num_ions,
            fock_dims=(self.n_max,) * self.num_ions,
        )

    def boson_basis(self) -> BasisDescriptor:
        return BasisDescriptor(num_spins=0, fock_dims=(self.n_max,) * self.num_ions)

    def drive(self, t: float) -> float:
        """Omega(t) = Omega(0) exp(-gamma t)."""
        return self.omega0 * np.exp(-self.gamma * t)

    def with_n_max(self, n_max: int) -> "ProbeParams":
        return ProbeParams(
            self.num_ions, self.omega0, self.gamma, self.delta, self.kappa,
            self.g, self.phi, self.x0, n_max,
        )


@dataclass(frozen=True)
class ForceField:
    """Static force kick: magnitudes F_j in newtons, common phase xi."""

    F: tuple[float, ...]
    xi: float

    def __post_init__(self):
        object.__setattr__(self, "F", tuple(float(v) for v in np.atleast_1d(self.F)))

    @classmethod
    def from_drive_rates(cls, rates_krad_s, xi: float, x0_meter: float) -> "ForceField":
        """Build from internal drive rates eps_j instead of newtons."""
        F = tuple(drive_rate_force(r, x0_meter) for r in np.atleast_1d(rates_krad_s))
        return cls(F, xi)


@dataclass(frozen=True)
class MagneticField:
    """Offset plus gradient along the trap axis, with ion positions.

    B0 in tesla, Bprime in tesla/meter, z_positions in meters (one per
    ion, signed), gJ the Lande factor.
    """

    B0: float
    Bprime: float
    z_positions: tuple[float, ...]
    gJ: float = 2.0

    def __post_init__(self):
        object.__setattr__(
            self, "z_positions", tuple(float(v) for v in np.atleast_1d(self.z_positions))
        )

    def detunings(self) -> tuple[float, ...]:
        """deltaB_j = lambda (B0 + B' z_j) in krad/s."""
        lam = gyromagnetic_rate(self.gJ)
        return tuple(
            lam * (self.B0 + self.Bprime * z) / RAD_S_PER_INTERNAL
            for z in self.z_positions
        )


@dataclass(frozen=True)
class TrapGeometry:
    """Two-ion trap data for the hopping-rate conversion.

    mass in kg, charge in C, omega_x in rad/s, dz (ion spacing) in m.
    """

    mass: float
    charge: float
    omega_x: float
    dz: float

    def __post_init__(self):
        if min(self.mass, abs(self.charge), self.omega_x, self.dz) <= 0.0:
            raise ValueError("trap parameters must be positive")


@dataclass(frozen=True)
class CollectiveModeSpec:
    """Normal modes of the hopping block and the induced spin couplings.

    ``local_from_collective`` has one row per ion and one column per
    mode, so a_local = M @ a_collective; columns are the normalized mode
    vectors.  J couples nearest-neighbour spins; J_prime (three ions
    only) couples the outer pair with a minus sign in the Hamiltonian.
    """

    omega_c: float
    omega_r: float
    omega_e: float | None
    local_from_collective: np.ndarray
    J: float
    J_prime: float | None
    mode_labels: tuple[str, ...]


# ===================== Hamiltonian builders =====================

def _hopping_pairs(num_ions: int) -> list[tuple[int, int]]:
    return [(j, j + 1) for j in range(num_ions - 1)]


def _phonon_block(p: ProbeParams, basis: BasisDescriptor) -> OperatorMatrix:
    """delta sum a^dag a + kappa sum_nn (a_i^dag a_j + h.c.)."""
    h = zero_op(basis)
    ops = [annihilation_op(basis, j) for j in range(p.num_ions)]
    for j in range(p.num_ions):
        h = h + p.delta * number_op(basis, j)
    for i, j in _hopping_pairs(p.num_ions):
        hop = ops[i].dagger() @ ops[j]
        h = h + p.kappa * (hop + hop.dagger())
    return h


def rabi_static_part(p: ProbeParams) -> OperatorMatrix:
    """Drive-free part: phonon block plus spin-phonon coupling."""
    basis = p.basis()
    h = _phonon_block(p, basis)
    for j in range(p.num_ions):
        a = annihilation_op(basis, j)
        quad = np.exp(1j * p.phi[j]) * a.dagger() + np.exp(-1j * p.phi[j]) * a
        h = h + p.g[j] * (quad @ pauli_op(basis, j, "z"))
    return h


def rabi_drive_coupling(p: ProbeParams) -> OperatorMatrix:
    """Dimensionless drive coupling: (1/2) sum_j sigma_j^x."""
    basis = p.basis()
    v = zero_op(basis)
    for j in range(p.num_ions):
        v = v + 0.5 * pauli_op(basis, j, "x")
    return v


def build_rabi_lattice(p: ProbeParams, t: float = 0.0) -> OperatorMatrix:
    """Full probe Hamiltonian at time t (hbar = 1, krad/s)."""
    return rabi_static_part(p) + p.drive(t) * rabi_drive_coupling(p)


def build_force_term(p: ProbeParams, f: ForceField) -> OperatorMatrix:
    """Force kick sum_j eps_j (e^{i xi} a_j^dag + e^{-i xi} a_j)."""
    if len(f.F) != p.num_ions:
        raise ValueError("ForceField must carry one magnitude per ion")
    basis = p.basis()
    h = zero_op(basis)
    for j in range(p.num_ions):
        eps = force_drive_rate(f.F[j], p.x0)
        a = annihilation_op(basis, j)
        h = h + eps * (np.exp(1j * f.xi) * a.dagger() + np.exp(-1j * f.xi) * a)
    return h


def build_magnetic_term(p: ProbeParams, b: MagneticField) -> OperatorMatrix:
    """Gradient term sum_j deltaB_j sigma_j^z."""
    if len(b.z_positions) != p.num_ions:
        raise ValueError("MagneticField must carry one position per ion")
    basis = p.basis()
    h = zero_op(basis)
    for j, dB in enumerate(b.detunings()):
        h = h + dB * pauli_op(basis, j, "z")
    return h


def zeta_sq(p: ProbeParams, omega_q: float) -> float:
    """Critical-coupling measure 4 g^2 / (Omega omega_q) for one mode."""
    g = p.g[0]
    if any(abs(abs(gj) - abs(g)) > 1e-12 * max(abs(g), 1.0) for gj in p.g):
        raise ValueError("effective bosonic reduction assumes uniform |g_j|")
    if p.omega0 <= 0.0:
        raise ValueError("need a positive drive amplitude")
    return 4.0 * g * g / (p.omega0 * omega_q)


def build_effective_bosonic(p: ProbeParams, f: ForceField) -> OperatorMatrix:
    """Boson-only strong-drive Hamiltonian (spins frozen in |-->).

    Local-mode form: delta_tilde sum n_j + kappa hop
    - (g^2/Omega) sum_j (e^{2i phi_j} a_j^dag^2 + h.c.) + force kick.
    """
    if len(f.F) != p.num_ions:
        raise ValueError("ForceField must carry one magnitude per ion")
    modes = collective_transform(p)
    for w in (modes.omega_c, modes.omega_r) + (() if modes.omega_e is None else (modes.omega_e,)):
        zq = zeta_sq(p, w)
        if zq >= 1.0:
            raise ValueError(
                f"supercritical coupling zeta^2 = {zq:.4f} >= 1 at mode frequency {w:g}; "
                "the effective quadratic model is unstable"
            )
    g = p.g[0]
    zeta_delta = 4.0 * g * g / (p.omega0 * p.delta)
    delta_tilde = p.delta * (1.0 - zeta_delta / 2.0)

    basis = p.boson_basis()
    h = zero_op(basis)
    for j in range(p.num_ions):
        h = h + delta_tilde * number_op(basis, j)
    for i, j in _hopping_pairs(p.num_ions):
        hop = annihilation_op(basis, i).dagger() @ annihilation_op(basis, j)
        h = h + p.kappa * (hop + hop.dagger())
    for j in range(p.num_ions):
        a = annihilation_op(basis, j)
        sq = a.dagger() @ a.dagger()
        h = h - (g * g / p.omega0) * (
            np.exp(2j * p.phi[j]) * sq + np.exp(-2j * p.phi[j]) * sq.dagger()
        )
        eps = force_drive_rate(f.F[j], p.x0)
        h = h + eps * (np.exp(1j * f.xi) * a.dagger() + np.exp(-1j * f.xi) * a)
    return h


def collective_transform(p: ProbeParams) -> CollectiveModeSpec:
    """Normal modes of the hopping block and induced spin-spin couplings."""
    if p.num_ions == 2:
        omega_c = p.delta + p.kappa
        omega_r = p.delta - p.kappa
        m = np.array([[1.0, 1.0], [1.0, -1.0]]) / sqrt(2.0)
        labels = ("com", "rock")
        omega_e = None
        J_prime = None
    else:
        omega_c = p.delta + sqrt(2.0) * p.kappa
        omega_r = p.delta - sqrt(2.0) * p.kappa
        omega_e = p.delta
        m = np.array(
            [
                [0.5, 0.5, -1.0 / sqrt(2.0)],
                [1.0 / sqrt(2.0), -1.0 / sqrt(2.0), 0.0],
                [0.5, 0.5, 1.0 / sqrt(2.0)],
            ]
        )
        labels = ("com", "rock", "exchange")
    if omega_r <= 0.0:
        raise ValueError("rocking frequency is not positive")
    g = abs(p.g[0])
    J = g * g * (1.0 / omega_r - 1.0 / omega_c)
    if p.num_ions == 3:
        J_prime = g * g * (0.5 / omega_r + 0.5 / omega_c - 1.0 / omega_e)
    return CollectiveModeSpec(
        omega_c=omega_c,
        omega_r=omega_r,
        omega_e=omega_e,
        local_from_collective=m,
        J=J,
        J_prime=J_prime,
        mode_labels=labels,
    )


def hopping_from_trap(t: TrapGeometry, convention: str = "si") -> float:
    """Coulomb hopping rate kappa in krad/s.

    ``si`` (default) includes the 1/(4 pi eps0) factor; ``gaussian``
    evaluates the bare e^2/(2 m omega_x dz^3) form literally.
    """
    if convention not in ("si", "gaussian"):
        raise ValueError("convention must be 'si' or 'gaussian'")
    kappa = t.charge ** 2 / (2.0 * t.mass * t.omega_x * t.dz ** 3)
    if convention == "si":
        kappa *= COULOMB_K_SI
    return kappa / RAD_S_PER_INTERNAL


def parity_operator(p: ProbeParams) -> OperatorMatrix:
    """Joint spin-flip times boson parity, a symmetry of the bare probe."""
    basis = p.basis()
    out = None
    for j in range(p.num_ions):
        op = pauli_op(basis, j, "x")
        out = op if out is None else out @ op
    for j in range(p.num_ions):
        d = basis.fock_dims[j]
        block = np.diag((-1.0 + 0.0j) ** np.arange(d))
        # boson parity exp(i pi n) on mode j
        factors = [sp.identity(2, dtype=complex, format="csr")] * p.num_ions
        for k, dk in enumerate(basis.fock_dims):
            factors.append(
                sp.csr_matrix(block) if k == j
                else sp.identity(dk, dtype=complex, format="csr")
            )
        m = factors[0]
        for fac in factors[1:]:
            m = sp.kron(m, fac, format="csr")
        out = out @ OperatorMatrix(basis, m)
    return out


def transverse_ground_state(p: ProbeParams):
    """|-- ...> with all modes in vacuum, the strong-drive ground state."""
    basis = p.basis()
    minus = np.array([1.0, -1.0]) / sqrt(2.0)
    fock = []
    for d in basis.fock_dims:
        v = np.zeros(d)
        v[0] = 1.0
        fock.append(v)
    return product_state(basis, [minus] * p.num_ions, fock)


def drive_hierarchy_ok(p: ProbeParams, factor: float = 5.0) -> bool:
    """True when Omega(0) dominates the phonon band and couplings."""
    scale = max(p.delta + abs(p.kappa), max(abs(v) for v in p.g))
    return p.omega0 >= factor * scale


def warn_if_weak_drive(p: ProbeParams):
    if not drive_hierarchy_ok(p):
        warnings.warn(
            "drive amplitude omega0 is not large against the phonon band; "
            "the adiabatic protocol assumptions are marginal",
            stacklevel=2,
        )
