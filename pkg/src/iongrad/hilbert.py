"""Operator algebra on truncated spin-boson product spaces.

Composite Hilbert spaces are ordered spins-major, modes-minor: the basis
index is ``s * prod(fock_dims) + f`` where ``s`` runs over the spin
configurations (spin 0 slowest) and ``f`` over the Fock configurations
(mode 0 slowest).  Per spin, index 0 is up and index 1 is down, so
``sigma_z = diag(+1, -1)``.

Operators are stored sparse (CSR) above dimension 64 and dense below,
and always carry the basis descriptor they were built on.  Mixing
operators or states from different bases raises.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import prod

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

# Dimension below which dense storage wins over sparse bookkeeping.
DENSE_CUTOFF = 64

_PAULI = {
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


# ===================== basis bookkeeping =====================

@dataclass(frozen=True)
class BasisDescriptor:
    """Shape of a spin-boson product space.

    Args:
        num_spins: number of spin-1/2 subsystems.
        fock_dims: per-mode number of retained Fock levels (occupations
            0 .. dim-1).
        mode_labels: one label per mode, e.g. ("local-1", "local-2").
    """

    num_spins: int
    fock_dims: tuple[int, ...]
    mode_labels: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "fock_dims", tuple(int(d) for d in self.fock_dims))
        if not self.mode_labels:
            labels = tuple(f"local-{i + 1}" for i in range(len(self.fock_dims)))
            object.__setattr__(self, "mode_labels", labels)
        else:
            object.__setattr__(self, "mode_labels", tuple(self.mode_labels))
        if self.num_spins < 0:
            raise ValueError("num_spins must be nonnegative")
        if any(d < 2 for d in self.fock_dims):
            raise ValueError("every Fock dimension must be at least 2")
        if len(self.mode_labels) != len(self.fock_dims):
            raise ValueError("mode_labels and fock_dims length mismatch")

    @property
    def num_modes(self) -> int:
        return len(self.fock_dims)

    @property
    def dim(self) -> int:
        return (2 ** self.num_spins) * prod(self.fock_dims)

    def index_of(self, spins, fock) -> int:
        """Flat index of the product basis state |spins>|fock>.

        ``spins`` holds 0 (up) / 1 (down) per spin, ``fock`` the
        occupation per mode.
        """
        spins = tuple(int(s) for s in spins)
        fock = tuple(int(n) for n in fock)
        if len(spins) != self.num_spins or len(fock) != self.num_modes:
            raise ValueError("spins/fock length mismatch with basis")
        if any(s not in (0, 1) for s in spins):
            raise ValueError("spin indices must be 0 (up) or 1 (down)")
        if any(not 0 <= n < d for n, d in zip(fock, self.fock_dims)):
            raise ValueError("Fock occupation outside truncation")
        s = 0
        for b in spins:
            s = 2 * s + b
        f = 0
        for n, d in zip(fock, self.fock_dims):
            f = f * d + n
        return s * prod(self.fock_dims) + f


def _require_same_basis(a: BasisDescriptor, b: BasisDescriptor):
    if a != b:
        raise ValueError("operands live on different bases and cannot be combined")


# ===================== states =====================

@dataclass
class CompositeState:
    """Complex amplitude vector over a BasisDescriptor's product basis."""

    basis: BasisDescriptor
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).ravel()
        if amp.size != self.basis.dim:
            raise ValueError(
                f"amplitude vector has length {amp.size}, basis needs {self.basis.dim}"
            )
        self.amplitudes = amp

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "CompositeState":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return CompositeState(self.basis, self.amplitudes / n)

    def overlap(self, other: "CompositeState") -> complex:
        _require_same_basis(self.basis, other.basis)
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def basis_state(basis: BasisDescriptor, spins=(), fock=()) -> CompositeState:
    """Product basis state with the given spin (0=up/1=down) and Fock indices."""
    amp = np.zeros(basis.dim, dtype=complex)
    amp[basis.index_of(spins, fock)] = 1.0
    return CompositeState(basis, amp)


def product_state(basis: BasisDescriptor, spin_vectors=(), fock_vectors=()) -> CompositeState:
    """Tensor product of per-spin 2-vectors and per-mode Fock vectors.

    Useful for dressed spin states, e.g. ``(1, -1)/sqrt(2)`` per spin gives
    the transverse-field ground state with every mode in vacuum.
    """
    if len(spin_vectors) != basis.num_spins or len(fock_vectors) != basis.num_modes:
        raise ValueError("need one vector per spin and per mode")
    amp = np.array([1.0 + 0.0j])
    for v in spin_vectors:
        v = np.asarray(v, dtype=complex).ravel()
        if v.size != 2:
            raise ValueError("spin vectors must have length 2")
        amp = np.kron(amp, v)
    for v, d in zip(fock_vectors, basis.fock_dims):
        v = np.asarray(v, dtype=complex).ravel()
        if v.size != d:
            raise ValueError("Fock vector length must match the mode dimension")
        amp = np.kron(amp, v)
    return CompositeState(basis, amp).normalized()


# ===================== operators =====================

@dataclass
class OperatorMatrix:
    """Sparse (or small dense) complex matrix tagged with its basis."""

    basis: BasisDescriptor
    entries: object  # scipy CSR above DENSE_CUTOFF, ndarray below

    def __post_init__(self):
        d = self.basis.dim
        m = self.entries
        if sp.issparse(m):
            if d < DENSE_CUTOFF:
                m = np.asarray(m.todense(), dtype=complex)
            else:
                m = m.tocsr().astype(complex)
        else:
            m = np.asarray(m, dtype=complex)
            if d >= DENSE_CUTOFF:
                m = sp.csr_matrix(m)
        if m.shape != (d, d):
            raise ValueError(f"matrix shape {m.shape} does not match basis dim {d}")
        self.entries = m

    # ---- algebra ----

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _require_same_basis(self.basis, other.basis)
        return OperatorMatrix(self.basis, self.entries + other.entries)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _require_same_basis(self.basis, other.basis)
        return OperatorMatrix(self.basis, self.entries - other.entries)

    def __mul__(self, scalar) -> "OperatorMatrix":
        return OperatorMatrix(self.basis, self.entries * complex(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "OperatorMatrix":
        return self * (-1.0)

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            _require_same_basis(self.basis, other.basis)
            return OperatorMatrix(self.basis, self.entries @ other.entries)
        if isinstance(other, CompositeState):
            _require_same_basis(self.basis, other.basis)
            return CompositeState(self.basis, self.matvec(other.amplitudes))
        return NotImplemented

    def dagger(self) -> "OperatorMatrix":
        if sp.issparse(self.entries):
            return OperatorMatrix(self.basis, self.entries.conj().T.tocsr())
        return OperatorMatrix(self.basis, self.entries.conj().T)

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        return self.entries @ vec

    def to_dense(self) -> np.ndarray:
        if sp.issparse(self.entries):
            return np.asarray(self.entries.todense(), dtype=complex)
        return np.array(self.entries, dtype=complex)

    def hermiticity_defect(self) -> float:
        """Max-norm of H - H^dagger."""
        diff = self.entries - (self.entries.conj().T)
        if sp.issparse(diff):
            return float(np.abs(diff.data).max()) if diff.nnz else 0.0
        return float(np.abs(diff).max()) if diff.size else 0.0


def _lift(basis: BasisDescriptor, slot: int, block: np.ndarray, is_spin: bool) -> OperatorMatrix:
    """Embed a single-subsystem operator into the full product space."""
    factors = []
    for i in range(basis.num_spins):
        if is_spin and i == slot:
            factors.append(sp.csr_matrix(block))
        else:
            factors.append(sp.identity(2, dtype=complex, format="csr"))
    for j, d in enumerate(basis.fock_dims):
        if (not is_spin) and j == slot:
            factors.append(sp.csr_matrix(block))
        else:
            factors.append(sp.identity(d, dtype=complex, format="csr"))
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return OperatorMatrix(basis, out)


def identity_op(basis: BasisDescriptor) -> OperatorMatrix:
    return OperatorMatrix(basis, sp.identity(basis.dim, dtype=complex, format="csr"))


def zero_op(basis: BasisDescriptor) -> OperatorMatrix:
    return OperatorMatrix(basis, sp.csr_matrix((basis.dim, basis.dim), dtype=complex))


def annihilation_op(basis: BasisDescriptor, mode_index: int) -> OperatorMatrix:
    """Truncated lowering operator on one mode: a|n> = sqrt(n)|n-1>."""
    if not 0 <= mode_index < basis.num_modes:
        raise IndexError(f"mode_index {mode_index} out of range")
    d = basis.fock_dims[mode_index]
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(complex)
    return _lift(basis, mode_index, a, is_spin=False)


def number_op(basis: BasisDescriptor, mode_index: int) -> OperatorMatrix:
    if not 0 <= mode_index < basis.num_modes:
        raise IndexError(f"mode_index {mode_index} out of range")
    d = basis.fock_dims[mode_index]
    n = np.diag(np.arange(d, dtype=float)).astype(complex)
    return _lift(basis, mode_index, n, is_spin=False)


def pauli_op(basis: BasisDescriptor, spin_index: int, axis: str) -> OperatorMatrix:
    """Pauli operator on one spin; sigma_z |up> = +|up>, sigma_x |+-> = +-|+->."""
    if not 0 <= spin_index < basis.num_spins:
        raise IndexError(f"spin_index {spin_index} out of range")
    if axis not in _PAULI:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    return _lift(basis, spin_index, _PAULI[axis], is_spin=True)


def _check_truncation_headroom(basis: BasisDescriptor, mode_index: int, amp_sq: float, kind: str):
    n_max = basis.fock_dims[mode_index]
    if amp_sq > n_max / 2:
        raise ValueError(
            f"{kind} amplitude too large for the truncation: "
            f"|amp|^2 = {amp_sq:.3g} > n_max/2 = {n_max / 2:.3g} on mode {mode_index}"
        )
    if amp_sq > n_max / 4:
        warnings.warn(
            f"{kind} amplitude is large for the truncation "
            f"(|amp|^2 = {amp_sq:.3g} > n_max/4 = {n_max / 4:.3g} on mode {mode_index}); "
            "expect truncation artifacts",
            stacklevel=3,
        )


def displacement_op(basis: BasisDescriptor, mode_index: int, alpha: complex) -> OperatorMatrix:
    """exp(alpha a^dag - conj(alpha) a) on one mode, identity elsewhere."""
    if not 0 <= mode_index < basis.num_modes:
        raise IndexError(f"mode_index {mode_index} out of range")
    alpha = complex(alpha)
    _check_truncation_headroom(basis, mode_index, abs(alpha) ** 2, "displacement")
    d = basis.fock_dims[mode_index]
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(complex)
    gen = alpha * a.conj().T - np.conj(alpha) * a
    return _lift(basis, mode_index, expm(gen), is_spin=False)


def squeeze_op(basis: BasisDescriptor, mode_index: int, nu: float) -> OperatorMatrix:
    """exp[(nu/2)(a^dag^2 - a^2)] on one mode, identity elsewhere.

    This sign and normalization give the Bogoliubov relation
    S(nu)^dag a S(nu) = a cosh(nu) + a^dag sinh(nu) and a squeezed-vacuum
    mean occupation sinh^2(nu).
    """
    if not 0 <= mode_index < basis.num_modes:
        raise IndexError(f"mode_index {mode_index} out of range")
    nu = float(nu)
    _check_truncation_headroom(basis, mode_index, np.sinh(nu) ** 2, "squeeze")
    d = basis.fock_dims[mode_index]
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(complex)
    adag = a.conj().T
    gen = 0.5 * nu * (adag @ adag - a @ a)
    return _lift(basis, mode_index, expm(gen), is_spin=False)


# ===================== expectation values =====================

def expectation(state: CompositeState, obs: OperatorMatrix) -> complex:
    """<psi|O|psi>.  Real part is the physical value for Hermitian O;
    the imaginary part is returned so callers can assert it is tiny."""
    _require_same_basis(state.basis, obs.basis)
    return complex(np.vdot(state.amplitudes, obs.matvec(state.amplitudes)))


def mode_occupation_marginal(state: CompositeState, mode_index: int) -> np.ndarray:
    """Probability of each Fock level of one mode, traced over the rest."""
    b = state.basis
    shape = (2,) * b.num_spins + tuple(b.fock_dims)
    probs = np.abs(state.amplitudes.reshape(shape)) ** 2
    axis = b.num_spins + mode_index
    other = tuple(i for i in range(probs.ndim) if i != axis)
    return probs.sum(axis=other)


def spin_configuration_probabilities(state: CompositeState) -> np.ndarray:
    """Probability of each spin configuration (index bits: 0=up, 1=down),
    traced over all modes."""
    b = state.basis
    nf = prod(b.fock_dims)
    probs = np.abs(state.amplitudes.reshape(2 ** b.num_spins, nf)) ** 2
    return probs.sum(axis=1)
