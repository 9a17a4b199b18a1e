"""iongrad: trapped-ion force and magnetic-gradient sensing toolkit.

Simulation and closed-form analysis of a driven spin-boson probe with
phonon hopping, covering an adiabatic spin-readout protocol and a
strong-coupling phonon-readout protocol, plus the estimation-theory
layer (Fisher information, Cramer-Rao bounds, SNR) that turns signals
into sensitivities.
"""

__version__ = "0.1.0"

from .hilbert import (
    BasisDescriptor,
    CompositeState,
    OperatorMatrix,
    annihilation_op,
    basis_state,
    displacement_op,
    expectation,
    number_op,
    pauli_op,
    product_state,
    squeeze_op,
)
from .models import (
    ForceField,
    MagneticField,
    ProbeParams,
    TrapGeometry,
    build_effective_bosonic,
    build_force_term,
    build_magnetic_term,
    build_rabi_lattice,
    collective_transform,
    hopping_from_trap,
)
from .dynamics import (
    PropagationConfig,
    Trajectory,
    TwoStateAmplitudes,
    adiabatic_protocol_run,
    demkov_integrate,
    propagate,
)
from .analytic import (
    DemkovClosedForm,
    SqueezeDisplaceParams,
    adiabatic_signal_force,
    adiabatic_signal_magnetic,
    classical_fisher,
    complex_digamma,
    complex_log_gamma,
    demkov_closed_amplitudes,
    demkov_coupling,
    demkov_reduction,
    kappa_star_solve,
    mean_phonon_signal,
    minimal_detectable,
    qfi_adiabatic,
    qfi_cho,
    squeeze_displace_params,
)
from .metrology import EstimationReport, qfi_numeric, sld_pure, snr_report

__all__ = [
    "BasisDescriptor",
    "CompositeState",
    "OperatorMatrix",
    "annihilation_op",
    "basis_state",
    "displacement_op",
    "expectation",
    "number_op",
    "pauli_op",
    "product_state",
    "squeeze_op",
    "ForceField",
    "MagneticField",
    "ProbeParams",
    "TrapGeometry",
    "build_effective_bosonic",
    "build_force_term",
    "build_magnetic_term",
    "build_rabi_lattice",
    "collective_transform",
    "hopping_from_trap",
    "PropagationConfig",
    "Trajectory",
    "TwoStateAmplitudes",
    "adiabatic_protocol_run",
    "demkov_integrate",
    "propagate",
    "DemkovClosedForm",
    "SqueezeDisplaceParams",
    "adiabatic_signal_force",
    "adiabatic_signal_magnetic",
    "classical_fisher",
    "complex_digamma",
    "complex_log_gamma",
    "demkov_closed_amplitudes",
    "demkov_coupling",
    "demkov_reduction",
    "kappa_star_solve",
    "mean_phonon_signal",
    "minimal_detectable",
    "qfi_adiabatic",
    "qfi_cho",
    "squeeze_displace_params",
    "EstimationReport",
    "qfi_numeric",
    "sld_pure",
    "snr_report",
]
