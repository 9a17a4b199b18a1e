"""Estimation-theoretic layer: Fisher information, SNR, bounds, SLD.

Everything here consumes either closed-form objects from `analytic` or
simulation products from `dynamics` and condenses them into a single
EstimationReport that states what was measured, how well, and what the
smallest resolvable input is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from math import pi, sqrt

import numpy as np

from .analytic import (
    SqueezeDisplaceParams,
    TaggedInfinite,
    demkov_reduction,
    mean_phonon_signal,
    mean_phonon_variance,
    minimal_detectable,
    qfi_adiabatic,
    qfi_cho,
)
from .dynamics import AdiabaticRunResult, Trajectory
from .hilbert import CompositeState
from .models import ForceField, MagneticField, ProbeParams, gyromagnetic_rate

__all__ = [
    "EstimationReport",
    "qfi_numeric",
    "sld_pure",
    "snr_report",
]

_JOINT_CAVEAT = (
    "force magnitude and phase cannot be estimated jointly from a "
    "two-outcome spin readout; this report bounds one parameter with "
    "the other held fixed"
)

_UNIT_TABLE = {
    "force_difference": ("N", "1/N^2", "N^2"),
    "force_sum": ("N", "1/N^2", "N^2"),
    "force_phase": ("rad", "1/rad^2", "rad^2"),
    "magnetic_gradient": ("T/m", "1/(T/m)^2", "(T/m)^2"),
}


@dataclass
class EstimationReport:
    """Consolidated sensitivity summary for one readout configuration."""

    parameter: str
    signal: float
    variance: float
    snr: float
    fisher_classical: float | None = None
    fisher_quantum: object = None
    cramer_rao_bound: float | None = None
    min_detectable: float | None = None
    n_experiments: int = 1
    units: dict = field(default_factory=dict)
    caveat: str = ""

    def to_dict(self) -> dict:
        def pack(v):
            if isinstance(v, TaggedInfinite):
                return {"infinite": True, "reason": v.reason}
            return v

        return {
            "parameter": self.parameter,
            "signal": pack(self.signal),
            "variance": pack(self.variance),
            "snr": pack(self.snr),
            "fisher_classical": pack(self.fisher_classical),
            "fisher_quantum": pack(self.fisher_quantum),
            "cramer_rao_bound": pack(self.cramer_rao_bound),
            "min_detectable": pack(self.min_detectable),
            "n_experiments": self.n_experiments,
            "units": dict(sorted(self.units.items())),
            "caveat": self.caveat,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ===================== numerical Fisher information =====================

def _state_vector(state) -> np.ndarray:
    if isinstance(state, CompositeState):
        return state.amplitudes
    return np.asarray(state, dtype=complex)


def qfi_numeric(state_provider, theta0: float, h: float) -> float:
    """Quantum Fisher information 4[<d psi|d psi> - |<psi|d psi>|^2]
    of a pure-state family, by central differences at steps h and h/2
    with Richardson extrapolation.

    Raises if the provider returns unnormalized states or if the two
    step sizes disagree beyond 0.1% (derivative not converged).
    """
    if h <= 0.0:
        raise ValueError("finite-difference step must be positive")

    def fetch(theta):
        v = _state_vector(state_provider(theta))
        nrm = np.linalg.norm(v)
        if abs(nrm - 1.0) > 1e-8:
            raise ValueError(f"state provider returned norm {nrm:.12g} at theta = {theta!r}")
        return v

    psi0 = fetch(theta0)

    def estimate(hh):
        dpsi = (fetch(theta0 + hh) - fetch(theta0 - hh)) / (2.0 * hh)
        overlap = np.vdot(psi0, dpsi)
        return 4.0 * (float(np.vdot(dpsi, dpsi).real) - abs(overlap) ** 2)

    coarse = estimate(h)
    fine = estimate(0.5 * h)
    extrapolated = (4.0 * fine - coarse) / 3.0
    err = abs(fine - coarse) / 3.0
    scale = max(abs(extrapolated), 1e-300)
    if err / scale > 1e-3 and err > 1e-14:
        raise RuntimeError(
            f"qfi_numeric did not converge: h and h/2 differ by "
            f"{err / scale:.3e} relative; reduce h"
        )
    return extrapolated


def sld_pure(state: CompositeState, derivative_state):
    """Symmetric logarithmic derivative of a pure-state family.

    For L = 2(|psi><d psi| + |d psi><psi|) with <psi|d psi> = 0 the
    eigenpairs are |d psi> +- s |psi> with eigenvalues +-2s,
    s = sqrt(<d psi|d psi>).  Returns (vec_plus, vec_minus,
    (l_plus, l_minus)) with normalized CompositeState eigenvectors.
    """
    psi = _state_vector(state)
    dpsi = _state_vector(derivative_state)
    if psi.shape != dpsi.shape:
        raise ValueError("state and derivative live on different spaces")
    overlap = np.vdot(psi, dpsi)
    if abs(overlap) > 1e-6:
        raise ValueError(
            f"<psi|d psi> = {abs(overlap):.3e} is not zero; the SLD "
            "eigenpair form holds only at the orthogonal readout point"
        )
    s = sqrt(float(np.vdot(dpsi, dpsi).real))
    basis = state.basis if isinstance(state, CompositeState) else None
    if s == 0.0:
        zero = psi.copy()
        vp = CompositeState(basis, zero) if basis else zero
        return vp, vp, (0.0, 0.0)
    plus = dpsi + s * psi
    minus = dpsi - s * psi
    plus = plus / np.linalg.norm(plus)
    minus = minus / np.linalg.norm(minus)
    if basis is not None:
        plus = CompositeState(basis, plus)
        minus = CompositeState(basis, minus)
    return plus, minus, (2.0 * s, -2.0 * s)


# ===================== consolidated reports =====================

def _units_for(parameter: str, phonon: bool) -> dict:
    if parameter in _UNIT_TABLE:
        mdu, fu, crbu = _UNIT_TABLE[parameter]
    else:
        mdu, fu, crbu = "", "", ""
    return {
        "signal": "phonons" if phonon else "dimensionless",
        "variance": "phonons^2" if phonon else "dimensionless",
        "snr": "dimensionless",
        "fisher_classical": fu,
        "fisher_quantum": fu,
        "cramer_rao_bound": crbu,
        "min_detectable": mdu,
    }


def _spin_report(signal: float, spec: dict) -> EstimationReport:
    parameter = spec.get("parameter", "force_difference")
    n_exp = int(spec.get("n_experiments", 1))
    variance = 1.0 - signal ** 2
    if variance <= 0.0:
        raise ValueError("degenerate two-outcome readout: |signal| >= 1")
    snr = signal / sqrt(variance)

    fisher_cl = None
    fisher_q = None
    min_det = None
    p: ProbeParams | None = spec.get("probe")
    pert = spec.get("perturbation")
    if p is not None and pert is not None:
        if isinstance(pert, ForceField):
            d = demkov_reduction(p, pert)
            dalpha = d.dalpha_dF if parameter != "force_phase" else d.dalpha_dxi
            fisher_cl = (pi * dalpha / (2.0 * p.gamma)) ** 2 * variance
            t_f = spec.get("t_final", 8.0 / p.gamma)
            which = "phase" if parameter == "force_phase" else "force"
            fisher_q = qfi_adiabatic(d, t_f, which)
            if parameter != "force_phase":
                min_det = minimal_detectable(p, "force_adiabatic")
        elif isinstance(pert, MagneticField):
            d = demkov_reduction(p, b=pert, order=spec.get("order", "antiferro"))
            dz = abs(pert.z_positions[0] - pert.z_positions[1])
            dalpha = gyromagnetic_rate(pert.gJ) * dz / 1e3  # krad/s per T/m
            fisher_cl = (pi * dalpha / (2.0 * p.gamma)) ** 2 * variance
            t_f = spec.get("t_final", 8.0 / p.gamma)
            fisher_q = qfi_adiabatic(replace(d, dalpha_dF=dalpha), t_f, "force")
            min_det = minimal_detectable(p, "magnetic", b=pert)

    crb = None
    if fisher_cl is not None and fisher_cl > 0.0:
        crb = 1.0 / (n_exp * fisher_cl)
    caveat = _JOINT_CAVEAT if parameter in ("force_difference", "force_phase") else ""
    return EstimationReport(
        parameter=parameter,
        signal=float(signal),
        variance=float(variance),
        snr=float(snr),
        fisher_classical=fisher_cl,
        fisher_quantum=fisher_q,
        cramer_rao_bound=crb,
        min_detectable=min_det,
        n_experiments=n_exp,
        units=_units_for(parameter, phonon=False),
        caveat=caveat,
    )


def _phonon_report(signal: float, variance: float, spec: dict) -> EstimationReport:
    parameter = spec.get("parameter", "force_difference")
    n_exp = int(spec.get("n_experiments", 1))
    if variance <= 0.0:
        raise ValueError("degenerate phonon readout: zero variance")
    snr = signal / sqrt(variance)
    sd = spec.get("squeeze")
    fisher_q = None
    min_det = None
    if sd is not None:
        which = "phase" if parameter == "force_phase" else "force"
        fisher_q = qfi_cho(sd, which, phi=spec.get("phi", 0.0), xi=spec.get("xi", 0.0))
        p = spec.get("probe")
        if p is not None and parameter != "force_phase":
            min_det = minimal_detectable(p, "force_cho", mode=sd.mode)
    crb = None
    if isinstance(fisher_q, (int, float)) and fisher_q > 0.0:
        crb = 1.0 / (n_exp * fisher_q)
    return EstimationReport(
        parameter=parameter,
        signal=float(signal),
        variance=float(variance),
        snr=float(snr),
        fisher_classical=None,
        fisher_quantum=fisher_q,
        cramer_rao_bound=crb,
        min_detectable=min_det,
        n_experiments=n_exp,
        units=_units_for(parameter, phonon=True),
        caveat="",
    )


def snr_report(source, spec: dict | None = None) -> EstimationReport:
    """Condense a signal source into an EstimationReport.

    Accepted sources: an AdiabaticRunResult (spin readout, simulated),
    a bare float signal (spin readout, closed form), SqueezeDisplaceParams
    (phonon readout, closed form at t_star), or a Trajectory whose
    recorded columns include the readout observable (spec keys
    ``signal_label`` and, for exact moments, ``square_label``).
    """
    spec = dict(spec or {})
    if isinstance(source, AdiabaticRunResult):
        return _spin_report(source.sigma_z[0], spec)
    if isinstance(source, SqueezeDisplaceParams):
        spec.setdefault("squeeze", source)
        t = spec.get("time", source.t_star)
        signal = float(mean_phonon_signal(source, t))
        variance = float(mean_phonon_variance(source, t))
        return _phonon_report(signal, variance, spec)
    if isinstance(source, Trajectory):
        label = spec.get("signal_label")
        if label is None or label not in source.labels:
            raise ValueError("spec must name a recorded observable via 'signal_label'")
        idx = int(spec.get("time_index", -1))
        col = source.labels.index(label)
        signal = float(source.observable_values[idx, col])
        square_label = spec.get("square_label")
        if square_label is not None:
            col2 = source.labels.index(square_label)
            variance = float(source.observable_values[idx, col2]) - signal ** 2
            return _phonon_report(signal, variance, spec)
        return _spin_report(signal, spec)
    if isinstance(source, (int, float)):
        return _spin_report(float(source), spec)
    raise TypeError(f"unsupported signal source {type(source).__name__}")
