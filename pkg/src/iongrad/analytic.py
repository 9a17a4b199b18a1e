"""Closed-form signals, sensitivities, and Fisher information.

Covers the adiabatic spin-readout protocol (tanh signal laws, two-state
sweep amplitudes, classical and quantum Fisher information) and the
strong-drive phonon-readout protocol (squeezed-displaced mode dynamics,
mean phonon signal, readout-time root solving, Fisher information).

Sign bookkeeping for the tanh laws: the slow sweep funnels population
toward the manifold state whose perturbation energy is lower, so every
signal is tanh(pi * D / Gamma_d) with D half the diagonal energy
splitting of the two-state reduction and Gamma_d the coupling decay
rate (2*gamma for two ions, 3*gamma for three).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import asinh, atan, cos, cosh, log, pi, sin, sinh, sqrt, tanh

import numpy as np

from .models import (
    HBAR_SI,
    RAD_S_PER_INTERNAL,
    ForceField,
    MagneticField,
    ProbeParams,
    collective_transform,
    force_drive_rate,
    gyromagnetic_rate,
    zeta_sq,
)
from .specfun import complex_digamma, complex_gamma, complex_log_gamma

__all__ = [
    "DemkovClosedForm",
    "SqueezeDisplaceParams",
    "KappaStarResult",
    "TaggedInfinite",
    "adiabatic_signal_force",
    "adiabatic_signal_magnetic",
    "classical_fisher",
    "complex_digamma",
    "complex_gamma",
    "complex_log_gamma",
    "demkov_closed_amplitudes",
    "demkov_coupling",
    "demkov_reduction",
    "heisenberg_mode_coefficients",
    "kappa_star_solve",
    "mean_phonon_signal",
    "mean_phonon_variance",
    "minimal_detectable",
    "qfi_adiabatic",
    "qfi_cho",
    "squeeze_displace_params",
]

BESSEL_X_LIMIT = 50.0


class TaggedInfinite:
    """Marker for a formally divergent sensitivity (critical coupling)."""

    def __init__(self, reason: str):
        self.reason = reason
        self.is_infinite = True

    def __repr__(self):
        return f"TaggedInfinite({self.reason!r})"

    def __str__(self):
        return f"diverges: {self.reason}"


# ===================== adiabatic protocol: two-state reduction =====================

def _uniform_phase(p: ProbeParams) -> float:
    phi = p.phi[0]
    if any(abs(v - phi) > 1e-12 for v in p.phi):
        raise ValueError("closed forms assume a common laser phase phi")
    return phi


def _base_coupling(p: ProbeParams) -> float:
    """|g| of the uniform-coupling pattern the closed forms assume."""
    g = abs(p.g[0])
    if p.num_ions == 2:
        ok = all(abs(abs(v) - g) < 1e-9 * max(g, 1.0) for v in p.g)
    else:
        ok = (
            abs(abs(p.g[0]) - g) < 1e-9 * max(g, 1.0)
            and abs(abs(p.g[2]) - g) < 1e-9 * max(g, 1.0)
            and abs(abs(p.g[1]) - sqrt(2.0) * g) < 1e-9 * max(g, 1.0)
        )
    if not ok:
        raise ValueError("coupling pattern does not match the closed-form assumption")
    return g


def force_asymmetry(p: ProbeParams, f: ForceField) -> float:
    """Half the diagonal splitting D of the force-biased ground manifold,
    in krad/s.  Two ions: D = g x0 (F1-F2) cos(phi-xi) / (hbar omega_r);
    three ions: same with F1 - sqrt(2) F2 + F3."""
    modes = collective_transform(p)
    g = _base_coupling(p)
    phi = _uniform_phase(p)
    if p.num_ions == 2:
        f_minus = f.F[0] - f.F[1]
    else:
        f_minus = f.F[0] - sqrt(2.0) * f.F[1] + f.F[2]
    eps = force_drive_rate(f_minus, p.x0)
    return 2.0 * g * eps * cos(phi - f.xi) / modes.omega_r


def magnetic_asymmetry(p: ProbeParams, b: MagneticField, order: str = "antiferro") -> float:
    """Half the diagonal splitting D of the gradient-biased manifold, krad/s."""
    if p.num_ions != 2:
        raise ValueError("magnetic closed forms are two-ion only")
    dB = b.detunings()
    if order == "antiferro":
        return dB[1] - dB[0]
    if order == "ferro":
        return -(dB[0] + dB[1])
    raise ValueError("order must be 'antiferro' or 'ferro'")


def _decay_rate(p: ProbeParams) -> float:
    """Effective coupling decay of the two-state sweep: the manifold gap
    is bridged at order Omega^2 for two ions and Omega^3 for three."""
    return (2.0 if p.num_ions == 2 else 3.0) * p.gamma


def adiabatic_signal_force(p: ProbeParams, f: ForceField) -> tuple[float, float]:
    """Asymptotic (p_up of ion 1, <sigma_1^z>) of the adiabatic sweep."""
    if len(f.F) != p.num_ions:
        raise ValueError("ForceField must carry one magnitude per ion")
    modes = collective_transform(p)
    if modes.omega_r <= 0.0:
        raise ValueError("rocking frequency must be positive")
    arg = pi * force_asymmetry(p, f) / _decay_rate(p)
    sigma1z = tanh(arg)
    return 0.5 * (1.0 + sigma1z), sigma1z


def adiabatic_signal_magnetic(p: ProbeParams, b: MagneticField, order: str = "antiferro") -> float:
    """Asymptotic <sigma_1^z> under an offset-plus-gradient field.

    The staggered order senses only the gradient (the offset cancels in
    dB_2 - dB_1 identically); the aligned order (g_1 = -g_2) senses the
    sum dB_1 + dB_2.
    """
    arg = pi * magnetic_asymmetry(p, b, order) / (2.0 * p.gamma)
    return tanh(arg)


def demkov_coupling(p: ProbeParams, include_franck_condon: bool = True) -> float:
    """Initial two-state gap Delta_c = Omega(0)^2/4J, optionally dressed
    by the displaced-state overlap exp(-|a_c|^2 - |a_r|^2).  krad/s."""
    if p.num_ions != 2:
        raise ValueError("two-state gap formula is two-ion only")
    modes = collective_transform(p)
    g = _base_coupling(p)
    if modes.J <= 0.0:
        raise ValueError("need kappa > 0 for a positive manifold gap")
    delta_c = p.omega0 ** 2 / (4.0 * modes.J)
    if include_franck_condon:
        a_c = sqrt(2.0) * g / modes.omega_c
        a_r = sqrt(2.0) * g / modes.omega_r
        delta_c *= math.exp(-(a_c ** 2) - a_r ** 2)
    return delta_c


# ===================== Demkov closed forms =====================

@dataclass
class DemkovClosedForm:
    """Two-state sweep data: asymmetry alpha, slope gamma, both krad/s,
    and x = Delta_c/2 gamma.  Optional parameter derivatives of alpha
    (per newton, per radian) feed the Fisher-information forms."""

    alpha: float
    gamma: float
    x: float
    dalpha_dF: float | None = None
    dalpha_dxi: float | None = None

    @property
    def p(self) -> float:
        """alpha / 2 gamma, the tanh argument divided by pi."""
        return self.alpha / (2.0 * self.gamma)

    @property
    def beta(self) -> complex:
        return 0.5 + 1j * self.p

    def z(self, t: float):
        """(x/2) exp(-2 gamma t)."""
        return 0.5 * self.x * np.exp(-2.0 * self.gamma * np.asarray(t, dtype=float))


def demkov_reduction(
    p: ProbeParams,
    f: ForceField | None = None,
    b: MagneticField | None = None,
    order: str = "antiferro",
    include_franck_condon: bool = True,
) -> DemkovClosedForm:
    """Project the two-ion sweep onto its biased two-state model."""
    if p.num_ions != 2:
        raise ValueError("the two-state reduction is two-ion only")
    if (f is None) == (b is None):
        raise ValueError("pass exactly one of a force field or a magnetic field")
    if f is not None:
        alpha = force_asymmetry(p, f)
        modes = collective_transform(p)
        g = _base_coupling(p)
        phi = _uniform_phase(p)
        scale = 2.0 * g * cos(phi - f.xi) / modes.omega_r
        dalpha_dF = scale * force_drive_rate(1.0, p.x0)
        f_minus = f.F[0] - f.F[1]
        dalpha_dxi = 2.0 * g * force_drive_rate(f_minus, p.x0) * sin(phi - f.xi) / modes.omega_r
    else:
        alpha = magnetic_asymmetry(p, b, order)
        dalpha_dF = None
        dalpha_dxi = None
    delta_c = demkov_coupling(p, include_franck_condon)
    return DemkovClosedForm(
        alpha=alpha,
        gamma=p.gamma,
        x=delta_c / (2.0 * p.gamma),
        dalpha_dF=dalpha_dF,
        dalpha_dxi=dalpha_dxi,
    )


def demkov_closed_amplitudes(d: DemkovClosedForm, t, form: str = "asymptotic"):
    """Closed-form sweep amplitudes (c_plus, c_minus) at time(s) t.

    ``bessel`` is the exact solution in terms of complex-order Bessel
    functions, usable for x <= 50; ``asymptotic`` is the late-time form
    (t well past 1/gamma), exactly normalized through the Gamma-modulus
    identity.  c_plus belongs to the state favored for alpha > 0, so
    |c_plus|^2 is the ion-1 spin-up probability of the sweep.
    """
    t = np.asarray(t, dtype=float)
    pv = d.p
    if form == "asymptotic":
        z = d.z(t)
        pref = sqrt(pi / 2.0) / cosh(pi * pv)
        gamma_m = complex_gamma(0.5 - 1j * pv)
        gamma_p = complex_gamma(0.5 + 1j * pv)
        phase = np.exp(1j * d.x)
        c_plus = pref * phase * z ** (-1j * pv) * math.exp(pi * pv / 2.0) / gamma_m
        c_minus = pref * phase * z ** (1j * pv) * math.exp(-pi * pv / 2.0) / gamma_p
        return c_plus, c_minus
    if form == "bessel":
        if d.x > BESSEL_X_LIMIT:
            raise ValueError(
                f"bessel form unsupported for x = {d.x:.3g} > {BESSEL_X_LIMIT:g}; "
                "use the asymptotic form or the ODE integrator"
            )
        import mpmath as mp

        with mp.workdps(40):
            beta = mp.mpc(0.5, pv)
            x = mp.mpf(d.x)
            jb_x = mp.besselj(beta, x)
            jmb_x = mp.besselj(-beta, x)
            j1mb_x = mp.besselj(1 - beta, x)
            jbm1_x = mp.besselj(beta - 1, x)
            coef_pp = j1mb_x - 1j * jmb_x
            coef_pm = jbm1_x + 1j * jb_x
            coef_mp = jmb_x + 1j * j1mb_x
            coef_mm = jb_x - 1j * jbm1_x
            cp, cm = [], []
            for ti in np.atleast_1d(t):
                y = x * mp.e ** (-2.0 * d.gamma * float(ti))
                pref = (
                    mp.pi * x * mp.e ** (-d.gamma * float(ti))
                    / (2.0 * mp.sqrt(2.0) * mp.cosh(mp.pi * pv))
                )
                cp.append(complex(pref * (coef_pp * mp.besselj(beta, y)
                                          + coef_pm * mp.besselj(-beta, y))))
                cm.append(complex(pref * (coef_mp * mp.besselj(beta - 1, y)
                                          + coef_mm * mp.besselj(1 - beta, y))))
        cp = np.array(cp)
        cm = np.array(cm)
        if t.ndim == 0:
            return cp[0], cm[0]
        return cp, cm
    raise ValueError("form must be 'bessel' or 'asymptotic'")


def qfi_demkov_kernel(pv: float, z: float) -> float:
    """Sweep-sensitivity kernel [pi^2 + 4(ln z - Re psi(1/2+ip))^2]/cosh^2(pi p).

    Multiplied by (d p / d theta)^2 it gives the quantum Fisher
    information of the asymptotic two-state amplitudes.
    """
    ell = log(z) - complex_digamma(0.5 + 1j * pv).real
    return (pi ** 2 + 4.0 * ell ** 2) / cosh(pi * pv) ** 2


def qfi_adiabatic(d: DemkovClosedForm, t_f: float, which: str = "force") -> float:
    """Quantum Fisher information of the sweep at readout time t_f,
    per newton^2 (force) or per radian^2 (phase)."""
    if which == "force":
        dalpha = d.dalpha_dF
    elif which == "phase":
        dalpha = d.dalpha_dxi
    else:
        raise ValueError("which must be 'force' or 'phase'")
    if dalpha is None:
        raise ValueError(
            "this DemkovClosedForm has no parameter derivatives; "
            "construct it with demkov_reduction(p, f)"
        )
    dp_dtheta = dalpha / (2.0 * d.gamma)
    return qfi_demkov_kernel(d.p, float(d.z(t_f))) * dp_dtheta ** 2


# ===================== classical estimation layer =====================

def classical_fisher(p: ProbeParams, f: ForceField, which: str = "force") -> float:
    """Two-outcome Fisher information of the ion-1 spin readout,
    per newton^2 (force difference) or per radian^2 (force phase)."""
    if p.num_ions != 2:
        raise ValueError("classical Fisher forms are two-ion only")
    d = demkov_reduction(p, f)
    a = pi * d.p
    if which == "force":
        slope = pi * d.dalpha_dF / (2.0 * p.gamma)
    elif which == "phase":
        slope = pi * d.dalpha_dxi / (2.0 * p.gamma)
    else:
        raise ValueError("which must be 'force' or 'phase'")
    return slope ** 2 / cosh(a) ** 2


def minimal_detectable(
    p: ProbeParams,
    which: str,
    b: MagneticField | None = None,
    mode: str = "rock",
) -> float:
    """Smallest input giving unit signal-to-noise.

    ``force_adiabatic``: force difference [N] at phi = xi;
    ``magnetic``: gradient [T/m] (needs ``b`` for Lande factor and ion
    spacing); ``force_cho``: mode-resolved force combination [N] for the
    phonon readout at xi = phi.
    """
    modes = collective_transform(p)
    if which == "force_adiabatic":
        g = _base_coupling(p)
        eps_min = p.gamma * modes.omega_r * asinh(1.0) / (pi * g)
        return eps_min * RAD_S_PER_INTERNAL * 2.0 * HBAR_SI / p.x0
    if which == "magnetic":
        if b is None:
            raise ValueError("magnetic branch needs a MagneticField for gJ and spacing")
        dz = abs(b.z_positions[0] - b.z_positions[1])
        lam = gyromagnetic_rate(b.gJ)
        return 2.0 * (p.gamma * RAD_S_PER_INTERNAL) * asinh(1.0) / (pi * lam * dz)
    if which == "force_cho":
        omega_q = {"com": modes.omega_c, "rock": modes.omega_r}[mode]
        zq = zeta_sq(p, omega_q)
        return sqrt(2.0) * HBAR_SI * (omega_q * RAD_S_PER_INTERNAL) * (1.0 - zq) / p.x0
    raise ValueError("which must be force_adiabatic, magnetic, or force_cho")


# ===================== strong-drive phonon readout =====================

@dataclass
class SqueezeDisplaceParams:
    """Per-mode data of the strong-drive quadratic reduction.

    omega_q and theta in krad/s; nu, zeta_sq, alpha dimensionless;
    t_star in internal time (ms).  F_q [N] and x0 [m] are kept so the
    Fisher forms can differentiate with respect to the force.
    """

    mode: str
    omega_q: float
    zeta_sq: float
    nu: float
    alpha: complex
    theta: float
    t_star: float
    F_q: float = 0.0
    x0: float = 0.0


def squeeze_displace_params(p: ProbeParams, f: ForceField, mode: str = "rock") -> SqueezeDisplaceParams:
    """Squeeze/displace data of one collective mode under a force kick."""
    if p.num_ions != 2:
        raise ValueError("the phonon-readout reduction is two-ion only")
    if len(f.F) != 2:
        raise ValueError("ForceField must carry two magnitudes")
    modes = collective_transform(p)
    omega_q = {"com": modes.omega_c, "rock": modes.omega_r}[mode]
    zq = zeta_sq(p, omega_q)
    if zq >= 1.0:
        raise ValueError(f"critical or supercritical coupling: zeta^2 = {zq:.6g} >= 1")
    nu = -0.25 * log(1.0 - zq)
    theta = omega_q * sqrt(1.0 - zq)
    F_q = f.F[0] + f.F[1] if mode == "com" else f.F[0] - f.F[1]
    chi = f.xi - _uniform_phase(p)
    eps_q = force_drive_rate(F_q, p.x0) / sqrt(2.0)
    alpha = (eps_q / theta) * (
        cosh(2.0 * nu) * np.exp(1j * chi) + sinh(2.0 * nu) * np.exp(-1j * chi)
    )
    return SqueezeDisplaceParams(
        mode=mode,
        omega_q=omega_q,
        zeta_sq=zq,
        nu=nu,
        alpha=complex(alpha),
        theta=theta,
        t_star=pi / theta,
        F_q=F_q,
        x0=p.x0,
    )


def heisenberg_mode_coefficients(sd: SqueezeDisplaceParams, t):
    """Coefficients of a(t) = A a + B a^dag + C for the quadratic mode.

    Evaluated in the frame where the squeeze axis is real; the number
    operator does not care about that rotation.
    """
    th = sd.theta * np.asarray(t, dtype=float)
    A = np.cos(th) - 1j * cosh(2.0 * sd.nu) * np.sin(th)
    B = 1j * sinh(2.0 * sd.nu) * np.sin(th)
    C = sd.alpha * (A - 1.0) + np.conj(sd.alpha) * B
    return A, B, C


def mean_phonon_signal(sd: SqueezeDisplaceParams, t):
    """Mean phonon number of one collective mode started in vacuum."""
    th = sd.theta * np.asarray(t, dtype=float)
    m2 = abs(sd.alpha) ** 2
    big_phi = np.angle(sd.alpha) if m2 > 0.0 else 0.0
    s2, s4 = sinh(2.0 * sd.nu), sinh(4.0 * sd.nu)
    n = (
        m2 * sin(2.0 * big_phi) * s2 * (np.sin(2.0 * th) - 2.0 * np.sin(th))
        - m2 * cos(2.0 * big_phi) * s4 * np.sin(th) ** 2
        - 2.0 * m2 * np.cos(th)
        - 0.5 * (1.0 + 2.0 * m2) * s2 ** 2 * np.cos(2.0 * th)
        + 0.5 * (m2 * cosh(4.0 * sd.nu) + s2 ** 2 + 3.0 * m2)
    )
    return n if n.ndim else float(n)


def mean_phonon_variance(sd: SqueezeDisplaceParams, t):
    """Exact variance of the mode occupation at time(s) t."""
    A, B, C = heisenberg_mode_coefficients(sd, t)
    var = np.abs(np.conj(A) * C + np.conj(C) * B) ** 2 + 2.0 * (np.abs(A) * np.abs(B)) ** 2
    return var if var.ndim else float(var)


@dataclass
class KappaStarResult:
    """Hopping rate that makes both mode phases hit odd multiples of pi."""

    kappa: float
    x: float
    t_star: float
    residual: float


def kappa_star_solve(delta: float, zeta_sq: float, k_c: int, k_r: int) -> KappaStarResult:
    """Solve for the hopping rate kappa with simultaneous mode readout.

    Finds x = kappa/delta in (0, 1) with
    (1-x)(1-x-zeta^2) = (k_r/k_c)^2 (1+x)(1+x-zeta^2), where zeta^2 is
    referenced to delta; k_c > k_r are the odd phase multiples of the
    two modes at the common readout time t_star.
    """
    if k_c % 2 == 0 or k_r % 2 == 0 or k_c <= 0 or k_r <= 0:
        raise ValueError("k_c and k_r must be positive odd integers")
    if k_c <= k_r:
        raise ValueError("need k_c > k_r")
    if not 0.0 <= zeta_sq < 1.0:
        raise ValueError("zeta^2 must sit in [0, 1)")
    R2 = (k_r / k_c) ** 2
    a = 1.0 - R2
    bq = (2.0 - zeta_sq) * (1.0 + R2)
    c = (1.0 - zeta_sq) * (1.0 - R2)
    disc = bq * bq - 4.0 * a * c
    if disc < 0.0:
        raise ValueError("no real readout-matching root")
    x = (bq - sqrt(disc)) / (2.0 * a)

    def residual_of(xv: float) -> float:
        return (1.0 - xv) * (1.0 - xv - zeta_sq) - R2 * (1.0 + xv) * (1.0 + xv - zeta_sq)

    # one Newton polish to push the residual to rounding level
    h = 1e-7
    slope = (residual_of(x + h) - residual_of(x - h)) / (2.0 * h)
    if slope != 0.0:
        x -= residual_of(x) / slope
    if not 0.0 < x < 1.0:
        raise ValueError(f"readout-matching root x = {x:.6g} fell outside (0, 1)")
    kappa = x * delta
    omega_c, omega_r = delta + kappa, delta - kappa
    zc = zeta_sq * delta / omega_c
    theta_c = omega_c * sqrt(1.0 - zc)
    t_star = k_c * pi / theta_c
    return KappaStarResult(kappa=kappa, x=x, t_star=t_star, residual=abs(residual_of(x)))


def qfi_cho(
    sd: SqueezeDisplaceParams,
    which: str,
    phi: float = 0.0,
    xi: float = 0.0,
):
    """Quantum Fisher information of the phonon readout at t_star.

    ``force``: per newton^2 of the mode force component F_q;
    ``phase``: per radian^2 of the kick phase xi.  Returns a
    TaggedInfinite marker at (effectively) critical coupling.
    """
    if sd.zeta_sq >= 1.0 - 1e-9:
        return TaggedInfinite(
            f"critical coupling on mode {sd.mode}: zeta^2 = {sd.zeta_sq:.12g}"
        )
    chi = xi - phi
    nu = sd.nu
    theta_rad = sd.theta * RAD_S_PER_INTERNAL
    if which == "force":
        if sd.x0 <= 0.0:
            raise ValueError("SqueezeDisplaceParams lacks x0; build via squeeze_displace_params")
        scale = sd.x0 / (2.0 * sqrt(2.0) * HBAR_SI * theta_rad)
        mod2 = cosh(4.0 * nu) + sinh(4.0 * nu) * cos(2.0 * chi)
        return 16.0 * scale ** 2 * mod2
    if which == "phase":
        eps_rad = force_drive_rate(sd.F_q, sd.x0) * RAD_S_PER_INTERNAL / sqrt(2.0)
        scale = eps_rad / theta_rad
        mod2 = cosh(4.0 * nu) - sinh(4.0 * nu) * cos(2.0 * chi)
        return 16.0 * scale ** 2 * mod2
    raise ValueError("which must be 'force' or 'phase'")


def phonon_phase_angle(sd: SqueezeDisplaceParams, chi: float) -> float:
    """Displacement angle tan^-1[(1-zeta^2) tan(chi)] on the principal branch."""
    return atan((1.0 - sd.zeta_sq) * math.tan(chi))
