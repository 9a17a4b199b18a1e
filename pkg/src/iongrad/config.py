"""Scenario files: INI sections with mandatory unit suffixes.

Every dimensional value must carry a unit suffix ("gamma = 0.1 krad_s",
"F1 = 3.78 yN").  A bare number on a dimensional key is a hard error
with the line and column of the offender; silent unit guessing is how
reproductions go wrong.  Internally everything is krad/s, ms, meters,
tesla, newtons.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

from .models import ForceField, MagneticField, ProbeParams

# factors that take "<number> <suffix>" to the internal unit
_FREQUENCY = {"krad_s": 1.0, "kHz_paper": 1.0, "Hz_si": 2.0 * math.pi * 1e-3}
_UNITS = {
    "frequency": _FREQUENCY,
    "force": {"N": 1.0, "yN": 1e-24},
    "field": {"T": 1.0, "uT": 1e-6, "nT": 1e-9},
    "gradient": {"T_per_m": 1.0, "T_per_um": 1e6},
    "length": {"m": 1.0, "um": 1e-6, "nm": 1e-9},
    "angle": {"rad": 1.0, "pi_rad": math.pi},
    "time": {"ms": 1.0, "s": 1e3},
}

DEFAULT_N_MAX = 12
N_MAX_ENV = "IONGRAD_NMAX"


class ConfigError(Exception):
    """Malformed scenario file or override (CLI exit code 2)."""


def _known_suffixes() -> dict:
    table = {}
    for dim, units in _UNITS.items():
        for suffix in units:
            table[suffix] = dim
    return table


_SUFFIX_DIM = _known_suffixes()


def parse_quantity(text: str, dimension: str, where: str = "") -> float:
    """One number with a suffix of the given dimension -> internal value."""
    parts = text.strip().split()
    loc = f" at {where}" if where else ""
    if len(parts) == 1:
        try:
            float(parts[0])
        except ValueError:
            raise ConfigError(f"cannot parse {text!r} as a quantity{loc}") from None
        col = len(text.rstrip()) + 1
        raise ConfigError(
            f"missing unit suffix on {text.strip()!r}{loc} (column {col}); "
            f"expected one of {sorted(_UNITS[dimension])}"
        )
    if len(parts) != 2:
        raise ConfigError(f"cannot parse {text!r} as '<number> <unit>'{loc}")
    value, suffix = parts
    try:
        number = float(value)
    except ValueError:
        raise ConfigError(f"bad number {value!r}{loc}") from None
    units = _UNITS[dimension]
    if suffix not in units:
        if suffix in _SUFFIX_DIM:
            raise ConfigError(
                f"unit {suffix!r} is a {_SUFFIX_DIM[suffix]} unit but "
                f"{where or 'this key'} needs a {dimension} unit"
            )
        raise ConfigError(
            f"unknown unit {suffix!r}{loc}; expected one of {sorted(units)}"
        )
    return number * units[suffix]


def parse_quantity_list(text: str, dimension: str, where: str = "") -> tuple:
    return tuple(
        parse_quantity(item, dimension, where) for item in text.split(",") if item.strip()
    )


def _parse_number(text: str, where: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise ConfigError(f"bad number {text!r} at {where}") from None


def _parse_int(text: str, where: str) -> int:
    value = _parse_number(text, where)
    if value != int(value):
        raise ConfigError(f"{where} must be an integer, got {text!r}")
    return int(value)


@dataclass(frozen=True)
class SweepSpec:
    """One scan axis: a dotted parameter name plus a grid."""

    axis: str
    start: float
    stop: float
    points: int
    include_stop: bool = True
    protocol: str = "adiabatic"   # adiabatic | phonon
    parameter: str = "force_difference"
    mode: str = "rock"
    numeric: bool = False

    def values(self) -> list:
        if self.points < 2:
            raise ConfigError("sweep needs points >= 2")
        span = self.stop - self.start
        denom = self.points - 1 if self.include_stop else self.points
        return [self.start + span * k / denom for k in range(self.points)]


@dataclass(frozen=True)
class RunSettings:
    t_final: float | None = None     # None: 10/gamma
    tolerance: float = 1e-5
    method: str = "auto"
    record_stride: int = 500


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything one run needs, normalized to internal units."""

    name: str
    probe: ProbeParams
    force: ForceField | None = None
    magnetic: MagneticField | None = None
    sweep: SweepSpec | None = None
    run: RunSettings = field(default_factory=RunSettings)
    f1_series: tuple = ()            # fig1-style force pairs
    bprime_series: tuple = ()        # fig2-style gradient family
    max_deviation: float | None = None
    k_indices: tuple = (3, 1)        # phonon-protocol echo times (k_c, k_r)

    def t_final(self) -> float:
        if self.run.t_final is not None:
            return self.run.t_final
        if self.probe.gamma <= 0.0:
            raise ConfigError("t_final = auto needs a positive gamma")
        return 10.0 / self.probe.gamma


# key -> (dimension, list allowed); dimensionless keys are handled apart
_PROBE_KEYS = {
    "omega0": "frequency",
    "gamma": "frequency",
    "delta": "frequency",
    "kappa": "frequency",
    "g": "frequency",
    "phi": "angle",
    "x0": "length",
}
_FORCE_KEYS = {"F1": "force", "F2": "force", "F3": "force", "xi": "angle"}
_MAGNETIC_KEYS = {
    "B0": "field",
    "Bprime": "gradient",
    "z1": "length",
    "z2": "length",
}
_AXIS_DIMENSIONS = {
    "probe.omega0": "frequency",
    "probe.gamma": "frequency",
    "probe.delta": "frequency",
    "probe.kappa": "frequency",
    "probe.g": "frequency",
    "probe.phi": "angle",
    "force.F1": "force",
    "force.F2": "force",
    "force.F3": "force",
    "force.xi": "angle",
    "magnetic.B0": "field",
    "magnetic.Bprime": "gradient",
    "time": "time",
    "zeta_r_sq": None,
    "zeta_c_sq": None,
}


def _line_of(raw: str, section: str, key: str) -> str:
    """Best-effort source location of a key for error messages."""
    in_section = False
    for lineno, line in enumerate(raw.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            in_section = stripped[1:-1].strip() == section
            continue
        if in_section and stripped.lower().startswith(key.lower()):
            head = stripped[len(key):].lstrip()
            if head.startswith("=") or head.startswith(":"):
                col = line.lower().index(key.lower()) + 1
                return f"line {lineno}, column {col}"
    return f"section [{section}], key {key}"


class _Sections:
    """configparser wrapper that tracks consumed keys and locations."""

    def __init__(self, parser: configparser.ConfigParser, raw: str):
        self.parser = parser
        self.raw = raw
        self.seen: dict[str, set] = {}

    def where(self, section: str, key: str) -> str:
        return _line_of(self.raw, section, key)

    def get(self, section: str, key: str, default=None):
        if not self.parser.has_option(section, key):
            return default
        self.seen.setdefault(section, set()).add(key)
        return self.parser.get(section, key)

    def require(self, section: str, key: str) -> str:
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"missing key {key!r} in section [{section}]")
        return value

    def quantity(self, section: str, key: str, dimension: str, default=None):
        text = self.get(section, key)
        if text is None:
            return default
        return parse_quantity(text, dimension, self.where(section, key))

    def required_quantity(self, section: str, key: str, dimension: str) -> float:
        return parse_quantity(
            self.require(section, key), dimension, self.where(section, key)
        )

    def quantity_list(self, section: str, key: str, dimension: str, default=()):
        text = self.get(section, key)
        if text is None:
            return default
        return parse_quantity_list(text, dimension, self.where(section, key))

    def reject_unknown(self) -> None:
        for section in self.parser.sections():
            known = self.seen.get(section, set())
            for key in self.parser.options(section):
                if key not in known:
                    raise ConfigError(
                        f"unknown key {key!r} in section [{section}] "
                        f"({self.where(section, key)})"
                    )


def _resolve_n_max(sections: _Sections, override: int | None) -> int:
    # read the config key even when overridden, so it counts as consumed
    text = sections.get("probe", "n_max")
    if override is not None:
        return override
    if text is not None:
        return _parse_int(text, sections.where("probe", "n_max"))
    env = os.environ.get(N_MAX_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{N_MAX_ENV} must be an integer, got {env!r}") from None
    return DEFAULT_N_MAX


def _probe_from(sections: _Sections, n_max_override: int | None) -> ProbeParams:
    sec = "probe"
    if not sections.parser.has_section(sec):
        raise ConfigError("scenario needs a [probe] section")
    num_ions = _parse_int(sections.get(sec, "num_ions", "2"), sections.where(sec, "num_ions"))
    g = sections.quantity_list(sec, "g", "frequency")
    if not g:
        raise ConfigError("missing key 'g' in section [probe]")
    if len(g) == 1:
        if num_ions == 3:
            g = (g[0], math.sqrt(2.0) * g[0], g[0])
        else:
            g = g * num_ions
    phi = sections.quantity_list(sec, "phi", "angle", (0.0,))
    if len(phi) == 1:
        phi = phi * num_ions
    try:
        return ProbeParams(
            num_ions=num_ions,
            omega0=sections.required_quantity(sec, "omega0", "frequency"),
            gamma=sections.quantity(sec, "gamma", "frequency", 0.0),
            delta=sections.required_quantity(sec, "delta", "frequency"),
            kappa=sections.required_quantity(sec, "kappa", "frequency"),
            g=g,
            phi=phi,
            x0=sections.quantity(sec, "x0", "length", 14.5e-9),
            n_max=_resolve_n_max(sections, n_max_override),
        )
    except ValueError as exc:
        raise ConfigError(f"bad [probe] section: {exc}") from None


def _force_from(sections: _Sections, probe: ProbeParams):
    sec = "force"
    if not sections.parser.has_section(sec):
        return None, ()
    f1_series = sections.quantity_list(sec, "F1", "force")
    if not f1_series:
        raise ConfigError("missing key 'F1' in section [force]")
    xi = sections.quantity(sec, "xi", "angle", 0.0)
    rest = [sections.quantity(sec, "F2", "force", 0.0)]
    if probe.num_ions == 3:
        rest.append(sections.quantity(sec, "F3", "force", 0.0))
    force = ForceField(F=(f1_series[0], *rest), xi=xi)
    return force, f1_series


def _magnetic_from(sections: _Sections):
    sec = "magnetic"
    if not sections.parser.has_section(sec):
        return None, ()
    bp_series = sections.quantity_list(sec, "Bprime", "gradient")
    if not bp_series:
        raise ConfigError("missing key 'Bprime' in section [magnetic]")
    z1 = sections.quantity(sec, "z1", "length")
    z2 = sections.quantity(sec, "z2", "length")
    if z1 is None or z2 is None:
        raise ConfigError("[magnetic] needs both z1 and z2 ion positions")
    gj_text = sections.get(sec, "gJ", "2")
    magnetic = MagneticField(
        B0=sections.quantity(sec, "B0", "field", 0.0),
        Bprime=bp_series[0],
        z_positions=(z1, z2),
        gJ=_parse_number(gj_text, sections.where(sec, "gJ")),
    )
    return magnetic, bp_series


def _sweep_from(sections: _Sections) -> SweepSpec | None:
    sec = "sweep"
    if not sections.parser.has_section(sec):
        return None
    axis = sections.require(sec, "axis").strip()
    if axis not in _AXIS_DIMENSIONS:
        raise ConfigError(
            f"unknown sweep axis {axis!r}; expected one of {sorted(_AXIS_DIMENSIONS)}"
        )
    dim = _AXIS_DIMENSIONS[axis]
    if dim is None:
        start = _parse_number(sections.require(sec, "start"), sections.where(sec, "start"))
        stop = _parse_number(sections.require(sec, "stop"), sections.where(sec, "stop"))
    else:
        start = parse_quantity(sections.require(sec, "start"), dim, sections.where(sec, "start"))
        stop = parse_quantity(sections.require(sec, "stop"), dim, sections.where(sec, "stop"))
    points = _parse_int(sections.require(sec, "points"), sections.where(sec, "points"))
    if points < 2:
        raise ConfigError("sweep needs points >= 2")
    include = sections.get(sec, "include_stop", "true").strip().lower()
    if include not in ("true", "false"):
        raise ConfigError("include_stop must be true or false")
    protocol = sections.get(sec, "protocol", "adiabatic").strip()
    if protocol not in ("adiabatic", "phonon"):
        raise ConfigError(f"unknown protocol {protocol!r}")
    numeric = sections.get(sec, "numeric", "false").strip().lower()
    if numeric not in ("true", "false"):
        raise ConfigError("numeric must be true or false")
    return SweepSpec(
        axis=axis,
        start=start,
        stop=stop,
        points=points,
        include_stop=include == "true",
        protocol=protocol,
        parameter=sections.get(sec, "parameter", "force_difference").strip(),
        mode=sections.get(sec, "mode", "rock").strip(),
        numeric=numeric == "true",
    )


def _run_from(sections: _Sections) -> RunSettings:
    sec = "run"
    if not sections.parser.has_section(sec):
        return RunSettings()
    t_text = sections.get(sec, "t_final")
    if t_text is None or t_text.strip() == "auto":
        t_final = None
    else:
        t_final = parse_quantity(t_text, "time", sections.where(sec, "t_final"))
    tol_text = sections.get(sec, "tolerance", "1e-5")
    stride_text = sections.get(sec, "record_stride", "500")
    method = sections.get(sec, "method", "auto").strip()
    if method not in ("auto", "eig", "rk45", "dop853", "magnus2", "magnus4"):
        raise ConfigError(f"unknown method {method!r}")
    return RunSettings(
        t_final=t_final,
        tolerance=_parse_number(tol_text, sections.where(sec, "tolerance")),
        method=method,
        record_stride=_parse_int(stride_text, sections.where(sec, "record_stride")),
    )


def apply_overrides(raw: str, overrides: list[str]) -> str:
    """Fold --set section.key=value pairs into the raw INI text."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        target, value = item.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override key {target!r} needs a section prefix")
        section, key = (s.strip() for s in target.split(".", 1))
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())
    out = []
    for section in parser.sections():
        out.append(f"[{section}]")
        for key, val in parser.items(section):
            out.append(f"{key} = {val}")
        out.append("")
    return "\n".join(out)


def load_scenario(path_or_text: str, *, name: str = "custom",
                  overrides: list[str] | None = None,
                  n_max: int | None = None,
                  is_text: bool = False) -> ScenarioSpec:
    """Read one scenario file (or literal text) into internal units."""
    if is_text:
        raw = path_or_text
    else:
        try:
            with open(path_or_text, encoding="utf-8") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path_or_text!r}: {exc}") from None
    if overrides:
        raw = apply_overrides(raw, overrides)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str       # keys are case-sensitive (F1, Bprime)
    try:
        parser.read_string(raw)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    sections = _Sections(parser, raw)
    probe = _probe_from(sections, n_max)
    force, f1_series = _force_from(sections, probe)
    magnetic, bp_series = _magnetic_from(sections)
    sweep = _sweep_from(sections)
    run = _run_from(sections)

    max_dev = None
    if parser.has_section("report"):
        text = sections.get("report", "max_deviation")
        if text is not None:
            max_dev = _parse_number(text, sections.where("report", "max_deviation"))
    k_c = _parse_int(sections.get("run", "k_c", "3"), "run.k_c")
    k_r = _parse_int(sections.get("run", "k_r", "1"), "run.k_r")
    sections.reject_unknown()

    if force is not None and magnetic is not None:
        raise ConfigError("give either a [force] or a [magnetic] section, not both")
    return ScenarioSpec(
        name=name,
        probe=probe,
        force=force,
        magnetic=magnetic,
        sweep=sweep,
        run=run,
        f1_series=f1_series,
        bprime_series=bp_series,
        max_deviation=max_dev,
        k_indices=(k_c, k_r),
    )


def echo_normalized(spec: ScenarioSpec) -> dict:
    """Interpreted values in internal units, for validate-style audit."""
    from .models import collective_transform, force_drive_rate, gyromagnetic_rate

    p = spec.probe
    out: dict = {
        "name": spec.name,
        "probe": {
            "num_ions": p.num_ions,
            "omega0_krad_s": p.omega0,
            "gamma_krad_s": p.gamma,
            "delta_krad_s": p.delta,
            "kappa_krad_s": p.kappa,
            "g_krad_s": list(p.g),
            "phi_rad": list(p.phi),
            "x0_m": p.x0,
            "n_max": p.n_max,
        },
    }
    if p.num_ions == 2:
        modes = collective_transform(p)
        out["modes"] = {
            "omega_c_krad_s": modes.omega_c,
            "omega_r_krad_s": modes.omega_r,
            "J_krad_s": modes.J,
        }
    if spec.force is not None:
        f = spec.force
        out["force"] = {
            "F_N": list(f.F),
            "xi_rad": f.xi,
            "eps_krad_s": [force_drive_rate(F, p.x0) for F in f.F],
        }
        if len(spec.f1_series) > 1:
            out["force"]["F1_series_N"] = list(spec.f1_series)
    if spec.magnetic is not None:
        b = spec.magnetic
        out["magnetic"] = {
            "B0_T": b.B0,
            "Bprime_T_per_m": b.Bprime,
            "z_positions_m": list(b.z_positions),
            "gJ": b.gJ,
            "lambda_krad_s_per_T": gyromagnetic_rate(b.gJ) / 1e3,
            "detunings_krad_s": list(b.detunings()),
        }
        if len(spec.bprime_series) > 1:
            out["magnetic"]["Bprime_series_T_per_m"] = list(spec.bprime_series)
    if spec.sweep is not None:
        s = spec.sweep
        out["sweep"] = {
            "axis": s.axis,
            "start": s.start,
            "stop": s.stop,
            "points": s.points,
            "include_stop": s.include_stop,
            "protocol": s.protocol,
            "parameter": s.parameter,
            "mode": s.mode,
            "numeric": s.numeric,
        }
    try:
        t_final = spec.t_final()
    except ConfigError:
        t_final = None   # gamma = 0 with t_final = auto: no sweep timescale
    out["run"] = {
        "t_final_ms": t_final,
        "tolerance": spec.run.tolerance,
        "method": spec.run.method,
        "record_stride": spec.run.record_stride,
    }
    return out
