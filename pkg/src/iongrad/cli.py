"""Command-line runner: canned figures, parameter sweeps, config audit,
and direct closed-form evaluation.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 deviation
threshold breached (for CI gates).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analytic import (
    TaggedInfinite,
    adiabatic_signal_force,
    adiabatic_signal_magnetic,
    demkov_reduction,
    kappa_star_solve,
    mean_phonon_signal,
    mean_phonon_variance,
    minimal_detectable,
    qfi_adiabatic,
    qfi_cho,
    squeeze_displace_params,
)
from .config import ConfigError, ScenarioSpec, echo_normalized, load_scenario
from .dynamics import (
    ExpDriveHamiltonian,
    PropagationConfig,
    adiabatic_protocol_run,
    propagate,
)
from .hilbert import annihilation_op, identity_op, pauli_op
from .metrology import snr_report
from .models import (
    ForceField,
    MagneticField,
    ProbeParams,
    build_force_term,
    build_rabi_lattice,
    collective_transform,
    rabi_drive_coupling,
    rabi_static_part,
    transverse_ground_state,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_BREACH = 4

FIGURE_NAMES = ("fig1", "fig2", "fig3", "fig4", "fig5")


# ===================== deterministic emission =====================

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, TaggedInfinite):
        return "inf"
    if isinstance(value, str):
        return value
    return "%.17g" % float(value)


def write_csv(path: Path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n",
        encoding="utf-8", newline="\n",
    )


# ===================== canned config lookup =====================

def canned_config_path(name: str) -> Path:
    if name not in FIGURE_NAMES:
        raise ConfigError(
            f"unknown figure {name!r}; expected one of {FIGURE_NAMES}"
        )
    candidates = []
    env_dir = os.environ.get("IONGRAD_CONFIG_DIR")
    if env_dir:
        candidates.append(Path(env_dir))
    candidates.append(Path(__file__).resolve().parents[2] / "configs" / "paper")
    candidates.append(Path.cwd() / "configs" / "paper")
    for base in candidates:
        path = base / f"{name}.ini"
        if path.is_file():
            return path
    raise ConfigError(
        f"cannot locate configs/paper/{name}.ini (searched {[str(c) for c in candidates]}); "
        "pass --config explicitly"
    )


# ===================== sweep-axis plumbing =====================

def _scaled_g(probe: ProbeParams, g_base: float) -> tuple:
    ref = probe.g[0]
    if ref == 0.0:
        return (g_base,) * probe.num_ions
    return tuple(gi * (g_base / ref) for gi in probe.g)


def apply_axis(spec: ScenarioSpec, axis: str, value: float) -> ScenarioSpec:
    """Return a copy of the scenario with one swept parameter replaced."""
    p, f, b = spec.probe, spec.force, spec.magnetic
    if axis.startswith("probe."):
        key = axis.split(".", 1)[1]
        if key == "g":
            p = replace(p, g=_scaled_g(p, value))
        elif key == "phi":
            p = replace(p, phi=(value,) * p.num_ions)
        else:
            p = replace(p, **{key: value})
    elif axis.startswith("force."):
        if f is None:
            raise ConfigError(f"sweep axis {axis!r} needs a [force] section")
        key = axis.split(".", 1)[1]
        if key == "xi":
            f = replace(f, xi=value)
        else:
            idx = int(key[1:]) - 1
            F = list(f.F)
            if idx >= len(F):
                raise ConfigError(f"no such force component {key!r}")
            F[idx] = value
            f = replace(f, F=tuple(F))
    elif axis.startswith("magnetic."):
        if b is None:
            raise ConfigError(f"sweep axis {axis!r} needs a [magnetic] section")
        b = replace(b, **{axis.split(".", 1)[1]: value})
    elif axis in ("zeta_r_sq", "zeta_c_sq"):
        modes = collective_transform(p)
        omega = modes.omega_r if axis == "zeta_r_sq" else modes.omega_c
        if value <= 0.0:
            raise ConfigError("zeta^2 axis values must be positive")
        g_base = 0.5 * math.sqrt(value * p.omega0 * omega)
        p = replace(p, g=_scaled_g(p, g_base))
    elif axis == "time":
        pass
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    return replace(spec, probe=p, force=f, magnetic=b)


def _point_t_final(spec: ScenarioSpec) -> float:
    return spec.t_final()


# ===================== numeric endpoint worker =====================

def _endpoint_task(task):
    """Worker: one adiabatic protocol run, returns (key, <sigma_1^z>)."""
    key, probe, perturbation, t_final, run = task
    cfg = PropagationConfig(
        t_final=t_final,
        tolerance=run.tolerance,
        record_stride=run.record_stride,
        method=run.method,
    )
    result = adiabatic_protocol_run(probe, perturbation, t_final=t_final, cfg=cfg)
    return key, result.sigma_z[0]


def _run_endpoint_tasks(tasks: list, jobs: int) -> dict:
    results = {}
    if jobs <= 1 or len(tasks) <= 1:
        for task in tasks:
            key, value = _endpoint_task(task)
            results[key] = value
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for key, value in pool.map(_endpoint_task, tasks):
            results[key] = value
    return results


def _annotate(exc: Exception, label: str) -> Exception:
    exc.args = (f"{exc.args[0] if exc.args else exc} [{label}]",) + exc.args[1:]
    return exc


# ===================== figure drivers =====================

def _series_name_force(F1: float) -> str:
    return "sigma1z_F1_%gyN" % (F1 / 1e-24)


def _series_name_bprime(bp: float) -> str:
    return "sigma1z_Bprime_%gT_per_um" % (bp * 1e-6)


def _fig1(spec: ScenarioSpec, jobs: int):
    """Spin signal against the laser phase, one column per force pair."""
    if spec.force is None:
        raise ConfigError("fig1 needs a [force] section")
    sweep = spec.sweep
    if sweep is None or sweep.axis != "probe.phi":
        raise ConfigError("fig1 needs a [sweep] over probe.phi")
    phis = sweep.values()
    series = spec.f1_series or (spec.force.F[0],)
    t_final = _point_t_final(spec)

    header = ["phi_rad"] + [_series_name_force(F1) for F1 in series]
    analytic_rows = []
    tasks = []
    for i, phi in enumerate(phis):
        row = [phi]
        probe_i = replace(spec.probe, phi=(phi,) * spec.probe.num_ions)
        for j, F1 in enumerate(series):
            force_j = replace(spec.force, F=(F1,) + spec.force.F[1:])
            row.append(adiabatic_signal_force(probe_i, force_j)[1])
            tasks.append(((i, j), probe_i, force_j, t_final, spec.run))
        analytic_rows.append(row)

    try:
        endpoint = _run_endpoint_tasks(tasks, jobs)
    except Exception as exc:
        raise _annotate(exc, "fig1 numeric grid")
    numeric_rows = [
        [phi] + [endpoint[(i, j)] for j in range(len(series))]
        for i, phi in enumerate(phis)
    ]

    deviations = {
        header[1 + j]: max(
            abs(analytic_rows[i][1 + j] - numeric_rows[i][1 + j])
            for i in range(len(phis))
        )
        for j in range(len(series))
    }
    # truncation convergence probe at the grid midpoint, first series
    mid = len(phis) // 2
    probe_hi = replace(
        spec.probe,
        phi=(phis[mid],) * spec.probe.num_ions,
        n_max=spec.probe.n_max + 4,
    )
    force_0 = replace(spec.force, F=(series[0],) + spec.force.F[1:])
    _, hi = _endpoint_task(((0, 0), probe_hi, force_0, t_final, spec.run))
    trunc = abs(hi - numeric_rows[mid][1])
    report = {
        "deviation_by_column": deviations,
        "max_deviation": max(deviations.values()),
        "truncation_delta": trunc,
        "t_final_ms": t_final,
    }
    return header, analytic_rows, numeric_rows, report


def _fig2(spec: ScenarioSpec, jobs: int):
    """Magnetic-gradient signal against the sweep slope gamma."""
    if spec.magnetic is None:
        raise ConfigError("fig2 needs a [magnetic] section")
    sweep = spec.sweep
    if sweep is None or sweep.axis != "probe.gamma":
        raise ConfigError("fig2 needs a [sweep] over probe.gamma")
    gammas = sweep.values()
    series = spec.bprime_series or (spec.magnetic.Bprime,)

    header = ["gamma_krad_s"] + [_series_name_bprime(bp) for bp in series]
    analytic_rows = []
    tasks = []
    t_finals = []
    for i, gamma in enumerate(gammas):
        probe_i = replace(spec.probe, gamma=gamma)
        t_final = spec.run.t_final if spec.run.t_final is not None else 10.0 / gamma
        t_finals.append(t_final)
        row = [gamma]
        for j, bp in enumerate(series):
            b_j = replace(spec.magnetic, Bprime=bp)
            row.append(adiabatic_signal_magnetic(probe_i, b_j))
            tasks.append(((i, j), probe_i, b_j, t_final, spec.run))
        analytic_rows.append(row)

    try:
        endpoint = _run_endpoint_tasks(tasks, jobs)
    except Exception as exc:
        raise _annotate(exc, "fig2 numeric grid")
    numeric_rows = [
        [gamma] + [endpoint[(i, j)] for j in range(len(series))]
        for i, gamma in enumerate(gammas)
    ]

    deviations = {
        header[1 + j]: max(
            abs(analytic_rows[i][1 + j] - numeric_rows[i][1 + j])
            for i in range(len(gammas))
        )
        for j in range(len(series))
    }
    mid = len(gammas) // 2
    probe_hi = replace(spec.probe, gamma=gammas[mid], n_max=spec.probe.n_max + 4)
    b_0 = replace(spec.magnetic, Bprime=series[0])
    _, hi = _endpoint_task(((0, 0), probe_hi, b_0, t_finals[mid], spec.run))
    trunc = abs(hi - numeric_rows[mid][1])
    report = {
        "deviation_by_column": deviations,
        "max_deviation": max(deviations.values()),
        "truncation_delta": trunc,
    }
    return header, analytic_rows, numeric_rows, report


_FIG3_COLUMNS = ("sz1", "sz2", "sz3", "ddd", "ddu")


def _spin_projector(basis, pattern: str):
    """Projector onto one spin configuration, identity on the modes."""
    out = identity_op(basis)
    for j, ch in enumerate(pattern):
        sign = 1.0 if ch == "u" else -1.0
        out = out @ ((identity_op(basis) + pauli_op(basis, j, "z") * sign) * 0.5)
    return out


def _fig3(spec: ScenarioSpec, jobs: int):
    """Three-ion relaxation curves with the asymptotic plateau."""
    del jobs
    if spec.force is None or spec.probe.num_ions != 3:
        raise ConfigError("fig3 needs three ions and a [force] section")
    sweep = spec.sweep
    if sweep is None or sweep.axis != "time":
        raise ConfigError("fig3 needs a [sweep] over time")
    t_final = sweep.stop

    def run_once(probe):
        psi0 = transverse_ground_state(probe)
        basis = psi0.basis
        obs = {
            "sz1": pauli_op(basis, 0, "z"),
            "sz2": pauli_op(basis, 1, "z"),
            "sz3": pauli_op(basis, 2, "z"),
            "ddd": _spin_projector(basis, "ddd"),
            "ddu": _spin_projector(basis, "ddu"),
        }
        static = rabi_static_part(probe) + build_force_term(probe, spec.force)
        ham = ExpDriveHamiltonian(
            static, rabi_drive_coupling(probe), probe.omega0, probe.gamma
        )
        cfg = PropagationConfig(
            t_final=t_final,
            tolerance=spec.run.tolerance,
            record_stride=sweep.points - 1,
            observables=obs,
            method=spec.run.method,
        )
        traj = propagate(ham, psi0, cfg)
        cols = {
            label: traj.observable_values[:, traj.labels.index(label)]
            for label in _FIG3_COLUMNS
        }
        return traj.times, cols

    try:
        times, cols = run_once(spec.probe)
    except Exception as exc:
        raise _annotate(exc, "fig3 trajectory")

    s_inf = adiabatic_signal_force(spec.probe, spec.force)[1]
    plateau = {"sz1": s_inf, "sz2": -s_inf, "sz3": s_inf, "ddd": 0.0, "ddu": 0.0}
    header = ["t_ms", "sigma1z", "sigma2z", "sigma3z", "p_ddd", "p_ddu"]
    numeric_rows = [
        [times[k]] + [cols[label][k] for label in _FIG3_COLUMNS]
        for k in range(len(times))
    ]
    analytic_rows = [
        [times[k]] + [plateau[label] for label in _FIG3_COLUMNS]
        for k in range(len(times))
    ]
    deviations = {
        header[1 + i]: abs(cols[label][-1] - plateau[label])
        for i, label in enumerate(_FIG3_COLUMNS)
    }
    probe_hi = spec.probe.with_n_max(spec.probe.n_max + 4)
    _, hi_cols = run_once(probe_hi)
    trunc = max(
        abs(hi_cols[label][-1] - cols[label][-1]) for label in _FIG3_COLUMNS
    )
    report = {
        "deviation_by_column": deviations,
        "max_deviation": max(deviations.values()),
        "truncation_delta": trunc,
        "note": "deviations taken at the final time against the asymptote",
    }
    return header, analytic_rows, numeric_rows, report


def _collective_number_ops(probe: ProbeParams, squares: bool = False) -> dict:
    basis = probe.basis()
    root = 1.0 / math.sqrt(2.0)
    a1 = annihilation_op(basis, 0)
    a2 = annihilation_op(basis, 1)
    a_c = (a1 + a2) * root
    a_r = (a1 - a2) * root
    ops = {"n_com": a_c.dagger() @ a_c, "n_rock": a_r.dagger() @ a_r}
    if squares:
        ops["n_com_sq"] = ops["n_com"] @ ops["n_com"]
        ops["n_rock_sq"] = ops["n_rock"] @ ops["n_rock"]
    return ops


def _cho_trajectory(probe: ProbeParams, force: ForceField, times, tolerance,
                    squares: bool = False):
    """Full-model phonon moments under a constant drive."""
    h = build_rabi_lattice(probe, 0.0) + build_force_term(probe, force)
    cfg = PropagationConfig(
        t_final=float(times[-1]),
        tolerance=tolerance,
        record_stride=len(times) - 1,
        observables=_collective_number_ops(probe, squares=squares),
        method="auto",
    )
    return propagate(h, transverse_ground_state(probe), cfg)


def _fig4(spec: ScenarioSpec, jobs: int):
    """Mean phonon number of both collective modes against time."""
    del jobs
    if spec.force is None:
        raise ConfigError("fig4 needs a [force] section")
    sweep = spec.sweep
    if sweep is None or sweep.axis != "time":
        raise ConfigError("fig4 needs a [sweep] over time")
    times = np.array(sweep.values())

    sd_c = squeeze_displace_params(spec.probe, spec.force, "com")
    sd_r = squeeze_displace_params(spec.probe, spec.force, "rock")
    header = ["t_ms", "n_com", "n_rock"]
    analytic_rows = [
        [t, mean_phonon_signal(sd_c, t), mean_phonon_signal(sd_r, t)]
        for t in times
    ]
    try:
        traj = _cho_trajectory(spec.probe, spec.force, times, spec.run.tolerance)
    except Exception as exc:
        raise _annotate(exc, "fig4 full-model run")
    i_c = traj.labels.index("n_com")
    i_r = traj.labels.index("n_rock")
    numeric_rows = [
        [traj.times[k], traj.observable_values[k, i_c], traj.observable_values[k, i_r]]
        for k in range(len(traj.times))
    ]
    deviations = {
        "n_com": max(abs(a[1] - n[1]) for a, n in zip(analytic_rows, numeric_rows)),
        "n_rock": max(abs(a[2] - n[2]) for a, n in zip(analytic_rows, numeric_rows)),
    }
    probe_hi = spec.probe.with_n_max(spec.probe.n_max + 4)
    traj_hi = _cho_trajectory(probe_hi, spec.force, times, spec.run.tolerance)
    trunc = float(
        np.max(np.abs(traj_hi.observable_values - traj.observable_values))
    )
    zeta2 = 4.0 * spec.probe.g[0] ** 2 / (spec.probe.omega0 * spec.probe.delta)
    k_c, k_r = spec.k_indices
    star = kappa_star_solve(spec.probe.delta, zeta2, k_c, k_r)
    report = {
        "deviation_by_column": deviations,
        "max_deviation": max(deviations.values()),
        "truncation_delta": trunc,
        "t_star_ms": star.t_star,
        "kappa_star_krad_s": star.kappa,
        "kappa_star_residual": star.residual,
    }
    return header, analytic_rows, numeric_rows, report


def _snr_from_moments(mean: float, second: float) -> float:
    var = second - mean * mean
    if var <= 1e-18:
        return 0.0
    return mean / math.sqrt(var)


def _fig5(spec: ScenarioSpec, jobs: int):
    """Phonon-readout SNR against time, with the g = 0 baseline."""
    del jobs
    if spec.force is None:
        raise ConfigError("fig5 needs a [force] section")
    sweep = spec.sweep
    if sweep is None or sweep.axis != "time":
        raise ConfigError("fig5 needs a [sweep] over time")
    times = np.array(sweep.values())
    probe_g0 = replace(spec.probe, g=(0.0,) * spec.probe.num_ions)

    def closed_snr(probe, mode, t):
        sd = squeeze_displace_params(probe, spec.force, mode)
        mean = mean_phonon_signal(sd, t)
        var = mean_phonon_variance(sd, t)
        return mean / math.sqrt(var) if var > 1e-18 else 0.0

    header = ["t_ms", "snr_com", "snr_rock", "snr_com_g0", "snr_rock_g0"]
    analytic_rows = [
        [
            t,
            closed_snr(spec.probe, "com", t),
            closed_snr(spec.probe, "rock", t),
            closed_snr(probe_g0, "com", t),
            closed_snr(probe_g0, "rock", t),
        ]
        for t in times
    ]

    def numeric_columns(probe):
        traj = _cho_trajectory(probe, spec.force, times, spec.run.tolerance,
                               squares=True)
        vals = traj.observable_values
        li = {label: traj.labels.index(label) for label in traj.labels}
        snr_c = [
            _snr_from_moments(vals[k, li["n_com"]], vals[k, li["n_com_sq"]])
            for k in range(len(times))
        ]
        snr_r = [
            _snr_from_moments(vals[k, li["n_rock"]], vals[k, li["n_rock_sq"]])
            for k in range(len(times))
        ]
        return snr_c, snr_r

    try:
        snr_c, snr_r = numeric_columns(spec.probe)
        snr_c0, snr_r0 = numeric_columns(probe_g0)
    except Exception as exc:
        raise _annotate(exc, "fig5 full-model run")
    numeric_rows = [
        [times[k], snr_c[k], snr_r[k], snr_c0[k], snr_r0[k]]
        for k in range(len(times))
    ]
    deviations = {
        header[1 + j]: max(
            abs(analytic_rows[k][1 + j] - numeric_rows[k][1 + j])
            for k in range(len(times))
        )
        for j in range(4)
    }
    probe_hi = spec.probe.with_n_max(spec.probe.n_max + 4)
    snr_c_hi, snr_r_hi = numeric_columns(probe_hi)
    trunc = max(
        max(abs(a - b) for a, b in zip(snr_c_hi, snr_c)),
        max(abs(a - b) for a, b in zip(snr_r_hi, snr_r)),
    )
    report = {
        "deviation_by_column": deviations,
        "max_deviation": max(deviations.values()),
        "truncation_delta": trunc,
    }
    return header, analytic_rows, numeric_rows, report


_FIGURES = {
    "fig1": _fig1,
    "fig2": _fig2,
    "fig3": _fig3,
    "fig4": _fig4,
    "fig5": _fig5,
}


def _plot_figure(name: str, out_dir: Path, header: list,
                 analytic_rows: list, numeric_rows: list) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x_a = [row[0] for row in analytic_rows]
    x_n = [row[0] for row in numeric_rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for j, label in enumerate(header[1:], start=1):
        line, = ax.plot(x_a, [row[j] for row in analytic_rows], label=label)
        ax.plot(x_n, [row[j] for row in numeric_rows], linestyle="none",
                marker="o", markersize=3, color=line.get_color())
    ax.set_xlabel(header[0])
    ax.legend(fontsize=7)
    ax.set_title(name)
    path = out_dir / f"{name}.svg"
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def run_figure(name: str, spec: ScenarioSpec, out_dir: Path, jobs: int,
               plot: bool = False) -> dict:
    driver = _FIGURES.get(name)
    if driver is None:
        raise ConfigError(f"unknown figure {name!r}; expected one of {FIGURE_NAMES}")
    header, analytic_rows, numeric_rows, report = driver(spec, jobs)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / f"{name}_analytic.csv", header, analytic_rows)
    write_csv(out_dir / f"{name}_numeric.csv", header, numeric_rows)
    report = dict(report)
    report["figure"] = name
    report["n_max"] = spec.probe.n_max
    report["params"] = echo_normalized(spec)
    if plot:
        _plot_figure(name, out_dir, header, analytic_rows, numeric_rows)
    write_json(out_dir / f"{name}_report.json", report)
    return report


# ===================== sweep driver =====================

_SWEEP_HEADER = [
    "signal", "snr", "fisher_classical", "fisher_quantum", "min_detectable",
]


def _sweep_point(args):
    """Worker: closed-form metrology row at one axis value."""
    index, spec, axis, value = args
    point = apply_axis(spec, axis, value)
    p = point.probe
    sweep = point.sweep
    row: dict = {}
    if sweep.protocol == "adiabatic":
        pert = point.force if point.force is not None else point.magnetic
        if pert is None:
            raise ConfigError("adiabatic sweep needs a [force] or [magnetic] section")
        if axis == "time":
            raise ConfigError("a time axis only applies to the phonon protocol")
        if isinstance(pert, ForceField):
            signal = adiabatic_signal_force(p, pert)[1]
        else:
            signal = adiabatic_signal_magnetic(p, pert)
        t_final = _point_t_final(point)
        rep = snr_report(signal, {
            "parameter": sweep.parameter,
            "probe": p,
            "perturbation": pert,
            "t_final": t_final,
        })
        if sweep.numeric:
            cfg = PropagationConfig(
                t_final=t_final,
                tolerance=point.run.tolerance,
                record_stride=point.run.record_stride,
                method=point.run.method,
            )
            result = adiabatic_protocol_run(p, pert, t_final=t_final, cfg=cfg)
            row["signal_numeric"] = result.sigma_z[0]
    else:
        if point.force is None:
            raise ConfigError("phonon sweep needs a [force] section")
        sd = squeeze_displace_params(p, point.force, sweep.mode)
        rep_spec = {
            "parameter": sweep.parameter,
            "probe": p,
            "phi": p.phi[0],
            "xi": point.force.xi,
        }
        if axis == "time":
            rep_spec["time"] = value
        rep = snr_report(sd, rep_spec)
    row.update({
        "signal": rep.signal,
        "snr": rep.snr,
        "fisher_classical": rep.fisher_classical,
        "fisher_quantum": rep.fisher_quantum,
        "min_detectable": rep.min_detectable,
    })
    return index, row


def run_sweep(spec: ScenarioSpec, out_path: Path, jobs: int) -> dict:
    sweep = spec.sweep
    if sweep is None:
        raise ConfigError("sweep command needs a [sweep] section")
    values = sweep.values()
    header = [sweep.axis] + list(_SWEEP_HEADER)
    if sweep.numeric and sweep.protocol == "adiabatic":
        header.append("signal_numeric")
    header.append("error")

    tasks = [(k, spec, sweep.axis, v) for k, v in enumerate(values)]
    rows_by_index: dict[int, dict] = {}
    errors: dict[int, str] = {}

    def consume(index, promise):
        try:
            _, row = promise() if callable(promise) else promise
            rows_by_index[index] = row
        except ConfigError:
            raise
        except Exception as exc:
            errors[index] = str(exc).replace(",", ";").replace("\n", "; ")

    if jobs <= 1 or len(tasks) <= 1:
        for task in tasks:
            consume(task[0], lambda t=task: _sweep_point(t))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_sweep_point, task): task[0] for task in tasks}
            for future, index in futures.items():
                consume(index, future.result)

    rows = []
    for k, value in enumerate(values):
        row = [value]
        data = rows_by_index.get(k, {})
        for col in header[1:-1]:
            row.append(data.get(col))
        row.append(errors.get(k, ""))
        rows.append(row)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out_path, header, rows)
    return {"points": len(values), "failures": len(errors)}


# ===================== closed-form registry =====================

def _need_force(spec: ScenarioSpec) -> ForceField:
    if spec.force is None:
        raise ConfigError("this formula needs a [force] section")
    return spec.force


def _need_magnetic(spec: ScenarioSpec) -> MagneticField:
    if spec.magnetic is None:
        raise ConfigError("this formula needs a [magnetic] section")
    return spec.magnetic


def _formula_signal_force(spec):
    p_up, sigma = adiabatic_signal_force(spec.probe, _need_force(spec))
    return {"p_up": p_up, "sigma1z": sigma}


def _formula_signal_magnetic(spec):
    return {"sigma1z": adiabatic_signal_magnetic(spec.probe, _need_magnetic(spec))}


def _formula_demkov(spec):
    if spec.force is not None:
        d = demkov_reduction(spec.probe, f=spec.force)
    else:
        d = demkov_reduction(spec.probe, b=_need_magnetic(spec))
    return {
        "alpha_krad_s": d.alpha,
        "p": d.p,
        "x": d.x,
        "delta_c_krad_s": 2.0 * spec.probe.gamma * d.x,
        "signal_asymptotic": math.tanh(math.pi * d.p),
    }


def _formula_min_force_adiabatic(spec):
    return {"F_min_N": minimal_detectable(spec.probe, "force_adiabatic")}


def _formula_min_magnetic(spec):
    return {
        "Bprime_min_T_per_m": minimal_detectable(
            spec.probe, "magnetic", b=_need_magnetic(spec)
        )
    }


def _formula_min_force_cho(spec):
    mode = spec.sweep.mode if spec.sweep else "rock"
    return {
        "mode": mode,
        "F_min_N": minimal_detectable(spec.probe, "force_cho", mode=mode),
    }


def _formula_kappa_star(spec):
    p = spec.probe
    zeta2 = 4.0 * p.g[0] ** 2 / (p.omega0 * p.delta)
    k_c, k_r = spec.k_indices
    star = kappa_star_solve(p.delta, zeta2, k_c, k_r)
    return {
        "zeta_sq_delta": zeta2,
        "k_c": k_c,
        "k_r": k_r,
        "kappa_star_krad_s": star.kappa,
        "x_ratio": star.x,
        "t_star_ms": star.t_star,
        "residual": star.residual,
    }


def _qfi_adiabatic_pack(spec, which):
    d = demkov_reduction(spec.probe, f=_need_force(spec))
    t_f = _point_t_final(spec)
    return {"t_final_ms": t_f, "I_Q": qfi_adiabatic(d, t_f, which)}


def _qfi_cho_pack(spec, which):
    mode = spec.sweep.mode if spec.sweep else "rock"
    sd = squeeze_displace_params(spec.probe, _need_force(spec), mode)
    value = qfi_cho(sd, which, phi=spec.probe.phi[0], xi=spec.force.xi)
    if isinstance(value, TaggedInfinite):
        return {"mode": mode, "I_Q": {"infinite": True, "reason": value.reason}}
    return {"mode": mode, "I_Q": value}


def _formula_phonon_at_tstar(spec):
    mode = spec.sweep.mode if spec.sweep else "rock"
    sd = squeeze_displace_params(spec.probe, _need_force(spec), mode)
    mean = mean_phonon_signal(sd, sd.t_star)
    var = mean_phonon_variance(sd, sd.t_star)
    return {
        "mode": mode,
        "t_star_ms": sd.t_star,
        "n_mean": mean,
        "n_variance": var,
        "snr": mean / math.sqrt(var),
        "alpha_abs": abs(sd.alpha),
    }


_FORMULAS = {
    "signal_force": _formula_signal_force,
    "signal_magnetic": _formula_signal_magnetic,
    "demkov": _formula_demkov,
    "min_force_adiabatic": _formula_min_force_adiabatic,
    "min_magnetic": _formula_min_magnetic,
    "min_force_cho": _formula_min_force_cho,
    "kappa_star": _formula_kappa_star,
    "qfi_adiabatic_force": lambda spec: _qfi_adiabatic_pack(spec, "force"),
    "qfi_adiabatic_phase": lambda spec: _qfi_adiabatic_pack(spec, "phase"),
    "qfi_cho_force": lambda spec: _qfi_cho_pack(spec, "force"),
    "qfi_cho_phase": lambda spec: _qfi_cho_pack(spec, "phase"),
    "phonon_at_tstar": _formula_phonon_at_tstar,
}


# ===================== command handlers =====================

def _load_from_args(args, name: str) -> ScenarioSpec:
    path = getattr(args, "config", None)
    if path is None:
        path = canned_config_path(name)
    return load_scenario(
        str(path),
        name=name,
        overrides=list(args.set or []),
        n_max=getattr(args, "nmax", None),
    )


def cmd_figure(args) -> int:
    spec = _load_from_args(args, args.name)
    out_dir = Path(args.out)
    report = run_figure(args.name, spec, out_dir, jobs=args.jobs, plot=args.plot)
    threshold = args.max_deviation
    if threshold is None:
        threshold = spec.max_deviation
    print(f"{args.name}: max deviation {report['max_deviation']:.3e}, "
          f"truncation delta {report['truncation_delta']:.3e} "
          f"-> {out_dir / (args.name + '_report.json')}")
    if threshold is not None and report["max_deviation"] > threshold:
        print(f"deviation exceeds threshold {threshold:g}", file=sys.stderr)
        return EXIT_BREACH
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_scenario(args.config, name=Path(args.config).stem,
                         overrides=list(args.set or []),
                         n_max=args.nmax)
    out_path = Path(args.out) / f"{spec.name}_sweep.csv"
    summary = run_sweep(spec, out_path, jobs=args.jobs)
    print(f"{summary['points']} points "
          f"({summary['failures']} failed) -> {out_path}")
    return EXIT_NUMERIC if summary["failures"] == summary["points"] else EXIT_OK


def cmd_validate(args) -> int:
    spec = load_scenario(args.config, name=Path(args.config).stem,
                         overrides=list(args.set or []))
    print(json.dumps(echo_normalized(spec), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_analytic(args) -> int:
    formula = _FORMULAS.get(args.formula)
    if formula is None:
        raise ConfigError(
            f"unknown formula {args.formula!r}; expected one of "
            f"{sorted(_FORMULAS)}"
        )
    if args.config is not None:
        spec = load_scenario(args.config, name="analytic",
                             overrides=list(args.set or []))
    else:
        spec = load_scenario("", name="analytic", is_text=True,
                             overrides=list(args.set or []))
    print(json.dumps({args.formula: formula(spec)}, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iongrad",
        description="Trapped-ion gradient-sensing simulations and closed forms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fig = sub.add_parser("figure", help="reproduce a canned figure scenario")
    fig.add_argument("name")
    fig.add_argument("--out", default=".", help="output directory")
    fig.add_argument("--config", default=None, help="override the canned config path")
    fig.add_argument("--nmax", type=int, default=None, help="Fock truncation override")
    fig.add_argument("--jobs", type=int, default=1, help="worker processes")
    fig.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    fig.add_argument("--plot", action="store_true", help="emit an SVG rendering")
    fig.add_argument("--max-deviation", type=float, default=None,
                     help="exit 4 if the analytic/numeric deviation exceeds this")
    fig.set_defaults(handler=cmd_figure)

    swp = sub.add_parser("sweep", help="closed-form metrology over one axis")
    swp.add_argument("--config", required=True)
    swp.add_argument("--out", default=".", help="output directory")
    swp.add_argument("--nmax", type=int, default=None)
    swp.add_argument("--jobs", type=int, default=1)
    swp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    swp.set_defaults(handler=cmd_sweep)

    val = sub.add_parser("validate", help="normalize and echo a config")
    val.add_argument("--config", required=True)
    val.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    val.set_defaults(handler=cmd_validate)

    ana = sub.add_parser("analytic", help="evaluate one closed form")
    ana.add_argument("formula")
    ana.add_argument("--config", default=None)
    ana.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    ana.set_defaults(handler=cmd_analytic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
