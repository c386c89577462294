"""CSV writers, gnuplot script emitters and matplotlib figures for the CLI.

Every CSV starts with ``#`` metadata lines (worker count, seed and the
waveform label) followed by one header row.  Floats are written with
``repr`` so files reproduce bit-for-bit and diff cleanly.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .loads import general_oil_force, side_load_component

TRACE_HEADER = ["step", "t", "phi", "inlet_pressure", "coupling_length",
                "e1", "e2", "e3", "e4", "edot1", "edot2", "edot3", "edot4",
                "residual", "force_scale", "picard", "converged",
                "pcg_iterations", "min_thickness", "side_load_pressure"]
FORCE_HEADER = ["t", "phi", "period", "part", "F_x", "F_y", "F_z",
                "M_x", "M_y", "M_z", "F1", "F2", "F3", "F4"]
SNAPSHOT_HEADER = ["i", "j", "theta", "y", "p"]


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows, meta: dict | None = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


# --------------------------------------------------------------------------
# rows

def trace_rows(trace):
    for s in trace.steps:
        side = side_load_component(s.wrench.pressure.force, s.phi)
        yield [s.step, s.t, s.phi, s.inlet_pressure, s.coupling_length,
               *s.e, *s.edot, s.residual, s.force_scale, s.picard,
               s.converged, s.pcg_iterations, s.min_thickness, side]


def force_rows(trace):
    for s in trace.steps:
        period = int(math.floor(s.phi / (2.0 * math.pi) - 1e-12))
        for part in ("pressure", "shear"):
            w = getattr(s.wrench, part)
            F = general_oil_force(w, s.coupling_length).F
            yield [s.t, s.phi, period, part, *w.force, *w.moment, *F]


def snapshot_rows(field: np.ndarray, coupling_length: float):
    ny, nt = field.shape
    theta = 2.0 * np.pi * np.arange(nt) / nt
    y = np.linspace(0.0, coupling_length, ny)
    for j in range(ny):
        for i in range(nt):
            yield [i, j, theta[i], y[j], field[j, i]]


# --------------------------------------------------------------------------
# gnuplot

_GP_HEAD = """set datafile separator ','
set datafile commentschars '#'
set key autotitle columnhead
set terminal pngcairo size 1000,700
"""


def gnuplot_trace(path, trace_csv="trace.csv") -> Path:
    text = _GP_HEAD + f"""set output 'eccentricity_gp.png'
set xlabel 't [s]'
set ylabel 'e [m]'
plot for [c=6:9] '{trace_csv}' using 2:c with lines
"""
    Path(path).write_text(text)
    return Path(path)


def gnuplot_forces(path, forces_csv="forces.csv") -> Path:
    text = _GP_HEAD + f"""set output 'forces_gp.png'
set multiplot layout 2,1
set xlabel 't [s]'
set ylabel 'pressure part [N]'
plot for [c=5:7] '{forces_csv}' using (strcol(4) eq 'pressure' ? $1 : NaN):c with lines
set ylabel 'shear part [N]'
plot for [c=5:7] '{forces_csv}' using (strcol(4) eq 'shear' ? $1 : NaN):c with lines
unset multiplot
"""
    Path(path).write_text(text)
    return Path(path)


def gnuplot_pressure(path, snapshot_csv: str, png: str) -> Path:
    text = _GP_HEAD + f"""set output '{png}'
set view map
set xlabel 'theta [rad]'
set ylabel 'y [m]'
set cblabel 'p [Pa]'
splot '{snapshot_csv}' using 3:4:5 with points pointtype 5 pointsize 0.3 palette notitle
"""
    Path(path).write_text(text)
    return Path(path)


def gnuplot_bench(path, bench_csv="bench.csv") -> Path:
    text = _GP_HEAD + f"""set output 'omega_sweep_gp.png'
set xlabel 'omega'
set ylabel 'iterations'
plot '{bench_csv}' using (strcol(2) eq 'assor2' ? $3 : NaN):7 with linespoints title 'assor2', \\
     '{bench_csv}' using (strcol(2) eq 'ssor' ? $3 : NaN):7 with linespoints title 'ssor', \\
     '{bench_csv}' using (strcol(2) eq 'assor1' ? $3 : NaN):7 with linespoints title 'assor1'
"""
    Path(path).write_text(text)
    return Path(path)


# --------------------------------------------------------------------------
# matplotlib

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    # no timestamp metadata, so figures are reproducible too
    fig.savefig(path, dpi=110, metadata={"Software": None})
    fig.clf()


def plot_pressure(path, field: np.ndarray, coupling_length: float, title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    im = ax.imshow(field / 1e6, origin="lower", aspect="auto",
                   extent=[0.0, 360.0, 0.0, coupling_length * 1e3], cmap="viridis")
    ax.set_xlabel(r"$\theta$ [deg]")
    ax.set_ylabel("y [mm]")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="p [MPa]")
    _save(fig, path)
    plt.close(fig)


def plot_residuals(path, histories: dict):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, h in histories.items():
        ax.semilogy(np.arange(len(h)), h, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\|r\|_2 / \|S\|_2$")
    ax.legend()
    _save(fig, path)
    plt.close(fig)


def plot_sweep(path, rows):
    """``rows``: (variant, omega, iterations) triples."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    variants = sorted({r[0] for r in rows})
    for v in variants:
        pts = sorted((w, it) for vv, w, it in rows if vv == v)
        if pts:
            w, it = zip(*pts)
            ax.plot(w, it, "o-", label=v)
    ax.set_xlabel(r"$\omega$")
    ax.set_ylabel("PCG iterations")
    ax.legend()
    _save(fig, path)
    plt.close(fig)


def plot_joint(path, per_path: dict):
    """``per_path``: label -> list of per-block iteration counts."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = list(per_path)
    width = 0.8 / max(len(labels), 1)
    for k, lab in enumerate(labels):
        it = per_path[lab]
        ax.bar(np.arange(len(it)) + k * width, it, width, label=lab)
    ax.set_xlabel("block")
    ax.set_ylabel("iterations")
    ax.legend()
    _save(fig, path)
    plt.close(fig)


def plot_trace(path_ecc, path_forces, trace):
    plt = _pyplot()
    t = trace.column("t")
    e = np.array([s.e for s in trace.steps]) * 1e6
    fig, ax = plt.subplots(figsize=(7, 4))
    for k in range(4):
        ax.plot(t, e[:, k], label=f"e{k + 1}")
    ax.set_xlabel("t [s]")
    ax.set_ylabel(r"e [$\mu$m]")
    ax.legend()
    _save(fig, path_ecc)
    plt.close(fig)

    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for ax, part in zip(axes, ("pressure", "shear")):
        f = np.array([getattr(s.wrench, part).force for s in trace.steps])
        for k, name in enumerate("xyz"):
            ax.plot(t, f[:, k], label=f"F_{name}")
        ax.set_ylabel(f"{part} [N]")
        ax.legend()
    axes[-1].set_xlabel("t [s]")
    _save(fig, path_forces)
    plt.close(fig)
