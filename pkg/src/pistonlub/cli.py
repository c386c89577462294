"""Command line entry point: ``pistonlub {solve,bench,joint-bench,simulate,config}``.

Outputs are staged in a scratch directory and moved into ``--out`` only when
the run finishes, so a failed run never leaves partial files behind.  The
worker count comes from ``--workers``, else ``$PISTONLUB_WORKERS``, else the
config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import shutil
import sys
import tempfile
import warnings
from pathlib import Path

import numba
import numpy as np

from . import config as cfgmod
from . import report
from .assembly import BoundaryCondition, assemble, full_field, linear_guess
from .dynamics import NonConvergentStep, SingularJacobian, time_march
from .geometry import (FilmMesh, KinematicState, MeshTooCoarse,
                       NonPositiveThickness, build_texture_pattern,
                       coupling_length, film_thickness, film_thickness_rate,
                       shaft_kinematics)
from .joint import BlockError, build_joint, sequential_solve, solve_joint
from .krylov import Breakdown, ZeroDiagonal, build_preconditioner, pcg_solve

log = logging.getLogger("pistonlub")

WORKERS_ENV = "PISTONLUB_WORKERS"
WAVEFORM_NOTE = "stand-in inlet waveform, not measured data"

SOLVER_ERRORS = (Breakdown, ZeroDiagonal, NonPositiveThickness, MeshTooCoarse,
                 BlockError, SingularJacobian, NonConvergentStep,
                 np.linalg.LinAlgError)

BENCH_HEADER = ["case", "preconditioner", "omega", "n_theta", "n_y", "texture",
                "iterations", "converged", "final_relative_residual",
                "spmv_count", "dot_count", "precond_count", "error"]
JOINT_HEADER = ["case", "path", "block", "iterations", "converged",
                "final_relative_residual", "global_iterations",
                "total_iterations", "reconfiguration_events", "freeze_iteration"]


# --------------------------------------------------------------------------
# shared helpers

class Staging:
    """Collects output files and publishes them into ``out`` on success."""

    def __init__(self, out: Path):
        self.out = Path(out)
        parent = self.out.resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=".pistonlub-", dir=parent))

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def publish(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for src in sorted(self.dir.rglob("*")):
            if src.is_file():
                dst = self.out / src.relative_to(self.dir)
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.move(str(src), dst)
        self.discard()

    def discard(self):
        shutil.rmtree(self.dir, ignore_errors=True)


def _meta(cfg, mode: str) -> dict:
    w = cfg.waveform
    return {"mode": mode, "workers": cfg.workers, "seed": cfg.seed,
            "waveform": f"{w.shape} low={w.low!r} high={w.high!r} duty={w.duty!r} "
                        f"ramp={w.ramp!r} phase={w.phase!r} ({WAVEFORM_NOTE})"}


def _state(cfg) -> KinematicState:
    s = cfg.state
    if s.random:
        rng = np.random.default_rng(cfg.seed)
        e = rng.uniform(-2e-6, 2e-6, 4)
        edot = rng.uniform(-1e-4, 1e-4, 4)
    else:
        e, edot = np.array(s.e), np.array(s.edot)
    return KinematicState(e, edot, s.shaft_angle, s.shaft_angle / cfg.pump.omega)


def _inlet(cfg) -> float:
    s = cfg.state
    return s.inlet_pressure if s.inlet_pressure is not None else cfg.waveform(s.shaft_angle)


def _system(cfg, n_theta, n_y, texture, state):
    pump = cfg.pump
    mesh = FilmMesh(n_theta, n_y, coupling_length(pump, state.shaft_angle),
                    pump.piston_radius)
    tex = build_texture_pattern(texture, mesh, pump.piston_radius)
    bc = BoundaryCondition(_inlet(cfg), pump.outlet_pressure)
    U = shaft_kinematics(pump, state.time).sliding_speed
    return mesh, tex, bc, U


def configure_workers(requested: int | None) -> int:
    """Pin the numba thread pool; returns the recorded worker count."""
    k = max(int(requested or 1), 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # threading-layer probing noise
        numba.set_num_threads(min(k, numba.config.NUMBA_NUM_THREADS))
    return k


# --------------------------------------------------------------------------
# modes

def run_solve(cfg, stage: Staging) -> int:
    st = _state(cfg)
    mesh, tex, bc, U = _system(cfg, cfg.mesh.n_theta, cfg.mesh.n_y, cfg.texture, st)
    h = film_thickness(mesh, st, cfg.pump, tex)
    hd = film_thickness_rate(mesh, st, cfg.pump)
    sys_ = assemble(mesh, h, hd, U, cfg.pump.oil_viscosity, bc)
    sv = cfg.solver
    pc = build_preconditioner(sys_, sv.variant, sv.omega)
    x0 = linear_guess(sys_, bc) if sv.initial_guess == "linear" else None
    p, rep = pcg_solve(sys_, pc, x0=x0, tol=sv.tol, max_iter=sv.max_iter)
    field = full_field(sys_, p, bc).reshape(mesh.n_y, mesh.n_theta)

    meta = _meta(cfg, "solve")
    report.write_rows(stage.path("pressure.csv"), report.SNAPSHOT_HEADER,
                      report.snapshot_rows(field, mesh.coupling_length), meta)
    report.write_rows(stage.path("residuals.csv"), ["iteration", "relative_residual"],
                      enumerate(rep.residual_history), meta)
    summary = [("variant", sv.variant), ("omega", sv.omega), ("tol", sv.tol),
               ("n_theta", mesh.n_theta), ("n_y", mesh.n_y), ("unknowns", sys_.n),
               ("inlet_pressure", bc.inlet), ("outlet_pressure", bc.outlet),
               ("iterations", rep.iterations), ("converged", rep.converged),
               ("final_relative_residual", rep.final_relative_residual),
               ("spmv_count", rep.spmv_count), ("dot_count", rep.dot_count),
               ("precond_count", rep.precond_count), ("min_thickness", float(h.min()))]
    report.write_rows(stage.path("pcg_report.csv"), ["key", "value"], summary, meta)
    if cfg.outputs.gnuplot:
        report.gnuplot_pressure(stage.path("pressure.gp"), "pressure.csv", "pressure_gp.png")
    if cfg.outputs.figures:
        report.plot_pressure(stage.path("pressure.png"), field, mesh.coupling_length,
                             f"{cfg.texture}, {sv.variant}")
        report.plot_residuals(stage.path("residuals.png"), {sv.variant: rep.residual_history})
    print(f"solve: {rep.iterations} iterations, converged={rep.converged}, "
          f"relative residual {rep.final_relative_residual:.3e}")
    return 0 if rep.converged else 1


def bench_rows(cfg):
    """Yield bench CSV rows; per-case failures become rows with an error."""
    st = _state(cfg)
    b = cfg.bench
    for (nt, ny) in b.meshes:
        for texture in b.textures:
            case = f"{texture}_{nt}x{ny}"
            try:
                mesh, tex, bc, U = _system(cfg, nt, ny, texture, st)
                h = film_thickness(mesh, st, cfg.pump, tex)
                hd = film_thickness_rate(mesh, st, cfg.pump)
                sys_ = assemble(mesh, h, hd, U, cfg.pump.oil_viscosity, bc)
            except (ValueError, ArithmeticError) as err:
                for v in b.variants:
                    yield [case, v, "", nt, ny, texture, "", 0, "", "", "", "",
                           f"{type(err).__name__}: {err}"]
                continue
            for v in b.variants:
                omegas = [""] if v == "jacobian" else list(b.omegas)
                for w in omegas:
                    try:
                        pc = build_preconditioner(sys_, v, 1.0 if w == "" else w)
                        _, rep = pcg_solve(sys_, pc, tol=b.tol, max_iter=b.max_iter)
                        yield [case, v, w, nt, ny, texture, rep.iterations,
                               rep.converged, rep.final_relative_residual,
                               rep.spmv_count, rep.dot_count, rep.precond_count, ""]
                    except (ValueError, ArithmeticError) as err:
                        yield [case, v, w, nt, ny, texture, "", 0, "", "", "", "",
                               f"{type(err).__name__}: {err}"]


def run_bench(cfg, stage: Staging) -> int:
    rows = list(bench_rows(cfg))
    report.write_rows(stage.path("bench.csv"), BENCH_HEADER, rows, _meta(cfg, "bench"))
    if cfg.outputs.gnuplot:
        report.gnuplot_bench(stage.path("bench.gp"))
    if cfg.outputs.figures and rows:
        pts = [(r[1], r[2], r[6]) for r in rows if r[2] != "" and r[6] != ""]
        report.plot_sweep(stage.path("omega_sweep.png"), pts)
    failed = sum(1 for r in rows if r[-1])
    print(f"bench: {len(rows)} runs, {failed} failed")
    return 0 if failed == 0 else 1


def joint_rows(cfg, case):
    st = _state(cfg)
    jb = cfg.joint_bench
    mesh, tex, bc, U = _system(cfg, cfg.mesh.n_theta, cfg.mesh.n_y, case.texture, st)
    js = build_joint(mesh, st, tex, cfg.pump, bc, U)
    runs = {
        "synchronized": solve_joint(js, case.variant, case.omega, "synchronized",
                                    jb.tol, jb.max_iter, track_blocks=True)[1],
        "asynchronous": solve_joint(js, case.variant, case.omega, "asynchronous",
                                    jb.tol, jb.max_iter)[1],
        "sequential": sequential_solve(js, case.variant, case.omega, jb.tol,
                                       jb.max_iter)[1],
    }
    rows = []
    for path, rep in runs.items():
        for b, blk in enumerate(rep.per_block):
            freeze = rep.freeze_iteration[b] if rep.freeze_iteration else ""
            rows.append([case.name, path, b, blk.iterations, blk.converged,
                         rep.block_relative_residuals[b], rep.global_iterations,
                         rep.total_iterations, rep.reconfiguration_events, freeze])
    return rows, runs


def run_joint_bench(cfg, stage: Staging) -> int:
    rows, failed = [], 0
    figures = {}
    for case in cfg.joint_bench.cases:
        try:
            r, runs = joint_rows(cfg, case)
            rows.extend(r)
            figures[case.name] = {k: [b.iterations for b in v.per_block]
                                  for k, v in runs.items()}
        except SOLVER_ERRORS + (ValueError,) as err:
            failed += 1
            rows.append([case.name, "error", "", "", 0, "", "", "", "",
                         f"{type(err).__name__}: {err}"])
    report.write_rows(stage.path("joint_bench.csv"), JOINT_HEADER, rows,
                      _meta(cfg, "joint-bench"))
    if cfg.outputs.figures:
        for name, per_path in figures.items():
            report.plot_joint(stage.path(f"joint_{name}.png"), per_path)
    print(f"joint-bench: {len(cfg.joint_bench.cases)} cases, {failed} failed")
    return 0 if failed == 0 else 1


def run_simulate(cfg, stage: Staging) -> int:
    st = _state(cfg)
    trace = time_march(cfg.pump, cfg.mesh.n_theta, cfg.mesh.n_y, cfg.texture,
                       cfg.waveform, cfg.dynamics, cfg.solver, st.e, st.edot)
    meta = _meta(cfg, "simulate")
    report.write_rows(stage.path("trace.csv"), report.TRACE_HEADER,
                      report.trace_rows(trace), meta)
    report.write_rows(stage.path("forces.csv"), report.FORCE_HEADER,
                      report.force_rows(trace), meta)
    if cfg.outputs.snapshots:
        for step, t, phi, field in trace.snapshots:
            L = trace.steps[step].coupling_length
            name = f"snapshots/step_{step:05d}.csv"
            report.write_rows(stage.path(name), report.SNAPSHOT_HEADER,
                              report.snapshot_rows(field, L),
                              {**meta, "t": repr(t), "phi": repr(phi)})
            if cfg.outputs.gnuplot:
                report.gnuplot_pressure(stage.path(f"snapshots/step_{step:05d}.gp"),
                                        f"step_{step:05d}.csv", f"step_{step:05d}_gp.png")
            if cfg.outputs.figures:
                report.plot_pressure(stage.path(f"snapshots/step_{step:05d}.png"),
                                     field, L, f"phi = {np.degrees(phi):.1f} deg")
    if cfg.outputs.gnuplot:
        report.gnuplot_trace(stage.path("eccentricity.gp"))
        report.gnuplot_forces(stage.path("forces.gp"))
    if cfg.outputs.figures and trace.steps:
        report.plot_trace(stage.path("eccentricity.png"), stage.path("forces.png"), trace)
    unconverged = sum(1 for s in trace.steps if not s.converged)
    print(f"simulate: {len(trace.steps)} steps, median Picard "
          f"{float(np.median(trace.picard_counts)) if trace.steps else 0:.1f}, "
          f"{unconverged} steps above the equilibrium tolerance")
    return 0


MODES = {"solve": run_solve, "bench": run_bench, "joint-bench": run_joint_bench,
         "simulate": run_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pistonlub",
        description="Piston film lubrication: single solves, preconditioner "
                    "benchmarks, joint solves and time marching.")
    ap.add_argument("mode", choices=sorted(MODES) + ["config"])
    ap.add_argument("--config", type=Path, help="YAML run configuration")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--workers", type=int, help=f"worker threads (env {WORKERS_ENV})")
    ap.add_argument("--seed", type=int, help="seed for randomized states")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.mode == "config":
        sys.stdout.write(cfgmod.default_text())
        return 0
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
        workers = args.workers
        if workers is None and os.environ.get(WORKERS_ENV):
            workers = int(os.environ[WORKERS_ENV])
        overrides = {}
        if workers is not None:
            overrides["workers"] = workers
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = dataclasses.replace(cfg, **overrides)
    except (cfgmod.ConfigError, ValueError) as err:
        print(f"pistonlub: configuration error: {err}", file=sys.stderr)
        return 2
    configure_workers(cfg.workers)

    stage = Staging(args.out)
    try:
        status = MODES[args.mode](cfg, stage)
        cfgmod.dump(cfg, stage.path("config.yaml"))
        stage.publish()
    except SOLVER_ERRORS + (ValueError,) as err:
        stage.discard()
        print(f"pistonlub: {args.mode} failed: {type(err).__name__}: {err}",
              file=sys.stderr)
        return 1
    except BaseException:
        stage.discard()
        raise
    return status


if __name__ == "__main__":
    sys.exit(main())
