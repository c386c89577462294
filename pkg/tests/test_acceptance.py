"""Acceptance gate: one verdict line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the verdicts are repeated in
the terminal summary) or ``python tests/test_acceptance.py``.  Criteria that
the implementation does not meet fail honestly; see the README.
"""

import time

import numpy as np
import pytest

import oracle
from pistonlub.assembly import BoundaryCondition, assemble, expand_dense, full_field
from pistonlub.cli import main
from pistonlub.dynamics import (DynamicsOptions, LinearForceModel, SolverOptions,
                                Waveform, build_jacobians, evaluate, picard_step,
                                time_march)
from pistonlub.geometry import (FilmMesh, KinematicState, PumpConfig, TexturePattern,
                                build_texture_pattern,
                                film_thickness, film_thickness_rate, shaft_kinematics)
from pistonlub.joint import build_joint, sequential_solve, solve_joint
from pistonlub.krylov import (build_preconditioner, norm, default_omega_grid,
                              pcg_solve, spmv)
from pistonlub.loads import side_load_component

CFG = PumpConfig()
BC = BoundaryCondition(10e6, CFG.outlet_pressure)
STATE = KinematicState(np.array([-0.2, 0.2, 0.2, -0.2]) * 1e-6,
                       np.array([-3.78, 3.78, 3.78, -3.78]) * 1e-7)
VARIANTS = ("jacobian", "assor1", "assor2", "ssor")

VERDICTS = {}


def verdict(k, ok, detail):
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[k] = line
    print(line)
    assert ok, line


def rel(a, b):
    return float(np.abs(a - b).max() / np.abs(b).max())


def reynolds(nt, ny, texture="none", state=STATE):
    sh = shaft_kinematics(CFG, 0.0)
    mesh = FilmMesh(nt, ny, sh.coupling_length, CFG.piston_radius)
    tex = build_texture_pattern(texture, mesh, CFG.piston_radius)
    h = film_thickness(mesh, state, CFG, tex)
    hd = film_thickness_rate(mesh, state, CFG)
    return mesh, tex, assemble(mesh, h, hd, sh.sliding_speed, CFG.oil_viscosity, BC)


def iterations(sys_, variant, omega=1.0, tol=1e-6):
    _, rep = pcg_solve(sys_, build_preconditioner(sys_, variant, omega), tol=tol)
    assert rep.converged
    return rep.iterations


# ---------------------------------------------------------------- 1

def test_c01_dense_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_a = worst_x = 0.0
    cases = 0
    for k in range(60):
        nt, ny = [(20, 16), (16, 12), (12, 10), (9, 7)][k % 4]
        L = rng.uniform(0.03, 0.045)
        mesh = FilmMesh(nt, ny, L, CFG.piston_radius)
        st = KinematicState(rng.uniform(-2e-6, 2e-6, 4), rng.uniform(-1e-4, 1e-4, 4))
        # a coarse dimple lattice the small meshes can resolve
        tex = (TexturePattern(4, 2, 20e-6, CFG.piston_radius, 0.6) if k % 2
               else TexturePattern(piston_radius=CFG.piston_radius))
        h = film_thickness(mesh, st, CFG, tex)
        hd = film_thickness_rate(mesh, st, CFG)
        U = rng.uniform(0.0, 1.0)
        p_in = rng.uniform(0.5e6, 20e6)
        bc = BoundaryCondition(p_in, CFG.outlet_pressure)
        s = assemble(mesh, h, hd, U, CFG.oil_viscosity, bc)
        A, S = expand_dense(s)
        Ar, Sr = oracle.dense_reynolds(nt, ny, L, mesh.radius, h.reshape(ny, nt),
                                       hd.reshape(ny, nt), U, CFG.oil_viscosity,
                                       p_in, CFG.outlet_pressure)
        worst_a = max(worst_a, rel(A, Ar), rel(S, Sr))
        ref = np.linalg.solve(Ar, Sr)
        for v in VARIANTS:
            x, rep = pcg_solve(s, build_preconditioner(s, v, 1.5), tol=1e-10)
            worst_x = max(worst_x, rel(x, ref))
        cases += 1
    dt = time.perf_counter() - t0
    ok = worst_a <= 1e-12 and worst_x <= 1e-8 and dt < 60
    verdict(1, ok, f"{cases} states: assembly {worst_a:.1e} (<=1e-12), "
                   f"PCG vs direct {worst_x:.1e} (<=1e-8), {dt:.1f} s (<60)")


# ---------------------------------------------------------------- 2

def test_c02_preconditioner_algebra():
    worst = 0.0
    rng = np.random.default_rng(7)
    _, _, s = reynolds(20, 12)  # n = 200
    A, _ = expand_dense(s)
    for w in (0.3, 1.0, 1.6, 1.9):
        for v, dense in (("assor1", oracle.assor1_inverse),
                         ("assor2", oracle.assor2_inverse),
                         ("ssor", oracle.ssor_inverse)):
            r = rng.standard_normal(s.n)
            worst = max(worst, rel(build_preconditioner(s, v, w)(r), dense(A, w) @ r))
    # a diagonal system has no strictly lower part
    diag = assemble(FilmMesh(10, 8, 0.04), np.full(80, 6e-6), np.zeros(80), 0.0,
                    CFG.oil_viscosity, BC)
    for band in ("AE", "AW", "AEB", "AWB", "AS", "AN"):
        getattr(diag, band)[:] = 0.0
    r = rng.standard_normal(diag.n)
    exact = np.array_equal(build_preconditioner(diag, "assor2", 1.0)(r),
                           build_preconditioner(diag, "jacobian")(r))
    verdict(2, worst <= 1e-12 and exact,
            f"dense formulas {worst:.1e} (<=1e-12) on n={s.n}; "
            f"AssorII(L=0, w=1) == Jacobian exactly: {exact}")


# ---------------------------------------------------------------- 3, 4, 5

@pytest.fixture(scope="module")
def smooth_100():
    return reynolds(100, 80)[2]


def test_c03_assor_advantage(smooth_100):
    t0 = time.perf_counter()
    a = iterations(smooth_100, "assor2", 1.8)
    j = iterations(smooth_100, "jacobian")
    dt = time.perf_counter() - t0
    verdict(3, a / j <= 0.70 and dt < 60,
            f"AssorII(1.8) {a} / Jacobian {j} = {a / j:.3f} (<=0.70), {dt:.1f} s")


def test_c04_omega_sweep(smooth_100):
    grid = default_omega_grid()
    its = {w: iterations(smooth_100, "assor2", w) for w in grid}
    best = min(its, key=its.get)
    mid = [w for w in grid if 1.2 <= w <= 1.8]
    ok = 1.2 <= best <= 1.8 and all(its[w] < its[grid[0]] for w in mid)
    table = " ".join(f"{w:g}:{n}" for w, n in its.items())
    verdict(4, ok, f"argmin w={best:g}; {table}")


def test_c05_preconditioner_similarity(smooth_100):
    j = iterations(smooth_100, "jacobian")
    s = iterations(smooth_100, "ssor", 1.0)
    a1 = iterations(smooth_100, "assor1", 1.0)
    ds, da = abs(s - j) / j, abs(a1 - j) / j
    verdict(5, ds <= 0.10 and da <= 0.10,
            f"Jacobian {j}, SSOR(1.0) {s} ({ds:.1%}), AssorI(1.0) {a1} ({da:.1%}); "
            f"bound 10%")


# ---------------------------------------------------------------- 6

def test_c06_joint_equals_sequential():
    mesh, tex, _ = reynolds(100, 80)
    U = shaft_kinematics(CFG, 0.0).sliding_speed
    tol = 1e-6
    js = build_joint(mesh, STATE, tex, CFG, BC, U)
    xa, ra = solve_joint(js, "assor2", 1.8, "asynchronous", tol)
    xs, rs = sequential_solve(js, "assor2", 1.8, tol)
    dits = max(abs(a.iterations - b.iterations)
               for a, b in zip(ra.per_block, rs.per_block))
    dx = max(rel(xa[b], xs[b]) for b in range(len(js.blocks)))
    st = KinematicState(STATE.e, STATE.edot, 0.0, 0.0)
    fa = evaluate(mesh, st, tex, CFG, BC, U, SolverOptions(strategy="asynchronous",
                                                          tol=1e-8)).total
    fs = evaluate(mesh, st, tex, CFG, BC, U, SolverOptions(path="sequential",
                                                          tol=1e-8)).total
    ja = build_jacobians(fa, CFG.fd_step_e, CFG.fd_step_edot)
    jb = build_jacobians(fs, CFG.fd_step_e, CFG.fd_step_edot)
    dj = max(rel(ja.dF_de, jb.dF_de), rel(ja.dF_dedot, jb.dF_dedot))
    verdict(6, dits <= 2 and dx <= 10 * tol and dj <= 1e-12,
            f"block iteration gap {dits} (<=2), solution gap {dx:.1e} (<={10 * tol:g}), "
            f"Jacobian gap {dj:.1e} (<=1e-12)")


# ---------------------------------------------------------------- 7

def test_c07_texture_effect():
    nt, ny = 120, 100
    runs = {}
    for kind in ("none", "short", "long"):
        mesh, tex, s = reynolds(nt, ny, kind)
        x, rep = pcg_solve(s, build_preconditioner(s, "assor2", 1.8), tol=1e-10)
        runs[kind] = (mesh, tex, iterations(s, "assor2", 1.8), full_field(s, x, BC))
    n0, n1, n2 = (runs[k][2] for k in ("none", "short", "long"))
    order = n1 > n0 and n2 > n1
    mesh, tex, _, p_short = runs["short"]
    p_smooth = runs["none"][3]
    # rows whose five-point stencil reaches a textured node
    rows = np.flatnonzero(tex.mask(mesh).any(axis=1))
    touch = np.zeros(ny, dtype=bool)
    touch[np.clip(np.r_[rows - 1, rows, rows + 1], 0, ny - 1)] = True
    diff = np.abs(p_short - p_smooth).reshape(ny, nt)
    outside = diff[~touch].max() / np.abs(p_smooth).max()
    local = outside <= 1e-12
    peak = all(runs[k][3].max() <= p_smooth.max() for k in ("short", "long"))
    verdict(7, order and local and peak,
            f"iterations smooth {n0} < short {n1} < long {n2}: {order}; "
            f"field change confined to texture rows: {local} "
            f"(max change elsewhere {outside:.1e} of peak); peak not raised: {peak}")


# ---------------------------------------------------------------- 8

def test_c08_strategy_semantics():
    mesh, tex, _ = reynolds(100, 80)
    U = shaft_kinematics(CFG, 0.0).sliding_speed
    tol = 1e-6
    # wide perturbations so the blocks converge at different iterations
    wide = PumpConfig(fd_step_e=1e-6, fd_step_edot=3e-4)
    js = build_joint(mesh, STATE, tex, wide, BC, U)
    x, rep = solve_joint(js, "assor2", 1.8, "synchronized", tol)
    S = js.stacked.S
    g = float(norm(S - spmv(js.stacked, x), True) / norm(S, True))
    frozen, moved = {}, []

    def watch(it, xb, active):
        for b in range(len(js.blocks)):
            if b not in active:
                if b in frozen:
                    moved.append(not np.array_equal(frozen[b], xb[b]))
                else:
                    frozen[b] = xb[b].copy()

    xa, ra = solve_joint(js, "assor2", 1.8, "asynchronous", tol, callback=watch)
    worst = max(ra.block_relative_residuals)
    still = (len(moved) > 0 and not any(moved)
             and all(np.array_equal(frozen[b], xa[b]) for b in frozen))
    verdict(8, g <= tol and worst <= tol and still,
            f"sync global residual {g:.2e}, async worst block {worst:.2e} (<= {tol:g}); "
            f"freeze iterations {ra.freeze_iteration}, frozen blocks unchanged over "
            f"{len(moved)} checks: {still}")


# ---------------------------------------------------------------- 9

def test_c09_dynamics_sanity():
    wave = Waveform()
    t0 = time.perf_counter()
    tr = time_march(CFG, 200, 160, waveform=wave,
                    dyn=DynamicsOptions(periods=1, steps_per_period=90),
                    solver=SolverOptions(tol=1e-8, warm_start=True))
    dt = time.perf_counter() - t0
    hmin = min(s.min_thickness for s in tr.steps)
    med = float(np.median(tr.picard_counts))
    phi = tr.column("phi")
    p_in = tr.column("inlet_pressure")
    side = np.array([side_load_component(s.wrench.pressure.force, s.phi)
                     for s in tr.steps])
    high = np.array([wave.is_high(f) for f in phi])
    low = p_in == wave.low
    # sign: the film pushes back against the swashplate side load, much harder
    # while the inlet is high
    sign = bool(np.all(side[high] < 0) and np.abs(side[high]).min() > np.abs(side[low]).max())
    # timing: the load moves with the inlet pressure and only while it ramps
    dp, ds = np.diff(p_in), np.diff(side)
    ramps = dp != 0
    gap = np.abs(side[high]).mean() - np.abs(side[low]).mean()
    timing = bool(np.all(np.sign(ds[ramps]) == -np.sign(dp[ramps]))
                  and np.abs(ds[~ramps]).max() < 0.1 * gap)
    corr = float(np.corrcoef(side, p_in)[0, 1])
    ok = hmin > 0 and 3 <= med <= 8 and sign and timing and dt < 600
    verdict(9, ok, f"{len(tr.steps)} steps in {dt:.0f} s (<600); min film "
                   f"{hmin * 1e6:.2f} um; median Picard {med:g} (needs 3..8, counts "
                   f"{np.bincount(tr.picard_counts).tolist()}); side load follows "
                   f"inlet sign {sign}, timing {timing}, corr {corr:.3f}")


# ---------------------------------------------------------------- 10

def test_c10_fd_jacobians():
    model = LinearForceModel.reference()
    st = KinematicState(np.array([0.3, -0.1, 0.2, 0.4]) * 1e-6,
                        np.array([1.0, -2.0, 3.0, 0.5]) * 1e-5)
    jac = build_jacobians(model.forces(st, CFG.fd_step_e, CFG.fd_step_edot),
                          CFG.fd_step_e, CFG.fd_step_edot)
    je = rel(jac.dF_de, model.K_e)
    jv = rel(jac.dF_dedot, model.K_v)
    dt = CFG.period / 360
    F = model(st.e, st.edot)
    e, ed = picard_step(st, F, jac, dt, "general")
    delta = np.linalg.solve(dt * model.K_e + model.K_v, -F)
    gap = max(rel(ed, st.edot + delta), rel(e, st.e + dt * delta))
    verdict(10, je <= 1e-6 and jv <= 1e-6 and gap <= 1e-10,
            f"dF/de {je:.1e}, dF/dedot {jv:.1e} (<=1e-6); General step vs "
            f"closed-form equilibrium {gap:.1e} (<=1e-10)")


# ---------------------------------------------------------------- 11

def test_c11_determinism(tmp_path):
    import yaml
    base = {"mesh": {"n_theta": 40, "n_y": 30}, "seed": 11,
            "state": {"random": True},
            "bench": {"variants": ["jacobian", "assor2"], "omegas": [1.0, 1.8],
                      "meshes": [[40, 30]]},
            "dynamics": {"periods": 1, "steps_per_period": 6}}
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump(base))
    same = {}
    for mode in ("solve", "bench", "joint-bench", "simulate"):
        outs = []
        for k in range(2):
            out = tmp_path / f"{mode}_{k}"
            assert main([mode, "--config", str(cfg), "--out", str(out)]) == 0
            outs.append({p.relative_to(out): p.read_bytes()
                         for p in sorted(out.rglob("*.csv"))})
        same[mode] = bool(outs[0]) and outs[0] == outs[1]
    verdict(11, all(same.values()),
            "byte-identical CSVs: " + ", ".join(f"{m} {v}" for m, v in same.items()))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
