"""Joint block-diagonal system for the base state and its eight FD perturbations.

Block 0 is assembled at ``(e, edot)``; blocks 1-4 bump ``e[j-1]`` by the
eccentricity step and blocks 5-8 bump ``edot[j-5]`` by the rate step.  Node
``i`` of block ``j`` has global index ``i + j * n``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .assembly import BANDS, BoundaryCondition, DiaSystem, assemble, stack
from .geometry import (FilmMesh, KinematicState, NonPositiveThickness,
                       PumpConfig, TexturePattern, film_thickness,
                       film_thickness_rate)
from .krylov import (Breakdown, PcgReport, build_preconditioner, dot,
                     norm, pcg_solve, spmv, BREAKDOWN_RATIO)

log = logging.getLogger(__name__)

N_BLOCKS = 9


class Strategy(str, Enum):
    SYNCHRONIZED = "synchronized"
    ASYNCHRONOUS = "asynchronous"


class BlockError(RuntimeError):
    def __init__(self, block: int, err: Exception):
        self.block = block
        super().__init__(f"block {block}: {err}")


def perturbed_states(state: KinematicState, de: float, dedot: float):
    """The nine working conditions in block order."""
    out = [state.replace()]
    for j in range(4):
        e = state.e.copy()
        e[j] += de
        out.append(state.replace(e=e))
    for j in range(4):
        ed = state.edot.copy()
        ed[j] += dedot
        out.append(state.replace(edot=ed))
    return out


@dataclass
class JointSystem:
    blocks: list
    stacked: DiaSystem
    states: list
    thickness: np.ndarray  # (9, mesh.n)

    @property
    def n(self) -> int:
        return self.stacked.n

    def global_index(self, block: int, node: int) -> int:
        return node + block * self.n

    @property
    def S_G(self) -> np.ndarray:
        return self.stacked.S.reshape(-1)


def build_joint(mesh: FilmMesh, state: KinematicState, tex: TexturePattern | None,
                config: PumpConfig, bc: BoundaryCondition, U: float) -> JointSystem:
    """Assemble all nine blocks on one mesh."""
    states = perturbed_states(state, config.fd_step_e, config.fd_step_edot)
    blocks, hs = [], []
    for j, st in enumerate(states):
        try:
            h = film_thickness(mesh, st, config, tex)
            hd = film_thickness_rate(mesh, st, config)
            blocks.append(assemble(mesh, h, hd, U, config.oil_viscosity, bc))
        except NonPositiveThickness as err:
            raise BlockError(j, err) from err
        hs.append(h)
    return JointSystem(blocks, stack(blocks), states, np.stack(hs))


@dataclass
class JointReport:
    strategy: str
    per_block: list
    global_iterations: int = 0
    total_iterations: int = 0
    converged: bool = False
    global_relative_residual: float = float("nan")
    block_relative_residuals: list = field(default_factory=list)
    reconfiguration_events: int = 0
    freeze_iteration: list = field(default_factory=list)
    global_report: PcgReport | None = None


def _block_residuals(sys: DiaSystem, x: np.ndarray) -> list[float]:
    r = sys.S - spmv(sys, x)
    sn = norm(sys.S)
    rn = norm(r)
    return [float(a / b) if b > 0 else float(a) for a, b in zip(rn, sn)]


def solve_joint(js: JointSystem, variant="assor2", omega: float = 1.8,
                strategy="synchronized", tol: float = 1e-6,
                max_iter: int = 100_000, x0=None, callback=None,
                track_blocks: bool = False):
    """Solve the nine blocks together.

    ``synchronized`` runs one Krylov process on the whole block-diagonal
    system and stops on the global relative residual.  ``asynchronous`` runs
    one process per block and freezes each block as soon as its own relative
    residual meets ``tol``.  ``callback(iteration, p, active)`` is called
    after every asynchronous iteration; rows of ``p`` outside ``active`` hold
    the frozen solutions.  With ``track_blocks`` the synchronized run also
    records, per block, the first iteration at which that block's own
    relative residual met ``tol`` (``-1`` if it never did).

    Returns
    -------
    p : numpy.ndarray
        ``(9, n)`` interior pressures.
    report : JointReport
    """
    strategy = Strategy(strategy)
    sys = js.stacked
    pc = build_preconditioner(sys, variant, omega)
    if strategy is Strategy.SYNCHRONIZED:
        first = [-1] * sys.S.shape[0]
        monitor = None
        if track_blocks:
            snorm = norm(sys.S)

            def track(it, r):
                rn = norm(r)
                rel = np.where(snorm > 0, rn / np.where(snorm > 0, snorm, 1.0), rn)
                for b in np.flatnonzero(rel <= tol):
                    if first[b] < 0:
                        first[b] = it
            monitor = track

        x, rep = pcg_solve(sys, pc, x0=x0, tol=tol, max_iter=max_iter,
                           monitor=monitor)
        block_res = _block_residuals(sys, x)
        # per-block residuals are informative only; the stop test is global
        per_block = [PcgReport(iterations=first[b] if first[b] >= 0 else rep.iterations,
                               converged=res <= tol, final_relative_residual=res)
                     for b, res in enumerate(block_res)]
        return x, JointReport(strategy.value, per_block, rep.iterations,
                              rep.iterations, rep.converged,
                              rep.final_relative_residual, block_res,
                              global_report=rep)
    return _solve_async(js, pc, tol, max_iter, x0, callback)


def _solve_async(js, pc, tol, max_iter, x0, callback):
    sys = js.stacked
    nb, n = sys.S.shape
    S = sys.S
    x = np.zeros_like(S) if x0 is None else np.array(x0, dtype=float)
    reps = [PcgReport() for _ in range(nb)]
    snorm = norm(S)

    r = S - spmv(sys, x)
    res = np.where(snorm > 0, norm(r) / np.where(snorm > 0, snorm, 1.0), norm(r))
    for b in range(nb):
        reps[b].spmv_count += 1
        reps[b].dot_count += 2
        reps[b].residual_history.append(float(res[b]))

    active = [b for b in range(nb) if res[b] > tol]
    events = 0
    freeze_at = [0 if b not in active else -1 for b in range(nb)]
    for b in range(nb):
        if b not in active:
            reps[b].converged = True
            reps[b].final_relative_residual = float(res[b])
    if len(active) < nb:
        events += 1

    sub = _subsystem(sys, active)
    pcs = build_preconditioner(sub, pc.variant, pc.omega) if active else None
    xa, ra = x[active], r[active]
    z = pcs(ra) if active else None
    u = z.copy() if active else None
    d = dot(ra, z) if active else None
    for b in active:
        reps[b].precond_count += 1
        reps[b].dot_count += 1

    it = 0
    while active and it < max_iter:
        if np.any(d <= 0):
            raise Breakdown("r.z <= 0 in asynchronous PCG")
        v = spmv(sub, u)
        uv = dot(u, v)
        if np.any(uv <= BREAKDOWN_RATIO * norm(u) * norm(v)):
            raise Breakdown("u.Au <= 0 in asynchronous PCG")
        alpha = d / uv
        xa += alpha[:, None] * u
        ra -= alpha[:, None] * v
        sa = snorm[active]
        rn = norm(ra)
        res_a = np.where(sa > 0, rn / np.where(sa > 0, sa, 1.0), rn)
        it += 1
        for k, b in enumerate(active):
            rp = reps[b]
            rp.spmv_count += 1
            rp.dot_count += 2
            rp.iterations = it
            rp.residual_history.append(float(res_a[k]))
        done = res_a <= tol
        if np.any(done):
            for k in np.flatnonzero(done):
                b = active[k]
                x[b] = xa[k]
                reps[b].converged = True
                reps[b].final_relative_residual = float(res_a[k])
                freeze_at[b] = it
            keep = np.flatnonzero(~done)
            active = [active[k] for k in keep]
            events += 1
            if not active:
                break
            # compaction: rebuild the kernels on the surviving blocks
            sub = _subsystem(sys, active)
            pcs = build_preconditioner(sub, pc.variant, pc.omega)
            xa, ra, u, d = xa[keep], ra[keep], u[keep], d[keep]
        if callback is not None:
            callback(it, x, list(active))
        z = pcs(ra)
        d_new = dot(ra, z)
        for b in active:
            reps[b].precond_count += 1
            reps[b].dot_count += 1
        beta = d_new / d
        d = d_new
        u = z + beta[:, None] * u

    for k, b in enumerate(active):
        x[b] = xa[k]
        reps[b].final_relative_residual = float(res_a[k]) if it else float(res[b])
        log.warning("block %d did not converge in %d iterations", b, max_iter)

    block_res = _block_residuals(sys, x)
    total = sum(rp.iterations for rp in reps)
    r_all = S - spmv(sys, x)
    sn = float(norm(S, True))
    g = float(norm(r_all, True))
    g = g / sn if sn > 0 else g
    jr = JointReport(Strategy.ASYNCHRONOUS.value, reps,
                     max(rp.iterations for rp in reps),
                     total, all(rp.converged for rp in reps), g, block_res,
                     events, freeze_at)
    return x, jr


def _subsystem(sys: DiaSystem, rows) -> DiaSystem:
    rows = list(rows)
    return DiaSystem(sys.n_theta, sys.n_rings,
                     *(getattr(sys, b)[rows] for b in BANDS), sys.S[rows])


def sequential_solve(js: JointSystem, variant="assor2", omega: float = 1.8,
                     tol: float = 1e-6, max_iter: int = 100_000, x0=None):
    """Nine independent PCG runs, one block after the other."""
    out, reps = [], []
    for j, blk in enumerate(js.blocks):
        pc = build_preconditioner(blk, variant, omega)
        try:
            x, rep = pcg_solve(blk, pc, x0=None if x0 is None else x0[j],
                               tol=tol, max_iter=max_iter)
        except Breakdown as err:
            raise BlockError(j, err) from err
        out.append(x)
        reps.append(rep)
    x = np.stack(out)
    block_res = _block_residuals(js.stacked, x)
    total = sum(r.iterations for r in reps)
    jr = JointReport("sequential", reps, max(r.iterations for r in reps),
                     total, all(r.converged for r in reps), float("nan"), block_res)
    return x, jr
