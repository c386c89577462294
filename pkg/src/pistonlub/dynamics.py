"""Finite-difference Jacobians, Picard equilibrium updates and time marching."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import scipy.linalg

from .assembly import BoundaryCondition, full_field, linear_guess
from .geometry import (FilmMesh, KinematicState, PumpConfig,
                       build_texture_pattern, coupling_length, shaft_kinematics)
from .joint import build_joint, sequential_solve, solve_joint
from .loads import (GeneralForce, WrenchBreakdown, external_force,
                    general_oil_force, inertial_force, oil_wrench)

log = logging.getLogger(__name__)

PIVOT_RATIO = 1e-30

E0 = np.array([-0.2, 0.2, 0.2, -0.2]) * 1e-6
EDOT0 = np.array([-3.78, 3.78, 3.78, -3.78]) * 1e-7


class Scheme(str, Enum):
    GENERAL = "general"
    SIMPLIFIED = "simplified"


class SingularJacobian(np.linalg.LinAlgError):
    pass


class NonConvergentStep(RuntimeError):
    def __init__(self, step: int, residual: float):
        self.step, self.residual = step, residual
        super().__init__(f"Picard iteration did not reach equilibrium at step "
                         f"{step} (|F| = {residual:.3e} N)")


@dataclass
class JacobianPair:
    dF_de: np.ndarray
    dF_dedot: np.ndarray
    steps: tuple


def build_jacobians(forces, de: float, dedot: float) -> JacobianPair:
    """Forward differences from the nine block forces.

    ``forces[0]`` belongs to the base state, ``forces[1:5]`` to the
    eccentricity bumps and ``forces[5:9]`` to the rate bumps.
    """
    F = np.array([f.F if isinstance(f, GeneralForce) else f for f in forces],
                 dtype=float)
    base = F[0]
    dF_de = ((F[1:5] - base) / de).T
    dF_dedot = ((F[5:9] - base) / dedot).T
    return JacobianPair(dF_de, dF_dedot, (de, dedot))


def _solve4(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        # singularity is reported below with our own threshold
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    scale = np.abs(M).sum(axis=1).max()
    if np.min(np.abs(np.diag(lu))) < PIVOT_RATIO * scale or scale == 0:
        raise SingularJacobian("Jacobian matrix is singular to working precision")
    return scipy.linalg.lu_solve((lu, piv), rhs)


def picard_step(state: KinematicState, F: np.ndarray, jac: JacobianPair,
                dt: float, scheme="general") -> tuple[np.ndarray, np.ndarray]:
    """One equilibrium update of ``(e, edot)``.

    ``simplified`` drops the eccentricity Jacobian and moves the rate alone,
    then carries ``e`` along with the backward difference.  ``general`` keeps
    both Jacobians and enforces ``delta_e = dt * delta_edot`` inside the
    linearisation, i.e. solves ``(dt * dF_de + dF_dedot) delta_edot = -F``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    F = np.asarray(F, dtype=float)
    if Scheme(scheme) is Scheme.SIMPLIFIED:
        M = jac.dF_dedot
    else:
        M = dt * jac.dF_de + jac.dF_dedot
    if not np.any(F):
        return state.e.copy(), state.edot.copy()
    delta = _solve4(M, -F)
    return state.e + dt * delta, state.edot + delta


@dataclass
class LinearForceModel:
    """``F(e, edot) = K_e e + K_v edot + F0``; used to check the FD machinery."""

    K_e: np.ndarray
    K_v: np.ndarray
    F0: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __call__(self, e, edot) -> np.ndarray:
        return self.K_e @ e + self.K_v @ edot + self.F0

    def forces(self, state: KinematicState, de: float, dedot: float):
        from .joint import perturbed_states
        return [self(s.e, s.edot) for s in perturbed_states(state, de, dedot)]

    @classmethod
    def reference(cls) -> "LinearForceModel":
        """A well-conditioned squeeze-film-like model with cross coupling."""
        K_v = -np.array([[4.0, 0.3, 1.0, 0.1],
                         [0.3, 4.0, 0.1, 1.0],
                         [1.0, 0.1, 4.0, 0.3],
                         [0.1, 1.0, 0.3, 4.0]]) * 1e7
        K_e = np.array([[-3.0, 1.5, 0.5, 0.0],
                        [-1.5, -3.0, 0.0, 0.5],
                        [0.5, 0.0, -3.0, 1.5],
                        [0.0, 0.5, -1.5, -3.0]]) * 1e8
        return cls(K_e, K_v, np.array([120.0, -40.0, 300.0, 75.0]))


# --------------------------------------------------------------------------
# inlet pressure waveform

@dataclass(frozen=True)
class Waveform:
    """Inlet pressure locked to the shaft angle.

    ``trapezoid``: rises from ``low`` to ``high`` over ``ramp`` of a
    revolution, stays high until ``duty``, falls back over ``ramp``.
    ``table``: periodic linear interpolation of ``(angle_deg, pressure)``
    pairs.  ``phase`` shifts the pattern, as a fraction of a revolution.
    """

    shape: str = "trapezoid"
    low: float = 0.5e6
    high: float = 10.0e6
    duty: float = 0.5
    ramp: float = 0.05
    phase: float = 0.0
    table: tuple = ()

    def __post_init__(self):
        if self.shape not in ("constant", "trapezoid", "table"):
            raise ValueError(f"unknown waveform shape {self.shape!r}")
        if self.low < 0 or self.high < 0:
            raise ValueError("waveform pressures must be >= 0")
        if self.shape == "trapezoid" and not 0 < self.ramp <= self.duty < 1:
            raise ValueError("need 0 < ramp <= duty < 1")
        if self.shape == "table" and len(self.table) < 2:
            raise ValueError("table waveform needs at least two points")

    def __call__(self, phi: float) -> float:
        if self.shape == "constant":
            return self.high
        f = (phi / (2.0 * math.pi) + self.phase) % 1.0
        if self.shape == "table":
            ang, val = np.array(self.table, dtype=float).T
            return float(np.interp(f * 360.0, ang, val, period=360.0))
        lo, hi, r, d = self.low, self.high, self.ramp, self.duty
        if f < r:
            return lo + (hi - lo) * f / r
        if f < d:
            return hi
        if f < d + r:
            return hi - (hi - lo) * (f - d) / r
        return lo

    def is_high(self, phi: float) -> bool:
        f = (phi / (2.0 * math.pi) + self.phase) % 1.0
        return self.ramp <= f < self.duty


# --------------------------------------------------------------------------
# time marching

@dataclass(frozen=True)
class SolverOptions:
    variant: str = "assor2"
    omega: float = 1.8
    tol: float = 1e-8
    max_iter: int = 20_000
    strategy: str = "synchronized"
    warm_start: bool = False
    path: str = "joint"  # or "sequential"
    initial_guess: str = "zero"  # or "linear": axial ramp between the end pressures


@dataclass(frozen=True)
class DynamicsOptions:
    scheme: str = "general"
    periods: float = 1.0
    steps_per_period: int = 360
    eps_dyn: float = 1e-3
    max_picard: int = 20
    snapshot_every_deg: float = 30.0
    on_nonconvergence: str = "continue"  # or "halt"
    pressure_floor: float | None = None


@dataclass
class Evaluation:
    """Forces and fields of the nine working conditions at one Picard iterate."""

    total: np.ndarray       # (9, 4)
    oil: np.ndarray         # (9, 4)
    external: GeneralForce
    inertial: GeneralForce
    wrench: WrenchBreakdown  # base condition
    pressure: np.ndarray    # (9, n) interior unknowns
    pcg_iterations: int
    min_thickness: float


def evaluate(mesh: FilmMesh, state: KinematicState, tex, config: PumpConfig,
             bc: BoundaryCondition, U: float, solver: SolverOptions,
             floor=None, x0=None) -> Evaluation:
    """Joint analysis of the base and perturbed conditions at one state."""
    js = build_joint(mesh, state, tex, config, bc, U)
    if x0 is None and solver.initial_guess == "linear":
        x0 = np.broadcast_to(linear_guess(js.stacked, bc), js.stacked.S.shape).copy()
    if solver.path == "sequential":
        p, rep = sequential_solve(js, solver.variant, solver.omega, solver.tol,
                                  solver.max_iter, x0)
        iters = rep.total_iterations
    else:
        p, rep = solve_joint(js, solver.variant, solver.omega, solver.strategy,
                             solver.tol, solver.max_iter, x0=x0)
        iters = (rep.global_iterations if rep.strategy == "synchronized"
                 else rep.total_iterations)
    fields = full_field(js.stacked, p, bc)
    L = mesh.coupling_length
    oil, wrenches = [], []
    for j in range(len(js.blocks)):
        w = oil_wrench(mesh, fields[j], js.thickness[j], U, config.oil_viscosity,
                       floor)
        wrenches.append(w)
        oil.append(general_oil_force(w, L).F)
    F_E = external_force(config, state.shaft_angle, bc.inlet)
    F_I = inertial_force(config, state.shaft_angle)
    oil = np.array(oil)
    total = oil + F_E.F + F_I.F
    return Evaluation(total, oil, F_E, F_I, wrenches[0], p, iters,
                      float(js.thickness[0].min()))


@dataclass
class StepRecord:
    step: int
    t: float
    phi: float
    inlet_pressure: float
    coupling_length: float
    e: np.ndarray
    edot: np.ndarray
    residual: float
    force_scale: float
    picard: int
    converged: bool
    pcg_iterations: int
    min_thickness: float
    wrench: WrenchBreakdown
    oil: np.ndarray
    external: np.ndarray
    inertial: np.ndarray
    history: tuple = ()  # |F| at every evaluation of the step


@dataclass
class SimulationTrace:
    dt: float
    steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (step, t, phi, field(n_y, n_theta))

    @property
    def picard_counts(self) -> np.ndarray:
        return np.array([s.picard for s in self.steps], dtype=int)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])


def time_march(config: PumpConfig, n_theta: int, n_y: int,
               tex_kind: str = "none", waveform: Waveform | None = None,
               dyn: DynamicsOptions | None = None,
               solver: SolverOptions | None = None,
               e0=E0, edot0=EDOT0,
               on_step: Callable[[StepRecord], None] | None = None
               ) -> SimulationTrace:
    """March the piston equilibrium through ``dyn.periods`` shaft revolutions."""
    waveform = waveform or Waveform()
    dyn = dyn or DynamicsOptions()
    solver = solver or SolverOptions()
    dt = config.period / dyn.steps_per_period
    n_steps = int(round(dyn.periods * dyn.steps_per_period))
    trace = SimulationTrace(dt)

    base = FilmMesh(n_theta, n_y, config.min_coupling_length, config.piston_radius)
    # the longest film has the coarsest axial spacing
    longest = max(coupling_length(config, 0.0), coupling_length(config, math.pi))
    tex = build_texture_pattern(tex_kind, base.with_length(longest),
                                config.piston_radius)
    e_prev = np.array(e0, dtype=float)
    ed_prev = np.array(edot0, dtype=float)
    x0 = None
    last_bin = None

    for l in range(n_steps):
        t = (l + 1) * dt
        sh = shaft_kinematics(config, t)
        phi = sh.shaft_angle
        mesh = base.with_length(sh.coupling_length)
        p_in = waveform(phi)
        bc = BoundaryCondition(p_in, config.outlet_pressure)
        F_scale = max(float(np.linalg.norm(external_force(config, phi, p_in).F)), 1.0)

        state = KinematicState(e_prev + dt * ed_prev, ed_prev.copy(), phi, t)
        best = None
        pcg_total = 0
        converged = False
        history = []
        for k in range(dyn.max_picard):
            ev = evaluate(mesh, state, tex, config, bc, sh.sliding_speed, solver,
                          dyn.pressure_floor, x0)
            pcg_total += ev.pcg_iterations
            if solver.warm_start:
                x0 = ev.pressure
            res = float(np.linalg.norm(ev.total[0]))
            history.append(res)
            if best is None or res < best[0]:
                best = (res, state, ev, k + 1)
            if res <= dyn.eps_dyn * F_scale:
                converged = True
                break
            jac = build_jacobians(ev.total, config.fd_step_e, config.fd_step_edot)
            e_new, ed_new = picard_step(state, ev.total[0], jac, dt, dyn.scheme)
            state = KinematicState(e_new, ed_new, phi, t)
        n_picard = k + 1
        res, state, ev, _ = best if not converged else (res, state, ev, n_picard)
        if not converged:
            if dyn.on_nonconvergence == "halt":
                raise NonConvergentStep(l, res)
            log.warning("step %d: accepting best iterate, |F| = %.3e N", l, res)

        rec = StepRecord(l, t, phi, p_in, sh.coupling_length, state.e.copy(),
                         state.edot.copy(), res, F_scale, n_picard, converged,
                         pcg_total, ev.min_thickness, ev.wrench, ev.oil[0].copy(),
                         ev.external.F.copy(), ev.inertial.F.copy(), tuple(history))
        trace.steps.append(rec)
        if on_step is not None:
            on_step(rec)

        if dyn.snapshot_every_deg > 0:
            b = int(math.floor(math.degrees(phi) / dyn.snapshot_every_deg + 1e-9))
            if b != last_bin:
                js_field = full_field_of(ev, n_theta, n_y, bc)
                trace.snapshots.append((l, t, phi, js_field))
                last_bin = b
        e_prev, ed_prev = state.e.copy(), state.edot.copy()
    return trace


def full_field_of(ev: Evaluation, n_theta: int, n_y: int,
                  bc: BoundaryCondition) -> np.ndarray:
    inner = ev.pressure[0].reshape(n_y - 2, n_theta)
    return np.vstack([np.full((1, n_theta), bc.inlet), inner,
                      np.full((1, n_theta), bc.outlet)])
