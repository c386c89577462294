"""Banded SpMV, deterministic reductions, preconditioners and the PCG solver.

All kernels accept leading batch axes, so a stack of systems (see
:func:`pistonlub.assembly.stack`) is multiplied, preconditioned and reduced
with the same elementwise arithmetic as a single system.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numba
import numpy as np

from .assembly import BANDS, DiaSystem

log = logging.getLogger(__name__)

BREAKDOWN_RATIO = 1e-30


class Breakdown(ArithmeticError):
    """PCG met a non-positive curvature or inner product (matrix not SPD)."""


class ZeroDiagonal(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class Variant(str, Enum):
    JACOBIAN = "jacobian"
    SSOR = "ssor"
    ASSOR_I = "assor1"
    ASSOR_II = "assor2"


def tree_sum(x: np.ndarray) -> np.ndarray:
    """Pairwise sum over the last axis with a fixed, shape-only reduction tree.

    Level by level, element ``2k`` is added to ``2k + 1`` (an odd tail is
    carried up unchanged).  The result depends on the length of the axis
    alone, never on the number of threads or on how many rows are batched.
    """
    x = np.asarray(x, dtype=float)
    lead = x.shape[:-1]
    if x.shape[-1] == 0:
        return np.zeros(lead)
    out = _tree_rows(np.ascontiguousarray(x.reshape(-1, x.shape[-1])))
    return out.reshape(lead) if lead else out[0]


@numba.njit(cache=True)
def _collapse(buf, size):
    while size > 1:
        half = size // 2
        for k in range(half):
            buf[k] = buf[2 * k] + buf[2 * k + 1]
        if size % 2:
            buf[half] = buf[size - 1]
            size = half + 1
        else:
            size = half
    return buf[0]


@numba.njit(cache=True)
def _tree_rows(x):
    rows, n = x.shape
    out = np.empty(rows)
    buf = np.empty(n)
    for b in range(rows):
        for k in range(n):
            buf[k] = x[b, k]
        out[b] = _collapse(buf, n)
    return out


@numba.njit(cache=True)
def _dot_rows(a, b):
    # first tree level fused with the products; same result as tree_sum(a * b)
    rows, n = a.shape
    out = np.empty(rows)
    buf = np.empty((n + 1) // 2)
    for r in range(rows):
        half = n // 2
        for k in range(half):
            buf[k] = a[r, 2 * k] * b[r, 2 * k] + a[r, 2 * k + 1] * b[r, 2 * k + 1]
        size = half
        if n % 2:
            buf[half] = a[r, n - 1] * b[r, n - 1]
            size = half + 1
        out[r] = _collapse(buf, size) if size > 0 else 0.0
    return out


def dot(a: np.ndarray, b: np.ndarray, axis_all: bool = False):
    """Deterministic inner product over the last axis (or over everything)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if axis_all:
        a, b = a.reshape(-1), b.reshape(-1)
    lead = np.broadcast_shapes(a.shape, b.shape)[:-1]
    a2 = np.ascontiguousarray(np.broadcast_to(a, lead + a.shape[-1:])).reshape(-1, a.shape[-1])
    b2 = np.ascontiguousarray(np.broadcast_to(b, lead + b.shape[-1:])).reshape(-1, b.shape[-1])
    if a2.shape[-1] == 0:
        return np.zeros(lead) if lead else 0.0
    out = _dot_rows(a2, b2)
    return out.reshape(lead) if lead else out[0]


def norm(a: np.ndarray, axis_all: bool = False):
    return np.sqrt(dot(a, a, axis_all))


# --------------------------------------------------------------------------
# banded products

def _grid(sys: DiaSystem, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != sys.n:
        raise DimensionMismatch(f"vector of length {x.shape[-1]} for n = {sys.n}")
    return x.reshape(x.shape[:-1] + (sys.n_rings, sys.n_theta))


def _batched(sys: DiaSystem, x: np.ndarray):
    """Bands and vector as ``(rows, ...)`` arrays; an unbatched system broadcasts."""
    m, nt = sys.n_rings, sys.n_theta
    g = np.ascontiguousarray(_grid(sys, x)).reshape(-1, m, nt)
    bands = []
    for name in BANDS:
        a = sys.view(name)
        core = a.shape[-1:] if name in ("AEB", "AWB") else a.shape[-2:]
        bands.append(np.ascontiguousarray(a).reshape((-1,) + core))
    bands = tuple(bands)
    nb = bands[0].shape[0]
    if nb != 1 and nb != g.shape[0]:
        raise DimensionMismatch("batch shapes of system and vector differ")
    return g, bands


def spmv(sys: DiaSystem, x: np.ndarray) -> np.ndarray:
    """``A @ x`` straight from the bands; one output row per node."""
    x = np.asarray(x, dtype=float)
    g, bands = _batched(sys, x)
    return _spmv_kernel(g, *bands).reshape(np.broadcast_shapes(
        x.shape, sys.AP.shape))


@numba.njit(cache=True)
def _spmv_kernel(x, AP, AE, AW, AEB, AWB, AS, AN):
    rows, m, nt = x.shape
    y = np.empty_like(x)
    for b in range(rows):
        s = b if AP.shape[0] > 1 else 0
        for j in range(m):
            for i in range(nt):
                acc = AP[s, j, i] * x[b, j, i]
                if i < nt - 1:
                    acc += AE[s, j, i] * x[b, j, i + 1]
                else:
                    acc += AEB[s, j] * x[b, j, 0]
                if i > 0:
                    acc += AW[s, j, i - 1] * x[b, j, i - 1]
                else:
                    acc += AWB[s, j] * x[b, j, nt - 1]
                if j > 0:
                    acc += AS[s, j - 1, i] * x[b, j - 1, i]
                if j < m - 1:
                    acc += AN[s, j, i] * x[b, j + 1, i]
                y[b, j, i] = acc
    return y


def lower_mul(sys: DiaSystem, x: np.ndarray) -> np.ndarray:
    """``L @ x`` with ``L`` the strict lower triangle (AW, AS, AEB)."""
    g = _grid(sys, x)
    y = np.zeros_like(g)
    y[..., :, 1:] += sys.view("AW") * g[..., :, :-1]
    y[..., :, -1] += sys.view("AEB") * g[..., :, 0]
    y[..., 1:, :] += sys.view("AS") * g[..., :-1, :]
    return y.reshape(x.shape)


def lower_t_mul(sys: DiaSystem, x: np.ndarray) -> np.ndarray:
    """``L.T @ x`` built from the lower bands."""
    g = _grid(sys, x)
    y = np.zeros_like(g)
    y[..., :, :-1] += sys.view("AW") * g[..., :, 1:]
    y[..., :, 0] += sys.view("AEB") * g[..., :, -1]
    y[..., :-1, :] += sys.view("AS") * g[..., 1:, :]
    return y.reshape(x.shape)


# --------------------------------------------------------------------------
# preconditioners

@dataclass
class Preconditioner:
    """Data needed to apply ``M^-1`` for one system (or a batch of them)."""

    variant: Variant
    omega: float
    system: DiaSystem
    inv_diag: np.ndarray

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return apply_preconditioner(self, r)


def build_preconditioner(sys: DiaSystem, variant="jacobian",
                         omega: float = 1.0) -> Preconditioner:
    variant = Variant(variant)
    if variant is not Variant.JACOBIAN and not 0.0 < omega < 2.0:
        raise ValueError(f"relaxation factor {omega} outside (0, 2)")
    D = sys.AP
    if np.any(D == 0) or not np.all(np.isfinite(D)):
        raise ZeroDiagonal("main diagonal has zero or non-finite entries")
    if variant is Variant.ASSOR_I:
        inv = 1.0 / _ssor_diagonal(sys, omega)
    else:
        inv = 1.0 / D
    if np.any(inv <= 0) or not np.all(np.isfinite(inv)):
        raise ZeroDiagonal("preconditioner diagonal must be finite and positive")
    return Preconditioner(variant, float(omega), sys, inv)


def _ssor_diagonal(sys: DiaSystem, omega: float) -> np.ndarray:
    """Diagonal of ``(D + wL) D^-1 (D + wL)^T``: ``D_i + w^2 sum_k L_ik^2 / D_k``."""
    D = sys.view("AP")
    acc = np.zeros_like(D)
    acc[..., :, 1:] += sys.view("AW") ** 2 / D[..., :, :-1]
    acc[..., :, -1] += sys.view("AEB") ** 2 / D[..., :, 0]
    acc[..., 1:, :] += sys.view("AS") ** 2 / D[..., :-1, :]
    return (D + omega * omega * acc).reshape(sys.AP.shape)


def apply_preconditioner(pc: Preconditioner, r: np.ndarray) -> np.ndarray:
    """Return ``z = M^-1 r`` for the preconditioner's variant."""
    w = pc.omega
    if pc.variant is Variant.JACOBIAN:
        return r * pc.inv_diag
    if pc.variant is Variant.ASSOR_I:
        return (w * (2.0 - w)) * r * pc.inv_diag
    if pc.variant is Variant.ASSOR_II:
        # v = (I - w D^-1 L) D^-1 r ;  z = w (2 - w) (I - w D^-1 L^T) v
        r = np.asarray(r, dtype=float)
        g, bands = _batched(pc.system, r)
        inv = np.ascontiguousarray(pc.inv_diag).reshape(bands[0].shape)
        z = _assor2_kernel(g, inv, bands[2], bands[3], bands[5], w)
        return z.reshape(np.broadcast_shapes(r.shape, pc.inv_diag.shape))
    return _ssor_apply(pc, r)


def _ssor_apply(pc: Preconditioner, r: np.ndarray) -> np.ndarray:
    sys = pc.system
    m, nt = sys.n_rings, sys.n_theta
    r = np.asarray(r, dtype=float)
    batch = r.shape[:-1]
    rr = r.reshape((-1, m, nt))
    D = np.broadcast_to(sys.view("AP"), batch + (m, nt)).reshape(-1, m, nt)
    AW = np.broadcast_to(sys.view("AW"), batch + (m, nt - 1)).reshape(-1, m, nt - 1)
    AEB = np.broadcast_to(sys.view("AEB"), batch + (m,)).reshape(-1, m)
    AS = np.broadcast_to(sys.view("AS"), batch + (m - 1, nt)).reshape(-1, m - 1, nt)
    out = np.empty_like(rr)
    for b in range(rr.shape[0]):
        out[b] = _ssor_sweeps(rr[b], D[b], AW[b], AEB[b], AS[b], pc.omega)
    return (pc.omega * (2.0 - pc.omega)) * out.reshape(r.shape)


@numba.njit(cache=True)
def _assor2_kernel(r, inv, AW, AEB, AS, w):
    rows, m, nt = r.shape
    c = w * (2.0 - w)
    z = np.empty_like(r)
    v = np.empty((m, nt))
    d = np.empty((m, nt))
    for b in range(rows):
        s = b if inv.shape[0] > 1 else 0
        for j in range(m):
            for i in range(nt):
                d[j, i] = r[b, j, i] * inv[s, j, i]
        # v = d - w D^-1 L d
        for j in range(m):
            for i in range(nt):
                acc = 0.0
                if i > 0:
                    acc += AW[s, j, i - 1] * d[j, i - 1]
                if i == nt - 1:
                    acc += AEB[s, j] * d[j, 0]
                if j > 0:
                    acc += AS[s, j - 1, i] * d[j - 1, i]
                v[j, i] = d[j, i] - w * inv[s, j, i] * acc
        # z = c (v - w D^-1 L^T v)
        for j in range(m):
            for i in range(nt):
                acc = 0.0
                if i < nt - 1:
                    acc += AW[s, j, i] * v[j, i + 1]
                if i == 0:
                    acc += AEB[s, j] * v[j, nt - 1]
                if j < m - 1:
                    acc += AS[s, j, i] * v[j + 1, i]
                z[b, j, i] = c * (v[j, i] - w * inv[s, j, i] * acc)
    return z


@numba.njit(cache=True)
def _ssor_sweeps(r, D, AW, AEB, AS, w):
    # forward: (D + wL) y = r, then scale by D, then backward: (D + wL)^T z = D y
    m, nt = r.shape
    y = np.empty_like(r)
    for j in range(m):
        for i in range(nt):
            acc = 0.0
            if i > 0:
                acc += AW[j, i - 1] * y[j, i - 1]
            if i == nt - 1:
                acc += AEB[j] * y[j, 0]
            if j > 0:
                acc += AS[j - 1, i] * y[j - 1, i]
            y[j, i] = (r[j, i] - w * acc) / D[j, i]
    z = np.empty_like(r)
    for j in range(m - 1, -1, -1):
        for i in range(nt - 1, -1, -1):
            acc = 0.0
            if i < nt - 1:
                acc += AW[j, i] * z[j, i + 1]
            if i == 0:
                acc += AEB[j] * z[j, nt - 1]
            if j < m - 1:
                acc += AS[j, i] * z[j + 1, i]
            z[j, i] = (D[j, i] * y[j, i] - w * acc) / D[j, i]
    return z


# --------------------------------------------------------------------------
# PCG

@dataclass
class PcgReport:
    iterations: int = 0
    converged: bool = False
    final_relative_residual: float = float("nan")
    residual_history: list = field(default_factory=list)
    spmv_count: int = 0
    dot_count: int = 0
    precond_count: int = 0

    def write_csv(self, path) -> None:
        write_residual_csv(self.residual_history, path)


def _relative(rnorm, snorm):
    return rnorm / snorm if snorm > 0 else rnorm


def pcg_solve(sys: DiaSystem, precond: Preconditioner, x0=None,
              tol: float = 1e-6, max_iter: int = 100_000, monitor=None):
    """Preconditioned conjugate gradients with a single SpMV per iteration.

    Stops when ``||S - A x||_2 / ||S||_2 <= tol``.  For a batched ``sys`` the
    batch is treated as one block-diagonal system with global inner products.
    ``monitor(iteration, r)`` sees every residual, the initial one included.

    Returns
    -------
    x : numpy.ndarray
        Final iterate, or the lowest-residual iterate when ``max_iter`` ran out.
    report : PcgReport
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    S = np.asarray(sys.S, dtype=float)
    x = np.zeros_like(S) if x0 is None else np.array(x0, dtype=float)
    if x.shape != S.shape:
        raise DimensionMismatch(f"x0 shape {x.shape} != {S.shape}")
    rep = PcgReport()

    snorm = float(norm(S, True))
    r = S - spmv(sys, x)
    rep.spmv_count += 1
    res = _relative(float(norm(r, True)), snorm)
    rep.dot_count += 2
    rep.residual_history.append(res)
    if monitor is not None:
        monitor(0, r)
    if res <= tol:
        rep.converged, rep.final_relative_residual = True, res
        return x, rep

    z = precond(r)
    rep.precond_count += 1
    u = z.copy()
    d = float(dot(r, z, True))
    rep.dot_count += 1
    best_x, best_res = x.copy(), res

    for j in range(max_iter):
        if d <= 0:
            raise Breakdown(f"r.z = {d:.3e} <= 0 at iteration {j}")
        v = spmv(sys, u)
        rep.spmv_count += 1
        uv = float(dot(u, v, True))
        rep.dot_count += 1
        if uv <= BREAKDOWN_RATIO * float(norm(u, True) * norm(v, True)):
            raise Breakdown(f"u.Au = {uv:.3e} at iteration {j}")
        alpha = d / uv
        x += alpha * u
        r -= alpha * v
        res = _relative(float(norm(r, True)), snorm)
        rep.dot_count += 1
        rep.residual_history.append(res)
        rep.iterations = j + 1
        if monitor is not None:
            monitor(j + 1, r)
        if res <= tol:
            rep.converged, rep.final_relative_residual = True, res
            return x, rep
        if res < best_res:
            best_x[...] = x
            best_res = res
        z = precond(r)
        rep.precond_count += 1
        d_new = float(dot(r, z, True))
        rep.dot_count += 1
        beta = d_new / d
        d = d_new
        u = z + beta * u

    log.warning("PCG did not converge in %d iterations (residual %.3e)",
                max_iter, res)
    rep.final_relative_residual = best_res
    return best_x, rep


def omega_sweep(sys: DiaSystem, variant="assor2", omegas=(), tol: float = 1e-6,
                max_iter: int = 100_000) -> list[tuple[float, int]]:
    """Iteration counts of zero-start PCG for each relaxation factor."""
    out = []
    for w in omegas:
        pc = build_preconditioner(sys, variant, w)
        _, rep = pcg_solve(sys, pc, tol=tol, max_iter=max_iter)
        out.append((float(w), rep.iterations))
    return out


def default_omega_grid() -> list[float]:
    """Relaxation factors ``0.18 i + 0.1`` for ``i = 1..10``."""
    return [round(0.18 * i + 0.1, 10) for i in range(1, 11)]


def write_residual_csv(history, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "relative_residual"])
        for i, v in enumerate(history):
            w.writerow([i, repr(float(v))])
