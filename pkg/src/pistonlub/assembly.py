"""Finite-volume discretisation of the Reynolds equation in diagonal storage.

The film obeys

    div(h^3 / (12 mu) grad p) = (U / 2) dh/dx + dh/dt,    x = R_k * theta,

with Dirichlet pressures on the two axial ends and periodicity around the
circumference.  The Dirichlet rings are eliminated, so the unknowns are the
``m = n_y - 2`` interior rings and ``n = n_theta * m``.  Unknown ``(i, j)``
(ring ``j`` counted from the first interior ring) sits at ``i + j * n_theta``.

The system is stored negated so that it is symmetric positive definite, one
sequence per stencil band:

========  =================  ==========================================
band      length             couples node ``(i, j)`` with
========  =================  ==========================================
``AP``    ``n``              itself
``AE``    ``n - n_E``        ``(i + 1, j)``, ``i < n_theta - 1``
``AW``    ``n - n_W``        ``(i - 1, j)``, ``i > 0``
``AEB``   ``n_E``            ``(0, j)`` from ``i = n_theta - 1``
``AWB``   ``n_W``            ``(n_theta - 1, j)`` from ``i = 0``
``AS``    ``n - n_S``        ``(i, j - 1)``, ``j > 0``
``AN``    ``n - n_N``        ``(i, j + 1)``, ``j < m - 1``
========  =================  ==========================================

with ``n_S = n_N = n_theta`` and ``n_E = n_W = m``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import MIN_THICKNESS, FilmMesh, InvalidMesh, NonPositiveThickness

BANDS = ("AP", "AE", "AW", "AEB", "AWB", "AS", "AN")

DENSE_LIMIT = 10_000


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryCondition:
    """Inlet pressure on the piston-bottom ring, outlet pressure on the top ring."""

    inlet: float
    outlet: float = 0.5e6

    def __post_init__(self):
        for v in (self.inlet, self.outlet):
            if not np.isfinite(v) or v < 0:
                raise ValueError("boundary pressures must be finite and >= 0")


@dataclass
class DiaSystem:
    """Symmetric five-band matrix with periodic wrap bands, plus its source.

    Every array may carry leading batch axes; a batch of ``k`` systems on the
    same mesh is simply a ``DiaSystem`` whose arrays have shape ``(k, ...)``.
    """

    n_theta: int
    n_rings: int
    AP: np.ndarray
    AE: np.ndarray
    AW: np.ndarray
    AEB: np.ndarray
    AWB: np.ndarray
    AS: np.ndarray
    AN: np.ndarray
    S: np.ndarray

    @property
    def n(self) -> int:
        return self.n_theta * self.n_rings

    @property
    def n_S(self) -> int:
        return self.n_theta

    n_N = n_S

    @property
    def n_E(self) -> int:
        return self.n_rings

    n_W = n_E

    @property
    def batch_shape(self) -> tuple:
        return self.AP.shape[:-1]

    @property
    def stored_elements(self) -> int:
        return sum(getattr(self, b).shape[-1] for b in BANDS)

    # 2D views used by the kernels: (..., rings, columns)
    def view(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        m, nt = self.n_rings, self.n_theta
        shape = {
            "AP": (m, nt), "S": (m, nt),
            "AE": (m, nt - 1), "AW": (m, nt - 1),
            "AEB": (m,), "AWB": (m,),
            "AS": (m - 1, nt), "AN": (m - 1, nt),
        }[name]
        return a.reshape(a.shape[:-1] + shape)

    def block(self, k: int) -> "DiaSystem":
        return DiaSystem(self.n_theta, self.n_rings,
                         *(getattr(self, b)[k] for b in BANDS), self.S[k])

    def with_source(self, S: np.ndarray) -> "DiaSystem":
        return DiaSystem(self.n_theta, self.n_rings,
                         *(getattr(self, b) for b in BANDS), S)


def stack(systems) -> DiaSystem:
    """Batch systems on a common mesh into one ``DiaSystem``."""
    systems = list(systems)
    first = systems[0]
    for s in systems[1:]:
        if (s.n_theta, s.n_rings) != (first.n_theta, first.n_rings):
            raise ValueError("all systems must share the mesh")
    arrays = [np.stack([getattr(s, b) for s in systems]) for b in BANDS + ("S",)]
    return DiaSystem(first.n_theta, first.n_rings, *arrays)


def harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def assemble(mesh: FilmMesh, h: np.ndarray, dhdt: np.ndarray, U: float,
             mu: float, bc: BoundaryCondition) -> DiaSystem:
    """Build the pressure system for one film state.

    Parameters
    ----------
    mesh : FilmMesh
    h, dhdt : numpy.ndarray
        Thickness and its rate at all ``mesh.n`` nodes, boundary rings included.
    U : float
        Circumferential sliding speed [m/s].
    mu : float
        Dynamic viscosity [Pa s].
    bc : BoundaryCondition

    Returns
    -------
    DiaSystem
        Bands for the interior unknowns, Dirichlet data folded into ``S``.
    """
    nt, ny = mesh.n_theta, mesh.n_y
    if nt < 4 or ny < 4:
        raise InvalidMesh(f"mesh {nt}x{ny} is too small")
    h = np.asarray(h, dtype=float).reshape(ny, nt)
    dhdt = np.asarray(dhdt, dtype=float).reshape(ny, nt)
    bad = np.flatnonzero(h.ravel() < MIN_THICKNESS)
    if bad.size:
        raise NonPositiveThickness(bad[0], h.ravel()[bad[0]])

    dx = mesh.dx
    dy = mesh.dy
    k = h ** 3 / (12.0 * mu)

    # east faces, including the wrap face between column nt-1 and column 0
    k_e = harmonic(k, np.roll(k, -1, axis=1))
    c_e = k_e * (dy / dx)
    # north faces between ring j and j+1
    k_n = harmonic(k[:-1], k[1:])
    c_n = k_n * (dx / dy)

    inner = slice(1, ny - 1)
    ce = c_e[inner]                    # (m, nt), face to the east of each node
    cw = np.roll(ce, 1, axis=1)        # face to the west
    cs = c_n[0:ny - 2]                 # face to the south of rings 1..ny-2
    cn = c_n[1:ny - 1]                 # face to the north

    AP = ce + cw + cs + cn
    AE = -ce[:, :-1]
    AW = -cw[:, 1:]
    AEB = -ce[:, -1]
    AWB = -cw[:, 0]
    AS = -cs[1:]
    AN = -cn[:-1]

    hi = h[inner]
    wedge = 0.5 * U * 0.5 * (np.roll(hi, -1, axis=1) - np.roll(hi, 1, axis=1)) * dy
    squeeze = dhdt[inner] * dx * dy
    S = -(wedge + squeeze)
    S[0] += cs[0] * bc.inlet
    S[-1] += cn[-1] * bc.outlet

    return DiaSystem(nt, ny - 2, AP.ravel(), AE.ravel(), AW.ravel(),
                     AEB.copy(), AWB.copy(), AS.ravel(), AN.ravel(), S.ravel())


def expand_dense(sys: DiaSystem) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(A, S)`` for an unbatched system; meant for small test cases."""
    n, nt, m = sys.n, sys.n_theta, sys.n_rings
    if n > DENSE_LIMIT:
        raise TooLarge(f"refusing to expand a system with n = {n}")
    A = np.zeros((n, n))
    idx = np.arange(n).reshape(m, nt)
    A[idx.ravel(), idx.ravel()] = sys.AP
    rows, cols = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    A[rows, cols] = sys.AE
    A[cols, rows] = sys.AW
    A[idx[:, -1], idx[:, 0]] = sys.AEB
    A[idx[:, 0], idx[:, -1]] = sys.AWB
    rows, cols = idx[1:].ravel(), idx[:-1].ravel()
    A[rows, cols] = sys.AS
    A[cols, rows] = sys.AN
    return A, np.array(sys.S, dtype=float)


def full_field(sys: DiaSystem, p: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
    """Pressure on every mesh node: Dirichlet rings wrapped around the unknowns."""
    p = np.asarray(p)
    nt = sys.n_theta
    inner = p.reshape(p.shape[:-1] + (sys.n_rings, nt))
    lo = np.full(p.shape[:-1] + (1, nt), bc.inlet)
    hi = np.full(p.shape[:-1] + (1, nt), bc.outlet)
    out = np.concatenate([lo, inner, hi], axis=-2)
    return out.reshape(p.shape[:-1] + (-1,))


def linear_guess(sys: DiaSystem, bc: BoundaryCondition) -> np.ndarray:
    """Interior pressures of the axial ramp between the two end pressures."""
    m, nt = sys.n_rings, sys.n_theta
    s = np.arange(1, m + 1) / (m + 1)
    ring = bc.inlet + (bc.outlet - bc.inlet) * s
    return np.repeat(ring, nt)


def dump_csv(sys: DiaSystem, path) -> None:
    """Write the bands of an unbatched system as ``band,offset,index,value`` rows.

    ``offset`` is the dense column offset of the band (``0``, ``+1``, ``-1``,
    ``-(n_theta-1)``, ``+(n_theta-1)``, ``-n_theta``, ``+n_theta``) and the
    source vector is written with band name ``S`` and offset ``0``.
    """
    nt = sys.n_theta
    offsets = {"AP": 0, "AE": 1, "AW": -1, "AEB": -(nt - 1), "AWB": nt - 1,
               "AS": -nt, "AN": nt, "S": 0}
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["band", "offset", "index", "value"])
        for name in BANDS + ("S",):
            for i, v in enumerate(getattr(sys, name)):
                w.writerow([name, offsets[name], i, repr(float(v))])
