"""Oil-film wrench integration and the generalised forces on the piston.

Axes: ``x`` and ``y`` are the lateral directions of the piston frame
(``theta = 0`` points along ``x``, radially outward from the shaft), ``z`` is
the piston axis pointing from the bottom (``z = 0``) towards the slipper.
Moments are taken about the centre of the piston bottom.

The generalised force ``F = (F1, F2, F3, F4)`` is conjugate to the
eccentricities: ``(F1, F2)`` is the lateral force carried at ``z = 0`` and
``(F3, F4)`` the one carried at ``z = L_F`` in the two-point statically
equivalent system of a lateral force and moment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import FilmMesh, PumpConfig
from .krylov import DimensionMismatch, tree_sum


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray   # (Fx, Fy, Fz) [N]
    moment: np.ndarray  # (Mx, My, Mz) [N m]

    def __add__(self, other: "Wrench") -> "Wrench":
        return Wrench(self.force + other.force, self.moment + other.moment)

    def as_row(self) -> list[float]:
        return [*map(float, self.force), *map(float, self.moment)]

    def circumferential(self, radius: float) -> float:
        """Net force along ``+theta`` on a surface of constant ``radius``."""
        return float(self.moment[2]) / radius


@dataclass(frozen=True)
class WrenchBreakdown:
    pressure: Wrench
    shear: Wrench

    @property
    def total(self) -> Wrench:
        return self.pressure + self.shear


@dataclass(frozen=True)
class GeneralForce:
    F: np.ndarray
    kind: str = "Total"  # External | Inertial | Oil | Total

    def __add__(self, other: "GeneralForce") -> "GeneralForce":
        return GeneralForce(self.F + other.F, "Total")


def _cells(mesh: FilmMesh, a: np.ndarray) -> np.ndarray:
    """Average of the four corner values of every surface cell.

    Cells are ``(n_y - 1) x n_theta``; the last column wraps to column 0.
    """
    g = a.reshape(mesh.n_y, mesh.n_theta)
    right = np.roll(g, -1, axis=1)
    return 0.25 * (g[:-1] + right[:-1] + g[1:] + right[1:])


def _reduce(values: np.ndarray) -> float:
    return float(tree_sum(values.ravel()))


def oil_wrench(mesh: FilmMesh, p: np.ndarray, h: np.ndarray, U: float,
               mu: float, floor: float | None = None) -> WrenchBreakdown:
    """Integrate pressure and wall shear over the film with mid-point cells.

    Wall shear follows lubrication theory,
    ``tau_theta = mu U / h + (h / 2) dp/dx`` and ``tau_z = (h / 2) dp/dz``,
    taken positive along ``+theta`` and ``+z``.  ``floor`` clips negative
    pressures inside the integration only.
    """
    if p.shape[-1] != mesh.n or h.shape[-1] != mesh.n:
        raise DimensionMismatch("pressure and thickness must live on the mesh")
    if floor is not None:
        p = np.maximum(p, floor)
    nt, ny = mesh.n_theta, mesh.n_y
    R, dth, dy = mesh.radius, mesh.dtheta, mesh.dy
    dA = R * dth * dy

    pg = p.reshape(ny, nt)
    pc = _cells(mesh, p)
    hc = _cells(mesh, h)
    right = np.roll(pg, -1, axis=1)
    dpdx = ((right[:-1] + right[1:]) - (pg[:-1] + pg[1:])) / (2.0 * R * dth)
    dpdz = ((pg[1:] + right[1:]) - (pg[:-1] + right[:-1])) / (2.0 * dy)

    th = (np.arange(nt) + 0.5) * dth
    z = ((np.arange(ny - 1) + 0.5) * dy)[:, None]
    c, s = np.cos(th)[None, :], np.sin(th)[None, :]

    # normal pressure pushes the piston surface inwards
    fx = -pc * c * dA
    fy = -pc * s * dA
    pressure = Wrench(
        np.array([_reduce(fx), _reduce(fy), 0.0]),
        np.array([_reduce(-z * fy), _reduce(z * fx), 0.0]),
    )

    tau_t = mu * U / hc + 0.5 * hc * dpdx
    tau_z = 0.5 * hc * dpdz
    sx = -tau_t * s * dA
    sy = tau_t * c * dA
    sz = tau_z * dA
    rx, ry = R * c, R * s
    shear = Wrench(
        np.array([_reduce(sx), _reduce(sy), _reduce(sz)]),
        np.array([_reduce(ry * sz - z * sy), _reduce(z * sx - rx * sz),
                  _reduce(rx * sy - ry * sx)]),
    )
    return WrenchBreakdown(pressure, shear)


def general_oil_force(wrench: Wrench | WrenchBreakdown, coupling_length: float
                      ) -> GeneralForce:
    """Split a lateral force and moment into forces at ``z = 0`` and ``z = L_F``."""
    if isinstance(wrench, WrenchBreakdown):
        wrench = wrench.total
    Fx, Fy, _ = wrench.force
    Mx, My, _ = wrench.moment
    top_x = My / coupling_length
    top_y = -Mx / coupling_length
    return GeneralForce(np.array([Fx - top_x, Fy - top_y, top_x, top_y]), "Oil")


def wrench_from_general(F: np.ndarray, coupling_length: float) -> Wrench:
    """Inverse of :func:`general_oil_force` for the lateral components."""
    F1, F2, F3, F4 = F
    L = coupling_length
    return Wrench(np.array([F1 + F3, F2 + F4, 0.0]),
                  np.array([-L * F4, L * F3, 0.0]))


def external_force(config: PumpConfig, phi: float, inlet_pressure: float
                   ) -> GeneralForce:
    """Transverse swashplate reaction on the piston head.

    The axial pressure thrust ``p_in * pi * R_k^2`` is balanced by the
    swashplate normal force whose transverse part ``thrust * tan(beta)`` lies
    in the tilt plane (global ``X``); resolved into the rotating piston frame
    it enters at the top end of the coupling length.
    """
    thrust = inlet_pressure * math.pi * config.piston_radius ** 2
    side = thrust * math.tan(config.swashplate_angle)
    fx = -side * math.cos(phi)
    fy = side * math.sin(phi)
    return GeneralForce(np.array([0.0, 0.0, fx, fy]), "External")


def side_load_component(force: np.ndarray, phi: float) -> float:
    """Lateral ``force`` resolved on the swashplate side-load line.

    The unit vector is that of :func:`external_force` at ``phi``, so a film
    that carries the swashplate reaction gives a negative value.
    """
    return float(-force[0] * math.cos(phi) + force[1] * math.sin(phi))


def inertial_force(config: PumpConfig, phi: float) -> GeneralForce:
    """Centrifugal load of piston and slipper, applied mid-way along the film."""
    fc = config.moving_mass * config.omega ** 2 * config.pitch_radius
    return GeneralForce(np.array([0.5 * fc, 0.0, 0.5 * fc, 0.0]), "Inertial")
