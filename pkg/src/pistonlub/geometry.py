"""Pump geometry, shaft kinematics, surface textures and the oil-film thickness.

The film is described on a structured mesh that unrolls the piston surface:
``theta`` runs around the circumference (periodic) and ``y`` runs along the
coupling length from the piston bottom (``y = 0``, displacement chamber side)
to the point where the piston leaves the bore (``y = L_F``).

Fields are stored flat with node ``(i, j)`` at index ``i + j * n_theta``; the
2D view used throughout the package is ``field.reshape(n_y, n_theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MIN_THICKNESS = 0.05e-6  # [m]; closer than this is treated as contact


class NonPositiveThickness(ValueError):
    """Film thickness fell below the contact guard at some mesh node."""

    def __init__(self, node: int, value: float):
        self.node = int(node)
        self.value = float(value)
        super().__init__(
            f"film thickness {value:.6e} m at node {node} is below the "
            f"contact guard {MIN_THICKNESS:.1e} m"
        )


class MeshTooCoarse(ValueError):
    """A texture cell is resolved by fewer than two mesh nodes."""


class InvalidMesh(ValueError):
    pass


@dataclass(frozen=True)
class PumpConfig:
    """Geometric, kinematic, fluid and numerical parameters of one piston.

    Defaults reproduce the reference pump (radii, masses, swashplate angle,
    speed and finite-difference steps).  ``oil_viscosity`` is not part of
    that data set and is a placeholder value.

    ``coupling_law`` selects how the coupling length follows the shaft angle:
    ``"swashplate"`` (stroke-dependent) or ``"constant"`` (always
    ``min_coupling_length``).
    """

    piston_radius: float = 1.0e-2
    bore_radius: float = 1.0e-2 + 6.0e-6
    pitch_radius: float = 4.05e-2
    min_coupling_length: float = 3.0e-2
    swashplate_angle: float = math.radians(10.0)
    shaft_speed_rpm: float = 600.0
    piston_mass: float = 0.128
    slipper_mass: float = 0.0259
    oil_viscosity: float = 0.03
    outlet_pressure: float = 0.5e6
    fd_step_e: float = 1.0e-9
    fd_step_edot: float = 1.0e-8
    coupling_law: str = "swashplate"

    def __post_init__(self):
        if not self.bore_radius > self.piston_radius > 0:
            raise ValueError("need bore_radius > piston_radius > 0")
        for name in ("min_coupling_length", "shaft_speed_rpm", "oil_viscosity",
                     "fd_step_e", "fd_step_edot"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.outlet_pressure < 0:
            raise ValueError("outlet pressure must be >= 0")
        if self.coupling_law not in ("swashplate", "constant"):
            raise ValueError(f"unknown coupling_law {self.coupling_law!r}")

    @property
    def clearance(self) -> float:
        return self.bore_radius - self.piston_radius

    @property
    def omega(self) -> float:
        """Shaft angular speed [rad/s]."""
        return 2.0 * math.pi * self.shaft_speed_rpm / 60.0

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    @property
    def moving_mass(self) -> float:
        return self.piston_mass + self.slipper_mass


@dataclass
class KinematicState:
    """Eccentricities ``e`` (m) and their rates ``edot`` (m/s) at one instant.

    ``e[0:2]`` are the lateral offsets of the piston axis at ``y = 0`` and
    ``e[2:4]`` the offsets at ``y = L_F``.
    """

    e: np.ndarray
    edot: np.ndarray
    shaft_angle: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=float).reshape(4)
        self.edot = np.asarray(self.edot, dtype=float).reshape(4)

    def replace(self, e=None, edot=None) -> "KinematicState":
        return KinematicState(
            self.e.copy() if e is None else e,
            self.edot.copy() if edot is None else edot,
            self.shaft_angle,
            self.time,
        )


@dataclass(frozen=True)
class FilmMesh:
    """Uniform node-centred mesh on the unrolled piston surface."""

    n_theta: int
    n_y: int
    coupling_length: float
    radius: float = 1.0e-2

    def __post_init__(self):
        if self.n_theta < 4 or self.n_y < 4:
            raise InvalidMesh(
                f"mesh {self.n_theta}x{self.n_y} is too small (need >= 4x4)"
            )
        if not self.coupling_length > 0:
            raise InvalidMesh("coupling length must be positive")

    @property
    def n(self) -> int:
        return self.n_theta * self.n_y

    @property
    def dtheta(self) -> float:
        return 2.0 * math.pi / self.n_theta

    @property
    def dx(self) -> float:
        """Arc length between circumferential nodes [m]."""
        return self.radius * self.dtheta

    @property
    def dy(self) -> float:
        return self.coupling_length / (self.n_y - 1)

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.dtheta

    @property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.coupling_length, self.n_y)

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``(n_y, n_theta)`` arrays."""
        return np.meshgrid(self.theta, self.y)

    def with_length(self, coupling_length: float) -> "FilmMesh":
        return FilmMesh(self.n_theta, self.n_y, coupling_length, self.radius)


@dataclass(frozen=True)
class TexturePattern:
    """Rectangular dimples on a regular pitch near the piston bottom.

    The band starts at ``y = 0`` and holds ``n_cells_theta x n_cells_y`` pitch
    cells.  Each cell carries one dimple, centred in the cell and covering
    ``coverage`` of the pitch in each direction.  The axial pitch equals the
    circumferential arc pitch so cells are square on the piston surface.
    """

    n_cells_theta: int = 0
    n_cells_y: int = 0
    depth: float = 0.0
    piston_radius: float = 1.0e-2
    coverage: float = 0.5

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("texture depth must be >= 0")
        if not 0 < self.coverage <= 1:
            raise ValueError("coverage must be in (0, 1]")

    @property
    def empty(self) -> bool:
        return self.n_cells_theta == 0 or self.n_cells_y == 0 or self.depth == 0

    @property
    def pitch_theta(self) -> float:
        return 2.0 * math.pi / self.n_cells_theta

    @property
    def pitch_y(self) -> float:
        return self.piston_radius * self.pitch_theta

    @property
    def band_length(self) -> float:
        if self.n_cells_theta == 0:
            return 0.0
        return self.n_cells_y * self.pitch_y

    def mask(self, mesh: FilmMesh) -> np.ndarray:
        """Boolean ``(n_y, n_theta)`` array, True at textured nodes."""
        if self.empty:
            return np.zeros((mesh.n_y, mesh.n_theta), dtype=bool)
        theta, y = mesh.grid()
        # nudge by a relative epsilon so nodes sitting on a cell edge are
        # classified consistently
        u = theta / self.pitch_theta + 1e-9
        v = y / self.pitch_y + 1e-9
        half = 0.5 * self.coverage
        in_t = np.abs(u - np.floor(u) - 0.5) < half
        in_y = np.abs(v - np.floor(v) - 0.5) < half
        in_band = v < self.n_cells_y
        return in_t & in_y & in_band

    def depth_field(self, mesh: FilmMesh) -> np.ndarray:
        return np.where(self.mask(mesh), self.depth, 0.0).ravel()


TEXTURE_LAYOUTS = {"none": (0, 0), "short": (60, 10), "long": (60, 20)}
TEXTURE_DEPTH = 20.0e-6


def build_texture_pattern(kind: str, mesh: FilmMesh,
                          piston_radius: float = 1.0e-2,
                          coverage: float = 0.5) -> TexturePattern:
    """Return the named texture layout, checking the mesh can resolve it."""
    try:
        n_t, n_y = TEXTURE_LAYOUTS[kind]
    except KeyError:
        raise ValueError(f"unknown texture kind {kind!r}") from None
    if kind == "none":
        return TexturePattern(piston_radius=piston_radius)
    tex = TexturePattern(n_t, n_y, TEXTURE_DEPTH, piston_radius, coverage)
    nodes_t = tex.pitch_theta / mesh.dtheta
    nodes_y = tex.pitch_y / mesh.dy
    if nodes_t < 2 or nodes_y < 2:
        raise MeshTooCoarse(
            f"texture pitch spans {nodes_t:.2f} x {nodes_y:.2f} nodes on a "
            f"{mesh.n_theta}x{mesh.n_y} mesh; at least 2 are needed"
        )
    if tex.band_length > mesh.coupling_length:
        raise MeshTooCoarse("texture band is longer than the coupling length")
    return tex


def _offsets(mesh: FilmMesh, state: KinematicState, R_c: float):
    theta, y = mesh.grid()
    s = y / mesh.coupling_length
    e1, e2, e3, e4 = state.e
    a = R_c * np.cos(theta) - (1.0 - s) * e1 - s * e3
    b = R_c * np.sin(theta) - (1.0 - s) * e2 - s * e4
    return a, b, s


def film_thickness(mesh: FilmMesh, state: KinematicState, config: PumpConfig,
                   tex: TexturePattern | None = None, check: bool = True
                   ) -> np.ndarray:
    """Radial gap between piston and bore at every mesh node [m].

    Parameters
    ----------
    mesh : FilmMesh
    state : KinematicState
        Only ``state.e`` is used.
    config : PumpConfig
        Supplies the piston and bore radii.
    tex : TexturePattern, optional
        Dimple depth is added at textured nodes.
    check : bool
        Raise :class:`NonPositiveThickness` when the gap closes.

    Returns
    -------
    numpy.ndarray
        Flat array of length ``mesh.n``.
    """
    a, b, _ = _offsets(mesh, state, config.bore_radius)
    h = (np.hypot(a, b) - config.piston_radius).ravel()
    if tex is not None and not tex.empty:
        h = h + tex.depth_field(mesh)
    if check:
        bad = np.flatnonzero(h < MIN_THICKNESS)
        if bad.size:
            k = bad[np.argmin(h[bad])]
            raise NonPositiveThickness(k, h[k])
    return h


def film_thickness_rate(mesh: FilmMesh, state: KinematicState,
                        config: PumpConfig) -> np.ndarray:
    """Time derivative of the film thickness [m/s] driven by ``state.edot``.

    The node positions are fixed fractions of the coupling length, so only
    the eccentricity rates move the gap; dimples are rigid and add nothing.
    """
    a, b, s = _offsets(mesh, state, config.bore_radius)
    ed1, ed2, ed3, ed4 = state.edot
    da = -(1.0 - s) * ed1 - s * ed3
    db = -(1.0 - s) * ed2 - s * ed4
    return ((a * da + b * db) / np.hypot(a, b)).ravel()


class ShaftState(NamedTuple):
    shaft_angle: float
    sliding_speed: float
    coupling_length: float
    axial_acceleration: float
    axial_speed: float


def coupling_length(config: PumpConfig, phi: float) -> float:
    if config.coupling_law == "constant":
        return config.min_coupling_length
    stroke = config.pitch_radius * math.tan(config.swashplate_angle)
    return config.min_coupling_length + stroke * (1.0 + math.cos(phi))


def shaft_kinematics(config: PumpConfig, t: float) -> ShaftState:
    """Shaft angle, piston spin speed, coupling length and stroke motion at ``t``.

    The sliding speed fed to the wedge term is the circumferential surface
    speed of the piston; the stroke velocity is returned separately.
    """
    if t < 0:
        raise ValueError("time must be >= 0")
    w = config.omega
    phi = w * t
    stroke = config.pitch_radius * math.tan(config.swashplate_angle)
    return ShaftState(
        shaft_angle=phi,
        sliding_speed=w * config.piston_radius,
        coupling_length=coupling_length(config, phi),
        axial_acceleration=stroke * w * w * math.cos(phi),
        axial_speed=stroke * w * math.sin(phi),
    )
