"""Target geometry and kinematics.

A target is a cone whose apex sits at the centroid and which spins about
the line of sight from the radar to the centroid.  Every non-centroid
scatterer rides on a circle of radius ``rotation_radius`` around that axis,
offset from the centroid towards the radar by ``rotation_radius / tan(alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

Role = Literal["centroid", "vertex", "body"]


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class ScattererState:
    rotation_radius: float = 0.0
    initial_phase: float = 0.0
    rcs: complex = 1.0 + 0.0j
    role: Role = "body"

    def __post_init__(self):
        if self.role not in ("centroid", "vertex", "body"):
            raise SceneError(f"unknown scatterer role {self.role!r}")
        if self.rotation_radius < 0:
            raise SceneError("rotation_radius must be >= 0")
        if (self.role == "centroid") != (self.rotation_radius == 0.0):
            raise SceneError("a scatterer has zero rotation radius iff it is the centroid")


@dataclass(frozen=True)
class TargetState:
    range: float
    elevation: float
    azimuth: float
    spin_rate: float = 0.0
    half_cone_angle: float = np.pi / 4
    speed: float = 0.0
    direction: float = 0.0
    scatterers: tuple[ScattererState, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.range <= 0:
            raise SceneError("target range must be positive")
        if not 0.0 <= self.elevation <= np.pi:
            raise SceneError("elevation must lie in [0, pi]")
        if self.spin_rate < 0:
            raise SceneError("spin rate must be >= 0")
        if not 0.0 < self.half_cone_angle < np.pi / 2:
            raise SceneError("half cone angle must lie in (0, pi/2)")
        if not self.scatterers:
            raise SceneError("a target needs at least one scatterer")
        roles = [s.role for s in self.scatterers]
        if roles.count("centroid") != 1 or roles.count("vertex") != 1:
            raise SceneError("a target needs exactly one centroid and one vertex scatterer")

    @property
    def centroid(self) -> ScattererState:
        return next(s for s in self.scatterers if s.role == "centroid")

    @property
    def vertex(self) -> ScattererState:
        return next(s for s in self.scatterers if s.role == "vertex")


def unit_vector(theta, phi) -> np.ndarray:
    return np.array([np.sin(theta) * np.cos(phi),
                     np.sin(theta) * np.sin(phi),
                     np.cos(theta)])


def rotation_matrix(theta: float, phi: float) -> np.ndarray:
    """The target rotation matrix in the printed (row) convention."""
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    return np.array([[cp, -sp, 0.0],
                     [ct * sp, ct * cp, -st],
                     [st * sp, st * cp, ct]])


def los_frame(theta: float, phi: float) -> np.ndarray:
    """Orthonormal frame whose third column is the line of sight.

    Equal to ``rotation_matrix(theta, pi/2 - phi).T``; columns are
    ``(-phi_hat, theta_hat, r_hat)``.
    """
    return rotation_matrix(theta, np.pi / 2 - phi).T


def to_spherical(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, y, z = xyz[0], xyz[1], xyz[2]
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r <= 0):
        raise SceneError("scatterer reached the array origin")
    theta = np.arccos(np.clip(z / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(y, x), 2 * np.pi)
    return r, theta, phi


def centroid_cartesian(target: TargetState, t) -> np.ndarray:
    """Centroid position, shape ``(3, *t.shape)``; straight-line motion at
    angle ``direction`` from the line of sight, inside the elevation plane."""
    t = np.asarray(t, dtype=float)
    frame = los_frame(target.elevation, target.azimuth)
    r_hat, theta_hat = frame[:, 2], frame[:, 1]
    heading = np.cos(target.direction) * r_hat + np.sin(target.direction) * theta_hat
    c0 = target.range * r_hat
    return c0.reshape(3, *([1] * t.ndim)) + heading.reshape(3, *([1] * t.ndim)) * (target.speed * t)


def scatterer_cartesian(target: TargetState, s: ScattererState, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise SceneError("time must be non-negative")
    c = centroid_cartesian(target, t)
    if s.rotation_radius == 0.0:
        return c
    frame = los_frame(target.elevation, target.azimuth)
    psi = target.spin_rate * t + s.initial_phase
    gamma = s.rotation_radius
    axial = -gamma / np.tan(target.half_cone_angle)
    local = np.stack([gamma * np.cos(psi), gamma * np.sin(psi),
                      np.full_like(psi, axial)])
    return c + np.tensordot(frame, local, axes=1)


def scatterer_position(target: TargetState, s: ScattererState, t):
    """Spherical ``(r, theta, phi)`` of a scatterer at time(s) ``t``."""
    return to_spherical(scatterer_cartesian(target, s, t))


def azimuth_rate(target: TargetState, s: ScattererState, t):
    """Analytic ``d(phi)/dt`` of a scatterer (rad/s)."""
    t = np.asarray(t, dtype=float)
    p = scatterer_cartesian(target, s, t)
    frame = los_frame(target.elevation, target.azimuth)
    heading = (np.cos(target.direction) * frame[:, 2]
               + np.sin(target.direction) * frame[:, 1])
    vel = heading.reshape(3, *([1] * t.ndim)) * target.speed * np.ones_like(t)
    if s.rotation_radius:
        psi = target.spin_rate * t + s.initial_phase
        g = s.rotation_radius * target.spin_rate
        local = np.stack([-g * np.sin(psi), g * np.cos(psi), np.zeros_like(psi)])
        vel = vel + np.tensordot(frame, local, axes=1)
    return (p[0] * vel[1] - p[1] * vel[0]) / (p[0] ** 2 + p[1] ** 2)


def doppler_gain(target: TargetState, s: ScattererState) -> tuple[float, float]:
    """Signed azimuth-swing amplitude ``g`` and phase offset ``delta`` of the
    closed-form rotational Doppler law."""
    theta, phi = target.elevation, target.azimuth
    if np.sin(theta) == 0.0:
        raise SceneError("rotational Doppler gain is singular at elevation 0")
    gamma = s.rotation_radius
    num = -gamma * np.sqrt(np.sin(phi) ** 2 + np.cos(phi) ** 2 * np.sin(theta) ** 2)
    den = (target.range - gamma / np.tan(target.half_cone_angle)) * np.sin(theta)
    delta = np.arctan2(np.cos(phi) * np.sin(theta), np.sin(phi))
    return float(num / den), float(delta)


def rotational_doppler(target: TargetState, s: ScattererState, mode: int, t):
    """Closed-form rotational Doppler shift (Hz) of scatterer ``s`` on OAM ``mode``."""
    g, delta = doppler_gain(target, s)
    phase = target.spin_rate * np.asarray(t, dtype=float) + s.initial_phase + delta
    return mode / (2 * np.pi) * g * target.spin_rate * np.cos(phase)


def geometric_rotational_doppler(target: TargetState, s: ScattererState, mode: int, t):
    """Rotational Doppler (Hz) implied by the simulated kinematics."""
    return mode / (2 * np.pi) * azimuth_rate(target, s, t)


def linear_doppler(target: TargetState, wavenumber: float) -> float:
    """Closed-form linear Doppler shift (Hz) for one subcarrier wavenumber."""
    if wavenumber <= 0:
        raise SceneError("wavenumber must be positive")
    return wavenumber * target.speed * np.cos(target.direction) / (2 * np.pi)
