"""Deterministic stand-in for a physics simulator.

Joints follow sine commands exactly, the root is either fixed or moved
along a prescribed slow path, and every link carries a ring of multi-beam
time-of-flight sensors that are ray cast against boxes and planes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain_model import ChainGeometry, JointReading, LinkState, RootState, SensorPose, forward_kinematics
from .estimator import PointBatch
from .so3 import exp_so3


# --- environment -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Box:
    """Solid axis-aligned box."""
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if not np.all(np.asarray(self.hi) > np.asarray(self.lo)):
            raise ValueError("box needs hi > lo on every axis")

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        with np.errstate(divide='ignore', invalid='ignore'):
            inv = 1.0 / d
            t1 = (self.lo - o) * inv
            t2 = (self.hi - o) * inv
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        t_in = np.minimum(t1, t2).max(axis=1)
        t_out = np.maximum(t1, t2).min(axis=1)
        t = np.where(t_in > 0.0, t_in, t_out)
        return np.where((t_out >= np.maximum(t_in, 0.0)) & (t > 0.0), t, np.inf)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x > self.lo) & (x < self.hi), axis=1)


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane {x : normal . x = offset}; free space is normal . x < offset."""
    normal: np.ndarray
    offset: float

    def intersect(self, o: np.ndarray, d: np.ndarray) -> np.ndarray:
        den = d @ self.normal
        with np.errstate(divide='ignore', invalid='ignore'):
            t = (self.offset - o @ self.normal) / den
        return np.where((np.abs(den) > 1e-12) & (t > 0.0), t, np.inf)

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(x) @ self.normal > self.offset


def room_planes(lo, hi) -> list[Plane]:
    """Six inward-facing walls of an axis-aligned room."""
    planes = []
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = 1.0
        planes.append(Plane(e, float(hi[axis])))
        planes.append(Plane(-e, -float(lo[axis])))
    return planes


@dataclass(frozen=True, eq=False)
class Environment:
    primitives: tuple

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("environment needs at least one primitive")

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Distance to the first surface along each unit ray (inf on a miss)."""
        t = np.full(len(origins), np.inf)
        for prim in self.primitives:
            t = np.minimum(t, prim.intersect(origins, dirs))
        return t

    def occupied(self, x: np.ndarray) -> np.ndarray:
        """True for points inside an obstacle or beyond a wall."""
        x = np.atleast_2d(x)
        hit = np.zeros(len(x), dtype=bool)
        for prim in self.primitives:
            hit |= prim.contains(x)
        return hit


# --- sensors -----------------------------------------------------------------

@dataclass(frozen=True)
class SensorSpec:
    ring_radius: float = 0.05
    sensors_per_link: int = 8
    beams_per_sensor: int = 64
    fov_degrees: float = 45.0
    min_range: float = 0.05
    max_range: float = 4.0
    noise_ratio: float = 0.01       # k in 2.7 sigma = k r
    noise_sigmas: float = 2.7
    mount_fraction: float = 0.5     # along the link length

    def __post_init__(self):
        if not self.min_range < self.max_range:
            raise ValueError("min_range must be below max_range")
        side = int(round(np.sqrt(self.beams_per_sensor)))
        if side * side != self.beams_per_sensor:
            raise ValueError("beams_per_sensor must be a perfect square")

    @property
    def grid_side(self) -> int:
        return int(round(np.sqrt(self.beams_per_sensor)))

    def sigma(self, r):
        return self.noise_ratio * np.asarray(r) / self.noise_sigmas

    def beam_directions(self) -> np.ndarray:
        """Unit beam directions in the sensor frame (boresight +z), row-major grid."""
        n = self.grid_side
        half = np.deg2rad(self.fov_degrees) / 2.0
        ang = (np.arange(n) + 0.5) / n * 2.0 * half - half
        ax, ay = np.meshgrid(ang, ang, indexing='xy')
        d = np.stack([np.tan(ax).ravel(), np.tan(ay).ravel(), np.ones(n * n)], axis=1)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


def ring_sensor_poses(length: float, spec: SensorSpec) -> tuple:
    """Sensors evenly spaced on a ring around the link's x axis, looking outward."""
    poses = []
    x = spec.mount_fraction * length
    for s in range(spec.sensors_per_link):
        phi = 2.0 * np.pi * s / spec.sensors_per_link
        radial = np.array([0.0, np.cos(phi), np.sin(phi)])
        ex = np.array([1.0, 0.0, 0.0])
        rot = np.column_stack([ex, np.cross(radial, ex), radial])
        poses.append(SensorPose(np.array([x, 0.0, 0.0]) + spec.ring_radius * radial, rot))
    return tuple(poses)


def alternating_axes(link_count: int) -> list[np.ndarray]:
    """Odd joints about z, even joints about y (joints numbered from 1)."""
    z, y = np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 0.0])
    return [z if (i % 2 == 1) else y for i in range(1, link_count + 1)]


def build_geometry(link_count: int, link_length: float, spec: SensorSpec,
                   axes: Sequence | None = None) -> ChainGeometry:
    """Straight chain of equal links; the root is a link of the same length."""
    axes = alternating_axes(link_count) if axes is None else [np.asarray(a, float) for a in axes]
    offsets = tuple(np.array([link_length, 0.0, 0.0]) for _ in range(link_count))
    sensors = tuple(ring_sensor_poses(link_length, spec) for _ in range(link_count + 1))
    return ChainGeometry(offsets, tuple(axes), sensors)


# --- motion ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RootPath:
    """Root pose: fixed, or a smooth excursion that starts at ``start_s``.

    The excursion is ``A * (1 - cos(2 pi (t - start) / period)) / 2``
    for position (metres) and rotation vector (radians).
    """
    position: np.ndarray
    rotvec: np.ndarray
    free: bool = False
    start_s: float = 0.0
    period_s: float = 60.0
    pos_amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rot_amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def _shape(self, t: float) -> float:
        if not self.free or t < self.start_s:
            return 0.0
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * (t - self.start_s) / self.period_s))

    def pose(self, t: float) -> RootState:
        g = self._shape(t)
        R0 = exp_so3(self.rotvec)
        return RootState(np.asarray(self.position, float) + g * np.asarray(self.pos_amplitude),
                         R0 @ exp_so3(g * np.asarray(self.rot_amplitude)))


@dataclass(frozen=True, eq=False)
class MotionProfile:
    amplitudes: np.ndarray     # rad, per joint
    frequencies: np.ndarray    # Hz
    phases: np.ndarray         # rad
    root: RootPath

    def __post_init__(self):
        if np.any(np.abs(self.amplitudes) >= np.pi / 2):
            raise ValueError("joint amplitudes must stay below pi/2")

    def joint_angles(self, t: float) -> np.ndarray:
        return self.amplitudes * np.sin(2.0 * np.pi * self.frequencies * t + self.phases)


@dataclass(frozen=True, eq=False)
class TruthSlice:
    t: float
    angles: np.ndarray
    biases: np.ndarray
    poses: list            # root then links


def step_truth(t: float, profile: MotionProfile, geometry: ChainGeometry,
               biases: np.ndarray) -> TruthSlice:
    if t < 0:
        raise ValueError("time must be non-negative")
    angles = profile.joint_angles(t)
    poses = forward_kinematics(profile.root.pose(t), angles, geometry)
    return TruthSlice(t, angles, np.asarray(biases, float), poses)


def read_encoders(truth: TruthSlice, geometry: ChainGeometry) -> list[JointReading]:
    """Encoder values: the true angle plus the constant per-joint bias."""
    return [JointReading(float(a + b), ax)
            for a, b, ax in zip(truth.angles, truth.biases, geometry.joint_axes)]


def noise_draws(seed: int, step: int, link: int, spec: SensorSpec) -> np.ndarray:
    """Standard-normal draws indexed [sensor, beam], keyed so order never matters."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, step, link]))
    return rng.standard_normal((spec.sensors_per_link, spec.beams_per_sensor))


def raycast_sensors(pose, link_index: int, geometry: ChainGeometry, spec: SensorSpec,
                    env: Environment, noise: np.ndarray | None) -> PointBatch:
    """Simulated returns for one body; ``noise=None`` gives exact ranges."""
    dirs_s = spec.beam_directions()
    sensors = geometry.sensor_poses[link_index]
    idx, pts = [], []
    for s, sp in enumerate(sensors):
        origin = pose.R @ sp.position + pose.p
        dirs_w = dirs_s @ (pose.R @ sp.rotation).T
        r = env.raycast(np.broadcast_to(origin, dirs_w.shape), dirs_w)
        rng_meas = r if noise is None else r + spec.sigma(np.where(np.isfinite(r), r, 0.0)) * noise[s]
        ok = ((r >= spec.min_range) & (r <= spec.max_range)
              & (rng_meas >= spec.min_range) & (rng_meas <= spec.max_range))
        if np.any(ok):
            idx.append(np.full(int(ok.sum()), s))
            pts.append(dirs_s[ok] * rng_meas[ok, None])
    if not pts:
        return PointBatch.empty(link_index)
    return PointBatch(link_index, np.concatenate(idx), np.concatenate(pts))


class Simulator:
    """Produces ground truth, encoder readings and point batches per step."""

    def __init__(self, geometry: ChainGeometry, spec: SensorSpec, env: Environment,
                 profile: MotionProfile, biases: Sequence[float], seed: int,
                 step_rate_hz: float, sensor_noise: bool = True):
        self.geometry = geometry
        self.spec = spec
        self.env = env
        self.profile = profile
        self.biases = np.asarray(biases, dtype=float)
        self.seed = seed
        self.dt = 1.0 / step_rate_hz
        self.sensor_noise = sensor_noise

    def truth(self, step: int) -> TruthSlice:
        return step_truth(step * self.dt, self.profile, self.geometry, self.biases)

    def frame(self, step: int):
        truth = self.truth(step)
        readings = read_encoders(truth, self.geometry)
        batches = []
        for i, pose in enumerate(truth.poses):
            draws = noise_draws(self.seed, step, i, self.spec) if self.sensor_noise else None
            batches.append(raycast_sensors(pose, i, self.geometry, self.spec, self.env, draws))
        return truth, readings, batches
