"""Scenario files: a YAML document with units spelled out in the key names.

Every field has a default, so a scenario may be sparse on disk; after
loading it is fully explicit and ``dump`` writes every value back out.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import chain_model as cm
from . import simulator as sim
from .estimator import UpdateConfig
from .point_map import MapConfig

SCHEMA_VERSION = 1
GOLDEN = ("fixed5", "fixed20", "free20")


class ScenarioError(ValueError):
    pass


@dataclass
class ChainSection:
    link_count: int = 5
    link_length_m: float = 0.4
    joint_axes: Any = "alternating"     # or an explicit list of 3-vectors
    bias_rad: Any = 0.05                # scalar or per joint


@dataclass
class SensorSection:
    ring_radius_m: float = 0.05
    sensors_per_link: int = 8
    beams_per_sensor: int = 64
    fov_deg: float = 45.0
    min_range_m: float = 0.05
    max_range_m: float = 4.0
    noise_ratio: float = 0.01
    noise_sigmas: float = 2.7
    mount_fraction: float = 0.5
    noise_enabled: bool = True


@dataclass
class EnvironmentSection:
    room_min_m: Any = field(default_factory=lambda: [-2.0, -2.0, 0.0])
    room_max_m: Any = field(default_factory=lambda: [2.0, 2.0, 2.5])
    boxes: Any = field(default_factory=lambda: [
        {"min_m": [-1.3, 0.6, 0.0], "max_m": [-0.7, 1.3, 1.8]},
        {"min_m": [-0.3, -1.7, 0.0], "max_m": [0.3, -1.2, 1.2]},
    ])
    planes: Any = field(default_factory=list)   # [{normal: [..], offset_m: ..}]


@dataclass
class MotionSection:
    amplitude_rad: Any = 0.3
    frequency_hz: Any = "staggered"     # 0.05..0.2 Hz spread over the joints
    phase_rad: Any = 0.0
    root_position_m: Any = field(default_factory=lambda: [-1.5, 0.0, 1.25])
    root_rotvec_rad: Any = field(default_factory=lambda: [0.0, 0.0, 0.0])
    root_path_start_s: float = 15.0
    root_path_period_s: float = 60.0
    root_path_pos_amplitude_m: Any = field(default_factory=lambda: [0.0, 0.0, 0.0])
    root_path_rot_amplitude_rad: Any = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class NoiseSection:
    q_root_pos_m2: float = 0.01 ** 2
    q_root_rot_rad2: float = 0.01 ** 2
    q_bias_rad2: float = 1e-5 ** 2
    q_theta_rad2: float = 0.002 ** 2
    r_point_m2: float = 0.01 ** 2


@dataclass
class FilterSection:
    max_iterations: int = 5
    convergence_eps: float = 1e-3
    min_points: int = 10
    root_init_var: float = 1e-4
    bias_init_std_rad: float = 0.1
    reassociate: str = "every"          # or "on_convergence"


@dataclass
class MapSection:
    downsample_voxel_m: float = 0.05
    knn_k: int = 5
    plane_threshold_m: float = 0.05
    max_neighbor_dist_m: float = 1.0
    min_spread_ratio: float = 0.0
    preload_exact: bool = False
    preload_voxel_m: float = 1e-4


@dataclass
class Scenario:
    name: str = "scenario"
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    duration_s: float = 100.0
    step_rate_hz: float = 10.0
    root_mode: str = "fixed"
    bias_tail_s: float = 20.0
    chain: ChainSection = field(default_factory=ChainSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    motion: MotionSection = field(default_factory=MotionSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    filter: FilterSection = field(default_factory=FilterSection)
    map: MapSection = field(default_factory=MapSection)

    @property
    def steps(self) -> int:
        return int(round(self.duration_s * self.step_rate_hz))

    @property
    def fixed_root(self) -> bool:
        return self.root_mode == "fixed"

    # --- conversion to runtime objects ----------------------------------

    def sensor_spec(self) -> sim.SensorSpec:
        s = self.sensor
        return sim.SensorSpec(s.ring_radius_m, s.sensors_per_link, s.beams_per_sensor, s.fov_deg,
                              s.min_range_m, s.max_range_m, s.noise_ratio, s.noise_sigmas,
                              s.mount_fraction)

    def geometry(self) -> cm.ChainGeometry:
        return sim.build_geometry(self.chain.link_count, self.chain.link_length_m,
                                  self.sensor_spec(), self.chain.joint_axes)

    def biases(self) -> np.ndarray:
        return np.asarray(self.chain.bias_rad, dtype=float)

    def environment_model(self) -> sim.Environment:
        e = self.environment
        prims: list = sim.room_planes(e.room_min_m, e.room_max_m)
        prims += [sim.Box(np.asarray(b["min_m"], float), np.asarray(b["max_m"], float))
                  for b in e.boxes]
        prims += [sim.Plane(np.asarray(p["normal"], float) / np.linalg.norm(p["normal"]),
                            float(p["offset_m"])) for p in e.planes]
        return sim.Environment(tuple(prims))

    def motion_profile(self) -> sim.MotionProfile:
        m = self.motion
        root = sim.RootPath(
            np.asarray(m.root_position_m, float), np.asarray(m.root_rotvec_rad, float),
            free=not self.fixed_root, start_s=m.root_path_start_s, period_s=m.root_path_period_s,
            pos_amplitude=np.asarray(m.root_path_pos_amplitude_m, float),
            rot_amplitude=np.asarray(m.root_path_rot_amplitude_rad, float))
        return sim.MotionProfile(np.asarray(m.amplitude_rad, float),
                                 np.asarray(m.frequency_hz, float),
                                 np.asarray(m.phase_rad, float), root)

    def noise_params(self) -> cm.NoiseParams:
        n = self.noise
        return cm.NoiseParams(n.q_root_pos_m2 * np.eye(3), n.q_root_rot_rad2 * np.eye(3),
                              n.q_bias_rad2, n.q_theta_rad2, n.r_point_m2)

    def update_config(self) -> UpdateConfig:
        f = self.filter
        return UpdateConfig(f.max_iterations, f.convergence_eps, self.noise.r_point_m2, f.min_points,
                            f.reassociate)

    def map_config(self) -> MapConfig:
        m = self.map
        return MapConfig(m.downsample_voxel_m, m.knn_k, m.plane_threshold_m, m.max_neighbor_dist_m,
                         m.min_spread_ratio)

    def simulator(self) -> sim.Simulator:
        return sim.Simulator(self.geometry(), self.sensor_spec(), self.environment_model(),
                             self.motion_profile(), self.biases(), self.seed, self.step_rate_hz,
                             sensor_noise=self.sensor.noise_enabled)


_SECTIONS = {
    "chain": ChainSection, "sensor": SensorSection, "environment": EnvironmentSection,
    "motion": MotionSection, "noise": NoiseSection, "filter": FilterSection, "map": MapSection,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k in _SECTIONS and cls is Scenario:
            v = _build(_SECTIONS[k], v or {}, k)
        kwargs[k] = v
    return cls(**kwargs)


def _per_joint(value, n: int, what: str) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)] * n
    vals = [float(v) for v in value]
    if len(vals) != n:
        raise ScenarioError(f"{what}: expected {n} values, got {len(vals)}")
    return vals


def _vec3(value, what: str) -> list[float]:
    vals = [float(v) for v in value]
    if len(vals) != 3:
        raise ScenarioError(f"{what}: expected 3 values")
    return vals


def _normalize(sc: Scenario) -> Scenario:
    """Fill in derived defaults and validate; the result is fully explicit."""
    if sc.schema_version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {sc.schema_version}")
    if sc.root_mode not in ("fixed", "free"):
        raise ScenarioError("root_mode must be 'fixed' or 'free'")
    n = int(sc.chain.link_count)
    if n < 1:
        raise ScenarioError("chain.link_count must be positive")
    sc.chain.link_count = n
    if sc.chain.joint_axes == "alternating":
        sc.chain.joint_axes = [a.tolist() for a in sim.alternating_axes(n)]
    elif isinstance(sc.chain.joint_axes, str):
        raise ScenarioError("chain.joint_axes must be 'alternating' or a list of vectors")
    sc.chain.joint_axes = [_vec3(a, "chain.joint_axes") for a in sc.chain.joint_axes]
    if len(sc.chain.joint_axes) != n:
        raise ScenarioError("chain.joint_axes needs one axis per link")
    sc.chain.bias_rad = _per_joint(sc.chain.bias_rad, n, "chain.bias_rad")

    m = sc.motion
    m.amplitude_rad = _per_joint(m.amplitude_rad, n, "motion.amplitude_rad")
    if m.frequency_hz == "staggered":
        m.frequency_hz = np.linspace(0.05, 0.2, n).tolist() if n > 1 else [0.1]
    m.frequency_hz = _per_joint(m.frequency_hz, n, "motion.frequency_hz")
    m.phase_rad = _per_joint(m.phase_rad, n, "motion.phase_rad")
    for key in ("root_position_m", "root_rotvec_rad", "root_path_pos_amplitude_m",
                "root_path_rot_amplitude_rad"):
        setattr(m, key, _vec3(getattr(m, key), f"motion.{key}"))

    e = sc.environment
    e.room_min_m = _vec3(e.room_min_m, "environment.room_min_m")
    e.room_max_m = _vec3(e.room_max_m, "environment.room_max_m")
    e.boxes = [{"min_m": _vec3(b["min_m"], "box.min_m"), "max_m": _vec3(b["max_m"], "box.max_m")}
               for b in e.boxes]
    e.planes = [{"normal": _vec3(p["normal"], "plane.normal"), "offset_m": float(p["offset_m"])}
                for p in e.planes]

    for section in (sc.sensor, sc.noise, sc.filter, sc.map):
        for f in dataclasses.fields(section):
            v = getattr(section, f.name)
            if f.type in ("float",) and isinstance(v, int) and not isinstance(v, bool):
                setattr(section, f.name, float(v))
    for key in ("duration_s", "step_rate_hz", "bias_tail_s"):
        setattr(sc, key, float(getattr(sc, key)))
    sc.seed = int(sc.seed)
    try:
        # constructing the runtime objects runs their own validation
        sc.sensor_spec(), sc.geometry(), sc.environment_model(), sc.motion_profile()
        sc.update_config(), sc.map_config()
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(str(exc)) from exc
    return sc


def from_dict(data: dict) -> Scenario:
    return _normalize(_build(Scenario, dict(data or {}), "scenario"))


def to_dict(sc: Scenario) -> dict:
    return dataclasses.asdict(sc)


def loads(text: str) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML: {exc}") from exc
    return from_dict(data or {})


def dumps(sc: Scenario) -> str:
    return yaml.safe_dump(to_dict(sc), sort_keys=False, default_flow_style=None)


def load(path) -> Scenario:
    """Load a scenario file, or a bundled golden scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in GOLDEN:
        return loads(resources.files("chainslam.scenarios").joinpath(f"{path}.yaml").read_text())
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return loads(text)


def golden(name: str) -> Scenario:
    if name not in GOLDEN:
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return load(name)
