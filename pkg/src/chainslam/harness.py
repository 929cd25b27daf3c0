"""Simulate -> estimate -> log loop and the files it writes."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import chain_model as cm
from . import metrics as mt
from . import scenario as scn
from .chain_model import ChainGeometry, JointReading, State
from .estimator import WholeBodyEstimator, batch_in_link_frame, to_world
from .point_map import PointMap, write_points
from .so3 import angle_between, to_quaternion

log = logging.getLogger(__name__)

RUNLOG_HEADER = [
    "step", "time_s", "link",
    "px", "py", "pz", "qx", "qy", "qz", "qw",
    "true_px", "true_py", "true_pz", "true_qx", "true_qy", "true_qz", "true_qw",
    "bias_est", "bias_true", "err_pos_m", "err_rot_rad",
    "base_px", "base_py", "base_pz", "base_err_rot_rad", "base_err_pos_m",
    "iterations", "valid_points", "converged",
]

RUNLOG = "runlog.csv"
METRICS = "metrics.txt"
MAP_XYZ = "map.xyz"
MAP_PLY = "map.ply"
LINK_TABLE = "per_link_errors.csv"
ROOT_TRAJ = "root_trajectory.csv"
RESOLVED = "scenario.yaml"


def _num(x: float) -> str:
    return format(float(x), ".10g")


def kinematics_baseline(readings: Sequence[JointReading], geometry: ChainGeometry,
                        root: State) -> list[State]:
    """Forward kinematics on the raw encoder readings, no bias compensation."""
    return cm.forward_kinematics(root, [r.angle for r in readings], geometry)


def exact_map(sc: scn.Scenario) -> PointMap:
    """Map pre-filled with the noise-free returns of every step at the true poses."""
    cfg = sc.map_config()
    pm = PointMap(replace(cfg, downsample_voxel=sc.map.preload_voxel_m))
    sim = sc.simulator()
    sim.sensor_noise = False
    for k in range(sc.steps):
        truth, _, batches = sim.frame(k)
        for pose, batch in zip(truth.poses, batches):
            pm.insert(to_world(pose, batch_in_link_frame(batch, sim.geometry)))
    return pm


@dataclass
class RunResult:
    out_dir: Path
    metrics: dict
    map_size: int
    wall_time_s: float


def run_scenario(sc: scn.Scenario, out_dir, ply: bool = False,
                 progress: Callable[[int, int], None] | None = None) -> RunResult:
    """Run a scenario end to end and write its outputs into ``out_dir``.

    Raises :class:`~chainslam.estimator.DegenerateUpdateError` on a numerical abort.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED).write_text(scn.dumps(sc))

    t_start = time.perf_counter()
    sim = sc.simulator()
    geometry = sim.geometry
    point_map = exact_map(sc) if sc.map.preload_exact else PointMap(sc.map_config())
    first = sim.truth(0)
    estimator = WholeBodyEstimator(geometry, first.poses[0], sc.noise_params(), sc.update_config(),
                                   point_map, sc.fixed_root, root_cov=sc.filter.root_init_var,
                                   bias_std=sc.filter.bias_init_std_rad)

    with open(out / RUNLOG, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUNLOG_HEADER)
        for k in range(sc.steps):
            truth, readings, batches = sim.frame(k)
            est = estimator.step(readings, batches)
            base = kinematics_baseline(readings, geometry, est.states[0])
            for i, (e, t, b) in enumerate(zip(est.states, truth.poses, base)):
                bias_est = e.b if i else 0.0
                bias_true = truth.biases[i - 1] if i else 0.0
                writer.writerow([
                    k, _num(truth.t), i,
                    *map(_num, e.p), *map(_num, to_quaternion(e.R)),
                    *map(_num, t.p), *map(_num, to_quaternion(t.R)),
                    _num(bias_est), _num(bias_true),
                    _num(np.linalg.norm(e.p - t.p)), _num(angle_between(e.R, t.R)),
                    *map(_num, b.p), _num(angle_between(b.R, t.R)),
                    _num(np.linalg.norm(b.p - t.p)),
                    est.iterations[i], est.valid_points[i], int(est.converged[i]),
                ])
            if progress is not None:
                progress(k + 1, sc.steps)
    wall = time.perf_counter() - t_start

    with open(out / MAP_XYZ, "w") as fh:
        point_map.export(fh)
    if ply:
        with open(out / MAP_PLY, "w") as fh:
            point_map.export(fh, ply=True)

    log_data = mt.read_runlog(out / RUNLOG)
    summary = mt.compute(log_data, bias_tail_s=sc.bias_tail_s)
    summary["map_points"] = len(point_map)
    mt.write_metrics(out / METRICS, summary)
    mt.write_link_table(out / LINK_TABLE, log_data)
    if not sc.fixed_root:
        mt.write_root_trajectory(out / ROOT_TRAJ, log_data)
    log.info("%s: %d steps in %.1f s", sc.name, sc.steps, wall)
    return RunResult(out, summary, len(point_map), wall)


def export_map(run_dir, sink, ply: bool = False) -> int:
    """Re-emit the map saved by a run, optionally as PLY."""
    from .point_map import read_points
    with open(Path(run_dir) / MAP_XYZ) as fh:
        pts = read_points(fh)
    return write_points(sink, pts, ply=ply)
