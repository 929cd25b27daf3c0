"""Point-to-plane iterated error-state Kalman update and the per-step
root-to-tip estimation pass.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import chain_model as cm
from .chain_model import ChainGeometry, JointReading, LinkState, NoiseParams, RootState, State
from .point_map import PointMap
from .so3 import right_jacobian, right_jacobian_inv

log = logging.getLogger(__name__)


class DegenerateUpdateError(RuntimeError):
    def __init__(self, msg: str, link: int | None = None, step: int | None = None):
        super().__init__(msg)
        self.link = link
        self.step = step

    def __str__(self) -> str:
        where = []
        if self.step is not None:
            where.append(f"step {self.step}")
        if self.link is not None:
            where.append(f"link {self.link}")
        base = super().__str__()
        return f"{base} ({', '.join(where)})" if where else base


REASSOCIATE_MODES = ("every", "on_convergence")


@dataclass(frozen=True)
class UpdateConfig:
    max_iterations: int = 5
    convergence_eps: float = 1e-3
    r_point: float = 0.01 ** 2
    min_points: int = 10
    # "every": new plane fits at every iterate. "on_convergence": keep the
    # fits while iterating and refresh them once the correction is small.
    reassociate: str = "every"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.reassociate not in REASSOCIATE_MODES:
            raise ValueError(f"reassociate must be one of {REASSOCIATE_MODES}")
        if self.convergence_eps <= 0 or self.r_point <= 0:
            raise ValueError("convergence_eps and r_point must be positive")


@dataclass(frozen=True, eq=False)
class PointBatch:
    """One step of proximity returns for one body, in each sensor's frame."""
    link_index: int
    sensor_index: np.ndarray   # (m,) int
    local_points: np.ndarray   # (m, 3)

    def __len__(self) -> int:
        return len(self.local_points)

    @staticmethod
    def empty(link_index: int) -> "PointBatch":
        return PointBatch(link_index, np.zeros(0, dtype=int), np.zeros((0, 3)))


@dataclass(frozen=True, eq=False)
class MeasurementSystem:
    residuals: np.ndarray      # (m,)
    jacobian: np.ndarray       # (m, d)

    @property
    def point_count(self) -> int:
        return len(self.residuals)


@dataclass(frozen=True, eq=False)
class UpdateResult:
    state: State
    cov: np.ndarray
    iterations: int
    valid_points: int
    converged: bool


@dataclass(eq=False)
class StepEstimate:
    states: list
    covs: list
    iterations: list = field(default_factory=list)
    valid_points: list = field(default_factory=list)
    converged: list = field(default_factory=list)


def batch_in_link_frame(batch: PointBatch, geometry: ChainGeometry) -> np.ndarray:
    """Express sensor-frame returns in the owning link's frame."""
    poses = geometry.sensor_poses[batch.link_index]
    if len(batch) == 0:
        return np.zeros((0, 3))
    rot = np.stack([poses[s].rotation for s in batch.sensor_index])
    pos = np.stack([poses[s].position for s in batch.sensor_index])
    return np.einsum('mij,mj->mi', rot, batch.local_points) + pos


def to_world(state: State, body_points: np.ndarray) -> np.ndarray:
    return body_points @ state.R.T + state.p


# --- measurement --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Association:
    """Points paired with their local map planes (valid fits only)."""
    body_points: np.ndarray    # (m, 3) in the link frame
    normals: np.ndarray        # (m, 3)
    anchors: np.ndarray        # (m, 3) nearest map point of each plane


def associate(state: State, body_points: np.ndarray, point_map: PointMap) -> Association:
    """Fit a local plane at every point placed by ``state``; drop invalid fits."""
    if len(body_points) == 0 or len(point_map) == 0:
        return Association(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))
    fits = point_map.fit_planes(to_world(state, body_points))
    keep = fits.valid
    return Association(body_points[keep], fits.normals[keep], fits.points[keep])


def measurement_from_association(state: State, assoc: Association) -> MeasurementSystem:
    """Point-to-plane residuals and their Jacobian wrt the error state."""
    n, s = assoc.normals, assoc.body_points
    z = np.einsum('mi,mi->m', n, to_world(state, s) - assoc.anchors)
    H = np.zeros((len(z), state.dim))
    H[:, 0:3] = n
    # d(R Exp(dth) s)/d(dth) = -R [s]x  ->  row = -n^T R [s]x = s x (R^T n)
    H[:, 3:6] = np.cross(s, n @ state.R)
    return MeasurementSystem(z, H)


def measurement_from_body_points(state: State, body_points: np.ndarray,
                                 point_map: PointMap) -> MeasurementSystem:
    """Associate at ``state`` and build the measurement there; invalid fits are dropped."""
    return measurement_from_association(state, associate(state, body_points, point_map))


def build_measurement(state: State, batch: PointBatch, geometry: ChainGeometry,
                      point_map: PointMap) -> MeasurementSystem:
    return measurement_from_body_points(state, batch_in_link_frame(batch, geometry), point_map)


# --- gain -----------------------------------------------------------------

def gain_information_form(P_prior: np.ndarray, J: np.ndarray, H: np.ndarray,
                          r: float) -> np.ndarray:
    """K = (H^T R^-1 H + J^T P^-1 J)^-1 H^T R^-1, inverted in state dimension."""
    A = H.T @ H / r + J.T @ np.linalg.inv(P_prior) @ J
    return np.linalg.solve(A, H.T / r)


def gain_factored_form(P: np.ndarray, H: np.ndarray, r: float) -> np.ndarray:
    """Same gain written through P = L L^T, so a singular P is allowed.

    K = L (I + L^T H^T H L / r)^-1 L^T H^T / r, with P already mapped
    through J (P = J^-1 P_prior J^-T).
    """
    w, V = np.linalg.eigh(cm.symmetrize(P))
    L = V * np.sqrt(np.clip(w, 0.0, None))
    HL = H @ L
    S = np.eye(len(w)) + HL.T @ HL / r
    return L @ np.linalg.solve(S, HL.T / r)


def gain_measurement_form(P: np.ndarray, H: np.ndarray, r: float) -> np.ndarray:
    """Textbook K = P H^T (H P H^T + R)^-1 (measurement-dimension inverse)."""
    S = H @ P @ H.T + r * np.eye(len(H))
    return np.linalg.solve(S, H @ P).T


def _is_well_conditioned(P: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(P)
    return w[0] > 1e-12 * max(w[-1], 1e-300)


def kalman_gain(P_prior: np.ndarray, J: np.ndarray, J_inv: np.ndarray, H: np.ndarray,
                r: float) -> np.ndarray:
    if _is_well_conditioned(P_prior):
        return gain_information_form(P_prior, J, H, r)
    return gain_factored_form(J_inv @ P_prior @ J_inv.T, H, r)


def prior_jacobian(state: State, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """J and J^-1 relating the correction at the iterate to the prior error.

    (x_iter [+] dx) [-] x_prior ~ d + J dx, with d = x_iter [-] x_prior.
    """
    J = np.eye(state.dim)
    J_inv = np.eye(state.dim)
    J[3:6, 3:6] = right_jacobian_inv(d[3:6])
    J_inv[3:6, 3:6] = right_jacobian(d[3:6])
    return J, J_inv


# --- iterated update --------------------------------------------------------

def iterated_update(prior: State, P_prior: np.ndarray, body_points: np.ndarray,
                    point_map: PointMap, cfg: UpdateConfig) -> UpdateResult:
    """Gauss-Newton style iterated update about the current iterate.

    Residuals and Jacobians are rebuilt at every iterate. With
    ``cfg.reassociate == "every"`` the plane fits are redone each time too;
    with ``"on_convergence"`` they are held until the correction drops below
    ``convergence_eps``, then refreshed, and the update only stops once a
    small correction is reached with fresh fits. With fewer than
    ``cfg.min_points`` usable rows on the first pass the prior is returned.
    """
    state = prior
    K = H = J_inv = None
    assoc = None
    iterations = 0
    valid = 0
    converged = False
    for _ in range(cfg.max_iterations):
        fresh = assoc is None or cfg.reassociate == "every"
        if fresh:
            assoc = associate(state, body_points, point_map)
        ms = measurement_from_association(state, assoc)
        if ms.point_count < cfg.min_points:
            if K is None:
                return UpdateResult(prior, P_prior.copy(), 1, ms.point_count, True)
            break
        iterations += 1
        valid = ms.point_count
        d = cm.boxminus(state, prior)
        J, J_inv = prior_jacobian(state, d)
        H = ms.jacobian
        try:
            K = kalman_gain(P_prior, J, J_inv, H, cfg.r_point)
        except np.linalg.LinAlgError as exc:
            raise DegenerateUpdateError(f"singular update system: {exc}") from exc
        Jd = J_inv @ d
        dx = K @ (-ms.residuals + H @ Jd) - Jd
        if not np.all(np.isfinite(dx)):
            raise DegenerateUpdateError("non-finite state correction")
        state = cm.boxplus(state, dx)
        if np.linalg.norm(dx) < cfg.convergence_eps:
            if fresh:
                converged = True
                break
            assoc = None

    P = (np.eye(prior.dim) - K @ H) @ J_inv @ P_prior @ J_inv.T
    return UpdateResult(state, cm.symmetrize(P), iterations, valid, converged)


# --- one full-body step -------------------------------------------------------

def initial_estimate(root: RootState, geometry: ChainGeometry, fixed_root: bool,
                     root_cov: float = 1e-4, bias_std: float = 0.1) -> StepEstimate:
    """Estimate standing in for step -1.

    Link poses here are never used: the first spatial prediction rebuilds
    them from the root. Only the bias and its variance carry over.
    """
    states: list = [root]
    covs = [np.zeros((6, 6)) if fixed_root else root_cov * np.eye(6)]
    for _ in range(geometry.link_count):
        states.append(LinkState(root.p.copy(), root.R.copy(), 0.0))
        P = np.zeros((7, 7))
        P[6, 6] = bias_std ** 2
        covs.append(P)
    return StepEstimate(states, covs)


def run_step(prev: StepEstimate, readings: Sequence[JointReading],
             batches: Sequence[PointBatch], point_map: PointMap, geometry: ChainGeometry,
             noise: NoiseParams, cfg: UpdateConfig, pinned_root: RootState | None = None,
             step: int | None = None) -> StepEstimate:
    """Estimate root then links in order, growing the map after each body.

    ``pinned_root`` fixes the root pose (zero covariance, no update).
    """
    if len(readings) != geometry.link_count:
        raise ValueError("need one joint reading per link")
    if len(batches) != geometry.link_count + 1:
        raise ValueError("need one point batch per body (root + links)")

    out = StepEstimate([], [])

    if pinned_root is not None:
        out.states.append(pinned_root)
        out.covs.append(np.zeros((6, 6)))
        out.iterations.append(0)
        out.valid_points.append(0)
        out.converged.append(True)
        root_pts = batch_in_link_frame(batches[0], geometry)
    else:
        pred = cm.predict_root(prev.states[0])
        F_x, F_w = cm.root_transition_jacobians(pred)
        P_hat = cm.propagate_root_cov(prev.covs[0], F_x, F_w, noise)
        root_pts = batch_in_link_frame(batches[0], geometry)
        res = _update(pred, P_hat, root_pts, point_map, cfg, 0, step)
        _record(out, res)
    point_map.insert(to_world(out.states[0], root_pts))

    for i in range(1, geometry.link_count + 1):
        parent, parent_cov = out.states[i - 1], out.covs[i - 1]
        reading = readings[i - 1]
        offset = geometry.link_offsets[i - 1]
        pred = cm.predict_link(parent, prev.states[i], reading, offset)
        F_prev, F_parent, F_w = cm.link_transition_jacobians(parent, prev.states[i], reading, offset)
        P_hat = cm.propagate_link_cov(prev.covs[i], parent_cov, F_prev, F_parent, F_w, noise)
        pts = batch_in_link_frame(batches[i], geometry)
        res = _update(pred, P_hat, pts, point_map, cfg, i, step)
        _record(out, res)
        point_map.insert(to_world(res.state, pts))
    return out


def _update(pred, P_hat, pts, point_map, cfg, link, step) -> UpdateResult:
    try:
        return iterated_update(pred, P_hat, pts, point_map, cfg)
    except DegenerateUpdateError as exc:
        exc.link, exc.step = link, step
        raise


def _record(out: StepEstimate, res: UpdateResult) -> None:
    out.states.append(res.state)
    out.covs.append(res.cov)
    out.iterations.append(res.iterations)
    out.valid_points.append(res.valid_points)
    out.converged.append(res.converged)


class WholeBodyEstimator:
    """Stateful wrapper around :func:`run_step` that owns the map."""

    def __init__(self, geometry: ChainGeometry, root: RootState, noise: NoiseParams,
                 update_cfg: UpdateConfig, point_map: PointMap, fixed_root: bool,
                 root_cov: float = 1e-4, bias_std: float = 0.1):
        self.geometry = geometry
        self.noise = noise
        self.update_cfg = update_cfg
        self.map = point_map
        self.pinned_root = root if fixed_root else None
        self.estimate = initial_estimate(root, geometry, fixed_root, root_cov, bias_std)
        self.step_index = 0

    def step(self, readings: Sequence[JointReading], batches: Sequence[PointBatch]) -> StepEstimate:
        self.estimate = run_step(self.estimate, readings, batches, self.map, self.geometry,
                                 self.noise, self.update_cfg, self.pinned_root, self.step_index)
        self.step_index += 1
        return self.estimate
