"""Articulated chain: states, prediction along the chain and in time, and
covariance propagation of the error state.

Error-state layout
    root : [dp(3), dtheta(3)]          (6)
    link : [dp(3), dtheta(3), dbias]   (7)

Orientation error is right-multiplicative, ``R = R_nominal @ Exp(dtheta)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .so3 import exp_so3, log_so3, skew

ROOT_DIM = 6
LINK_DIM = 7


@dataclass(frozen=True, eq=False)
class SensorPose:
    position: np.ndarray      # in the link frame, metres
    rotation: np.ndarray      # sensor -> link


@dataclass(frozen=True, eq=False)
class ChainGeometry:
    link_offsets: tuple        # offset of link i's origin in link i-1's frame, i = 1..N
    joint_axes: tuple          # unit axis of joint i in link i-1's frame
    sensor_poses: tuple        # per body 0..N, tuple of SensorPose

    def __post_init__(self):
        if len(self.link_offsets) != len(self.joint_axes):
            raise ValueError("link_offsets and joint_axes must have the same length")
        if len(self.sensor_poses) != len(self.link_offsets) + 1:
            raise ValueError("sensor_poses needs one entry per body (root + links)")
        for a in self.joint_axes:
            if abs(np.linalg.norm(a) - 1.0) > 1e-9:
                raise ValueError(f"joint axis {a} is not a unit vector")

    @property
    def link_count(self) -> int:
        return len(self.link_offsets)


@dataclass(frozen=True, eq=False)
class RootState:
    p: np.ndarray
    R: np.ndarray

    dim = ROOT_DIM


@dataclass(frozen=True, eq=False)
class LinkState:
    p: np.ndarray
    R: np.ndarray
    b: float = 0.0

    dim = LINK_DIM


State = Union[RootState, LinkState]


@dataclass(frozen=True, eq=False)
class JointReading:
    angle: float
    axis: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return self.angle * np.asarray(self.axis, dtype=float)


@dataclass(frozen=True, eq=False)
class NoiseParams:
    q_root_pos: np.ndarray = field(default_factory=lambda: 0.01 ** 2 * np.eye(3))
    q_root_rot: np.ndarray = field(default_factory=lambda: 0.01 ** 2 * np.eye(3))
    q_bias: float = 1e-5 ** 2
    q_theta: float = 0.002 ** 2
    r_point: float = 0.01 ** 2

    @property
    def root_q(self) -> np.ndarray:
        Q = np.zeros((6, 6))
        Q[:3, :3] = self.q_root_pos
        Q[3:, 3:] = self.q_root_rot
        return Q

    @property
    def link_q(self) -> np.ndarray:
        return np.diag([self.q_bias, self.q_theta])


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def boxplus(x: State, dx) -> State:
    """Apply an error vector to a nominal state."""
    dx = np.asarray(dx, dtype=float)
    p = x.p + dx[:3]
    R = x.R @ exp_so3(dx[3:6])
    if isinstance(x, LinkState):
        return LinkState(p, R, x.b + float(dx[6]))
    return RootState(p, R)


def boxminus(x: State, y: State) -> np.ndarray:
    """Error vector e with ``x == boxplus(y, e)``."""
    e = [x.p - y.p, log_so3(y.R.T @ x.R)]
    if isinstance(x, LinkState):
        e.append([x.b - y.b])
    return np.concatenate(e)


# --- prediction ----------------------------------------------------------

def predict_root(prev: RootState) -> RootState:
    """Random-walk mean prediction: the previous estimate, untouched."""
    return prev


def predict_link(parent: State, prev_self: LinkState, reading: JointReading,
                 offset) -> LinkState:
    """Place link i on its parent (same step) using the bias-corrected joint reading.

    ``offset`` is the origin of link i in the parent frame.
    """
    axis = np.asarray(reading.axis, dtype=float)
    p = parent.p + parent.R @ np.asarray(offset, dtype=float)
    R = parent.R @ exp_so3(reading.vector - prev_self.b * axis)
    return LinkState(p, R, prev_self.b)


def forward_kinematics(root: State, angles: Sequence[float], geometry: ChainGeometry,
                       biases: Sequence[float] | None = None) -> list[State]:
    """Poses of all bodies (root first) given joint angles.

    ``biases`` are subtracted from the angles, exactly as the link prediction does.
    """
    poses: list[State] = [root]
    for i, (angle, axis, offset) in enumerate(
            zip(angles, geometry.joint_axes, geometry.link_offsets)):
        b = 0.0 if biases is None else float(biases[i])
        poses.append(predict_link(poses[-1], LinkState(np.zeros(3), np.eye(3), b),
                                  JointReading(float(angle), axis), offset))
    return poses


# --- linearised error transitions -----------------------------------------

def root_transition_jacobians(state: RootState) -> tuple[np.ndarray, np.ndarray]:
    """(F_x, F_w) of the root random walk.

    With right-multiplicative errors the walk is Exp(e) Exp(w) ~ Exp(e + w),
    so both Jacobians are identity regardless of the state.
    """
    return np.eye(ROOT_DIM), np.eye(ROOT_DIM)


def link_transition_jacobians(parent: State, prev_self: LinkState, reading: JointReading,
                              offset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(F_prev, F_parent, F_w) for the link error transition.

    F_prev acts on link i's error at the previous step (only the bias
    column is non-zero), F_parent on the parent's error at this step, and
    F_w on the process noise ``[w_bias, w_theta]``.
    """
    axis = np.asarray(reading.axis, dtype=float)
    phi = reading.vector - prev_self.b * axis
    # phi is parallel to the joint axis, so the right Jacobian of Exp at phi
    # leaves the axis unchanged: Jr(phi) @ axis == axis.
    F_prev = np.zeros((LINK_DIM, LINK_DIM))
    F_prev[3:6, 6] = -axis
    F_prev[6, 6] = 1.0

    F_parent = np.zeros((LINK_DIM, parent.dim))
    F_parent[0:3, 0:3] = np.eye(3)
    F_parent[0:3, 3:6] = -parent.R @ skew(offset)
    F_parent[3:6, 3:6] = exp_so3(phi).T

    F_w = np.zeros((LINK_DIM, 2))
    F_w[6, 0] = 1.0
    F_w[3:6, 1] = axis
    return F_prev, F_parent, F_w


def root_error_transition(prev: RootState, e_prev, w) -> np.ndarray:
    """Exact (non-linear) root error after one step, for checking the Jacobians."""
    true_prev = boxplus(prev, e_prev)
    w = np.asarray(w, dtype=float)
    true_next = RootState(true_prev.p + w[:3], true_prev.R @ exp_so3(w[3:6]))
    return boxminus(true_next, predict_root(prev))


def link_error_transition(parent: State, prev_self: LinkState, reading: JointReading,
                          offset, e_parent, e_prev, w) -> np.ndarray:
    """Exact (non-linear) link error given parent/previous errors and noise."""
    w_bias, w_theta = w
    true_parent = boxplus(parent, e_parent)
    true_prev = boxplus(prev_self, e_prev)
    axis = np.asarray(reading.axis, dtype=float)
    true_next = LinkState(
        true_parent.p + true_parent.R @ np.asarray(offset, dtype=float),
        true_parent.R @ exp_so3(reading.vector - (true_prev.b - w_theta) * axis),
        true_prev.b + w_bias,
    )
    return boxminus(true_next, predict_link(parent, prev_self, reading, offset))


# --- covariance propagation -----------------------------------------------

def propagate_root_cov(prev_cov, F_x, F_w, noise: NoiseParams) -> np.ndarray:
    P = F_x @ prev_cov @ F_x.T + F_w @ noise.root_q @ F_w.T
    return symmetrize(P)


def propagate_link_cov(prev_cov, parent_cov, F_prev, F_parent, F_w,
                       noise: NoiseParams) -> np.ndarray:
    """Sum of the temporal, spatial and noise contributions.

    The parent (this step) and self (previous step) errors are treated as
    independent, so no cross terms appear.
    """
    P = (F_prev @ prev_cov @ F_prev.T
         + F_parent @ parent_cov @ F_parent.T
         + F_w @ noise.link_q @ F_w.T)
    return symmetrize(P)
