"""SO(3) exponential/logarithm and the helpers built on them.

Rotations are plain 3x3 numpy arrays and rotation vectors are length-3
arrays (axis times angle, radians).
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

SMALL_ANGLE = 1e-7
# below this the Jacobian coefficients come from their Taylor series
SERIES_ANGLE = 1e-2


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def exp_so3(n) -> np.ndarray:
    """Rodrigues formula. Falls back to the 2nd-order series near zero."""
    n = np.asarray(n, dtype=float)
    theta = np.linalg.norm(n)
    if theta < SMALL_ANGLE:
        K = skew(n)
        return np.eye(3) + K + 0.5 * (K @ K)
    K = skew(n / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def log_so3(R) -> np.ndarray:
    """Inverse of :func:`exp_so3`, returning a rotation vector with norm in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    # vee of the antisymmetric part equals sin(theta) * axis
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_theta = np.linalg.norm(w)
    theta = np.arctan2(sin_theta, cos_theta)

    if theta < SMALL_ANGLE:
        # R ~ I + [n]x + 1/2 [n]x^2, whose antisymmetric part is exactly [n]x
        return w
    if theta < np.pi - 1e-4:
        return theta / sin_theta * w

    # Near pi the antisymmetric part vanishes; read the axis from the
    # symmetric part R + R^T = 2 cos I + 2 (1 - cos) a a^T.
    S = 0.5 * (R + R.T) - cos_theta * np.eye(3)
    i = int(np.argmax(np.diag(S)))
    axis = S[:, i] / np.sqrt(max(S[i, i], 1e-300))
    axis /= np.linalg.norm(axis)
    if np.dot(axis, w) < 0.0:
        axis = -axis
    return theta * axis


def right_jacobian(n) -> np.ndarray:
    """Right Jacobian of Exp: Exp(n + d) ~ Exp(n) Exp(Jr(n) d)."""
    n = np.asarray(n, dtype=float)
    theta = np.linalg.norm(n)
    K = skew(n)
    t2 = theta * theta
    # (1 - cos t)/t^2 written with sin(t/2) to avoid cancellation
    a = 0.5 * np.sinc(theta / (2.0 * np.pi)) ** 2
    if theta < SERIES_ANGLE:
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) - a * K + b * (K @ K)


def right_jacobian_inv(n) -> np.ndarray:
    """Inverse right Jacobian, defined for ||n|| < pi."""
    n = np.asarray(n, dtype=float)
    theta = np.linalg.norm(n)
    if theta >= np.pi:
        raise ValueError(f"rotation angle {theta} is outside the injectivity radius")
    K = skew(n)
    t2 = theta * theta
    if theta < SERIES_ANGLE:
        coef = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        coef = 1.0 / t2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + coef * (K @ K)


def boxplus(R, d) -> np.ndarray:
    return R @ exp_so3(d)


def boxminus(R_a, R_b) -> np.ndarray:
    """Right-multiplicative difference: R_a = R_b Exp(boxminus(R_a, R_b))."""
    return log_so3(R_b.T @ R_a)


def angle_between(R_a, R_b) -> float:
    return float(np.linalg.norm(boxminus(R_a, R_b)))


def orthonormalize(R) -> np.ndarray:
    """Project a nearly-orthonormal matrix back onto SO(3)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0.0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


def to_quaternion(R) -> np.ndarray:
    """Quaternion (x, y, z, w) with w >= 0."""
    q = _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    if q[3] < 0.0:
        q = -q
    return q


def from_quaternion(q) -> np.ndarray:
    return _ScipyRotation.from_quat(np.asarray(q, dtype=float)).as_matrix()
