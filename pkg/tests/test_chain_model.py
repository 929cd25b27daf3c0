import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from chainslam import chain_model as cm
from chainslam.so3 import skew
from chainslam.simulator import SensorSpec, build_geometry
from conftest import assert_psd, random_psd

H = 1e-6


def fk_oracle(root_p, root_R, angles, axes, offsets):
    """Homogeneous-transform product, independent of predict_link."""
    T = np.eye(4)
    T[:3, :3], T[:3, 3] = root_R, root_p
    out = [T.copy()]
    for a, ax, off in zip(angles, axes, offsets):
        step = np.eye(4)
        step[:3, :3] = Rotation.from_rotvec(a * np.asarray(ax)).as_matrix()
        step[:3, 3] = off
        T = T @ step
        out.append(T.copy())
    return out


def central_jacobian(f, dim, h=H):
    cols = []
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        cols.append((f(e) - f(-e)) / (2 * h))
    return np.column_stack(cols)


def random_link(rng, bias_range=0.1):
    R = Rotation.random(random_state=rng).as_matrix()
    return cm.LinkState(rng.normal(size=3), R, float(rng.uniform(-bias_range, bias_range)))


def random_root(rng):
    return cm.RootState(rng.normal(size=3), Rotation.random(random_state=rng).as_matrix())


@pytest.fixture(scope="module")
def geom20():
    return build_geometry(20, 0.17, SensorSpec())


# --- prediction ------------------------------------------------------------

def test_predict_root_is_identity():
    s = cm.RootState(np.array([1.0, 2.0, 3.0]), np.eye(3))
    out = cm.predict_root(s)
    assert np.array_equal(out.p, [1, 2, 3]) and np.array_equal(out.R, np.eye(3))


def test_predict_link_straight_chain():
    parent = cm.RootState(np.zeros(3), np.eye(3))
    prev = cm.LinkState(np.zeros(3), np.eye(3), 0.0)
    out = cm.predict_link(parent, prev, cm.JointReading(0.0, np.array([0.0, 0.0, 1.0])), [0.4, 0, 0])
    assert np.allclose(out.p, [0.4, 0, 0]) and np.allclose(out.R, np.eye(3))


def test_predict_link_bias_cancels_reading():
    parent = cm.RootState(np.zeros(3), Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix())
    prev = cm.LinkState(np.zeros(3), np.eye(3), 0.05)
    out = cm.predict_link(parent, prev, cm.JointReading(0.05, np.array([0.0, 0.0, 1.0])), [0.4, 0, 0])
    assert np.allclose(out.R, parent.R, atol=1e-15)
    assert out.b == 0.05


def test_forward_kinematics_matches_transform_oracle(geom20, rng):
    angles = rng.uniform(-np.pi / 2, np.pi / 2, 20)
    root = random_root(rng)
    poses = cm.forward_kinematics(root, angles, geom20)
    ref = fk_oracle(root.p, root.R, angles, geom20.joint_axes, geom20.link_offsets)
    for s, T in zip(poses, ref):
        assert np.abs(s.p - T[:3, 3]).max() < 1e-12
        assert np.abs(s.R - T[:3, :3]).max() < 1e-12


def test_unmodelled_bias_moves_tip_more_than_half_metre(geom20):
    root = cm.RootState(np.zeros(3), np.eye(3))
    true = fk_oracle(root.p, root.R, np.zeros(20), geom20.joint_axes, geom20.link_offsets)
    biased = fk_oracle(root.p, root.R, np.full(20, 0.05), geom20.joint_axes, geom20.link_offsets)
    oracle_err = np.linalg.norm(true[-1][:3, 3] - biased[-1][:3, 3])
    assert oracle_err > 0.5
    # predict_link fed the raw readings lands on the biased chain
    poses = cm.forward_kinematics(root, np.full(20, 0.05), geom20)
    assert np.isclose(np.linalg.norm(poses[-1].p - true[-1][:3, 3]), oracle_err, atol=1e-12)


def test_forward_kinematics_subtracts_biases(geom20, rng):
    angles = rng.uniform(-1, 1, 20)
    root = random_root(rng)
    a = cm.forward_kinematics(root, angles + 0.05, geom20, biases=np.full(20, 0.05))
    b = cm.forward_kinematics(root, angles, geom20)
    assert all(np.allclose(x.p, y.p, atol=1e-12) for x, y in zip(a, b))


# --- jacobians -----------------------------------------------------------

def test_root_jacobians_identity():
    F_x, F_w = cm.root_transition_jacobians(cm.RootState(np.zeros(3), np.eye(3)))
    assert np.array_equal(F_x, np.eye(6)) and np.array_equal(F_w, np.eye(6))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_root_jacobians_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    prev = random_root(rng)
    F_x, F_w = cm.root_transition_jacobians(prev)
    Fx_num = central_jacobian(lambda e: cm.root_error_transition(prev, e, np.zeros(6)), 6)
    Fw_num = central_jacobian(lambda w: cm.root_error_transition(prev, np.zeros(6), w), 6)
    assert np.abs(F_x - Fx_num).max() < 1e-5
    assert np.abs(F_w - Fw_num).max() < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-np.pi / 2, np.pi / 2),
       st.sampled_from(["x", "y", "z", "rand"]), st.booleans())
def test_link_jacobians_match_finite_differences(seed, angle, axis_kind, root_parent):
    rng = np.random.default_rng(seed)
    if axis_kind == "rand":
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
    else:
        axis = np.eye(3)["xyz".index(axis_kind)]
    parent = random_root(rng) if root_parent else random_link(rng)
    prev = random_link(rng)
    reading = cm.JointReading(angle, axis)
    offset = rng.normal(size=3) * 0.3
    F_prev, F_parent, F_w = cm.link_transition_jacobians(parent, prev, reading, offset)
    zp, z7 = np.zeros(parent.dim), np.zeros(7)

    def trans(e_par, e_prev, w):
        return cm.link_error_transition(parent, prev, reading, offset, e_par, e_prev, w)

    num_prev = central_jacobian(lambda e: trans(zp, e, np.zeros(2)), 7)
    num_parent = central_jacobian(lambda e: trans(e, z7, np.zeros(2)), parent.dim)
    num_w = central_jacobian(lambda w: trans(zp, z7, w), 2)
    assert np.abs(F_prev - num_prev).max() < 1e-5
    assert np.abs(F_parent - num_parent).max() < 1e-5
    assert np.abs(F_w - num_w).max() < 1e-5


def test_link_jacobian_structure():
    parent = cm.RootState(np.zeros(3), np.eye(3))
    prev = cm.LinkState(np.zeros(3), np.eye(3), 0.0)
    offset = np.array([0.4, 0.0, 0.0])
    F_prev, F_parent, _ = cm.link_transition_jacobians(
        parent, prev, cm.JointReading(0.0, np.array([0.0, 0.0, 1.0])), offset)
    assert F_prev[6, 6] == 1.0
    assert np.array_equal(F_parent[0:3, 0:3], np.eye(3))
    assert np.allclose(F_parent[0:3, 3:6], -skew(offset))


# --- covariance ----------------------------------------------------------

def test_root_propagation_examples():
    noise = cm.NoiseParams(q_root_pos=1e-4 * np.eye(3), q_root_rot=1e-4 * np.eye(3))
    F_x, F_w = np.eye(6), np.eye(6)
    assert np.allclose(cm.propagate_root_cov(np.zeros((6, 6)), F_x, F_w, noise), 1e-4 * np.eye(6))
    zero_q = cm.NoiseParams(q_root_pos=np.zeros((3, 3)), q_root_rot=np.zeros((3, 3)))
    P = random_psd(np.random.default_rng(0), 6)
    assert np.allclose(cm.propagate_root_cov(P, F_x, F_w, zero_q), P)


def test_root_prediction_inflates_trace_by_q():
    noise = cm.NoiseParams()
    P = random_psd(np.random.default_rng(1), 6)
    P2 = cm.propagate_root_cov(P, *cm.root_transition_jacobians(cm.RootState(np.zeros(3), np.eye(3))),
                               noise)
    assert np.isclose(np.trace(P2), np.trace(P) + np.trace(noise.root_q))


def test_link_propagation_zero_inputs():
    noise = cm.NoiseParams(q_bias=0.0, q_theta=0.0)
    F = np.eye(7)
    out = cm.propagate_link_cov(np.zeros((7, 7)), np.zeros((7, 7)), F, F, np.zeros((7, 2)), noise)
    assert np.array_equal(out, np.zeros((7, 7)))


def test_link_propagation_without_parent_is_temporal_only(rng):
    noise = cm.NoiseParams()
    P = random_psd(rng, 7)
    F_prev, _, F_w = cm.link_transition_jacobians(
        random_link(rng), random_link(rng), cm.JointReading(0.3, np.array([0.0, 1.0, 0.0])), [0.2, 0, 0])
    out = cm.propagate_link_cov(P, np.zeros((7, 7)), F_prev, np.zeros((7, 7)), F_w, noise)
    assert np.allclose(out, F_prev @ P @ F_prev.T + F_w @ noise.link_q @ F_w.T)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.booleans())
def test_propagated_covariances_psd(seed, root_parent):
    rng = np.random.default_rng(seed)
    noise = cm.NoiseParams()
    parent = random_root(rng) if root_parent else random_link(rng)
    prev = random_link(rng)
    F_prev, F_parent, F_w = cm.link_transition_jacobians(
        parent, prev, cm.JointReading(rng.uniform(-1.5, 1.5), np.array([0.0, 0.0, 1.0])), rng.normal(size=3))
    out = cm.propagate_link_cov(random_psd(rng, 7), random_psd(rng, parent.dim), F_prev, F_parent,
                                F_w, noise)
    assert np.array_equal(out, out.T)
    assert_psd(out, 1e-9)
    root = cm.propagate_root_cov(random_psd(rng, 6), *cm.root_transition_jacobians(random_root(rng)),
                                 noise)
    assert np.array_equal(root, root.T)
    assert_psd(root, 1e-9)


def test_state_boxplus_boxminus(rng):
    x = random_link(rng)
    d = rng.normal(size=7) * 0.3
    assert np.allclose(cm.boxminus(cm.boxplus(x, d), x), d, atol=1e-10)
    r = random_root(rng)
    d6 = rng.normal(size=6) * 0.3
    assert np.allclose(cm.boxminus(cm.boxplus(r, d6), r), d6, atol=1e-10)


def test_geometry_validation():
    with pytest.raises(ValueError):
        cm.ChainGeometry((np.zeros(3),), (np.array([0.0, 0.0, 2.0]),), ((), ()))
    with pytest.raises(ValueError):
        cm.ChainGeometry((np.zeros(3),), (np.array([0.0, 0.0, 1.0]),), ((),))
