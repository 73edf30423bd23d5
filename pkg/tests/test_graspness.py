import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dexgen.geometry import PrimitiveShape, RigidPose, Scene, SceneObject, axis_angle, look_at, random_rotation
from dexgen.geometry.scene import SceneCloud, render_depth_cloud
from dexgen.geometry.transforms import farthest_point_sample
from dexgen.graspness import (GraspCone, GraspLabel, NoSeedError, absolute_grasp, cone_falloff, cone_vote,
                              decayed_contribution, graspness_field, graspness_scores, grasp_cone,
                              propose_seeds, relative_grasp, seed_point_of, top_fraction)
from dexgen.neural.descriptor import roll_matrix
from dexgen.neural.training import SceneGrasp, TrainingScene, augment_rotation

seeds = st.integers(0, 2**32 - 1)
AXIS_CONE = GraspCone(np.zeros(3), np.array([0.0, 1.0, 0.0]))


def point_at(angle_deg, dist):
    """Point at spanning angle ``angle_deg`` from the +y axis with projected distance ``dist``."""
    a = math.radians(angle_deg)
    return np.array([dist * math.tan(a), dist, 0.0]) if dist > 0 else np.array([math.sin(a), math.cos(a), 0.0]) * 1e-9


def test_cone_vote_anchors():
    assert cone_vote(AXIS_CONE, np.array([0.0, 0.0, 0.0])) == pytest.approx(1.0)
    assert cone_vote(AXIS_CONE, np.array([0.0, 0.015, 0.0])) == pytest.approx(0.5, abs=1e-12)
    # theta = 10 deg exactly at d = 0 is only reachable through the falloff itself
    assert cone_falloff(math.radians(10.0), 0.0) == pytest.approx(0.5, abs=1e-12)


def test_cone_vote_outside():
    assert cone_vote(AXIS_CONE, np.array([0.0, -0.01, 0.0])) == 0.0
    assert cone_vote(AXIS_CONE, point_at(31.0, 0.02)) == 0.0
    assert cone_vote(AXIS_CONE, point_at(29.0, 0.02)) > 0.0


@given(st.floats(0.0, 29.0), st.floats(0.0, 29.0), st.floats(0.001, 0.1), st.floats(0.001, 0.1))
def test_cone_vote_monotone(a1, a2, d1, d2):
    lo_a, hi_a = sorted((a1, a2))
    lo_d, hi_d = sorted((d1, d2))
    assert cone_falloff(math.radians(hi_a), lo_d) <= cone_falloff(math.radians(lo_a), lo_d)
    assert cone_falloff(math.radians(lo_a), hi_d) <= cone_falloff(math.radians(lo_a), lo_d)


def test_seed_point_axis_point_wins():
    pts = np.array([point_at(15.0, 0.02), [0.0, 0.02, 0.0], point_at(5.0, 0.02)])
    assert seed_point_of(AXIS_CONE, pts) == 1


def test_seed_point_none_inside():
    with pytest.raises(NoSeedError):
        seed_point_of(AXIS_CONE, np.array([[0.0, -0.1, 0.0], [1.0, 0.0, 0.0]]))


def test_seed_point_matches_bruteforce(rng):
    pts = rng.uniform(-0.05, 0.1, size=(100, 3))
    votes = [float(cone_vote(AXIS_CONE, p)) for p in pts]
    assert seed_point_of(AXIS_CONE, pts) == int(np.argmax(votes))


def test_cone_validation():
    with pytest.raises(ValueError):
        GraspCone(np.zeros(3), np.array([0.0, 1.0, 0.0]), aperture=math.pi)


# ---------------------------------------------------------------- field

def _cloud(points, labels):
    return SceneCloud(np.asarray(points, float), np.asarray(labels), RigidPose.identity())


def test_zero_labels_floor(hand):
    cloud = _cloud([[0, 0, 0.3], [0.01, 0, 0.3], [0, 0, 0.4]], [0, 0, -1])
    f = graspness_field([], cloud, hand)
    assert np.allclose(f.scores[:2], math.log(0.001), atol=1e-12)
    assert np.isnan(f.scores[2])
    assert list(f.object_mask) == [True, True, False]


def test_scores_at_seed():
    pts = np.array([[0.0, 0, 0], [0.01, 0, 0]])
    assert graspness_scores(pts[:1], pts)[0] == pytest.approx(math.log(1.001), abs=1e-12)
    assert graspness_scores(np.repeat(pts[:1], 2, axis=0), pts)[0] == pytest.approx(math.log(2.001), abs=1e-12)
    assert graspness_scores(pts[:1], pts)[1] == pytest.approx(math.log(0.001 + 10 ** (-1.5)), abs=1e-12)


@given(seeds)
def test_field_permutation_and_additivity(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.03, 0.03, size=(30, 3))
    a = rng.uniform(-0.03, 0.03, size=(4, 3))
    b = rng.uniform(-0.03, 0.03, size=(3, 3))
    merged = decayed_contribution(np.concatenate([a, b]), pts)
    assert np.allclose(merged, decayed_contribution(a, pts) + decayed_contribution(b, pts), rtol=1e-12, atol=0)
    perm = rng.permutation(7)
    both = np.concatenate([a, b])
    assert np.allclose(graspness_scores(both[perm], pts), graspness_scores(both, pts), rtol=1e-13, atol=1e-13)
    assert np.all(graspness_scores(both, pts) >= math.log(0.001))


def _demo_label(hand, obj):
    # palm 6 cm above the sphere looking down
    wrist = RigidPose(obj.pose.translation + np.array([0.0, 0.0, 0.07]), axis_angle([1, 0, 0], -math.pi / 2))
    return GraspLabel(wrist, hand.open_pose, obj.object_id)


def test_field_counts_own_object_only(hand):
    s0 = SceneObject(0, PrimitiveShape("sphere", (0.03,)), RigidPose(np.array([0.0, 0, 0.03]), np.eye(3)))
    s1 = SceneObject(1, PrimitiveShape("sphere", (0.03,)), RigidPose(np.array([0.08, 0, 0.03]), np.eye(3)))
    scene = Scene((s0, s1))
    cam = look_at([0.04, -0.1, 0.4], [0.04, 0, 0])
    cloud = render_depth_cloud(scene, cam, 48, 48)
    label = _demo_label(hand, s0)
    f = graspness_field([label], cloud, hand)
    assert f.seed_index[0] >= 0
    assert cloud.object_label[f.seed_index[0]] == 0
    assert np.allclose(f.scores[cloud.object_label == 1], math.log(0.001))
    assert f.scores[f.seed_index[0]] == pytest.approx(math.log(1.001))


# ---------------------------------------------------------------- seeds

def test_top_fraction_uniform_ties():
    scores = np.zeros(250)
    cand = np.arange(250)
    top = top_fraction(scores, cand, 0.01)
    assert list(top) == [0, 1, 2]


def test_propose_single_peak():
    scores = np.zeros(200)
    scores[37] = 10.0
    pts = np.random.default_rng(0).normal(size=(200, 3))
    assert list(propose_seeds(scores, np.ones(200, bool), pts, m=1)) == [37]


def test_propose_matches_reference(rng):
    n = 2000
    pts = rng.normal(size=(n, 3))
    scores = rng.normal(size=n)
    mask = rng.random(n) < 0.7
    out = propose_seeds(scores, mask, pts, m=8, fraction=0.05)
    obj = np.flatnonzero(mask)
    order = sorted(obj, key=lambda i: (-scores[i], i))
    top = np.array(order[:math.ceil(0.05 * len(obj))])
    ref = top[farthest_point_sample(pts[top], 8, 0)]
    assert list(out) == list(ref)
    assert set(out) <= set(obj)


def test_propose_no_object_points():
    with pytest.raises(ValueError):
        propose_seeds(np.zeros(5), np.zeros(5, bool), np.zeros((5, 3)))


# ---------------------------------------------------------------- relative frames

def test_relative_grasp_at_seed(hand):
    label = GraspLabel(RigidPose(np.array([0.1, 0.2, 0.3]), np.eye(3)), hand.open_pose, 0)
    t, r, th = relative_grasp(label, np.array([0.1, 0.2, 0.3]), RigidPose.identity())
    assert np.allclose(t, 0.0)


@given(seeds)
def test_relative_absolute_round_trip(seed):
    rng = np.random.default_rng(seed)
    label = GraspLabel(RigidPose(rng.normal(size=3), random_rotation(rng)), rng.normal(size=16), 2)
    cam = RigidPose(rng.normal(size=3), random_rotation(rng))
    seed_pt = rng.normal(size=3)
    back = absolute_grasp(*relative_grasp(label, seed_pt, cam), seed_pt, cam, object_id=2)
    assert np.allclose(back.wrist.translation, label.wrist.translation, atol=1e-12)
    assert np.allclose(back.wrist.rotation, label.wrist.rotation, atol=1e-12)
    assert np.array_equal(back.theta, label.theta)


@given(seeds, st.floats(0.0, 2 * math.pi))
def test_camera_roll_equivariance(seed, angle):
    rng = np.random.default_rng(seed)
    cam = RigidPose(rng.normal(size=3), random_rotation(rng))
    label = GraspLabel(RigidPose(rng.normal(size=3), random_rotation(rng)), rng.normal(size=16), 0)
    seed_pt = rng.normal(size=3)
    t, r, th = relative_grasp(label, seed_pt, cam)
    # rolling the camera by -angle is the same as rolling the scene by +angle in camera axes
    rz = roll_matrix(angle)
    rolled_cam = RigidPose(cam.translation, cam.rotation @ rz.T)
    t2, r2, th2 = relative_grasp(label, seed_pt, rolled_cam)
    scene = TrainingScene(np.zeros((1, 3)), np.zeros((1, 64)), np.array([True]), np.zeros(1),
                          [SceneGrasp(0, 0, t, r, th)])
    aug = augment_rotation(scene, angle).grasps[0]
    assert np.allclose(aug.translation, t2, atol=1e-12)
    assert np.allclose(aug.rotation, r2, atol=1e-12)
    assert np.linalg.norm(t2) == pytest.approx(np.linalg.norm(t))
    assert np.array_equal(th2, th)


def test_seed_point_rotates_with_scene(hand):
    rng = np.random.default_rng(5)
    label = GraspLabel(RigidPose(np.array([0.0, 0.0, 0.07]), axis_angle([1, 0, 0], -math.pi / 2)), hand.open_pose, 0)
    pts = rng.uniform(-0.03, 0.03, size=(200, 3))
    idx = seed_point_of(grasp_cone(label, hand), pts)
    w = RigidPose(np.zeros(3), axis_angle([0, 0, 1], 1.1))
    moved = label.transformed(w)
    assert seed_point_of(grasp_cone(moved, hand), w.apply(pts)) == idx
