import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dexgen.diffusion import DiffusionSchedule
from dexgen.geometry import random_rotation
from dexgen.neural import (AdamState, Denoiser, GraspModel, GraspnessHead, JointHead, Mlp, SceneGrasp,
                           TrainingConfig, TrainingScene, adam_step, augment_rotation, cosine_lr,
                           cross_entropy, descriptors, load_checkpoint, loss_and_grads, mish, mse,
                           rebalanced_sample, roll_matrix, rotate_descriptor, save_checkpoint,
                           sinusoidal_embed, smooth_l1, train_loop, write_loss_csv)
from dexgen.neural.mlp import CHECKPOINT_MAGIC, mish_grad
from dexgen.neural.training import draw_batch

seeds = st.integers(0, 2**32 - 1)


# ---------------------------------------------------------------- activations and layers

@given(st.floats(-30.0, 30.0))
def test_mish_matches_logaddexp(x):
    ref = x * math.tanh(np.logaddexp(0.0, x))
    assert mish(np.array(x)) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_mish_extremes_and_grad():
    assert mish(np.array(1000.0)) == 1000.0
    assert abs(mish(np.array(-1000.0))) < 1e-300
    x = np.linspace(-8, 8, 101)
    fd = (mish(x + 1e-6) - mish(x - 1e-6)) / 2e-6
    assert np.allclose(mish_grad(x), fd, atol=1e-8)


def _fd_check(net, x, rng):
    w = rng.normal(size=(len(x), net.sizes[-1]))
    out, cache = net.forward(x, keep_cache=True)
    grads, gx = net.backward(cache, w)
    h = 1e-6
    for p, g in zip(net.parameters(), grads):
        for idx in [tuple(rng.integers(0, s) for s in p.shape) for _ in range(5)]:
            old = p[idx]
            p[idx] = old + h
            up = np.sum(net(x) * w)
            p[idx] = old - h
            down = np.sum(net(x) * w)
            p[idx] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-4 * max(1.0, abs(fd))
    fdx = np.zeros_like(x)
    for i in range(x.shape[1]):
        e = np.zeros_like(x)
        e[:, i] = h
        fdx[:, i] = ((net(x + e) - net(x - e)) * w).sum(axis=1) / (2 * h)
    assert np.allclose(gx, fdx, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("acts,residual", [(("mish", "mish", "identity"), None),
                                           (("relu", "relu", "identity"), (False, True, False))])
def test_backward_matches_finite_differences(acts, residual):
    rng = np.random.default_rng(0)
    net = Mlp.create((5, 6, 6, 3), acts, residual, rng=rng)
    for b in net.biases:
        b[:] = rng.normal(size=b.shape) * 0.1
    _fd_check(net, rng.normal(size=(4, 5)), rng)


def test_mlp_validation():
    with pytest.raises(ValueError):
        Mlp((3, 4), "tanh")
    with pytest.raises(ValueError):
        Mlp((3, 4, 2), ("relu", "identity"), (True, False))
    with pytest.raises(ValueError):
        Mlp.create((3, 2), "identity").forward(np.zeros((1, 4)))


def test_adam_first_step_is_lr_sign():
    p = [np.array([1.0, -2.0])]
    state = AdamState.for_params(p)
    adam_step(p, [np.array([0.3, -5.0])], state, 0.1)
    assert np.allclose(p[0], [0.9, -1.9], atol=1e-6)


# ---------------------------------------------------------------- heads

@given(st.floats(0.0, 1.0), st.sampled_from([2, 12, 64]))
def test_sinusoidal_embed_norm(t, dim):
    e = sinusoidal_embed(t, dim)
    assert e.shape == (dim,)
    assert float(e @ e) == pytest.approx(dim / 2)


def test_sinusoidal_embed_layout():
    e = sinusoidal_embed(np.array([0.0, 0.5]), 8)
    assert np.allclose(e[0], [0, 1] * 4)
    assert e[1, 0] == pytest.approx(math.sin(0.5)) and e[1, 1] == pytest.approx(math.cos(0.5))
    assert e[1, 6] == pytest.approx(math.sin(0.5e4))
    with pytest.raises(ValueError):
        sinusoidal_embed(0.1, 5)


def test_graspness_head_is_affine():
    rng = np.random.default_rng(1)
    head = GraspnessHead.create(7, rng)
    a, b = rng.normal(size=(2, 7))
    (la, ga), (lb, gb), (lm, gm) = (head.predict(v) for v in (a, b, 0.3 * a + 0.7 * b))
    assert gm == pytest.approx(0.3 * ga + 0.7 * gb)
    assert np.allclose(lm, 0.3 * la + 0.7 * lb)


def test_zero_last_denoiser_outputs_zero():
    d = Denoiser.create(16, hidden=(32,), rng=2)
    x = np.random.default_rng(3).normal(size=(5, 12))
    assert np.array_equal(d.predict(x, np.ones((5, 16)), 0.3), np.zeros((5, 12)))
    assert d.feature_dim == 16


@pytest.mark.parametrize("dof", [16, 1])
def test_joint_head_shape(dof):
    head = JointHead.create(8, dof, hidden=16, rng=0)
    out = head.predict(np.zeros((3, 8)), np.zeros((3, 3)), np.tile(np.eye(3), (3, 1, 1)))
    assert out.shape == (3, dof) and head.dof == dof


# ---------------------------------------------------------------- losses

def test_smooth_l1_values_and_c1():
    l, g = smooth_l1(np.array([0.5, -3.0]), np.zeros(2))
    assert l == pytest.approx((0.125 + 2.5) / 2)
    assert np.allclose(g, [0.25, -0.5])
    below, gb = smooth_l1(np.array([1.0 - 1e-9]), np.zeros(1))
    above, ga = smooth_l1(np.array([1.0 + 1e-9]), np.zeros(1))
    assert above - below == pytest.approx(2e-9, rel=1e-3)
    assert ga[0] - gb[0] == pytest.approx(0.0, abs=1e-8)


def test_cross_entropy_and_mse():
    l, g = cross_entropy(np.array([[0.0, 0.0], [10.0, -10.0]]), np.array([1, 0]))
    assert l == pytest.approx((math.log(2) + math.log1p(math.exp(-20))) / 2)
    assert np.allclose(g.sum(axis=1), 0.0)
    l, g = mse(np.array([1.0, 3.0]), np.array([0.0, 0.0]))
    assert l == 5.0 and np.allclose(g, [1.0, 3.0])
    assert smooth_l1(np.zeros(0), np.zeros(0))[0] == 0.0


# ---------------------------------------------------------------- training data

def _toy_scene(rng, n=200, f=64, grasps=20, objects=(0, 1)):
    pts = rng.normal(size=(n, 3)) * 0.05 + [0, 0, 0.5]
    feats = rng.normal(size=(n, f))
    mask = rng.random(n) < 0.6
    scores = np.where(mask, feats[:, :4] @ np.array([0.5, -0.2, 0.1, 0.3]) - 2.0, np.nan)
    obj_idx = np.flatnonzero(mask)
    gs = []
    for k in range(grasps):
        gs.append(SceneGrasp(int(obj_idx[k % len(obj_idx)]), objects[k % len(objects)],
                             rng.normal(size=3) * 0.05, random_rotation(rng), rng.normal(size=16)))
    return TrainingScene(pts, feats, mask, scores, gs)


def test_rebalanced_sample_is_even():
    rng = np.random.default_rng(4)
    groups = {0: list(range(90)), 7: [90, 91, 92, 93, 94, 95, 96, 97, 98, 99]}
    n = 20000
    picks = np.array(rebalanced_sample(groups, n, rng))
    share = np.mean(picks >= 90)
    assert abs(share - 0.5) < 3 * math.sqrt(0.25 / n)
    with pytest.raises(ValueError):
        rebalanced_sample({0: []}, 3, rng)


def test_augment_full_turn_is_identity():
    scene = _toy_scene(np.random.default_rng(5))
    for angle in (0.0, 2 * math.pi):
        aug = augment_rotation(scene, angle)
        assert np.allclose(aug.points, scene.points, atol=1e-12)
        assert np.allclose(aug.features, scene.features, atol=1e-12)
        for a, b in zip(aug.grasps, scene.grasps):
            assert np.allclose(a.translation, b.translation, atol=1e-12)
            assert np.allclose(a.rotation, b.rotation, atol=1e-12)


def test_augment_composes():
    scene = _toy_scene(np.random.default_rng(6))
    twice = augment_rotation(augment_rotation(scene, 0.4), 0.9)
    once = augment_rotation(scene, 1.3)
    assert np.allclose(twice.points, once.points) and np.allclose(twice.features, once.features)


def test_batch_matches_augmented_scene():
    # the fast path in draw_batch rolls only the drawn rows
    scene = _toy_scene(np.random.default_rng(7))
    cfg = TrainingConfig(scenes_per_batch=1, grasps_per_scene=5, points_per_scene=50)
    sched = DiffusionSchedule()
    batch = draw_batch([scene], cfg, sched, np.random.default_rng(8))
    rng = np.random.default_rng(8)
    rng.integers(0, 1)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    pick = rng.choice(len(scene.points), size=50, replace=False)
    chosen = rebalanced_sample(scene.groups(), 5, rng)
    aug = augment_rotation(scene, angle)
    assert np.allclose(batch.point_features, aug.features[pick])
    assert np.allclose(batch.translation, [aug.grasps[k].translation for k in chosen])
    assert np.allclose(batch.rotation, [aug.grasps[k].rotation for k in chosen])
    assert np.allclose(batch.seed_features, aug.features[[aug.grasps[k].seed_index for k in chosen]])


def test_cosine_lr():
    assert cosine_lr(0, 100, 1e-3) == pytest.approx(1e-3)
    assert cosine_lr(99, 100, 1e-3) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(33, 67, 1e-3) == pytest.approx(0.5e-3)
    assert cosine_lr(0, 1, 2e-3) == 2e-3


def test_total_loss_is_weighted_sum():
    rng = np.random.default_rng(9)
    scene = _toy_scene(rng)
    cfg = TrainingConfig(scenes_per_batch=2, grasps_per_scene=4, points_per_scene=32,
                         lambda_o=0.7, lambda_g=1.3, lambda_d=10.0, lambda_theta=0.4)
    model = GraspModel.create(64, 16, rng=1, denoiser_hidden=(16,), joint_hidden=8)
    batch = draw_batch([scene], cfg, DiffusionSchedule(), rng)
    total, parts, grads = loss_and_grads(model, batch, cfg)
    assert total == pytest.approx(np.dot([0.7, 1.3, 10.0, 0.4], parts))
    assert len(grads) == len(model.parameters())


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    scene = _toy_scene(rng)
    cfg = TrainingConfig(scenes_per_batch=1, grasps_per_scene=3, points_per_scene=16)
    model = GraspModel.create(64, 16, rng=2, denoiser_hidden=(8,), joint_hidden=8)
    # give the zero-initialized last denoiser layer some weight so its input gradients show up
    model.denoiser.net.weights[-1][:] = rng.normal(size=model.denoiser.net.weights[-1].shape) * 0.1
    batch = draw_batch([scene], cfg, DiffusionSchedule(), rng)
    _, _, grads = loss_and_grads(model, batch, cfg)
    h = 1e-6
    for p, g in list(zip(model.parameters(), grads))[::3]:
        idx = tuple(rng.integers(0, s) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        up = loss_and_grads(model, batch, cfg)[0]
        p[idx] = old - h
        down = loss_and_grads(model, batch, cfg)[0]
        p[idx] = old
        fd = (up - down) / (2 * h)
        assert abs(fd - g[idx]) <= 1e-4 * max(1.0, abs(fd))


# ---------------------------------------------------------------- training loop

def _small_model(seed=0):
    return GraspModel.create(64, 16, rng=seed, denoiser_hidden=(16,), joint_hidden=8)


def test_training_is_deterministic(tmp_path):
    scenes = [_toy_scene(np.random.default_rng(11))]
    cfg = TrainingConfig(scenes_per_batch=2, grasps_per_scene=4, points_per_scene=32, iterations=20, seed=5)
    a = train_loop(scenes, cfg, 16, model=_small_model(), log_every=0)
    b = train_loop(scenes, cfg, 16, model=_small_model(), log_every=0)
    assert np.array_equal(a.history, b.history)
    a.model.save(tmp_path / "a.ckpt", {"seed": 5})
    b.model.save(tmp_path / "b.ckpt", {"seed": 5})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    write_loss_csv(a.history, tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,L_o,L_g,L_d,L_theta,total,lr" and len(lines) == 21


def test_graspness_head_overfits():
    scenes = [_toy_scene(np.random.default_rng(12 + k)) for k in range(2)]
    cfg = TrainingConfig(scenes_per_batch=2, grasps_per_scene=2, points_per_scene=128, iterations=2000,
                         learning_rate=1e-2, lambda_d=0.0, lambda_theta=0.0, augment=False, seed=1)
    res = train_loop(scenes, cfg, 16, model=_small_model(), log_every=0)
    assert res.history[-50:, 2].mean() < 0.05
    assert res.history[-50:, 1].mean() < res.history[0, 1]


def test_training_rejects_feature_width():
    scene = _toy_scene(np.random.default_rng(13), f=32)
    with pytest.raises(ValueError):
        train_loop([scene], TrainingConfig(iterations=1), 16, model=_small_model())
    with pytest.raises(ValueError):
        TrainingConfig(lambda_d=-1.0)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    model = _small_model(3)
    path = tmp_path / "m.ckpt"
    model.save(path, {"profile": "desk"})
    back, meta = GraspModel.load(path)
    assert meta["profile"] == "desk" and meta["k_trans"] == 25.0
    for p, q in zip(model.parameters(), back.parameters()):
        assert np.array_equal(p, q)


def test_checkpoint_rejections(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"denoiser": Mlp.create((3, 2), "identity", rng=0)})
    raw = path.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "version").write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "version")
    (tmp_path / "tail").write_bytes(raw + b"\0" * 8)
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(tmp_path / "tail")
    with pytest.raises(ValueError, match="lacks"):
        GraspModel.load(path)


# ---------------------------------------------------------------- descriptors

def _tilted_plane(n=400, seed=0):
    rng = np.random.default_rng(seed)
    uv = rng.uniform(-0.05, 0.05, size=(n, 2))
    pts = np.column_stack([uv, 0.3 * uv[:, 0] + 0.1 * uv[:, 1] + 0.5])
    normal = np.array([0.3, 0.1, -1.0])
    return pts, normal / np.linalg.norm(normal)


def test_descriptor_plane():
    pts, normal = _tilted_plane()
    f = descriptors(pts, indices=[0, 1, 2])
    assert np.allclose(f[:, 0], 0.0, atol=1e-12)
    for s in range(3):
        assert np.allclose(f[:, 9 + 3 * s:12 + 3 * s], normal, atol=1e-9)
    assert np.all(f[:, 63] == 0.0)


def test_descriptor_sphere_cap_normals_point_outward_to_camera():
    rng = np.random.default_rng(1)
    d = rng.normal(size=(3000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    cap = d[d[:, 2] < -0.6]
    pts = 0.05 * cap + [0, 0, 0.5]
    f = descriptors(pts, indices=[0])
    assert np.dot(f[0, 15:18], cap[0]) > 0.97
    assert f[0, 59 + 2] > 0.0


@given(seeds)
def test_descriptor_translation_invariant(seed):
    rng = np.random.default_rng(seed)
    pts, _ = _tilted_plane(200, seed)
    pts = pts + rng.normal(size=pts.shape) * 0.002
    shift = rng.normal(size=3)
    assert np.allclose(descriptors(pts + shift, indices=range(10)), descriptors(pts, indices=range(10)),
                       atol=1e-7)


@given(seeds, st.floats(0.0, 2 * math.pi))
def test_descriptor_roll_equivariant(seed, angle):
    pts, _ = _tilted_plane(200, seed)
    pts = pts + np.random.default_rng(seed).normal(size=pts.shape) * 0.002
    rolled = descriptors(pts @ roll_matrix(angle).T, indices=range(10))
    assert np.allclose(rolled, rotate_descriptor(descriptors(pts, indices=range(10)), angle), atol=1e-7)


def test_descriptor_sparse_flag_and_width():
    pts = np.array([[0.0, 0.0, 0.5], [0.2, 0.0, 0.5], [0.0, 0.3, 0.5]])
    f = descriptors(pts, width=80)
    assert f.shape == (3, 80)
    assert np.all(f[:, 63] == 1.0) and np.all(f[:, 64:] == 0.0)
    with pytest.raises(ValueError):
        descriptors(pts, width=32)
