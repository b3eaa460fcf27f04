"""Point cloud attacks: projection geometry, budgets, and loss behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advsim.attacks.perception import (
    AttachParams,
    AttackParameterError,
    DetachParams,
    PerturbParams,
    attach_attack,
    clip_to_ball,
    detach_attack,
    perturb_attack,
)
from advsim.detector import DetectorModel, detection_loss, saliency
from advsim.scene import BBox3D

from conftest import box_cloud

MODEL = DetectorModel(
    cell_m=0.5,
    sigma_m=0.35,
    x_range=(0.0, 30.0),
    y_range=(-15.0, 15.0),
    weight=1.0,
    bias=-6.5,
    score_threshold=0.5,
    cutoff_sigmas=4.0,
)


def scene():
    """A dense box face plus scattered clutter, with its ground-truth box."""
    rng = np.random.default_rng(8)
    face = box_cloud((12.0, 1.0, -1.4), (4.5, 1.8, 2.2), step=0.18)
    clutter = rng.uniform([2.0, -14.0, -2.4], [28.0, 14.0, -2.0], size=(500, 3))
    cloud = np.vstack([face, clutter])
    gt = [BBox3D(np.array([12.0, 1.0, -1.4]), (4.5, 1.8, 2.2), 0.0)]
    return cloud, gt


def test_clip_345_triangle():
    out = clip_to_ball(np.array([[3.0, 4.0, 0.0]]), 2.5)
    np.testing.assert_array_equal(out, [[1.5, 2.0, 0.0]])


def test_clip_leaves_interior_untouched():
    d = np.array([[0.1, -0.2, 0.05], [0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(clip_to_ball(d, 0.5), d)


def test_clip_preserves_direction():
    rng = np.random.default_rng(3)
    d = rng.normal(size=(200, 3)) * 3.0
    out = clip_to_ball(d, 0.25)
    norms = np.linalg.norm(out, axis=1)
    assert (norms <= 0.25 + 1e-12).all()
    big = np.linalg.norm(d, axis=1) > 0.25
    cross = np.linalg.norm(np.cross(d[big], out[big]), axis=1)
    np.testing.assert_allclose(cross, 0.0, atol=1e-9)


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 5.0))
def test_clip_never_exceeds_radius(seed, eps):
    d = np.random.default_rng(seed).normal(size=(20, 3)) * 4.0
    out = clip_to_ball(d, eps)
    assert (np.linalg.norm(out, axis=1) <= eps * (1 + 1e-12)).all()


# ---------------------------------------------------------------- perturb

def test_perturb_zero_epsilon_is_identity():
    cloud, gt = scene()
    res = perturb_attack(MODEL, cloud, gt, PerturbParams(epsilon_m=0.0))
    np.testing.assert_array_equal(res.cloud, cloud)
    np.testing.assert_array_equal(res.deltas, 0.0)


def test_perturb_respects_epsilon_ball():
    cloud, gt = scene()
    eps = 0.07
    res = perturb_attack(
        MODEL, cloud, gt, PerturbParams(epsilon_m=eps, steps=15, seed=4)
    )
    disp = np.linalg.norm(res.cloud - cloud, axis=1)
    assert (disp <= eps + 1e-9).all()
    np.testing.assert_array_equal(res.cloud, cloud + res.deltas)
    assert res.indices.shape == (cloud.shape[0],)


def test_perturb_raises_detection_loss():
    cloud, gt = scene()
    params = PerturbParams(epsilon_m=0.1, steps=25, lam=1e-4, per_point_norm=True, seed=4)
    res = perturb_attack(MODEL, cloud, gt, params)
    assert detection_loss(MODEL, res.cloud, gt) > detection_loss(MODEL, cloud, gt)


def test_perturb_deterministic_per_seed():
    cloud, gt = scene()
    p = PerturbParams(epsilon_m=0.05, steps=10, seed=11)
    a = perturb_attack(MODEL, cloud, gt, p)
    b = perturb_attack(MODEL, cloud, gt, p)
    np.testing.assert_array_equal(a.cloud, b.cloud)
    c = perturb_attack(MODEL, cloud, gt, PerturbParams(epsilon_m=0.05, steps=10, seed=12))
    assert not np.array_equal(a.cloud, c.cloud)


def test_perturb_trace_records_steps():
    cloud, gt = scene()
    res = perturb_attack(MODEL, cloud, gt, PerturbParams(epsilon_m=0.05, steps=7, seed=0))
    assert len(res.trace) == 7
    assert {"step", "loss", "det_loss"} <= set(res.trace[0])


def test_perturb_param_validation():
    with pytest.raises(AttackParameterError):
        PerturbParams(epsilon_m=-0.1)
    with pytest.raises(AttackParameterError):
        PerturbParams(epsilon_m=0.1, steps=-1)
    with pytest.raises(AttackParameterError):
        PerturbParams(epsilon_m=0.1, alpha_m=0.0)
    with pytest.raises(AttackParameterError):
        PerturbParams(epsilon_m=0.1, lam=-1.0)
    assert PerturbParams(epsilon_m=0.3).alpha == pytest.approx(0.01)


# ----------------------------------------------------------------- detach

def test_detach_removes_exact_count():
    cloud, gt = scene()
    n = cloud.shape[0]
    for ratio in (0.002, 0.01, 0.037):
        res = detach_attack(MODEL, cloud, gt, DetachParams(drop_ratio=ratio))
        expect = int(np.floor(n * ratio))
        assert res.cloud.shape[0] == n - expect
        assert res.indices.shape == (expect,)


def test_detach_result_is_subset():
    cloud, gt = scene()
    res = detach_attack(MODEL, cloud, gt, DetachParams(drop_ratio=0.02))
    keep = np.ones(cloud.shape[0], dtype=bool)
    keep[res.indices] = False
    np.testing.assert_array_equal(res.cloud, cloud[keep])


def test_detach_takes_highest_saliency_first():
    cloud, gt = scene()
    # with one iteration the removal is exactly the top-m saliency ranking
    res = detach_attack(MODEL, cloud, gt, DetachParams(drop_ratio=0.01, iterations=1))
    s = saliency(MODEL, cloud, gt)
    m = res.indices.shape[0]
    order = np.lexsort((np.arange(cloud.shape[0]), -s))
    np.testing.assert_array_equal(np.sort(res.indices), np.sort(order[:m]))


def test_detach_raises_detection_loss():
    cloud, gt = scene()
    res = detach_attack(MODEL, cloud, gt, DetachParams(drop_ratio=0.02))
    assert detection_loss(MODEL, res.cloud, gt) > detection_loss(MODEL, cloud, gt)


def test_detach_targeted_scene_removal_concentrates_in_gt():
    cloud, gt = scene()
    res = detach_attack(MODEL, cloud, gt, DetachParams(drop_ratio=0.01))
    removed = cloud[res.indices]
    box = gt[0]
    inside = (
        (np.abs(removed[:, 0] - box.center[0]) <= box.dims[0] / 2 + MODEL.sigma_m)
        & (np.abs(removed[:, 1] - box.center[1]) <= box.dims[1] / 2 + MODEL.sigma_m)
    )
    assert inside.mean() >= 0.8


def test_detach_zero_removal_rejected():
    cloud, gt = scene()
    with pytest.raises(AttackParameterError):
        detach_attack(MODEL, cloud, gt, DetachParams(drop_ratio=1e-6))


def test_detach_param_validation():
    for bad in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(AttackParameterError):
            DetachParams(drop_ratio=bad)
    with pytest.raises(AttackParameterError):
        DetachParams(drop_ratio=0.1, iterations=0)


# ----------------------------------------------------------------- attach

def test_attach_appends_exactly_k():
    cloud, gt = scene()
    n = cloud.shape[0]
    res = attach_attack(MODEL, cloud, gt, AttachParams(epsilon_m=0.3, k=50, steps=8))
    assert res.cloud.shape[0] == n + 50
    np.testing.assert_array_equal(res.indices, np.arange(n, n + 50))


def test_attach_originals_untouched():
    cloud, gt = scene()
    res = attach_attack(MODEL, cloud, gt, AttachParams(epsilon_m=0.5, k=40, steps=8))
    np.testing.assert_array_equal(res.cloud[: cloud.shape[0]], cloud)


def test_attach_copies_stay_within_epsilon_of_seeds():
    cloud, gt = scene()
    eps = 0.25
    res = attach_attack(MODEL, cloud, gt, AttachParams(epsilon_m=eps, k=60, steps=12))
    assert (np.linalg.norm(res.deltas, axis=1) <= eps + 1e-9).all()


def test_attach_seeds_are_top_k_salient():
    cloud, gt = scene()
    k = 30
    res = attach_attack(MODEL, cloud, gt, AttachParams(epsilon_m=0.0, k=k, steps=0))
    s = saliency(MODEL, cloud, gt)
    order = np.lexsort((np.arange(cloud.shape[0]), -s))
    np.testing.assert_array_equal(res.cloud[cloud.shape[0]:], cloud[order[:k]])


def test_attach_raises_detection_loss():
    cloud, gt = scene()
    params = AttachParams(
        epsilon_m=0.3, k=120, steps=15, alpha_m=0.01, lambda_chamfer=5.0,
        per_point_norm=True,
    )
    res = attach_attack(MODEL, cloud, gt, params)
    assert detection_loss(MODEL, res.cloud, gt) > detection_loss(MODEL, cloud, gt)


def test_attach_k_larger_than_cloud_rejected():
    cloud, gt = scene()
    with pytest.raises(AttackParameterError):
        attach_attack(MODEL, cloud[:10], gt, AttachParams(epsilon_m=0.1, k=11))


def test_attach_param_validation():
    with pytest.raises(AttackParameterError):
        AttachParams(epsilon_m=-1.0)
    with pytest.raises(AttackParameterError):
        AttachParams(epsilon_m=0.1, k=0)
    with pytest.raises(AttackParameterError):
        AttachParams(epsilon_m=0.1, lambda_chamfer=-0.5)


def test_attack_params_defaults_match_documented_values():
    p = PerturbParams(epsilon_m=0.1)
    assert (p.steps, p.lam, p.per_point_norm) == (40, 0.1, False)
    a = AttachParams(epsilon_m=0.1)
    assert (a.k, a.steps, a.lambda_chamfer) == (300, 40, 1.0)
    d = DetachParams(drop_ratio=0.01)
    assert d.iterations == 10
