from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clothalign.errors import DegenerateSubset, DimensionMismatch
from clothalign.geometry import (
    PlanarTransform,
    TrimmedPlanarAligner,
    apply_transform,
    fit_rigid_planar,
    mirror_in_frame,
    trimmed_align,
    trimmed_cost,
    wrap_angle,
)

angles = st.floats(-math.pi, math.pi, allow_nan=False)
offsets = st.floats(-2.0, 2.0, allow_nan=False)
transforms = st.builds(PlanarTransform, offsets, offsets, angles, st.booleans())


def _circle(n=20):
    a = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([np.cos(a), np.sin(a), np.zeros(n)])


def _brute_rotation(src, dst, step=1e-4):
    """Grid over theta with the closed-form translation for each angle."""
    th = np.arange(-np.pi, np.pi, step)
    c, s = np.cos(th), np.sin(th)
    ca, cb = src[:, :2].mean(0), dst[:, :2].mean(0)
    a = src[:, :2] - ca
    b = dst[:, :2] - cb
    rx = c[:, None] * a[None, :, 0] - s[:, None] * a[None, :, 1]
    ry = s[:, None] * a[None, :, 0] + c[:, None] * a[None, :, 1]
    cost = ((rx - b[None, :, 0]) ** 2 + (ry - b[None, :, 1]) ** 2).sum(1)
    return th[np.argmin(cost)]


# -- PlanarTransform -------------------------------------------------------------


@given(transforms)
def test_compose_with_inverse_is_identity(t):
    for e in (t @ t.inverse(), t.inverse() @ t):
        assert abs(e.tx) < 1e-9 and abs(e.ty) < 1e-9
        assert abs(wrap_angle(e.theta)) < 1e-9
        assert not e.mirrored


@given(transforms)
def test_linear_part_orthonormal(t):
    L = t.linear
    assert np.allclose(L @ L.T, np.eye(2), atol=1e-12)
    assert math.isclose(np.linalg.det(L), -1.0 if t.mirrored else 1.0, abs_tol=1e-12)


@given(transforms, transforms)
def test_compose_matches_sequential_application(a, b):
    pts = np.random.default_rng(0).normal(size=(7, 3))
    assert np.allclose(apply_transform(a @ b, pts), apply_transform(a, apply_transform(b, pts)),
                       atol=1e-9)


@given(transforms)
def test_apply_preserves_pairwise_distances(t):
    pts = np.random.default_rng(1).normal(size=(12, 3))
    out = apply_transform(t, pts)
    d0 = np.linalg.norm(pts[:, None, :2] - pts[None, :, :2], axis=-1)
    d1 = np.linalg.norm(out[:, None, :2] - out[None, :, :2], axis=-1)
    assert np.allclose(d0, d1, atol=1e-12)
    assert np.array_equal(out[:, 2], pts[:, 2])


def test_theta_wrapped_into_half_open_interval():
    assert PlanarTransform(theta=-math.pi).theta == math.pi
    assert math.isclose(PlanarTransform(theta=3 * math.pi / 2).theta, -math.pi / 2)


def test_apply_examples():
    p = np.array([[0.0, 0.0, 0.1]])
    assert np.array_equal(apply_transform(PlanarTransform.identity(), p), p)
    assert np.allclose(apply_transform(PlanarTransform(1, 2, 0), p), [[1, 2, 0.1]])
    out = apply_transform(PlanarTransform(0, 0, math.pi), np.array([[1.0, 0.0, 0.0]]))
    assert np.allclose(out, [[-1, 0, 0]], atol=1e-12)


def test_dict_round_trip():
    t = PlanarTransform(0.1, -0.2, 0.3, True)
    assert PlanarTransform.from_dict(t.to_dict()) == t


# -- fit_rigid_planar -------------------------------------------------------------


def test_fit_identity_and_quarter_turn():
    src = np.array([[1.0, 0, 0], [0, 1, 0], [-1, 0, 0]])
    t = fit_rigid_planar(src, src)
    assert abs(t.tx) < 1e-12 and abs(t.ty) < 1e-12 and abs(t.theta) < 1e-12
    dst = np.array([[0.0, 1, 0], [-1, 0, 0], [0, -1, 0]])
    t = fit_rigid_planar(src, dst)
    assert math.isclose(t.theta, math.pi / 2, abs_tol=1e-12)
    assert abs(t.tx) < 1e-12 and abs(t.ty) < 1e-12
    assert not t.mirrored


def test_fit_subset_ignores_displaced_point():
    src = _circle()
    truth = PlanarTransform(0.15, -0.05, 0.3)
    dst = apply_transform(truth, src)
    dst[0, :2] += 5.0
    t = fit_rigid_planar(src, dst, subset=np.arange(1, 20))
    assert abs(t.tx - 0.15) < 1e-9 and abs(t.ty + 0.05) < 1e-9 and abs(t.theta - 0.3) < 1e-9
    # independent grid search agrees to its resolution
    assert abs(_brute_rotation(src[1:], dst[1:]) - 0.3) <= 1e-4


def test_fit_degenerate_cases():
    src = _circle(5)
    with pytest.raises(DegenerateSubset):
        fit_rigid_planar(src, src, subset=[0])
    pts = np.zeros((4, 3))
    dst = pts + np.array([0.3, -0.1, 0.0])
    t = fit_rigid_planar(pts, dst)
    assert t.theta == 0.0 and math.isclose(t.tx, 0.3) and math.isclose(t.ty, -0.1)
    with pytest.raises(DimensionMismatch):
        fit_rigid_planar(src, src[:4])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fit_exact_on_noise_free_data(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    src = rng.normal(size=(n, 3))
    truth = PlanarTransform(*rng.uniform(-1, 1, 2), rng.uniform(-np.pi, np.pi))
    dst = apply_transform(truth, src)
    t = fit_rigid_planar(src, dst)
    resid = np.linalg.norm(apply_transform(t, src)[:, :2] - dst[:, :2], axis=1).sum()
    assert resid <= 1e-9 * n


def test_fit_is_optimal_against_random_perturbations():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(3, 15))
        src = rng.normal(size=(n, 2))
        dst = rng.normal(size=(n, 2))
        sub = np.sort(rng.choice(n, size=int(rng.integers(2, n + 1)), replace=False))
        t = fit_rigid_planar(src, dst, sub)
        base = np.sum((apply_transform(t, src)[sub, :2] - dst[sub]) ** 2)
        pert = rng.normal(scale=[0.05, 0.05, 0.05], size=(10, 3))
        for dx, dy, dth in pert:
            q = PlanarTransform(t.tx + dx, t.ty + dy, t.theta + dth)
            assert np.sum((apply_transform(q, src)[sub, :2] - dst[sub]) ** 2) >= base - 1e-12
    # the full 10,000-perturbation sweep on a fixed instance
    src, dst = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
    t = fit_rigid_planar(src, dst)
    base = np.sum((apply_transform(t, src)[:, :2] - dst) ** 2)
    pert = rng.normal(scale=0.1, size=(10000, 3))
    th = t.theta + pert[:, 2]
    c, s = np.cos(th), np.sin(th)
    x = c[:, None] * src[None, :, 0] - s[:, None] * src[None, :, 1] + (t.tx + pert[:, 0])[:, None]
    y = s[:, None] * src[None, :, 0] + c[:, None] * src[None, :, 1] + (t.ty + pert[:, 1])[:, None]
    costs = ((x - dst[None, :, 0]) ** 2 + (y - dst[None, :, 1]) ** 2).sum(1)
    assert costs.min() >= base - 1e-12


# -- trimmed_align -------------------------------------------------------------------


def test_trimmed_identity_and_translation():
    g = _circle(12)
    res = trimmed_align(g, g)
    assert res.iterations == 1
    assert len(res.inlier_indices) == 12
    assert res.transform.magnitude() < 1e-12
    v = g + np.array([0.2, 0.0, 0.0])
    res = trimmed_align(v, g, tau=0.3, scale=1.0)
    assert math.isclose(res.transform.tx, 0.2, abs_tol=1e-12)
    assert abs(res.transform.ty) < 1e-12 and abs(res.transform.theta) < 1e-12
    assert np.allclose(res.aligned_goal[:, :2], v[:, :2], atol=1e-12)


def test_trimmed_rejects_folded_vertices():
    rng = np.random.default_rng(0)
    g = np.column_stack([rng.uniform(-0.4, 0.4, 60), rng.uniform(-0.25, 0.25, 60), np.zeros(60)])
    scale = math.sqrt(np.ptp(g[:, 0]) * np.ptp(g[:, 1]))
    v = apply_transform(PlanarTransform(theta=0.4), g)
    bad = rng.choice(60, 6, replace=False)
    dirs = rng.normal(size=(6, 2))
    v[bad, :2] += 0.5 * scale * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    res = trimmed_align(v, g, tau=0.3, scale=scale)
    assert abs(res.transform.theta - 0.4) < 0.02
    assert not set(bad.tolist()) & set(res.inlier_indices.tolist())


def test_aligned_goal_matches_transform_exactly():
    rng = np.random.default_rng(5)
    g = rng.normal(size=(30, 3))
    v = apply_transform(PlanarTransform(0.1, 0.2, 1.0), g) + rng.normal(scale=0.05, size=(30, 3))
    res = trimmed_align(v, g, 0.3, 1.0)
    again = apply_transform(res.transform, g[:, :2])
    assert np.max(np.abs(again[:, :2] - res.aligned_goal[:, :2])) <= 1e-12
    assert len(res.inlier_indices) > 0


def test_fallback_when_too_few_inliers():
    g = _circle(10)
    v = g * 10.0
    res = trimmed_align(v, g, tau=0.01, scale=1.0)
    assert res.fell_back
    assert len(res.inlier_indices) == 10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trimmed_idempotent(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(25, 3))
    v = apply_transform(PlanarTransform(*rng.uniform(-1, 1, 3)), g) + rng.normal(scale=0.1, size=(25, 3))
    res = trimmed_align(v, g, 0.3, 1.0)
    again = trimmed_align(v, res.aligned_goal, 0.3, 1.0)
    assert again.transform.magnitude() < 1e-6


def _margin_instance(rng, tau, scale):
    """Noisy rigid pair whose residuals stay well clear of the trimming threshold."""
    n = 30
    g = rng.normal(scale=0.3, size=(n, 3))
    v = apply_transform(PlanarTransform(*rng.uniform(-0.3, 0.3, 3)), g)
    v[:, :2] += rng.uniform(-1, 1, size=(n, 2)) * 0.05 * tau * scale
    out = rng.choice(n, 3, replace=False)
    v[out, :2] += 3 * tau * scale  # far beyond the threshold
    return v, g


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), transforms.filter(lambda t: not t.mirrored))
def test_trimmed_equivariance(seed, T):
    rng = np.random.default_rng(seed)
    v, g = _margin_instance(rng, 0.3, 1.0)
    base = trimmed_align(v, g, 0.3, 1.0).transform
    moved = trimmed_align(apply_transform(T, v), g, 0.3, 1.0).transform
    want = T @ base
    assert abs(moved.tx - want.tx) < 1e-6 and abs(moved.ty - want.ty) < 1e-6
    assert abs(wrap_angle(moved.theta - want.theta)) < 1e-6


def test_trimmed_cost_never_increases_from_identity():
    rng = np.random.default_rng(7)
    for _ in range(100):
        g = rng.normal(size=(20, 3))
        v = apply_transform(PlanarTransform(*rng.uniform(-0.5, 0.5, 3)), g)
        v[:4, :2] += rng.normal(size=(4, 2))
        res = trimmed_align(v, g, 0.3, 1.0)
        assert trimmed_cost(v, g, res.transform, 0.3) <= trimmed_cost(v, g, PlanarTransform(), 0.3) + 1e-12


def test_mirror_in_frame_reflects_local_x():
    frame = PlanarTransform(0.2, -0.1, 0.7)
    local = np.array([[0.3, 0.1, 0.0], [-0.2, 0.4, 0.0]])
    world = apply_transform(frame, local)
    flipped = mirror_in_frame(world, frame)
    back = apply_transform(frame.inverse(), flipped)
    assert np.allclose(back[:, 0], -local[:, 0]) and np.allclose(back[:, 1], local[:, 1])


def test_estimator_api():
    from sklearn.base import clone

    g = _circle(16)
    v = apply_transform(PlanarTransform(0.3, 0.1, 0.5), g)
    est = TrimmedPlanarAligner(tau=0.3).fit(g, v)
    assert np.allclose(est.transform(g), v, atol=1e-9)
    assert np.allclose(est.inverse_transform(v), g, atol=1e-9)
    assert est.score(g, v) > -1e-9
    assert clone(est).get_params() == {"tau": 0.3, "scale": 1.0, "max_iter": 30, "tol": 1e-6}
