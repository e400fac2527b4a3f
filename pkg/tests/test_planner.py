from __future__ import annotations

import io
import json
import math
import warnings

import numpy as np
import pytest

from clothalign import actionmaps as A
from clothalign.errors import WrongCategory
from clothalign.garments import make_garment, make_pants
from clothalign.geometry import PlanarTransform, apply_transform
from clothalign.planner import (
    GoalContext,
    IroningBoard,
    PolicyConfig,
    clamp_to_reach,
    fold_shirt,
    folded_goal,
    greedy_step,
    ironing_schedule,
    ironing_score,
    run_episode,
    sample_candidates,
    sleeve_targets,
)
from clothalign.simulator import ClothModel, rest_state
from clothalign.tasks import Task, generate_hard, task_seed


@pytest.fixture(scope="module")
def mesh():
    return make_garment("shirt", {"pitch": 0.05})


@pytest.fixture(scope="module")
def hard_task(mesh):
    t = generate_hard(mesh, task_seed(9, 0))
    t.task_id = "hard-0"
    return t


def _bbox_area(pts):
    ext = pts[:, :2].max(axis=0) - pts[:, :2].min(axis=0)
    return float(ext[0] * ext[1])


def test_policy_config_validation():
    with pytest.raises(ValueError):
        PolicyConfig(objective="other")
    with pytest.raises(ValueError):
        PolicyConfig(alpha=1.0)
    with pytest.raises(ValueError):
        PolicyConfig(candidates_per_step=0)
    with pytest.raises(ValueError):
        PolicyConfig(allowed_primitives=("twist",))
    with pytest.raises(ValueError):
        PolicyConfig(allowed_primitives=())


def test_greedy_near_no_op_at_the_goal(mesh):
    goal = PlanarTransform(0.1, -0.05, math.pi / 8)
    task = Task(mesh, apply_transform(goal, mesh.vertices), goal, "easy", 3, task_id="done")
    ctx = GoalContext(task)
    cfg = PolicyConfig(candidates_per_step=16)
    _, _, delta = greedy_step(task.initial_state(), ctx, cfg, np.random.default_rng(0))
    assert delta <= 0.02


def test_single_candidate_is_the_random_policy(hard_task):
    cfg = PolicyConfig(candidates_per_step=1, max_steps=2)
    a = run_episode(hard_task, cfg, "greedy", seed=4)
    b = run_episode(hard_task, PolicyConfig(candidates_per_step=50, max_steps=2), "random", seed=4)
    assert np.array_equal(a.final_positions, b.final_positions)
    assert [r["pixel"] for r in a.records] == [r["pixel"] for r in b.records]


def test_sampling_respects_the_primitive_set(hard_task):
    stack = A.build_stack(hard_task.initial_state())
    rng = np.random.default_rng(0)
    for prims in (("fling",), ("pick_place",)):
        cands = sample_candidates(stack, prims, 64, rng)
        assert len(cands) == 64 == len(set(cands))
        assert {c[0] for c in cands} == set(prims)
        valid = A.validity_mask(stack, prims[0])
        assert all(valid[k, y, x] for _, k, y, x in cands)


def test_episode_log_matches_recomputed_metrics(hard_task):
    cfg = PolicyConfig(candidates_per_step=4, max_steps=2, allowed_primitives=("pick_place",))
    buf = io.StringIO()
    res = run_episode(hard_task, cfg, seed=1, log_file=buf)
    assert res.primitive_counts["fling"] == 0 and res.steps == 2
    lines = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert [r["step"] for r in lines] == [0, 1]
    ctx = GoalContext(hard_task)
    assert ctx.metrics(res.final_positions) == res.final
    assert lines[-1]["after"] == res.final
    again = run_episode(hard_task, cfg, seed=1)
    assert np.array_equal(again.final_positions, res.final_positions)


def test_oracle_policy(hard_task):
    res = run_episode(hard_task, PolicyConfig(), "oracle")
    assert res.final["iou"] == 1.0
    assert all(res.final[k] == 0.0 for k in ("r_unf", "r_c", "r_a", "r_ca"))


def test_quarter_points_and_clamp():
    kp = {"left_waist": (-0.2, 0.0), "right_waist": (0.2, 0.0),
          "left_shoulder": (-0.2, 0.5), "right_shoulder": (0.2, 0.5)}
    left, right = sleeve_targets(kp, 10.0)
    assert np.allclose(left, [-0.1, 0.0]) and np.allclose(right, [0.1, 0.0])
    out = clamp_to_reach((0.0, 1.0), (0.0, 0.0), 0.25)
    assert np.allclose(out, [0.0, 0.25])
    out = clamp_to_reach((3.0, 4.0), (0.0, 0.0), 2.5)
    assert np.allclose(out, [1.5, 2.0])
    assert np.allclose(clamp_to_reach((0.1, 0.1), (0.0, 0.0), 1.0), [0.1, 0.1])
    left, right = sleeve_targets(kp, 0.2)
    for p, s in ((left, kp["left_shoulder"]), (right, kp["right_shoulder"])):
        assert math.isclose(np.linalg.norm(p - np.array(s)), 0.2, rel_tol=1e-12)


def test_folded_goal_geometry():
    mesh = make_garment("shirt")
    folded = folded_goal(mesh)
    assert _bbox_area(folded) < 0.5 * _bbox_area(mesh.vertices)
    a = np.round(folded[:, :2] * 1e9).astype(np.int64)
    b = np.round(folded[:, :2] * [-1, 1] * 1e9).astype(np.int64)
    assert sorted(map(tuple, a)) == sorted(map(tuple, b))
    assert np.all(folded[:, 2] == 0.0)
    with pytest.raises(WrongCategory):
        folded_goal(make_pants())


def test_fold_shirt_from_flat_and_crumpled(mesh, hard_task):
    flat = rest_state(hard_task.model())
    goal = folded_goal(mesh)
    out = fold_shirt(flat, mesh)
    assert np.all(out.positions[:, 2] >= -1e-6)
    err = np.mean(np.linalg.norm(out.positions[:, :2] - goal[:, :2], axis=1))
    assert err < np.mean(np.linalg.norm(mesh.vertices[:, :2] - goal[:, :2], axis=1))
    with pytest.warns(UserWarning):
        fold_shirt(hard_task.initial_state(), mesh)
    with pytest.raises(WrongCategory):
        fold_shirt(flat, make_pants())


def test_ironing_schedule_and_scores(mesh):
    for theta in (0.0, math.pi):  # board-aligned goals
        goal = PlanarTransform(0.2, 0.1, theta)
        a, b = ironing_schedule(goal, mesh)
        assert a.theta == b.theta == theta
        assert abs(a.ty - b.ty) < 1e-15 and abs(a.tx - b.tx) > 0.1
        canon = ironing_score(apply_transform(goal, mesh.vertices), mesh, [a, b])
        assert canon >= 0.95
    assert not IroningBoard().contains((0.31, 0.0))
    worse = 0
    for i in range(20):
        t = generate_hard(mesh, task_seed(21, i))
        sched = ironing_schedule(t.goal_transform, mesh)
        flat = ironing_score(t.goal_positions(), mesh, sched)
        if ironing_score(t.initial_positions, mesh, sched) < flat:
            worse += 1
    assert worse == 20


def test_fold_warning_not_emitted_for_flat_cloth(mesh):
    flat = rest_state(ClothModel(mesh))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fold_shirt(flat, mesh)
