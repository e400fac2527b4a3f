"""Policies over the action maps, plus keypoint folding and ironing heuristics.

The greedy planner samples valid actions from the observation stack,
simulates each on a cloned state and executes the one with the largest gain
in the configured objective. Random and single-primitive variants are
configurations of the same loop.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import actionmaps as A
from .errors import NoValidAction, WrongCategory
from .garments import arm_length
from .geometry import PlanarTransform, apply_transform, trimmed_align
from .rewards import (
    DEFAULT_ALPHA,
    DEFAULT_TAU,
    coverage,
    iou,
    normalization_scale,
    reward_factorized,
)
from .simulator import PickPlaceParams, SimState, execute_dual_pick_place, execute_primitive

log = logging.getLogger(__name__)

OBJECTIVES = ("factorized", "unfactorized")
PRIMITIVE_SETS = {"fling": ("fling",), "pp": ("pick_place",), "both": ("fling", "pick_place")}
FOLD_MIN_COVERAGE = 0.6


@dataclass(frozen=True)
class PolicyConfig:
    objective: str = "factorized"
    alpha: float = DEFAULT_ALPHA
    tau: float = DEFAULT_TAU
    candidates_per_step: int = 64
    max_steps: int = 10
    allowed_primitives: tuple = ("fling", "pick_place")

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.candidates_per_step < 1:
            raise ValueError("candidates_per_step must be at least 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        bad = set(self.allowed_primitives) - set(A.PRIMITIVES)
        if bad or not self.allowed_primitives:
            raise ValueError(f"bad primitive set {self.allowed_primitives}")


class GoalContext:
    """Everything needed to score a configuration against one task's goal."""

    def __init__(self, task, alpha=DEFAULT_ALPHA, tau=DEFAULT_TAU):
        self.task = task
        self.alpha = alpha
        self.tau = tau
        self.triangles = task.mesh.triangles
        self.scale = normalization_scale(task.mesh.vertices)
        self.goal = task.goal_positions()
        self.goal_mask = A.render_mask(self.goal, self.triangles)

    def breakdown(self, positions):
        return reward_factorized(positions, self.goal, self.alpha, self.tau, self.scale,
                                 self.task.goal_transform)

    def metrics(self, positions):
        b = self.breakdown(positions)
        mask = A.render_mask(positions, self.triangles)
        return {"r_unf": b.r_unf, "r_c": b.r_c, "r_a": b.r_a, "r_ca": b.r_ca,
                "iou": float(iou(mask, self.goal_mask)),
                "coverage": float(coverage(mask, self.goal_mask))}

    def objective(self, positions, which):
        b = self.breakdown(positions)
        return b.r_ca if which == "factorized" else b.r_unf


def sample_candidates(stack, primitives, n, rng):
    """Up to ``n`` distinct valid ``(primitive, k, y, x)`` tuples, uniform over the union."""
    pools = []
    for name in primitives:
        valid = A.validity_mask(stack, name)
        flat = np.flatnonzero(valid.ravel())
        pools.append((name, flat))
    sizes = np.array([len(f) for _, f in pools], dtype=np.int64)
    total = int(sizes.sum())
    if total == 0:
        raise NoValidAction("no valid action for the allowed primitives")
    picks = rng.choice(total, size=min(n, total), replace=False)
    offsets = np.cumsum(sizes) - sizes
    shape = (len(stack), A.IMAGE_SIZE, A.IMAGE_SIZE)
    out = []
    for flat_id in picks:
        p = int(np.searchsorted(offsets, flat_id, side="right") - 1)
        name, flat = pools[p]
        k, y, x = np.unravel_index(int(flat[flat_id - offsets[p]]), shape)
        out.append((name, int(k), int(y), int(x)))
    return out


def greedy_step(state, ctx, config, rng):
    """Pick the sampled action whose simulated outcome most improves the objective.

    Returns ``(command, next_state, delta)``. With one candidate this is a
    uniformly random valid action.
    """
    stack = A.build_stack(state)
    cands = sample_candidates(stack, config.allowed_primitives, config.candidates_per_step, rng)
    before = ctx.objective(state.positions, config.objective)
    best = None
    for name, k, y, x in cands:
        cmd = A.decode_action(stack[k], (x, y), name)
        after_state = execute_primitive(state, cmd.to_spec())
        delta = ctx.objective(after_state.positions, config.objective) - before
        if best is None or delta > best[2]:
            best = (cmd, after_state, delta)
    return best


@dataclass
class EpisodeResult:
    task_id: str
    final: dict
    steps: int
    primitive_counts: dict
    records: list = field(default_factory=list)
    final_positions: np.ndarray | None = None
    stop_reason: str = "max_steps"


def _policy_config(policy, config):
    if policy == "random":
        return PolicyConfig(config.objective, config.alpha, config.tau, 1, config.max_steps,
                            config.allowed_primitives)
    return config


def run_episode(task, config, policy="greedy", seed=0, log_file=None, params=None):
    """Run one policy on one task for ``config.max_steps`` steps.

    ``policy`` is ``greedy``, ``random`` or ``oracle`` (the latter places the
    vertices exactly on the goal; a sanity baseline). ``log_file`` is an open
    text stream receiving one JSON record per step.
    """
    ctx = GoalContext(task, config.alpha, config.tau)
    state = task.initial_state(params)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(task.seed) & 0x7FFFFFFF]))
    counts = {name: 0 for name in A.PRIMITIVES}
    records = []
    stop = "max_steps"
    cfg = _policy_config(policy, config)
    steps = 0
    if policy == "oracle":
        state = state.clone()
        state.positions[:] = ctx.goal
        stop = "oracle"
    elif policy not in ("greedy", "random"):
        raise ValueError(f"unknown policy {policy!r}")
    else:
        for t in range(cfg.max_steps):
            m_before = ctx.metrics(state.positions)
            try:
                cmd, state, delta = greedy_step(state, ctx, cfg, rng)
            except NoValidAction:
                stop = "no_valid_action"
                break
            steps += 1
            counts[cmd.kind] += 1
            m_after = ctx.metrics(state.positions)
            rec = {"step": t, "primitive": cmd.kind, "grasp_a": cmd.grasp_a.tolist(),
                   "grasp_b": cmd.grasp_b.tolist(), "entry": list(cmd.entry),
                   "pixel": list(cmd.pixel), "delta": delta,
                   "before": m_before, "after": m_after,
                   "iou": m_after["iou"], "coverage": m_after["coverage"]}
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec, sort_keys=True) + "\n")
            log.debug("task %s step %d %s delta=%.4f iou=%.3f", task.task_id, t, cmd.kind,
                      delta, m_after["iou"])
    final = ctx.metrics(state.positions)
    return EpisodeResult(task.task_id, final, steps, counts, records, state.positions.copy(), stop)


# -- folding -------------------------------------------------------------------


def clamp_to_reach(place, anchor, reach):
    """Move ``place`` onto the circle of radius ``reach`` about ``anchor`` if beyond it."""
    place = np.asarray(place, dtype=float)[:2]
    anchor = np.asarray(anchor, dtype=float)[:2]
    d = place - anchor
    n = float(np.linalg.norm(d))
    if n <= reach or n == 0.0:
        return place.copy()
    return anchor + d * (reach / n)


def sleeve_targets(kp, reach):
    """Quarter and three-quarter waist-line points, clamped to ``reach`` of the shoulders."""
    wl = np.asarray(kp["left_waist"], dtype=float)[:2]
    wr = np.asarray(kp["right_waist"], dtype=float)[:2]
    left = wl + 0.25 * (wr - wl)
    right = wl + 0.75 * (wr - wl)
    return (clamp_to_reach(left, kp["left_shoulder"], reach),
            clamp_to_reach(right, kp["right_shoulder"], reach))


def _xyz(p, z=0.0):
    return (float(p[0]), float(p[1]), float(z))


def fold_shirt(state, mesh, params=PickPlaceParams(), goal_mask=None):
    """Two dual-arm pick&places: sleeves onto the waist line, then shoulders onto waists.

    Keypoints are read from the tracked vertex indices. Emits a warning when
    cloth coverage (against ``goal_mask`` or the canonical mask) is below
    ``FOLD_MIN_COVERAGE``.
    """
    if mesh.category != "shirt":
        raise WrongCategory(f"fold_shirt needs a shirt, got {mesh.category}")
    if goal_mask is None:
        goal_mask = A.render_mask(mesh.vertices, mesh.triangles)
    cov = coverage(A.render_mask(state.positions, mesh.triangles), goal_mask)
    if cov < FOLD_MIN_COVERAGE:
        warnings.warn(f"folding a shirt with coverage {cov:.2f} < {FOLD_MIN_COVERAGE}", stacklevel=2)
    reach = arm_length(mesh)
    kp = mesh.keypoint_positions(state.positions)
    pl, pr = sleeve_targets(kp, reach)
    state = execute_dual_pick_place(state, [_xyz(kp["left_sleeve"]), _xyz(kp["right_sleeve"])],
                                    [_xyz(pl), _xyz(pr)], params)
    kp = mesh.keypoint_positions(state.positions)
    return execute_dual_pick_place(state, [_xyz(kp["left_shoulder"]), _xyz(kp["right_shoulder"])],
                                   [_xyz(kp["left_waist"]), _xyz(kp["right_waist"])], params)


def _reflect_side(pts, a, b):
    """Reflect the points nearer ``a`` than ``b`` across the perpendicular bisector of ab."""
    a = np.asarray(a, dtype=float)[:2]
    b = np.asarray(b, dtype=float)[:2]
    n = b - a
    length = float(np.linalg.norm(n))
    if length == 0.0:
        return pts
    n /= length
    mid = 0.5 * (a + b)
    s = (pts[:, :2] - mid) @ n
    out = pts.copy()
    side = s < 0.0
    out[side, :2] -= 2.0 * s[side, None] * n
    return out


def folded_goal(mesh):
    """Kinematic two-step fold of the canonical shirt.

    Each sleeve is reflected across the perpendicular bisector of its
    keypoint and its clamped waist-line target; then the upper half is
    reflected across the bisector of the shoulder and waist lines. The result
    lies flat (z = 0) in the garment's local frame.
    """
    if mesh.category != "shirt":
        raise WrongCategory(f"folded goal is defined for shirts, not {mesh.category}")
    pts = np.array(mesh.vertices, dtype=float)
    pts[:, 2] = 0.0
    kp = mesh.keypoint_positions(pts)
    pl, pr = sleeve_targets(kp, arm_length(mesh))
    pts = _reflect_side(pts, kp["left_sleeve"], pl)
    pts = _reflect_side(pts, kp["right_sleeve"], pr)
    kp = mesh.keypoint_positions(pts)
    shoulders = 0.5 * (kp["left_shoulder"][:2] + kp["right_shoulder"][:2])
    waists = 0.5 * (kp["left_waist"][:2] + kp["right_waist"][:2])
    return _reflect_side(pts, shoulders, waists)


# -- ironing -------------------------------------------------------------------


@dataclass(frozen=True)
class IroningBoard:
    """Axis-aligned board; the iron sweeps its full width along the y axis."""

    center: tuple = (0.0, 0.0)
    half_width: float = 0.3  # across the board (x)
    half_length: float = 0.35  # along the sweep (y)

    def contains(self, xy):
        xy = np.asarray(xy, dtype=float)
        return ((np.abs(xy[..., 0] - self.center[0]) <= self.half_width)
                & (np.abs(xy[..., 1] - self.center[1]) <= self.half_length))


def ironing_schedule(goal, mesh, board=IroningBoard()):
    """Two alignments putting the garment's left, then right, half on the board.

    Both keep the goal's rotation and place the centre of the respective half
    (a quarter of the garment width from its middle, along the garment's own
    width axis) over the board centre. For a board-aligned goal the two poses
    differ only in the across-board translation.
    """
    width = mesh.extent()[0]
    cx, cy = board.center
    off = 0.25 * width * np.array([math.cos(goal.theta), math.sin(goal.theta)])
    return [PlanarTransform(cx + off[0], cy + off[1], goal.theta),
            PlanarTransform(cx - off[0], cy - off[1], goal.theta)]


def ironing_score(positions, mesh, schedule, board=IroningBoard(), layer_tol=0.004):
    """Fraction of the garment the iron reaches over both alignments.

    The cloth is rigidly moved so that its best fit to the canonical garment
    sits at each scheduled pose. A vertex counts as ironed when it lies on
    the board and no other layer covers it there.
    """
    pos = np.asarray(positions, dtype=float)
    canon = mesh.vertices
    scale = normalization_scale(canon)
    fit = trimmed_align(pos, canon, scale=scale).transform  # canonical frame -> cloth
    local = apply_transform(fit.inverse(), pos)
    ironed = np.zeros(len(pos), dtype=bool)
    for pose in schedule:
        placed = apply_transform(pose, local)
        obs = A.render_positions(placed, mesh.triangles)
        px = np.floor(A.world_to_pixel(obs.view, obs.scale, placed) + 0.5).astype(int)
        px = np.clip(px, 0, A.IMAGE_SIZE - 1)
        top = obs.height[px[:, 1], px[:, 0]]
        visible = placed[:, 2] >= top - layer_tol
        ironed |= board.contains(placed[:, :2]) & visible
    return float(np.mean(ironed))
