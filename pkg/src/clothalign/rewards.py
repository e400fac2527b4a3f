"""Canonicalized-alignment rewards and mask metrics.

Distances between configurations are means of per-vertex planar Euclidean
norms divided by a garment-size scale. The factorized reward splits the gap
to the goal into a shape part (current vs best-aligned goal) and a pose part
(best-aligned goal vs goal).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import DimensionMismatch, MismatchedContext, ZeroExtent
from .geometry import AlignmentResult, mirror_in_frame, trimmed_align
from .validation import check_mask, check_paired, check_positive, check_unit_interval, check_vertices

DEFAULT_ALPHA = 0.6
DEFAULT_TAU = 0.3

__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_TAU",
    "RewardBreakdown",
    "normalization_scale",
    "mean_distance",
    "reward_unfactorized",
    "reward_factorized",
    "delta_reward",
    "iou",
    "coverage",
    "CanonicalizedAlignmentReward",
]


@dataclass(frozen=True)
class RewardBreakdown:
    r_unf: float
    r_c: float
    r_a: float
    r_ca: float
    alignment: AlignmentResult
    scale: float
    mirror_used: bool
    alpha: float = DEFAULT_ALPHA
    tau: float = DEFAULT_TAU

    def as_dict(self):
        return {"r_unf": self.r_unf, "r_c": self.r_c, "r_a": self.r_a, "r_ca": self.r_ca,
                "mirror_used": self.mirror_used}


def normalization_scale(canonical):
    """Geometric mean of the canonical configuration's planar bbox extents."""
    pts = check_vertices(canonical, "canonical")
    extent = pts[:, :2].max(axis=0) - pts[:, :2].min(axis=0)
    if np.any(extent <= 0.0):
        raise ZeroExtent(f"canonical configuration has a zero extent: {extent}")
    return math.sqrt(extent[0] * extent[1])


def mean_distance(a, b):
    """Mean planar distance between corresponding vertices."""
    return float(np.mean(np.linalg.norm(a[:, :2] - b[:, :2], axis=1)))


def reward_unfactorized(v, g, scale):
    v, g = check_paired(v, g)
    scale = check_positive(scale, "scale")
    return -mean_distance(v, g) / scale


def canonicalization_reward(v, g, tau=DEFAULT_TAU, scale=1.0):
    """``-mean ||v - g'|| / scale`` for the best trimmed alignment ``g'`` of ``g``.

    Fixed goal, no mirror selection; depends on ``v`` only up to rigid motion.
    """
    v, g = check_paired(v, g, min_points=3)
    scale = check_positive(scale, "scale")
    return -mean_distance(v, trimmed_align(v, g, tau, scale).aligned_goal) / scale


def _branch(v, g, alpha, tau, scale):
    res = trimmed_align(v, g, tau, scale)
    r_c = -mean_distance(v, res.aligned_goal) / scale
    r_a = -mean_distance(res.aligned_goal, g) / scale
    return r_c, r_a, (1.0 - alpha) * r_c + alpha * r_a, res


def reward_factorized(v, g, alpha=DEFAULT_ALPHA, tau=DEFAULT_TAU, scale=1.0, goal_frame=None):
    """Factorized reward, taking the better of ``g`` and its mirror image.

    ``goal_frame`` is the pose of the goal's local frame in the workspace (the
    transform that placed the canonical configuration). The mirror image of
    ``g`` is its reflection about that frame's vertical axis; ``None`` means
    ``g`` is already expressed in its local frame.
    """
    v, g = check_paired(v, g, min_points=3)
    alpha = check_unit_interval(alpha, "alpha")
    scale = check_positive(scale, "scale")
    g_m = mirror_in_frame(g, goal_frame)

    direct = _branch(v, g, alpha, tau, scale)
    mirrored = _branch(v, g_m, alpha, tau, scale)
    use_mirror = mirrored[2] > direct[2]
    r_c, r_a, r_ca, res = mirrored if use_mirror else direct
    r_unf = max(-mean_distance(v, g), -mean_distance(v, g_m)) / scale
    return RewardBreakdown(r_unf, r_c, r_a, r_ca, res, scale, bool(use_mirror), alpha, tau)


def delta_reward(before, after):
    """Change in the combined reward caused by one action."""
    if before.scale != after.scale or before.alpha != after.alpha or before.tau != after.tau:
        raise MismatchedContext("breakdowns were computed with different scale/alpha/tau")
    return after.r_ca - before.r_ca


def iou(a, b):
    """Intersection over union of two boolean masks; two empty masks give 1."""
    a = check_mask(a, "a")
    b = check_mask(b, "b")
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def coverage(current, goal):
    """Area of the current cloth mask relative to the goal mask."""
    current = check_mask(current, "current")
    goal = check_mask(goal, "goal")
    if current.shape != goal.shape:
        raise DimensionMismatch(f"mask shapes differ: {current.shape} vs {goal.shape}")
    denom = np.count_nonzero(goal)
    if denom == 0:
        raise ZeroExtent("goal mask is empty")
    return np.count_nonzero(current) / denom


class CanonicalizedAlignmentReward(BaseEstimator):
    """Reward model bound to one garment's canonical configuration.

    ``fit(canonical)`` records the normalization scale; ``score(v, g)`` then
    returns the combined reward (or the unfactorized one when
    ``objective='unfactorized'``) and ``breakdown`` the full decomposition.
    """

    def __init__(self, alpha=DEFAULT_ALPHA, tau=DEFAULT_TAU, objective="factorized"):
        self.alpha = alpha
        self.tau = tau
        self.objective = objective

    def fit(self, canonical, y=None):
        if self.objective not in ("factorized", "unfactorized"):
            raise ValueError(f"unknown objective {self.objective!r}")
        check_unit_interval(self.alpha, "alpha")
        check_positive(self.tau, "tau")
        self.scale_ = normalization_scale(canonical)
        self.n_vertices_ = len(check_vertices(canonical))
        return self

    def breakdown(self, v, g, goal_frame=None):
        check_is_fitted(self, "scale_")
        return reward_factorized(v, g, self.alpha, self.tau, self.scale_, goal_frame)

    def score(self, v, g, goal_frame=None):
        b = self.breakdown(v, g, goal_frame)
        return b.r_ca if self.objective == "factorized" else b.r_unf
