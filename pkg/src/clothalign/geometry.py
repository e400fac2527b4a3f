"""Planar rigid transforms and trimmed correspondence alignment.

All transforms act on the (x, y) plane and leave z untouched. Rotations are
about the workspace origin; garment local frames put the canonical centroid
at the origin, so for canonical goals this coincides with rotation about the
centroid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DegenerateSubset
from .validation import check_paired, check_positive, check_vertices

__all__ = [
    "PlanarTransform",
    "AlignmentResult",
    "apply_transform",
    "fit_rigid_planar",
    "trimmed_align",
    "trimmed_cost",
    "mirror_in_frame",
    "TrimmedPlanarAligner",
]


def wrap_angle(theta):
    """Map an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class PlanarTransform:
    """SE(2) pose with an optional reflection ``x -> -x`` applied first.

    The induced map is ``p -> R(theta) @ F @ p + (tx, ty)`` where ``F`` is
    ``diag(-1, 1)`` when ``mirrored`` and the identity otherwise.
    """

    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    mirrored: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "mirrored", bool(self.mirrored))

    @classmethod
    def identity(cls):
        return cls()

    @property
    def translation(self):
        return np.array([self.tx, self.ty])

    @property
    def linear(self):
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, -s], [s, c]])
        if self.mirrored:
            rot = rot @ np.diag([-1.0, 1.0])
        return rot

    def compose(self, other):
        """Return ``self ∘ other`` (apply ``other`` first)."""
        theta = self.theta - other.theta if self.mirrored else self.theta + other.theta
        t = self.linear @ other.translation + self.translation
        return PlanarTransform(t[0], t[1], theta, self.mirrored != other.mirrored)

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self):
        # a reflection R F is its own inverse
        theta = self.theta if self.mirrored else -self.theta
        inv = PlanarTransform(0.0, 0.0, theta, self.mirrored)
        t = -(inv.linear @ self.translation)
        return PlanarTransform(t[0], t[1], theta, self.mirrored)

    def magnitude(self):
        """Size of the transform as ``max(|t|, |theta|)``; 0 for the identity."""
        return max(math.hypot(self.tx, self.ty), abs(self.theta))

    def as_tuple(self):
        return (self.tx, self.ty, self.theta, self.mirrored)

    def to_dict(self):
        return {"tx": self.tx, "ty": self.ty, "theta": self.theta, "mirrored": self.mirrored}

    @classmethod
    def from_dict(cls, d):
        return cls(d["tx"], d["ty"], d["theta"], d.get("mirrored", False))


@dataclass(frozen=True)
class AlignmentResult:
    transform: PlanarTransform
    aligned_goal: np.ndarray
    inlier_indices: np.ndarray
    iterations: int

    @property
    def fell_back(self):
        return len(self.inlier_indices) == len(self.aligned_goal)


def apply_transform(t, cfg):
    """Apply ``t`` to the (x, y) coordinates of ``cfg``; z is preserved."""
    pts = check_vertices(cfg, "cfg")
    out = pts.copy()
    out[:, :2] = pts[:, :2] @ t.linear.T + t.translation
    return out


def _apply_planar(t, xy):
    return xy @ t.linear.T + t.translation


def fit_rigid_planar(src, dst, subset=None):
    """Least-squares SE(2) transform mapping ``src`` onto ``dst`` over ``subset``.

    Closed form: centroids plus the rotation angle of the 2x2 cross-covariance.
    If all selected source points coincide the rotation is undefined and a
    pure translation (theta = 0) is returned.
    """
    src, dst = check_paired(src, dst)
    idx = np.arange(len(src)) if subset is None else np.asarray(subset, dtype=np.intp)
    if idx.size < 2:
        raise DegenerateSubset(f"need at least 2 correspondences, got {idx.size}")
    a = src[idx, :2]
    b = dst[idx, :2]
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    a0 = a - ca
    b0 = b - cb
    spread = np.max(np.abs(a0)) if a0.size else 0.0
    if spread <= 1e-15 * max(1.0, np.max(np.abs(a))):
        theta = 0.0
    else:
        dot = np.sum(a0[:, 0] * b0[:, 0] + a0[:, 1] * b0[:, 1])
        cross = np.sum(a0[:, 0] * b0[:, 1] - a0[:, 1] * b0[:, 0])
        theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    t = cb - np.array([c * ca[0] - s * ca[1], s * ca[0] + c * ca[1]])
    return PlanarTransform(t[0], t[1], theta, False)


def trimmed_align(v, g, tau=0.3, scale=1.0, max_iter=30, tol=1e-6):
    """Rigidly align goal ``g`` to current ``v`` ignoring outlier vertices.

    Each round keeps vertices whose planar residual is at most ``tau * scale``
    (all vertices if fewer than 3 survive), refits on them and composes the
    increment. Stops once the kept set is stable and the increment is below
    ``tol``, or after ``max_iter`` rounds.

    The rounds are a local descent on :func:`trimmed_cost`, so they are run
    twice: from ``g`` as given and from the untrimmed fit over all vertices.
    The lower-cost result wins (ties keep the first).
    """
    v, g = check_paired(v, g, min_points=3)
    check_positive(tau, "tau")
    check_positive(scale, "scale")
    vxy = v[:, :2]
    gxy = g[:, :2]
    everything = np.arange(len(v))
    best = None
    for start in (PlanarTransform.identity(), fit_rigid_planar(gxy, vxy, everything)):
        total, fitted, it = _descend(vxy, gxy, start, tau * scale, max_iter, tol)
        r = np.linalg.norm(_apply_planar(total, gxy) - vxy, axis=1) / scale
        cost = float(np.mean(np.minimum(r, tau) ** 2))
        if best is None or cost < best[0]:
            best = (cost, total, fitted, it)
    _, total, fitted, it = best
    aligned = np.column_stack([_apply_planar(total, gxy), np.zeros(len(v))])
    return AlignmentResult(total, aligned, fitted, it)


def _descend(vxy, gxy, total, thresh, max_iter, tol):
    everything = np.arange(len(vxy))

    def select(xy):
        d = np.linalg.norm(xy - vxy, axis=1)
        keep = np.flatnonzero(d <= thresh)
        return everything if keep.size < 3 else keep

    current = _apply_planar(total, gxy)
    used = select(current)
    fitted = used
    it = 0
    for it in range(1, max_iter + 1):
        inc = fit_rigid_planar(current, vxy, used)
        fitted = used
        total = inc @ total
        current = _apply_planar(total, gxy)
        used = select(current)
        stable = used.size == fitted.size and np.array_equal(used, fitted)
        if stable and inc.magnitude() < tol:
            break
    return total, fitted, it


def trimmed_cost(v, g, t, tau, scale=1.0):
    """Truncated quadratic cost of aligning ``g`` by ``t`` onto ``v``.

    Mean over vertices of ``min(r_i / scale, tau) ** 2`` with planar residuals
    ``r_i``; trimmed alignment is a descent method on this objective.
    """
    v, g = check_paired(v, g)
    r = np.linalg.norm(_apply_planar(t, g[:, :2]) - v[:, :2], axis=1) / scale
    return float(np.mean(np.minimum(r, tau) ** 2))


def mirror_in_frame(cfg, frame=None):
    """Reflect ``cfg`` about the vertical axis of ``frame`` (x -> -x locally)."""
    frame = PlanarTransform.identity() if frame is None else frame
    flip = PlanarTransform(mirrored=True)
    return apply_transform(frame @ flip @ frame.inverse(), cfg)


class TrimmedPlanarAligner(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`trimmed_align`.

    ``fit(X, y)`` finds the planar rigid transform taking configuration ``X``
    (the goal) onto ``y`` (the current cloth) with outlier trimming;
    ``transform`` then applies it to any configuration.

    Parameters
    ----------
    tau : float
        Inlier threshold in units of ``scale``.
    scale : float
        Length used to normalize ``tau`` (meters).
    max_iter : int
    tol : float
        Increment magnitude below which a stable inlier set counts as converged.
    """

    def __init__(self, tau=0.3, scale=1.0, max_iter=30, tol=1e-6):
        self.tau = tau
        self.scale = scale
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        res = trimmed_align(y, X, self.tau, self.scale, self.max_iter, self.tol)
        self.transform_ = res.transform
        self.inlier_indices_ = res.inlier_indices
        self.n_iter_ = res.iterations
        self.aligned_ = res.aligned_goal
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return apply_transform(self.transform_, X)

    def inverse_transform(self, X):
        check_is_fitted(self, "transform_")
        return apply_transform(self.transform_.inverse(), X)

    def score(self, X, y):
        """Negative mean planar residual after alignment (higher is better)."""
        check_is_fitted(self, "transform_")
        X, y = check_paired(X, y)
        moved = apply_transform(self.transform_, X)
        return -float(np.mean(np.linalg.norm(moved[:, :2] - y[:, :2], axis=1)))
