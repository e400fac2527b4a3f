"""Deterministic mass-spring cloth with ground contact and kinematic grippers.

Integration is semi-implicit Euler with Hooke springs (structural, shear,
bend), along-spring and air damping, iterative strain limiting on structural
and shear springs, and Coulomb ground friction. Grippers are position-driven
points that pin single vertices; primitives move them along straight
segments.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .errors import NumericalBlowup
from .garments import BEND, SHEAR, STRUCTURAL

WORKSPACE_HALF = 0.75
GRASP_RADIUS = 0.02
LAYER_TOLERANCE = 0.004

__all__ = [
    "SimParams",
    "ClothModel",
    "SimState",
    "FlingParams",
    "PickPlaceParams",
    "PrimitiveSpec",
    "step",
    "settle",
    "grasp_nearest",
    "execute_primitive",
    "execute_dual_pick_place",
    "total_energy",
    "rest_state",
    "TrajectoryRecorder",
]


@dataclass(frozen=True)
class SimParams:
    dt: float = 2.5e-3
    gravity: float = 9.81
    areal_density: float = 0.2  # kg/m^2
    # stiffness per unit vertex mass (1/s^2), by spring kind
    stretch_stiffness: float = 1.0e4
    shear_stiffness: float = 5.0e3
    bend_stiffness: float = 200.0
    spring_damping: float = 0.7  # fraction of critical, along springs
    air_damping: float = 0.1  # 1/s
    friction: float = 0.8
    max_stretch: float = 1.1
    clamp_iters: int = 2
    settle_speed: float = 1e-3
    settle_time: float = 5.0


class ClothModel:
    """Mesh topology plus material constants, shared by every state of one cloth."""

    def __init__(self, mesh, params=None, vertex_mass=None):
        self.mesh = mesh
        self.params = params or SimParams()
        p = self.params
        if vertex_mass is None:
            tris = mesh.vertices[mesh.triangles]
            area = 0.5 * np.abs(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])[:, 2]).sum()
            vertex_mass = p.areal_density * area / mesh.n_vertices
        if not vertex_mass > 0:
            raise ValueError("vertex mass must be positive; pass vertex_mass for meshes without area")
        self.mass = float(vertex_mass)
        self.sp_i = np.ascontiguousarray(mesh.springs[:, 0])
        self.sp_j = np.ascontiguousarray(mesh.springs[:, 1])
        self.rest = np.ascontiguousarray(mesh.rest_lengths, dtype=np.float64)
        per_mass = np.select(
            [mesh.spring_kinds == STRUCTURAL, mesh.spring_kinds == SHEAR, mesh.spring_kinds == BEND],
            [p.stretch_stiffness, p.shear_stiffness, p.bend_stiffness],
        )
        self.stiff = per_mass * self.mass
        # critical damping of a two-body spring is 2 sqrt(k m / 2)
        self.sdamp = p.spring_damping * 2.0 * np.sqrt(self.stiff * self.mass / 2.0)
        self.clamp = np.ascontiguousarray(mesh.spring_kinds != BEND)

    @property
    def n_vertices(self):
        return self.mesh.n_vertices


@dataclass
class SimState:
    """Snapshot of one cloth: positions, velocities and gripper pins.

    ``pinned`` maps vertex index to gripper id and ``grippers`` maps gripper
    id to its 3D target. States are never mutated by the public functions;
    each returns a fresh copy.
    """

    model: ClothModel
    positions: np.ndarray
    velocities: np.ndarray
    pinned: dict = field(default_factory=dict)
    grippers: dict = field(default_factory=dict)
    time: float = 0.0
    rng_seed: int = 0

    def clone(self):
        return replace(self, positions=self.positions.copy(), velocities=self.velocities.copy(),
                       pinned=dict(self.pinned),
                       grippers={k: np.array(v, dtype=float) for k, v in self.grippers.items()})

    def max_speed(self):
        free = np.ones(len(self.positions), dtype=bool)
        free[list(self.pinned)] = False
        if not free.any():
            return 0.0
        return float(np.max(np.linalg.norm(self.velocities[free], axis=1)))


def rest_state(model, positions=None, seed=0):
    pos = np.array(model.mesh.vertices if positions is None else positions, dtype=np.float64)
    return SimState(model, pos, np.zeros_like(pos), rng_seed=seed)


class TrajectoryRecorder:
    """Writes one JSON line of positions every ``every`` simulation steps."""

    def __init__(self, path, every=50):
        self.path = path
        self.every = int(every)
        self._fh = open(path, "w", encoding="utf-8")
        self._step = 0

    def record(self, state, label=""):
        rec = {"step": self._step, "time": state.time, "label": label,
               "positions": state.positions.round(6).tolist()}
        self._fh.write(json.dumps(rec) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _pin_arrays(state):
    idx = np.array(sorted(state.pinned), dtype=np.int64)
    pts = np.array([state.grippers[state.pinned[i]] for i in idx], dtype=np.float64).reshape(-1, 3)
    return idx, pts


def _run(state, pin_from, pin_to, n_steps, stop_mode=K.STOP_NONE, stop_value=0.0, min_steps=1,
         recorder=None, label=""):
    """Advance ``state`` in place; grippers move linearly from ``pin_from`` to ``pin_to``."""
    model = state.model
    p = model.params
    idx, _ = _pin_arrays(state)
    pinned = np.zeros(model.n_vertices, dtype=np.bool_)
    pinned[idx] = True
    pin_from = np.ascontiguousarray(pin_from, dtype=np.float64).reshape(-1, 3)
    pin_to = np.ascontiguousarray(pin_to, dtype=np.float64).reshape(-1, 3)
    chunk = n_steps if recorder is None else max(1, recorder.every)
    done = 0
    status = K.STATUS_OK
    while done < n_steps:
        todo = min(chunk, n_steps - done)
        a = pin_from + (pin_to - pin_from) * (done / n_steps)
        b = pin_from + (pin_to - pin_from) * ((done + todo) / n_steps)
        taken, status = K.advance(
            state.positions, state.velocities, pinned, model.sp_i, model.sp_j, model.rest,
            model.stiff, model.sdamp, model.clamp, 1.0 / model.mass, idx, a, b, todo, p.dt,
            p.gravity, p.air_damping, p.friction, p.max_stretch, p.clamp_iters, stop_mode,
            stop_value, max(1, min_steps - done))
        done += taken
        state.time += taken * p.dt
        if recorder is not None:
            recorder._step += taken
            recorder.record(state, label)
        if status != K.STATUS_OK:
            break
    if status == K.STATUS_BLOWUP:
        raise NumericalBlowup(f"cloth diverged at t={state.time:.3f}s; reduce dt")
    # grippers end where the cloth actually holds them
    for vi, gid in state.pinned.items():
        state.grippers[gid] = state.positions[vi].copy()
    return status == K.STATUS_STOPPED


def step(state, dt=None):
    """One integration step; pinned vertices stay at their gripper targets."""
    p = state.model.params
    if dt is not None and not 0.0 < dt <= 5e-3:
        raise ValueError(f"dt must lie in (0, 5e-3], got {dt}")
    out = state.clone()
    if dt is not None and dt != p.dt:
        out.model = _with_dt(state.model, dt)
    _, pts = _pin_arrays(out)
    _run(out, pts, pts, 1)
    out.model = state.model
    return out


def _with_dt(model, dt):
    clone = object.__new__(ClothModel)
    clone.__dict__.update(model.__dict__)
    clone.params = replace(model.params, dt=dt)
    return clone


def settle(state, recorder=None):
    """Run unactuated until the fastest free vertex is below the settle speed."""
    out = state.clone()
    _settle_inplace(out, recorder)
    return out


def _settle_inplace(state, recorder=None, max_time=None):
    p = state.model.params
    t = p.settle_time if max_time is None else max_time
    _, pts = _pin_arrays(state)
    _run(state, pts, pts, max(1, int(round(t / p.dt))), K.STOP_SETTLED, p.settle_speed,
         recorder=recorder, label="settle")


def total_energy(state):
    m = state.model
    return K.energy(state.positions, state.velocities, m.sp_i, m.sp_j, m.rest, m.stiff, m.mass,
                    m.params.gravity)


def grasp_nearest(state, point, radius=GRASP_RADIUS, exclude=()):
    """Vertex a top-down pinch at ``point`` would grab, or ``None`` on a miss.

    Among vertices within ``radius`` (planar), only those within
    ``LAYER_TOLERANCE`` of the highest candidate are eligible; the planar
    nearest of these wins.
    """
    pos = state.positions
    d = np.hypot(pos[:, 0] - point[0], pos[:, 1] - point[1])
    cand = np.flatnonzero(d <= radius)
    if exclude:
        cand = cand[~np.isin(cand, list(exclude))]
    if cand.size == 0:
        return None
    top = pos[cand, 2].max()
    cand = cand[pos[cand, 2] >= top - LAYER_TOLERANCE]
    return int(cand[np.argmin(d[cand])])


# -- primitives ----------------------------------------------------------------


@dataclass(frozen=True)
class FlingParams:
    lift_margin: float = 0.05
    max_stretch: float = 0.7
    forward: float = 0.7
    descend_speed: float = 1.4
    lift_speed: float = 1.0
    stretch_speed: float = 0.5
    fling_speed: float = 1.4
    max_lift: float = 1.6


@dataclass(frozen=True)
class PickPlaceParams:
    lift: float = 0.1
    lift_speed: float = 0.5
    move_speed: float = 1.0
    place_height: float = 0.0


@dataclass(frozen=True)
class PrimitiveSpec:
    """A fling or pick&place request.

    For a fling, ``grasp_a``/``grasp_b`` are the two grasp points and
    ``direction`` the planar forward vector (defaults to the left-hand normal
    of ``grasp_b - grasp_a``). For pick&place, the cloth is grasped at
    ``grasp_a`` and placed at ``grasp_b``.
    """

    kind: str
    grasp_a: tuple
    grasp_b: tuple
    direction: tuple | None = None
    fling_params: FlingParams = FlingParams()
    pp_params: PickPlaceParams = PickPlaceParams()

    def __post_init__(self):
        if self.kind not in ("fling", "pick_place"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        for pt in (self.grasp_a, self.grasp_b):
            if len(pt) < 2 or not np.all(np.isfinite(pt)):
                raise ValueError(f"bad grasp point {pt}")
            if abs(pt[0]) > WORKSPACE_HALF + 1e-9 or abs(pt[1]) > WORKSPACE_HALF + 1e-9:
                raise ValueError(f"grasp point {pt} outside the workspace")

    def forward(self):
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=float)[:2]
        else:
            ab = np.asarray(self.grasp_b, dtype=float)[:2] - np.asarray(self.grasp_a, dtype=float)[:2]
            d = np.array([-ab[1], ab[0]])
        n = np.linalg.norm(d)
        if n == 0:
            return np.array([1.0, 0.0])
        return d / n


def _segment(state, targets, speed, recorder=None, label="", **kw):
    _, start = _pin_arrays(state)
    targets = np.asarray(targets, dtype=np.float64).reshape(start.shape)
    dist = np.max(np.linalg.norm(targets - start, axis=1)) if len(start) else 0.0
    n = max(1, int(math.ceil(dist / speed / state.model.params.dt)))
    return _run(state, start, targets, n, recorder=recorder, label=label, **kw)


def _release(state):
    state.pinned.clear()
    state.grippers.clear()


def _pick_place_inplace(state, picks, places, pp, recorder=None):
    grabbed = []
    for gid, (pick, place) in enumerate(zip(picks, places)):
        vi = grasp_nearest(state, pick, exclude=[g[0] for g in grabbed])
        if vi is not None:
            grabbed.append((vi, gid, np.asarray(place, dtype=float)))
    if grabbed:
        for vi, gid, _ in grabbed:
            state.pinned[vi] = gid
            state.grippers[gid] = state.positions[vi].copy()
        _, start = _pin_arrays(state)
        order = sorted(grabbed)
        lifted = start + np.array([0.0, 0.0, pp.lift])
        _segment(state, lifted, pp.lift_speed, recorder, "lift")
        moved = np.array([[pl[0], pl[1], z] for (_, _, pl), z in zip(order, lifted[:, 2])])
        _segment(state, moved, pp.move_speed, recorder, "drag")
        down = moved.copy()
        down[:, 2] = pp.place_height
        _segment(state, down, pp.lift_speed, recorder, "place")
        _release(state)
    _settle_inplace(state, recorder)


def _fling_inplace(state, spec, recorder=None):
    fp = spec.fling_params
    a = grasp_nearest(state, spec.grasp_a)
    b = grasp_nearest(state, spec.grasp_b, exclude=[] if a is None else [a])
    arms = [(vi, gid) for vi, gid in ((a, 0), (b, 1)) if vi is not None]
    if not arms:
        _settle_inplace(state, recorder)
        return
    for vi, gid in arms:
        state.pinned[vi] = gid
        state.grippers[gid] = state.positions[vi].copy()
    idx, start = _pin_arrays(state)
    fwd = np.append(spec.forward(), 0.0)

    # lift until the lowest free vertex clears the ground by the margin
    top = start.copy()
    top[:, 2] = fp.max_lift
    rise = fp.max_lift - start[:, 2].min()
    n = max(1, int(math.ceil(rise / fp.lift_speed / state.model.params.dt)))
    _run(state, start, top, n, K.STOP_LIFTED, fp.lift_margin, recorder=recorder, label="lift")
    _, held = _pin_arrays(state)
    lift_z = float(held[:, 2].mean())
    held[:, 2] = lift_z
    free = np.ones(state.model.n_vertices, dtype=bool)
    free[idx] = False
    cloth_height = lift_z - float(state.positions[free, 2].min()) if free.any() else 0.0

    # stretch apart up to the rest distance of the grasped pair, capped
    if len(idx) == 2:
        rest = float(np.linalg.norm(state.model.mesh.vertices[idx[0], :2] - state.model.mesh.vertices[idx[1], :2]))
        mid = held.mean(axis=0)
        axis = held[1] - held[0]
        axis[2] = 0.0
        sep = float(np.linalg.norm(axis))
        target = min(fp.max_stretch, rest)
        if sep > 1e-9 and target > sep:
            axis /= sep
            held = np.array([mid - 0.5 * target * axis, mid + 0.5 * target * axis])
            _segment(state, held, fp.stretch_speed, recorder, "stretch")
        _, held = _pin_arrays(state)

    swing = held + fp.forward * fwd
    _segment(state, swing, fp.fling_speed, recorder, "fling")
    land = swing - (fp.forward + 0.5 * cloth_height) * fwd
    land[:, 2] = 0.0
    _segment(state, land, fp.descend_speed, recorder, "descend")
    _release(state)
    _settle_inplace(state, recorder)


def execute_primitive(state, spec, recorder=None):
    """Run a fling or pick&place on a copy of ``state`` and settle the result."""
    out = state.clone()
    if out.pinned:
        _release(out)
    if spec.kind == "fling":
        _fling_inplace(out, spec, recorder)
    else:
        _pick_place_inplace(out, [spec.grasp_a], [spec.grasp_b], spec.pp_params, recorder)
    return out


def execute_dual_pick_place(state, picks, places, params=PickPlaceParams(), recorder=None):
    """Two-arm pick&place; each arm that misses its grasp stays idle."""
    out = state.clone()
    _release(out)
    _pick_place_inplace(out, picks, places, params, recorder)
    return out
