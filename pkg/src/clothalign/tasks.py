"""Hard and easy task generators, goal sampling and task-set files.

A hard task drops the garment from a random grasp point and height, then
shifts the crumpled result a little; an easy task drags one vertex of the
flat canonical garment with a pick&place. Every task carries a goal pose for
the canonical configuration.

Task-set files are JSON Lines. The first line is a header holding the format
version, the master seed and a mesh manifest (id, split, sha256 of the mesh
text, mesh text); each further line is one task.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HashMismatch, InsufficientMeshes
from .garments import dumps as mesh_dumps
from .garments import loads as mesh_loads
from .geometry import PlanarTransform, apply_transform
from .simulator import (
    WORKSPACE_HALF,
    ClothModel,
    PickPlaceParams,
    SimParams,
    SimState,
    _pick_place_inplace,
    _release,
    _run,
    _segment,
    _settle_inplace,
    rest_state,
)
from . import _kernels as K

TASKSET_FORMAT = "clothalign-taskset"
TASKSET_VERSION = 1
N_GOAL_ROTATIONS = 16
GOAL_REGION_HALF = 0.3
DROP_HEIGHT = (0.5, 1.5)
SHIFT_DISTANCE = (0.0, 0.2)
DRAG_DISTANCE = (0.5, 1.0)
LIFT_SPEED = 1.0
MAX_SETTLE_ROUNDS = 3


@dataclass
class Task:
    """One manipulation problem: a settled start and a goal pose.

    ``initial_positions`` is a resting configuration (velocities are zero);
    the goal configuration is the canonical mesh under ``goal_transform``.
    """

    mesh: object
    initial_positions: np.ndarray
    goal_transform: PlanarTransform
    difficulty: str
    seed: int
    task_id: str = ""
    split: str = ""
    mesh_id: str = ""
    info: dict = field(default_factory=dict)
    _model: object = field(default=None, repr=False, compare=False)

    def model(self, params=None):
        if self._model is None or (params is not None and self._model.params != params):
            self._model = ClothModel(self.mesh, params)
        return self._model

    def initial_state(self, params=None):
        return rest_state(self.model(params), self.initial_positions, seed=self.seed)

    def goal_positions(self):
        return apply_transform(self.goal_transform, self.mesh.vertices)


def task_seed(master_seed, index):
    """Independent 63-bit seed for task ``index`` of a run seeded by ``master_seed``."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def sample_goal(mesh, rng):
    """Goal pose: centre uniform in the central square, one of 16 rotations.

    Resampled until the posed canonical garment lies inside the workspace.
    """
    for _ in range(1000):
        r = int(rng.integers(N_GOAL_ROTATIONS))
        cx, cy = rng.uniform(-GOAL_REGION_HALF, GOAL_REGION_HALF, size=2)
        t = PlanarTransform(float(cx), float(cy), 2.0 * math.pi * r / N_GOAL_ROTATIONS)
        pts = apply_transform(t, mesh.vertices)
        if np.all(np.abs(pts[:, :2]) <= WORKSPACE_HALF):
            return t
    raise InsufficientMeshes("garment too large to fit any goal pose in the workspace")


def _settle_fully(state):
    for _ in range(MAX_SETTLE_ROUNDS):
        _settle_inplace(state)
        if state.max_speed() < state.model.params.settle_speed:
            break


def _finish(state):
    state.velocities[:] = 0.0
    return state.positions.copy()


def generate_hard(mesh, seed, params=None):
    """Crumpled start: random rotation, drop from a random grasp, small shift."""
    rng = np.random.default_rng(seed)
    model = ClothModel(mesh, params or SimParams())
    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    pos = apply_transform(PlanarTransform(theta=theta), mesh.vertices)
    state = rest_state(model, pos, seed=seed)

    vi = int(rng.integers(mesh.n_vertices))
    height = float(rng.uniform(*DROP_HEIGHT))
    state.pinned[vi] = 0
    state.grippers[0] = state.positions[vi].copy()
    start = state.positions[vi].copy()
    top = start.copy()
    top[2] = height
    n = max(1, int(math.ceil(height / LIFT_SPEED / model.params.dt)))
    _run(state, start[None], top[None], n)
    _settle_fully(state)  # dangle from the pinned vertex
    _release(state)
    _settle_fully(state)

    dist = float(rng.uniform(*SHIFT_DISTANCE))
    phi = float(rng.uniform(0.0, 2.0 * math.pi))
    shift = dist * np.array([math.cos(phi), math.sin(phi)])
    state.positions[:, :2] += shift
    state.velocities[:] = 0.0
    _settle_fully(state)

    goal = sample_goal(mesh, rng)
    info = {"rotation": theta, "grasp_vertex": vi, "drop_height": height,
            "shift_distance": dist, "shift_angle": phi}
    return Task(mesh, _finish(state), goal, "hard", int(seed), info=info, _model=model)


def generate_easy(mesh, seed, params=None):
    """Near-flat start: drag a random vertex of the canonical garment."""
    rng = np.random.default_rng(seed)
    model = ClothModel(mesh, params or SimParams())
    state = rest_state(model, seed=seed)
    vi = int(rng.integers(mesh.n_vertices))
    angle = float(rng.uniform(0.0, 360.0))
    dist = float(rng.uniform(*DRAG_DISTANCE))
    pick = state.positions[vi].copy()
    rad = math.radians(angle)
    place = pick[:2] + dist * np.array([math.cos(rad), math.sin(rad)])
    place = np.clip(place, -WORKSPACE_HALF, WORKSPACE_HALF)
    # grab exactly the sampled vertex rather than the nearest-by-search one
    state.pinned[vi] = 0
    state.grippers[0] = pick.copy()
    pp = PickPlaceParams()
    lifted = pick + np.array([0.0, 0.0, pp.lift])
    _segment(state, lifted[None], pp.lift_speed)
    moved = np.array([place[0], place[1], lifted[2]])
    _segment(state, moved[None], pp.move_speed)
    down = moved.copy()
    down[2] = pp.place_height
    _segment(state, down[None], pp.lift_speed)
    _release(state)
    _settle_fully(state)

    goal = sample_goal(mesh, rng)
    info = {"drag_vertex": vi, "drag_angle_deg": angle, "drag_distance": dist,
            "place": [float(place[0]), float(place[1])]}
    return Task(mesh, _finish(state), goal, "easy", int(seed), info=info, _model=model)


def generate(mesh, seed, difficulty, params=None):
    if difficulty == "hard":
        return generate_hard(mesh, seed, params)
    if difficulty == "easy":
        return generate_easy(mesh, seed, params)
    raise ValueError(f"unknown difficulty {difficulty!r}")


# -- task sets -----------------------------------------------------------------


@dataclass
class TaskSet:
    seed: int
    meshes: dict  # mesh id -> GarmentMesh
    mesh_split: dict  # mesh id -> "train" | "test"
    tasks: list

    def split(self, name):
        return [t for t in self.tasks if t.split == name]

    def __len__(self):
        return len(self.tasks)

    def counts(self):
        out = {}
        for t in self.tasks:
            key = f"{t.split}/{t.difficulty}"
            out[key] = out.get(key, 0) + 1
        return dict(sorted(out.items()))

    def to_text(self):
        header = {"format": TASKSET_FORMAT, "version": TASKSET_VERSION, "seed": self.seed,
                  "meshes": []}
        for mid in sorted(self.meshes):
            text = mesh_dumps(self.meshes[mid])
            header["meshes"].append({"id": mid, "split": self.mesh_split[mid],
                                     "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
                                     "mesh": text})
        lines = [json.dumps(header, sort_keys=True)]
        for t in self.tasks:
            rec = {"id": t.task_id, "split": t.split, "mesh": t.mesh_id,
                   "difficulty": t.difficulty, "seed": t.seed,
                   "goal": t.goal_transform.to_dict(), "info": t.info,
                   "positions": t.initial_positions.tolist()}
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines:
            raise ValueError("empty task-set file")
        header = json.loads(lines[0])
        if header.get("format") != TASKSET_FORMAT or header.get("version") != TASKSET_VERSION:
            raise ValueError("unsupported task-set header")
        meshes, mesh_split = {}, {}
        for entry in header["meshes"]:
            digest = hashlib.sha256(entry["mesh"].encode("utf-8")).hexdigest()
            if digest != entry["sha256"]:
                raise HashMismatch(f"mesh {entry['id']} failed its content-hash check")
            meshes[entry["id"]] = mesh_loads(entry["mesh"])
            mesh_split[entry["id"]] = entry["split"]
        tasks = []
        used = {"train": set(), "test": set()}
        for line in lines[1:]:
            rec = json.loads(line)
            mesh = meshes[rec["mesh"]]
            if mesh_split[rec["mesh"]] != rec["split"]:
                raise InsufficientMeshes(f"task {rec['id']} uses a mesh from the other split")
            used[rec["split"]].add(rec["mesh"])
            pos = np.array(rec["positions"], dtype=np.float64).reshape(mesh.n_vertices, 3)
            tasks.append(Task(mesh, pos, PlanarTransform.from_dict(rec["goal"]), rec["difficulty"],
                              int(rec["seed"]), rec["id"], rec["split"], rec["mesh"], rec["info"]))
        if used["train"] & used["test"]:
            raise InsufficientMeshes("train and test tasks share meshes")
        return cls(int(header["seed"]), meshes, mesh_split, tasks)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _n_hard(count, frac):
    return int(math.floor(count * frac + 0.5))


def build_dataset(meshes, n_train=200, n_test=50, seed=0, train_hard=0.75, test_hard=0.5,
                  params=None):
    """Deterministic task set with disjoint train and test meshes.

    ``meshes`` is a sequence of garments. Test meshes are a seeded subset
    sized in proportion to the test share (at least one mesh on each side
    that has tasks). Within a split, the first ``round(count * hard)`` tasks
    are hard and the rest easy; tasks cycle through the split's meshes.
    """
    for frac in (train_hard, test_hard):
        if not 0.0 <= frac <= 1.0:
            raise ValueError(f"split fractions must lie in [0, 1], got {frac}")
    if n_train < 0 or n_test < 0:
        raise ValueError("task counts must be non-negative")
    meshes = list(meshes)
    if not meshes:
        raise InsufficientMeshes("no meshes supplied")
    need_both = n_train > 0 and n_test > 0
    if need_both and len(meshes) < 2:
        raise InsufficientMeshes("disjoint train/test splits need at least two meshes")

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    order = rng.permutation(len(meshes))
    total = n_train + n_test
    if n_test == 0:
        n_test_meshes = 0
    elif n_train == 0:
        n_test_meshes = len(meshes)
    else:
        n_test_meshes = min(len(meshes) - 1, max(1, int(round(len(meshes) * n_test / total))))
    ids = {int(i): f"mesh{int(i):03d}" for i in range(len(meshes))}
    test_idx = sorted(int(i) for i in order[:n_test_meshes])
    train_idx = sorted(int(i) for i in order[n_test_meshes:])
    mesh_split = {ids[i]: ("test" if i in test_idx else "train") for i in range(len(meshes))}

    tasks = []
    index = 0
    for split, count, frac, pool in (("train", n_train, train_hard, train_idx),
                                     ("test", n_test, test_hard, test_idx)):
        n_hard = _n_hard(count, frac)
        for j in range(count):
            mi = pool[j % len(pool)]
            difficulty = "hard" if j < n_hard else "easy"
            s = task_seed(seed, index)
            task = generate(meshes[mi], s, difficulty, params)
            task.task_id = f"{split}-{j:05d}"
            task.split = split
            task.mesh_id = ids[mi]
            tasks.append(task)
            index += 1
    return TaskSet(int(seed), {ids[i]: meshes[i] for i in range(len(meshes))}, mesh_split, tasks)
