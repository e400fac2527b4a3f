"""Procedural garment meshes on a square lattice.

A garment is a set of lattice cells; every cell contributes its four corner
vertices, two triangles, four structural edges and two shear diagonals. Bend
springs join vertices two lattice steps apart along a row or column when both
intermediate edges exist. Part dimensions snap to whole multiples of the
lattice pitch.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams, WrongCategory

STRUCTURAL, SHEAR, BEND = 0, 1, 2
SPRING_KINDS = ("structural", "shear", "bend")
MAX_GARMENT_HEIGHT = 0.7

SHIRT_DEFAULTS = {
    "body_width": 0.4,
    "body_height": 0.5,
    "sleeve_length": 0.25,
    "sleeve_width": 0.12,
    "pitch": 0.025,
}
PANTS_DEFAULTS = {
    "waist_width": 0.4,
    "rise": 0.15,
    "leg_length": 0.5,
    "leg_width": 0.175,
    "spread": 0.1,
    "pitch": 0.025,
}
SHIRT_KEYPOINTS = ("left_sleeve", "right_sleeve", "left_shoulder", "right_shoulder",
                   "left_waist", "right_waist")
PANTS_KEYPOINTS = ("left_waist", "right_waist", "left_hem", "right_hem")


@dataclass(frozen=True)
class GarmentMesh:
    category: str
    vertices: np.ndarray
    triangles: np.ndarray
    springs: np.ndarray
    rest_lengths: np.ndarray
    spring_kinds: np.ndarray
    keypoints: dict
    params: dict = field(default_factory=dict)

    @property
    def n_vertices(self):
        return len(self.vertices)

    def keypoint_positions(self, positions=None):
        pos = self.vertices if positions is None else positions
        return {name: pos[idx] for name, idx in self.keypoints.items()}

    def extent(self):
        """Planar bbox (width, height) of the canonical configuration."""
        span = self.vertices[:, :2].max(axis=0) - self.vertices[:, :2].min(axis=0)
        return float(span[0]), float(span[1])

    def to_text(self):
        return dumps(self)

    def content_hash(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _snap(length, pitch, name):
    cells = int(round(length / pitch))
    if cells < 1:
        raise InvalidParams(f"{name}={length} is shorter than one lattice pitch ({pitch})")
    return cells


def _mesh_from_cells(cells, pitch):
    """Build vertices/triangles/springs from a set of (i, j) lattice cells."""
    cells = sorted(set(cells), key=lambda c: (c[1], c[0]))
    corners = set()
    for i, j in cells:
        corners.update([(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)])
    order = sorted(corners, key=lambda c: (c[1], c[0]))
    index = {c: k for k, c in enumerate(order)}

    tris = []
    edges = set()
    shear = []
    for i, j in cells:
        a, b = index[(i, j)], index[(i + 1, j)]
        c, d = index[(i + 1, j + 1)], index[(i, j + 1)]
        tris.append((a, b, c))
        tris.append((a, c, d))
        for e in ((a, b), (b, c), (d, c), (a, d)):
            edges.add((min(e), max(e)))
        shear.append((a, c))
        shear.append((b, d))

    bend = []
    for (i, j), k in index.items():
        for di, dj in ((1, 0), (0, 1)):
            mid = (i + di, j + dj)
            far = (i + 2 * di, j + 2 * dj)
            if mid in index and far in index:
                m, f = index[mid], index[far]
                if (min(k, m), max(k, m)) in edges and (min(m, f), max(m, f)) in edges:
                    bend.append((k, f))

    ij = np.array(order, dtype=np.float64)
    verts = np.column_stack([ij * pitch, np.zeros(len(order))])
    structural = sorted(edges)
    springs = np.array(structural + shear + bend, dtype=np.int64).reshape(-1, 2)
    kinds = np.array([STRUCTURAL] * len(structural) + [SHEAR] * len(shear) + [BEND] * len(bend),
                     dtype=np.int8)
    return verts, np.array(tris, dtype=np.int64), springs, kinds, index


def _finish(category, verts, tris, springs, kinds, keypoints, params):
    verts = verts.copy()
    verts[:, :2] -= verts[:, :2].mean(axis=0)
    rest = np.linalg.norm(verts[springs[:, 0]] - verts[springs[:, 1]], axis=1)
    for arr in (verts, tris, springs, rest, kinds):
        arr.setflags(write=False)
    return GarmentMesh(category, verts, tris, springs, rest, kinds, keypoints, params)


def shirt_lattice_counts(params=None):
    """Cell counts (body_x, body_y, left_sleeve, right_sleeve, sleeve_y) for ``params``."""
    p = {**SHIRT_DEFAULTS, **(params or {})}
    pitch = p["pitch"]
    left = p.get("left_sleeve_length", p["sleeve_length"])
    right = p.get("right_sleeve_length", p["sleeve_length"])
    return (_snap(p["body_width"], pitch, "body_width"), _snap(p["body_height"], pitch, "body_height"),
            _snap(left, pitch, "left_sleeve_length"), _snap(right, pitch, "right_sleeve_length"),
            _snap(p["sleeve_width"], pitch, "sleeve_width"))


def make_shirt(params=None):
    """T-shaped long-sleeve shirt: a body rectangle with sleeves along its top edge.

    ``params`` overrides :data:`SHIRT_DEFAULTS`; ``left_sleeve_length`` and
    ``right_sleeve_length`` override ``sleeve_length`` per side.
    """
    p = {**SHIRT_DEFAULTS, **(params or {})}
    if any(not (isinstance(val, (int, float)) and val > 0) for val in p.values()):
        raise InvalidParams(f"shirt parameters must be positive: {p}")
    pitch = p["pitch"]
    nbx, nby, nsl, nsr, nsy = shirt_lattice_counts(p)
    if nsy > nby:
        raise InvalidParams("sleeve_width exceeds body_height")
    if nby * pitch > MAX_GARMENT_HEIGHT + 1e-12:
        raise InvalidParams(f"garment height {nby * pitch:.3f} m exceeds {MAX_GARMENT_HEIGHT} m")

    cells = [(i, j) for i in range(nbx) for j in range(nby)]
    rows = range(nby - nsy, nby)
    cells += [(i, j) for i in range(-nsl, 0) for j in rows]
    cells += [(i, j) for i in range(nbx, nbx + nsr) for j in rows]
    verts, tris, springs, kinds, index = _mesh_from_cells(cells, pitch)
    verts[:, 0] -= 0.5 * nbx * pitch

    keypoints = {
        "left_sleeve": index[(-nsl, nby)],
        "right_sleeve": index[(nbx + nsr, nby)],
        "left_shoulder": index[(0, nby)],
        "right_shoulder": index[(nbx, nby)],
        "left_waist": index[(0, 0)],
        "right_waist": index[(nbx, 0)],
    }
    return _finish("shirt", verts, tris, springs, kinds, keypoints, p)


def _inside_convex(pt, poly, eps=1e-9):
    n = len(poly)
    sign = 0
    for k in range(n):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % n]
        cross = (bx - ax) * (pt[1] - ay) - (by - ay) * (pt[0] - ax)
        if abs(cross) <= eps:
            continue
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def make_pants(params=None):
    """Inverted-V pants: a waist band with two legs splaying outwards.

    ``left_leg_length``/``right_leg_length`` override ``leg_length`` per side.
    """
    p = {**PANTS_DEFAULTS, **(params or {})}
    if any(not (isinstance(val, (int, float)) and val > 0) for val in p.values()):
        raise InvalidParams(f"pants parameters must be positive: {p}")
    pitch = p["pitch"]
    nw = _snap(p["waist_width"], pitch, "waist_width")
    half = 0.5 * nw * pitch
    rise = p["rise"]
    legw = p["leg_width"]
    spread = p["spread"]
    lengths = {"left": p.get("left_leg_length", p["leg_length"]),
               "right": p.get("right_leg_length", p["leg_length"])}
    if 2 * legw > 2 * half + 1e-12:
        raise InvalidParams("legs wider than the waist")
    height = rise + max(lengths.values())
    if height > MAX_GARMENT_HEIGHT + 1e-12:
        raise InvalidParams(f"garment height {height:.3f} m exceeds {MAX_GARMENT_HEIGHT} m")

    polys = [[(-half, -rise), (half, -rise), (half, 0.0), (-half, 0.0)]]
    hems = {}
    for side, sgn in (("left", -1.0), ("right", 1.0)):
        bottom = -rise - lengths[side]
        outer_top = sgn * half
        inner_top = sgn * (half - legw)
        outer_bot = outer_top + sgn * spread
        inner_bot = inner_top + sgn * spread
        quad = [(outer_top, -rise), (inner_top, -rise), (inner_bot, bottom), (outer_bot, bottom)]
        polys.append(quad)
        hems[side] = (outer_bot, bottom)

    ymin = -rise - max(lengths.values())
    imin = int(math.floor((-half - spread) / pitch)) - 1
    imax = int(math.ceil((half + spread) / pitch)) + 1
    jmin = int(math.floor(ymin / pitch)) - 1
    cells = []
    for i in range(imin, imax):
        for j in range(jmin, 1):
            centre = ((i + 0.5) * pitch, (j + 0.5) * pitch)
            if any(_inside_convex(centre, poly) for poly in polys):
                cells.append((i, j))
    verts, tris, springs, kinds, _ = _mesh_from_cells(cells, pitch)

    def nearest(pt):
        return int(np.argmin(np.linalg.norm(verts[:, :2] - np.asarray(pt), axis=1)))

    keypoints = {
        "left_waist": nearest((-half, 0.0)),
        "right_waist": nearest((half, 0.0)),
        "left_hem": nearest(hems["left"]),
        "right_hem": nearest(hems["right"]),
    }
    return _finish("pants", verts, tris, springs, kinds, keypoints, p)


def make_garment(category, params=None):
    if category == "shirt":
        return make_shirt(params)
    if category == "pants":
        return make_pants(params)
    raise InvalidParams(f"unknown garment category {category!r}")


def _pick(rng, lo, hi, pitch):
    """Uniform lattice-aligned length in [lo, hi]."""
    a = int(math.ceil(lo / pitch - 1e-9))
    b = max(a, int(math.floor(hi / pitch + 1e-9)))
    return pitch * int(rng.integers(a, b + 1))


def random_params(category, rng, pitch=0.025):
    """Sample lattice-aligned parameter variations around the defaults."""
    if category == "shirt":
        return {
            "body_width": _pick(rng, 0.35, 0.45, pitch),
            "body_height": _pick(rng, 0.45, 0.55, pitch),
            "sleeve_length": _pick(rng, 0.2, 0.275, pitch),
            "sleeve_width": _pick(rng, 0.1, 0.15, pitch),
            "pitch": pitch,
        }
    if category == "pants":
        waist = _pick(rng, 0.35, 0.425, pitch)
        return {
            "waist_width": waist,
            "rise": _pick(rng, 0.125, 0.175, pitch),
            "leg_length": _pick(rng, 0.425, 0.5, pitch),
            "leg_width": _pick(rng, 0.15, min(0.2, 0.5 * waist), pitch),
            "spread": _pick(rng, 0.075, 0.1, pitch),
            "pitch": pitch,
        }
    raise InvalidParams(f"unknown garment category {category!r}")


def arm_length(mesh):
    """Shorter of the two sleeve-to-shoulder keypoint distances."""
    if mesh.category != "shirt":
        raise WrongCategory(f"arm length is defined for shirts, not {mesh.category}")
    kp = mesh.keypoint_positions()
    return float(min(np.linalg.norm(kp[f"{s}_sleeve"][:2] - kp[f"{s}_shoulder"][:2])
                     for s in ("left", "right")))


# -- serialization -----------------------------------------------------------

FORMAT_HEADER = "garment-mesh 1"


def _g(x):
    return format(float(x), ".17g")


def dumps(mesh):
    out = io.StringIO()
    out.write(f"{FORMAT_HEADER}\n")
    out.write(f"category {mesh.category}\n")
    out.write(f"params {json.dumps(mesh.params, sort_keys=True)}\n")
    out.write(f"vertices {len(mesh.vertices)}\n")
    for x, y, z in mesh.vertices:
        out.write(f"{_g(x)} {_g(y)} {_g(z)}\n")
    out.write(f"triangles {len(mesh.triangles)}\n")
    for a, b, c in mesh.triangles:
        out.write(f"{a} {b} {c}\n")
    out.write(f"springs {len(mesh.springs)}\n")
    for (i, j), rest, kind in zip(mesh.springs, mesh.rest_lengths, mesh.spring_kinds):
        out.write(f"{i} {j} {_g(rest)} {SPRING_KINDS[kind]}\n")
    out.write(f"keypoints {len(mesh.keypoints)}\n")
    for name, idx in mesh.keypoints.items():
        out.write(f"{name} {idx}\n")
    return out.getvalue()


def loads(text):
    lines = iter(text.splitlines())

    def section(name):
        head = next(lines).split(" ", 1)
        if head[0] != name:
            raise ValueError(f"expected section {name!r}, found {head[0]!r}")
        return head[1]

    if next(lines) != FORMAT_HEADER:
        raise ValueError("not a garment mesh document")
    category = section("category")
    params = json.loads(section("params"))
    n = int(section("vertices"))
    verts = np.array([[float(t) for t in next(lines).split()] for _ in range(n)]).reshape(n, 3)
    m = int(section("triangles"))
    tris = np.array([[int(t) for t in next(lines).split()] for _ in range(m)], dtype=np.int64).reshape(m, 3)
    s = int(section("springs"))
    rows = [next(lines).split() for _ in range(s)]
    springs = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(s, 2)
    rest = np.array([float(r[2]) for r in rows])
    kinds = np.array([SPRING_KINDS.index(r[3]) for r in rows], dtype=np.int8)
    k = int(section("keypoints"))
    keypoints = {}
    for _ in range(k):
        name, idx = next(lines).split()
        keypoints[name] = int(idx)
    for arr in (verts, tris, springs, rest, kinds):
        arr.setflags(write=False)
    return GarmentMesh(category, verts, tris, springs, rest, kinds, keypoints, params)


def save(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(mesh))


def load(path):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
