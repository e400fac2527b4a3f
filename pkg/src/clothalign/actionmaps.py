"""Top-down observations, the rotated/scaled observation stack and action decoding.

Image conventions: an observation is ``IMAGE_SIZE`` square; pixel ``(x, y)``
is column ``x``, row ``y``. A view is a :class:`PlanarTransform` taking world
coordinates into the image frame; the image frame is then sampled with a
pixel size of ``scale * WORKSPACE_SIZE / IMAGE_SIZE`` meters, pixel ``(x, y)``
sitting at image-frame point ``((x - 64) * px, (y - 64) * px)``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .errors import AllInvalid, InvalidPixel
from .geometry import PlanarTransform
from .simulator import WORKSPACE_HALF, PrimitiveSpec

IMAGE_SIZE = 128
WORKSPACE_SIZE = 2 * WORKSPACE_HALF
BASE_PIXEL = WORKSPACE_SIZE / IMAGE_SIZE
N_ROTATIONS = 16
SCALES = (0.75, 1.0, 1.5, 2.0, 2.5, 3.0)
GRASP_OFFSET = 10
MAX_SEPARATION = 0.7
PRIMITIVES = ("fling", "pick_place")
FLING_FOOTPRINT = 0.25  # half-depth of the laid-down cloth along the fling direction

_COORDS = np.stack(np.meshgrid(np.linspace(-1.0, 1.0, IMAGE_SIZE), np.linspace(-1.0, 1.0, IMAGE_SIZE)))
_COORDS.setflags(write=False)


@dataclass(frozen=True)
class Observation:
    mask: np.ndarray
    height: np.ndarray
    view: PlanarTransform
    scale: float
    rotation_index: int = 0

    @property
    def coords(self):
        """(2, H, W) positional encoding, identical for every view."""
        return _COORDS

    @property
    def pixel_size(self):
        return self.scale * BASE_PIXEL

    @property
    def tag(self):
        return (self.rotation_index, self.scale)

    def channels(self):
        return np.concatenate([self.mask[None].astype(np.float32),
                               self.height[None].astype(np.float32),
                               _COORDS.astype(np.float32)])


@dataclass(frozen=True)
class TransformStack:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, k):
        return self.entries[k]

    def masks(self):
        return np.stack([e.mask for e in self.entries])


@dataclass(frozen=True)
class ActionCommand:
    kind: str
    grasp_a: np.ndarray
    grasp_b: np.ndarray
    direction: np.ndarray
    entry: tuple = (0, 1.0)
    pixel: tuple = (0, 0)

    def to_spec(self):
        return PrimitiveSpec(self.kind, tuple(self.grasp_a), tuple(self.grasp_b),
                             direction=tuple(self.direction))

    def to_dict(self):
        return {"kind": self.kind, "grasp_a": [float(c) for c in self.grasp_a],
                "grasp_b": [float(c) for c in self.grasp_b],
                "direction": [float(c) for c in self.direction],
                "entry": list(self.entry), "pixel": list(self.pixel)}


def entry_view(rotation_index):
    return PlanarTransform(theta=2.0 * math.pi * rotation_index / N_ROTATIONS)


def world_to_pixel(view, scale, pts):
    """Continuous pixel coordinates of world points (pixel centres are integers)."""
    pts = np.asarray(pts, dtype=np.float64)
    q = pts[..., :2] @ view.linear.T + view.translation
    return q / (scale * BASE_PIXEL) + IMAGE_SIZE / 2


def pixel_to_world(view, scale, px, py):
    """Planar world coordinates of (possibly fractional) pixel positions."""
    q = np.stack([np.asarray(px, dtype=np.float64), np.asarray(py, dtype=np.float64)], axis=-1)
    q = (q - IMAGE_SIZE / 2) * (scale * BASE_PIXEL)
    inv = view.inverse()
    return q @ inv.linear.T + inv.translation


def render_positions(positions, triangles, view=None, scale=1.0, rotation_index=0):
    """Rasterize a triangle mesh at ``positions`` into an :class:`Observation`."""
    view = PlanarTransform.identity() if view is None else view
    mask = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.bool_)
    hmap = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    if len(positions):
        # the kernel tests pixel centres at (x + 0.5, y + 0.5)
        uv = np.ascontiguousarray(world_to_pixel(view, scale, positions) + 0.5)
        K.rasterize(uv, np.ascontiguousarray(positions[:, 2]), triangles, IMAGE_SIZE, IMAGE_SIZE,
                    mask, hmap)
    return Observation(mask, hmap, view, float(scale), rotation_index)


def render_observation(state, view=None, scale=1.0):
    """Top-down orthographic observation of a simulator state."""
    return render_positions(state.positions, state.model.mesh.triangles, view, scale)


def render_mask(positions, triangles):
    """Cloth mask in the standard (identity, scale 1) view."""
    return render_positions(positions, triangles).mask


def build_stack(state):
    """All ``len(SCALES) * N_ROTATIONS`` views, scale-major then rotation."""
    entries = []
    for s in SCALES:
        for r in range(N_ROTATIONS):
            obs = render_positions(state.positions, state.model.mesh.triangles, entry_view(r), s, r)
            entries.append(obs)
    return TransformStack(tuple(entries))


def _grasp_pixels(x, y):
    return (x, y + GRASP_OFFSET), (x, y - GRASP_OFFSET)


def decode_action(entry, pixel, kind):
    """Turn a pixel of a stack entry into a primitive command.

    The grasp pair is ``(x, y + 10)`` and ``(x, y - 10)`` in the entry's
    frame, mapped back to the world with the height map supplying z. The
    fling moves along the entry's +x image axis.
    """
    x, y = int(pixel[0]), int(pixel[1])
    (ax, ay), (bx, by) = _grasp_pixels(x, y)
    for px, py in ((ax, ay), (bx, by)):
        if not (0 <= px < IMAGE_SIZE and 0 <= py < IMAGE_SIZE):
            raise InvalidPixel(f"grasp pixel {(px, py)} of {pixel} lies outside the image")
    if kind not in PRIMITIVES:
        raise ValueError(f"unknown primitive {kind!r}")
    wa = pixel_to_world(entry.view, entry.scale, ax, ay)
    wb = pixel_to_world(entry.view, entry.scale, bx, by)
    za = entry.height[ay, ax] if entry.mask[ay, ax] else 0.0
    zb = entry.height[by, bx] if entry.mask[by, bx] else 0.0
    fwd = entry.view.inverse().linear @ np.array([1.0, 0.0])
    return ActionCommand(kind, np.array([wa[0], wa[1], za]), np.array([wb[0], wb[1], zb]), fwd,
                         entry.tag, (x, y))


def _inside(pts, margin=0.0):
    return np.all(np.abs(pts) <= WORKSPACE_HALF - margin + 1e-12, axis=-1)


@lru_cache(maxsize=None)
def _geometric_validity(primitive, rotation_index, scale, footprint):
    """State-independent part of the validity test for one stack entry."""
    view = entry_view(rotation_index)
    sep = 2 * GRASP_OFFSET * scale * BASE_PIXEL
    ok = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    if sep > MAX_SEPARATION + 1e-12:
        ok.setflags(write=False)
        return ok
    ok[GRASP_OFFSET:IMAGE_SIZE - GRASP_OFFSET] = True
    ys, xs = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    wa = pixel_to_world(view, scale, xs, ys + GRASP_OFFSET)
    wb = pixel_to_world(view, scale, xs, ys - GRASP_OFFSET)
    ok &= _inside(wa) & _inside(wb)
    if primitive == "fling":
        mid = 0.5 * (wa + wb)
        back = view.inverse().linear
        fwd = back @ np.array([1.0, 0.0])
        side = back @ np.array([0.0, 1.0])
        for a in (-0.5 * sep, 0.5 * sep):
            for b in (-footprint, footprint):
                ok &= _inside(mid + a * side + b * fwd)
    ok.setflags(write=False)
    return ok


def validity_mask(stack, primitive, footprint=FLING_FOOTPRINT):
    """Boolean grid ``(K, H, W)`` of pixels whose decoded action is admissible.

    A pixel is invalid when its grasp pair is wider than ``MAX_SEPARATION``,
    either grasp pixel leaves the image or the workspace, a grasp pixel
    misses the cloth (fling needs both, pick&place only the pick), or a fling
    would lay the cloth down outside the workspace.
    """
    if primitive not in PRIMITIVES:
        raise ValueError(f"unknown primitive {primitive!r}")
    out = np.zeros((len(stack), IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    for k, entry in enumerate(stack.entries):
        geo = _geometric_validity(primitive, entry.rotation_index, entry.scale, footprint)
        if not geo.any():
            continue
        mask = entry.mask
        ok = out[k]
        ok[:-GRASP_OFFSET] = mask[GRASP_OFFSET:]
        if primitive == "fling":
            ok[GRASP_OFFSET:] &= mask[:-GRASP_OFFSET]
            ok[:GRASP_OFFSET] = False
        ok &= geo
    return out


def combine_and_select(value_c, value_a, alpha, valid):
    """Argmax of ``(1 - alpha) * value_c + alpha * value_a`` over valid pixels.

    Arrays are shaped ``(P, K, H, W)`` for P primitives; ties go to the lowest
    ``(p, k, y, x)``. Returns ``(index tuple, value)``.
    """
    value_c = np.asarray(value_c, dtype=np.float64)
    value_a = np.asarray(value_a, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if value_c.shape != value_a.shape or value_c.shape != valid.shape:
        raise ValueError("value maps and validity mask must share one shape")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    combined = np.where(valid, (1.0 - alpha) * value_c + alpha * value_a, -np.inf)
    if not valid.any():
        raise AllInvalid("no valid pixel in any map")
    flat = int(np.argmax(combined))
    idx = np.unravel_index(flat, combined.shape)
    return tuple(int(i) for i in idx), float(combined[idx])


def select_action(stack, value_c, value_a, alpha, valid):
    """Combine value maps and decode the winning pixel into an :class:`ActionCommand`."""
    (p, k, y, x), value = combine_and_select(value_c, value_a, alpha, valid)
    return decode_action(stack[k], (x, y), PRIMITIVES[p]), value


# -- binary export ---------------------------------------------------------------

BLOB_MAGIC = b"CAOBS1\x00\x00"


def export_stack(stack, path):
    """Write ``magic, JSON header length, JSON header, float32 K*C*H*W data``."""
    data = np.stack([e.channels() for e in stack.entries]).astype("<f4")
    header = json.dumps({"shape": list(data.shape), "dtype": "float32", "order": "C",
                         "channels": ["mask", "height", "u", "v"],
                         "tags": [list(e.tag) for e in stack.entries]}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(data.tobytes(order="C"))


def read_stack_blob(path):
    with open(path, "rb") as fh:
        if fh.read(len(BLOB_MAGIC)) != BLOB_MAGIC:
            raise ValueError("not an observation stack blob")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f4").reshape(header["shape"])
    return header, data
