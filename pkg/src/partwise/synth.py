"""Procedural assembly generator with per-component ground truth.

Each family builds a handful of semantic parts as axis-aligned boxes (up is
+z), then over-segments every part into 2..n contacting slabs along its
longest axis, mimicking the fine-grained components of CAD assemblies. Parts
of the same label never touch each other, so label-connected groups recover
the intended part instances exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .assembly import Assembly, Component, LabelSet
from .errors import ConfigError, ValidationError
from .rng import Xoshiro256

FAMILIES = ("table", "shelf", "totem")


@dataclass(frozen=True)
class SynthConfig:
    families: tuple[str, ...] = ("table",)
    count: int = 1
    min_components_per_part: int = 2
    max_components_per_part: int = 4

    def validate(self) -> None:
        if not self.families:
            raise ConfigError("generator needs at least one family")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown family {fam!r}; known: {FAMILIES}")
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if not 1 <= self.min_components_per_part <= self.max_components_per_part:
            raise ConfigError("bad components-per-part range")


def box_mesh(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box as 8 vertices and 12 triangles."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    verts = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ], dtype=np.float64)
    tris = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom
        [4, 5, 6], [4, 6, 7],  # top
        [0, 1, 5], [0, 5, 4],  # front
        [2, 3, 7], [2, 7, 6],  # back
        [1, 2, 6], [1, 6, 5],  # right
        [0, 4, 7], [0, 7, 3],  # left
    ], dtype=np.int32)
    return verts, tris


@dataclass(frozen=True)
class _Part:
    kind: str       # label name
    instance: str   # e.g. "leg2"
    lo: np.ndarray
    hi: np.ndarray
    axis: int | None = None                     # slicing axis override
    fractions: tuple[float, ...] | None = None  # fixed slab fractions


def _uniform(rng: Xoshiro256, lo: float, hi: float) -> float:
    return lo + (hi - lo) * rng.uniform()


def _slice_part(part: _Part, pieces: int, rng: Xoshiro256):
    """Cut the part box into contacting slabs.

    By default slabs are random-width cuts along the longest axis; a part may
    instead pin the axis and the exact slab fractions.
    """
    extent = part.hi - part.lo
    axis = part.axis if part.axis is not None else int(np.argmax(extent))
    if part.fractions is not None:
        weights = np.asarray(part.fractions, dtype=np.float64)
        pieces = len(weights)
    else:
        weights = np.array([0.5 + rng.uniform() for _ in range(pieces)])
    fractions = np.cumsum(weights) / weights.sum()
    cuts = np.concatenate(([0.0], fractions))
    slabs = []
    for j in range(pieces):
        lo = part.lo.copy()
        hi = part.hi.copy()
        lo[axis] = part.lo[axis] + cuts[j] * extent[axis]
        hi[axis] = part.lo[axis] + cuts[j + 1] * extent[axis]
        slabs.append((f"{part.instance}_s{j}", lo, hi))
    return slabs


def _table_parts(rng: Xoshiro256) -> tuple[LabelSet, list[_Part]]:
    width = 1.0
    depth = _uniform(rng, 0.7, 1.0)
    height = _uniform(rng, 0.8, 1.1)
    leg_w = _uniform(rng, 0.07, 0.11)
    top_t = _uniform(rng, 0.06, 0.10)
    overhang = _uniform(rng, 0.0, 0.04)
    z_top = height - top_t

    parts = [_Part("top", "top0",
                   np.array([-overhang, -overhang, z_top]),
                   np.array([width + overhang, depth + overhang, height]))]
    corners = [(0.0, 0.0), (width - leg_w, 0.0), (0.0, depth - leg_w),
               (width - leg_w, depth - leg_w)]
    for i, (cx, cy) in enumerate(corners):
        parts.append(_Part("leg", f"leg{i}",
                           np.array([cx, cy, 0.0]),
                           np.array([cx + leg_w, cy + leg_w, z_top])))
    s_h = _uniform(rng, 0.5, 0.8) * leg_w
    s_z = _uniform(rng, 0.08, 0.20) * height
    for i, y0 in enumerate((0.1 * leg_w, depth - leg_w + 0.1 * leg_w)):
        parts.append(_Part("stretcher", f"stretcher{i}",
                           np.array([leg_w, y0, s_z]),
                           np.array([width - leg_w, y0 + 0.8 * leg_w, s_z + s_h])))
    return LabelSet("table", ("top", "leg", "stretcher")), parts


def _shelf_parts(rng: Xoshiro256) -> tuple[LabelSet, list[_Part]]:
    width = 1.0
    depth = _uniform(rng, 0.3, 0.5)
    height = _uniform(rng, 0.9, 1.2)
    side_t = _uniform(rng, 0.05, 0.08)
    board_t = _uniform(rng, 0.05, 0.08)
    n_boards = 3 + rng.randint(2)

    parts = [
        _Part("side", "side0",
              np.array([0.0, 0.0, 0.0]), np.array([side_t, depth, height])),
        _Part("side", "side1",
              np.array([width - side_t, 0.0, 0.0]), np.array([width, depth, height])),
    ]
    for i in range(n_boards):
        z0 = (i + 0.5) * height / n_boards - 0.5 * board_t
        parts.append(_Part("shelf", f"shelf{i}",
                           np.array([side_t, 0.0, z0]),
                           np.array([width - side_t, depth, z0 + board_t])))
    return LabelSet("shelf", ("side", "shelf")), parts


def _totem_parts(rng: Xoshiro256) -> tuple[LabelSet, list[_Part]]:
    """Three stacked boxes of equal footprint and growing height.

    Voxel shells of equal-footprint boxes scale linearly with height, so with
    a height ratio of 1.5 and the slab touching the box below kept fat, every
    box finishes its internal merges strictly before any merge across a box
    boundary becomes the cheapest group-size option. Each box is therefore a
    node of the size hierarchy, with margins that survive grid quantization.
    One box per label keeps same-label parts out of contact trivially.
    """
    gamma = 1.5
    h0 = _uniform(rng, 0.18, 0.20)
    side = _uniform(rng, 0.24, 0.34)
    z = _uniform(rng, 0.015, 0.03)
    names = ("tier_a", "tier_b", "tier_c")
    parts = []
    for j, kind in enumerate(names):
        h = h0 * gamma ** j
        jx = _uniform(rng, -0.005, 0.005)
        jy = _uniform(rng, -0.005, 0.005)
        lo = np.array([0.5 + jx - side / 2.0, 0.5 + jy - side / 2.0, z])
        hi = np.array([0.5 + jx + side / 2.0, 0.5 + jy + side / 2.0, z + h])
        delta = _uniform(rng, -0.015, 0.015)
        if rng.randint(2) == 0:
            fractions = (0.60 + delta, 0.40 - delta)
        else:
            fractions = (0.55 + delta, 0.10, 0.35 - delta)
        parts.append(_Part(kind, f"{kind}{j}", lo, hi,
                           axis=2, fractions=fractions))
        z += h
    return LabelSet("totem", names), parts


_BUILDERS = {"table": _table_parts, "shelf": _shelf_parts, "totem": _totem_parts}


def synthesize_assembly(family: str, shape_id: str, rng: Xoshiro256,
                        min_pieces: int = 2, max_pieces: int = 4) -> Assembly:
    if family not in _BUILDERS:
        raise ConfigError(f"unknown family {family!r}")
    label_set, parts = _BUILDERS[family](rng)
    components = []
    labels = {}
    for part in parts:
        pieces = min_pieces + rng.randint(max_pieces - min_pieces + 1)
        for name, lo, hi in _slice_part(part, pieces, rng):
            verts, tris = box_mesh(lo, hi)
            cid = len(components)
            components.append(Component(cid, name, verts, tris))
            labels[cid] = label_set.id_of(part.kind)
    return Assembly.from_components(shape_id, components, labels, label_set)


def synthesize_dataset(config: SynthConfig, seed: int) -> list[Assembly]:
    """Generate config.count assemblies, cycling through the families.

    Deterministic for a fixed (config, seed); count 0 gives an empty list.
    """
    config.validate()
    rng = Xoshiro256(seed)
    out = []
    for i in range(config.count):
        family = config.families[i % len(config.families)]
        out.append(synthesize_assembly(
            family, f"{family}_{i:03d}", rng,
            config.min_components_per_part, config.max_components_per_part))
    return out


# ============================================================
# Dataset manifest (split bookkeeping)
# ============================================================

def write_dataset_manifest(path, records: list[dict]) -> None:
    """records: [{"mesh": ..., "manifest": ..., "split": "train"|"test"}, ...]"""
    for rec in records:
        if rec.get("split") not in ("train", "test"):
            raise ValidationError(f"bad split {rec.get('split')!r}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"shapes": records}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset_manifest(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    shapes = doc.get("shapes")
    if not isinstance(shapes, list):
        raise ValidationError("dataset manifest missing 'shapes' list")
    for rec in shapes:
        for key in ("mesh", "manifest", "split"):
            if key not in rec:
                raise ValidationError(f"dataset shape record missing {key!r}")
    return shapes


def assign_splits(count: int, train_fraction: float = 0.3) -> list[str]:
    """Deterministic split labels: the first round(train_fraction * count) are train."""
    n_train = int(round(train_fraction * count))
    return ["train" if i < n_train else "test" for i in range(count)]
