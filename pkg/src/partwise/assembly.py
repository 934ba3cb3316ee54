"""Assembly data model: components, labels, normalization, OBJ and manifest I/O.

An assembly is an ordered set of triangle-mesh components. Component ids are
their positions (0-based). Geometry is kept in the units of the source file;
a recorded translation + uniform scale maps it into the unit cube, and all
voxel work happens in that normalized frame.
"""

from __future__ import annotations

import colorsys
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class Component:
    id: int
    name: str
    vertices: np.ndarray   # (n, 3) float64, model units
    triangles: np.ndarray  # (m, 3) int32, indices into vertices

    def validate(self) -> None:
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError(f"component {self.name}: bad vertex array shape")
        if self.triangles.size and (
                self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValidationError(f"component {self.name}: triangle index out of range")


@dataclass(frozen=True)
class Normalization:
    """normalized = (p - translation) * scale; maps the model bbox into [0, 1]^3."""

    translation: tuple[float, float, float]
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.translation)) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.translation)

    @staticmethod
    def identity() -> "Normalization":
        return Normalization((0.0, 0.0, 0.0), 1.0)

    @staticmethod
    def fit(points: np.ndarray) -> "Normalization":
        pts = np.asarray(points, dtype=np.float64)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        extent = float((hi - lo).max())
        scale = 1.0 / extent if extent > 0.0 else 1.0
        center = 0.5 * (lo + hi)
        translation = center - 0.5 / scale
        return Normalization(tuple(float(v) for v in translation), scale)


@dataclass(frozen=True)
class LabelSet:
    """Ordered label names for a category; ids are 1-based, 0 is the null label."""

    category: str
    labels: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.labels)

    def id_of(self, name: str) -> int:
        try:
            return self.labels.index(name) + 1
        except ValueError:
            raise ValidationError(f"unknown label name {name!r} for category {self.category!r}")

    def name_of(self, label_id: int) -> str:
        if not 1 <= label_id <= len(self.labels):
            raise ValidationError(f"label id {label_id} out of range 1..{len(self.labels)}")
        return self.labels[label_id - 1]


@dataclass(frozen=True)
class Assembly:
    id: str
    components: tuple[Component, ...]
    normalization: Normalization
    labels: dict[int, int] = field(default_factory=dict)  # component id -> label id
    label_set: LabelSet | None = None

    @staticmethod
    def from_components(shape_id: str, components, labels=None, label_set=None) -> "Assembly":
        components = tuple(components)
        if not components:
            raise ValidationError("assembly needs at least one component")
        names = set()
        for pos, comp in enumerate(components):
            comp.validate()
            if comp.id != pos:
                raise ValidationError(
                    f"component ids must be consecutive positions; got {comp.id} at {pos}")
            if comp.name in names:
                raise ValidationError(f"duplicate component name {comp.name!r}")
            names.add(comp.name)
        all_pts = np.concatenate([c.vertices for c in components])
        norm = Normalization.fit(all_pts)
        return Assembly(shape_id, components, norm, dict(labels or {}), label_set)

    @property
    def num_components(self) -> int:
        return len(self.components)

    def component(self, cid: int) -> Component:
        if not 0 <= cid < len(self.components):
            raise ValidationError(f"component id {cid} out of range")
        return self.components[cid]

    def normalized_points(self, cid: int) -> np.ndarray:
        return self.normalization.apply(self.component(cid).vertices)

    def normalized_meshes(self, ids=None) -> list[tuple[np.ndarray, np.ndarray]]:
        if ids is None:
            ids = range(len(self.components))
        return [(self.normalized_points(c), self.component(c).triangles) for c in ids]

    def is_labeled(self) -> bool:
        return len(self.labels) == len(self.components)

    def require_labels(self) -> None:
        if not self.is_labeled():
            missing = sorted(set(range(len(self.components))) - set(self.labels))
            raise ValidationError(f"assembly {self.id!r} is missing labels for {missing}")


# ============================================================
# Wavefront OBJ
# ============================================================

def _parse_face_index(token: str, num_vertices: int, line_no: int) -> int:
    head = token.split("/")[0]
    try:
        raw = int(head)
    except ValueError:
        raise ParseError(f"bad face index {token!r}", line_no)
    if raw > 0:
        idx = raw - 1
    elif raw < 0:
        idx = num_vertices + raw
    else:
        raise ParseError("face index 0 is not valid in OBJ", line_no)
    if not 0 <= idx < num_vertices:
        raise ParseError(f"face index {raw} out of range ({num_vertices} vertices)", line_no)
    return idx


def load_obj(path) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Parse an OBJ file into (group name, vertices, triangles) records.

    Vertices are file-global in OBJ, so each group's faces are re-indexed into
    a private vertex array. Polygons are fan-triangulated. Groups come from
    `g`/`o` lines (last token when several names are given); repeated group
    names merge, first appearance fixes the order.
    """
    vertices: list[list[float]] = []
    groups: dict[str, list[list[int]]] = {}
    order: list[str] = []
    current = "default"

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            kind = parts[0]
            if kind == "v":
                if len(parts) < 4:
                    raise ParseError("vertex needs 3 coordinates", line_no)
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise ParseError("bad vertex coordinate", line_no)
            elif kind in ("g", "o"):
                current = parts[-1] if len(parts) > 1 else "default"
            elif kind == "f":
                if len(parts) < 4:
                    raise ParseError("face needs at least 3 vertices", line_no)
                idx = [_parse_face_index(tok, len(vertices), line_no) for tok in parts[1:]]
                faces = groups.setdefault(current, [])
                if current not in order:
                    order.append(current)
                for i in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[i], idx[i + 1]])
            # every other record type (vn, vt, mtllib, usemtl, s, ...) is ignored

    out = []
    all_verts = np.asarray(vertices, dtype=np.float64)
    for name in order:
        tris = np.asarray(groups[name], dtype=np.int64)
        used, local = np.unique(tris.ravel(), return_inverse=True)
        out.append((name, all_verts[used], local.reshape(-1, 3).astype(np.int32)))
    if not out:
        raise ParseError(f"no faces found in {os.fspath(path)!r}")
    return out


def load_manifest(path) -> tuple[LabelSet, dict[str, str]]:
    """Read a manifest JSON: category, ordered label names, component -> label."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest is not valid JSON: {exc}")
    for key in ("category", "labels", "components"):
        if key not in doc:
            raise ValidationError(f"manifest missing key {key!r}")
    labels = tuple(str(v) for v in doc["labels"])
    if len(set(labels)) != len(labels) or not labels:
        raise ValidationError("manifest labels must be a non-empty unique list")
    label_set = LabelSet(str(doc["category"]), labels)
    mapping = {str(k): str(v) for k, v in doc["components"].items()}
    for name, label in mapping.items():
        if label not in labels:
            raise ValidationError(f"component {name!r} uses unknown label {label!r}")
    return label_set, mapping


def write_manifest(path, label_set: LabelSet, component_labels: dict[str, str]) -> None:
    doc = {
        "category": label_set.category,
        "labels": list(label_set.labels),
        "components": dict(sorted(component_labels.items())),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_assembly(mesh_path, manifest_path=None) -> Assembly:
    """Load an OBJ file, optionally attaching ground-truth labels from a manifest."""
    records = load_obj(mesh_path)
    components = tuple(
        Component(i, name, verts, tris) for i, (name, verts, tris) in enumerate(records))
    shape_id = os.path.splitext(os.path.basename(os.fspath(mesh_path)))[0]

    labels: dict[int, int] = {}
    label_set = None
    if manifest_path is not None:
        label_set, mapping = load_manifest(manifest_path)
        by_name = {c.name: c.id for c in components}
        for name, label in mapping.items():
            if name not in by_name:
                raise ValidationError(f"manifest names missing group {name!r}")
            labels[by_name[name]] = label_set.id_of(label)
    return Assembly.from_components(shape_id, components, labels, label_set)


def write_obj(assembly: Assembly, path) -> None:
    """Write the assembly as a plain OBJ, one group per component."""
    with open(path, "w", encoding="utf-8") as fh:
        offset = 1
        for comp in assembly.components:
            fh.write(f"g {comp.name}\n")
            for v in comp.vertices:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for tri in comp.triangles:
                fh.write(f"f {tri[0] + offset} {tri[1] + offset} {tri[2] + offset}\n")
            offset += len(comp.vertices)


def label_color(label_id: int) -> tuple[float, float, float]:
    """Deterministic color for a label id (golden-ratio hue walk)."""
    hue = (label_id * 0.6180339887498949) % 1.0
    return colorsys.hsv_to_rgb(hue, 0.65, 0.95)


def export_labeled_obj(assembly: Assembly, labels: dict[int, int], path) -> None:
    """Write the assembly as OBJ + MTL with one color per label.

    Every component must be labeled; ids of unlabeled components are listed in
    the error. Components with equal labels share one material.
    """
    missing = sorted(c.id for c in assembly.components if c.id not in labels)
    if missing:
        raise ValidationError(f"unlabeled: {missing}")

    path = os.fspath(path)
    stem = os.path.splitext(path)[0]
    mtl_path = stem + ".mtl"
    used = sorted(set(labels.values()))

    with open(mtl_path, "w", encoding="utf-8") as fh:
        for lid in used:
            r, g, b = label_color(lid)
            fh.write(f"newmtl label_{lid}\n")
            fh.write(f"Kd {r:.6f} {g:.6f} {b:.6f}\n")

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"mtllib {os.path.basename(mtl_path)}\n")
        offset = 1
        for comp in assembly.components:
            fh.write(f"g {comp.name}\n")
            fh.write(f"usemtl label_{labels[comp.id]}\n")
            for v in comp.vertices:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for tri in comp.triangles:
                fh.write(f"f {tri[0] + offset} {tri[1] + offset} {tri[2] + offset}\n")
            offset += len(comp.vertices)
