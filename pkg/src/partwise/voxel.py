"""Conservative surface voxelization and binary-volume operations.

A mesh is rasterized into an axis-aligned frame at resolution R: a voxel is
set exactly when at least one triangle overlaps the voxel's closed box
(separating-axis test), so thin walls never drop out. Grids store sorted
linear voxel indices (x fastest, then y, then z) rather than dense bit
arrays; components of a large assembly stay cheap to hold at R = 200.

The module also provides the 1-voxel-dilated contact volume used by the
grouping criteria, plain intersection-over-union, the three-channel local /
global-part / global-context volumes consumed by hypothesis scorers, and the
MCV1 binary container those scorers read.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_EPS = 1e-9


# ============================================================
# Frames and grids
# ============================================================

@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by two corners (inclusive)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    @staticmethod
    def from_arrays(lo, hi) -> "Box":
        return Box(tuple(float(v) for v in lo), tuple(float(v) for v in hi))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lo, dtype=np.float64), np.asarray(self.hi, dtype=np.float64)

    def extents(self) -> np.ndarray:
        lo, hi = self.arrays()
        return hi - lo

    def center(self) -> np.ndarray:
        lo, hi = self.arrays()
        return 0.5 * (lo + hi)

    def is_positive(self) -> bool:
        return bool(np.all(self.extents() > 0.0))

    def cube(self, minimum: float = 1e-6) -> "Box":
        """Smallest cube containing the box, short axes padded symmetrically."""
        side = max(float(self.extents().max()), minimum)
        c = self.center()
        return Box.from_arrays(c - 0.5 * side, c + 0.5 * side)


UNIT_BOX = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def bounding_box(points: np.ndarray) -> Box:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValidationError("bounding box of empty point set")
    return Box.from_arrays(pts.min(axis=0), pts.max(axis=0))


@dataclass(frozen=True)
class VoxelGrid:
    """Occupancy over frame at the given resolution, as sorted linear indices."""

    resolution: int
    frame: Box
    indices: np.ndarray  # int64, sorted, unique

    @property
    def count(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        """Flat uint8 array of R**3 entries, x fastest."""
        dense = np.zeros(self.resolution ** 3, dtype=np.uint8)
        dense[self.indices] = 1
        return dense

    @staticmethod
    def from_dense(flat: np.ndarray, frame: Box, resolution: int) -> "VoxelGrid":
        flat = np.asarray(flat).reshape(-1)
        if flat.size != resolution ** 3:
            raise ValidationError(
                f"dense occupancy has {flat.size} entries, expected {resolution ** 3}")
        return VoxelGrid(resolution, frame, np.flatnonzero(flat).astype(np.int64))


def _check_compatible(a: VoxelGrid, b: VoxelGrid) -> None:
    if a.resolution != b.resolution:
        raise ValidationError(
            f"grid resolution mismatch: {a.resolution} vs {b.resolution}")
    alo, ahi = a.frame.arrays()
    blo, bhi = b.frame.arrays()
    if not (np.allclose(alo, blo, atol=1e-12) and np.allclose(ahi, bhi, atol=1e-12)):
        raise ValidationError("grid frame mismatch")


# ============================================================
# Rasterization
# ============================================================

def _triangle_cell_overlap(tv: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Separating-axis test of one triangle against unit cells.

    tv: (3, 3) triangle vertices in grid coordinates (cells are unit cubes).
    centers: (M, 3) cell centers. Returns a boolean mask of length M. Touching
    counts as overlap; the test is closed with a small tolerance.
    """
    h = 0.5
    v = tv[np.newaxis, :, :] - centers[:, np.newaxis, :]  # (M, 3, 3)
    edges = tv[[1, 2, 0]] - tv                            # e0, e1, e2
    ok = np.ones(centers.shape[0], dtype=bool)

    # 9 cross-product axes: unit axis u x edge e has one zero component.
    for j in range(3):
        ex, ey, ez = edges[j]
        axes = ((0.0, -ez, ey), (ez, 0.0, -ex), (-ey, ex, 0.0))
        for axis in axes:
            ax = np.asarray(axis)
            rad = h * np.abs(ax).sum() + _EPS
            p = v @ ax                     # (M, 3) projections of the verts
            ok &= ~((p.min(axis=1) > rad) | (p.max(axis=1) < -rad))
            if not ok.any():
                return ok

    # Triangle plane vs cell.
    n = np.cross(edges[0], edges[1])
    rad = h * np.abs(n).sum() + _EPS
    d = v[:, 0, :] @ n
    ok &= np.abs(d) <= rad
    return ok


def voxelize(meshes, frame: Box, resolution: int) -> VoxelGrid:
    """Rasterize triangle meshes into a frame.

    meshes: iterable of (vertices, triangles) pairs; vertices (n, 3) float,
    triangles (m, 3) integer indices into those vertices. Geometry outside
    the frame is clipped. An empty mesh list gives an empty grid.
    """
    if resolution < 1:
        raise ValidationError(f"resolution must be >= 1, got {resolution}")
    if not frame.is_positive():
        raise ValidationError("voxelization frame has a non-positive extent")

    lo, hi = frame.arrays()
    cell = (hi - lo) / resolution
    chunks = []
    r = resolution
    for verts, tris in meshes:
        verts = np.asarray(verts, dtype=np.float64)
        tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
        if tris.size == 0:
            continue
        grid_pts = (verts - lo) / cell
        for tri in tris:
            tv = grid_pts[tri]
            tlo = np.floor(tv.min(axis=0) - _EPS).astype(np.int64)
            thi = np.floor(tv.max(axis=0) + _EPS).astype(np.int64)
            tlo = np.clip(tlo, 0, r - 1)
            thi = np.clip(thi, 0, r - 1)
            if np.any(thi < tlo):
                continue
            xs = np.arange(tlo[0], thi[0] + 1)
            ys = np.arange(tlo[1], thi[1] + 1)
            zs = np.arange(tlo[2], thi[2] + 1)
            gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
            idx = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
            centers = idx.astype(np.float64) + 0.5
            mask = _triangle_cell_overlap(tv, centers)
            if mask.any():
                hit = idx[mask]
                chunks.append(hit[:, 0] + r * hit[:, 1] + r * r * hit[:, 2])

    if not chunks:
        return VoxelGrid(resolution, frame, np.empty(0, dtype=np.int64))
    return VoxelGrid(resolution, frame, np.unique(np.concatenate(chunks)))


# ============================================================
# Set operations
# ============================================================

def dilate(grid: VoxelGrid) -> VoxelGrid:
    """1-voxel dilation with the full 3x3x3 neighborhood, clipped at the border."""
    if grid.count == 0:
        return grid
    r = grid.resolution
    ix = grid.indices % r
    iy = (grid.indices // r) % r
    iz = grid.indices // (r * r)
    out = []
    for dz in (-1, 0, 1):
        nz = iz + dz
        mz = (nz >= 0) & (nz < r)
        for dy in (-1, 0, 1):
            ny = iy + dy
            my = mz & (ny >= 0) & (ny < r)
            for dx in (-1, 0, 1):
                nx = ix + dx
                m = my & (nx >= 0) & (nx < r)
                out.append(nx[m] + r * ny[m] + r * r * nz[m])
    return VoxelGrid(r, grid.frame, np.unique(np.concatenate(out)))


def contact_volume(a: VoxelGrid, b: VoxelGrid) -> int:
    """Shared voxel count after dilating both operands by one voxel."""
    _check_compatible(a, b)
    if a.count == 0 or b.count == 0:
        return 0
    da = dilate(a).indices
    db = dilate(b).indices
    return int(np.intersect1d(da, db, assume_unique=True).size)


def iou(a: VoxelGrid, b: VoxelGrid) -> float:
    """Intersection over union of the raw (undilated) occupancies.

    Two empty grids give 0.0 by convention.
    """
    _check_compatible(a, b)
    inter = int(np.intersect1d(a.indices, b.indices, assume_unique=True).size)
    union = a.count + b.count - inter
    if union == 0:
        return 0.0
    return inter / union


# ============================================================
# Hypothesis volumes and the MCV1 container
# ============================================================

HYPOTHESIS_RESOLUTION = 30


@dataclass(frozen=True)
class HypothesisVolumes:
    """The three binary channels a volumetric scorer sees for one hypothesis."""

    local: VoxelGrid           # members in their padded-to-cube tight frame
    global_part: VoxelGrid     # members in the shape frame
    global_context: VoxelGrid  # everything else in the shape frame

    def dense_channels(self) -> np.ndarray:
        return np.stack([
            self.local.to_dense(),
            self.global_part.to_dense(),
            self.global_context.to_dense(),
        ])


def hypothesis_volumes(assembly, members, resolution: int = HYPOTHESIS_RESOLUTION) -> HypothesisVolumes:
    """Render one hypothesis (set of component ids) into its three channels."""
    members = sorted(set(int(m) for m in members))
    if not members:
        raise ValidationError("hypothesis has no members")
    member_meshes = assembly.normalized_meshes(members)
    rest = [c.id for c in assembly.components if c.id not in set(members)]
    rest_meshes = assembly.normalized_meshes(rest) if rest else []

    verts = np.concatenate([m[0] for m in member_meshes])
    local_frame = bounding_box(verts).cube()
    return HypothesisVolumes(
        local=voxelize(member_meshes, local_frame, resolution),
        global_part=voxelize(member_meshes, UNIT_BOX, resolution),
        global_context=voxelize(rest_meshes, UNIT_BOX, resolution),
    )


_MCV1_MAGIC = b"MCV1"


def write_mcv1(path, records, resolution: int = HYPOTHESIS_RESOLUTION) -> None:
    """Write hypothesis volumes to the MCV1 binary container.

    records: sequence of HypothesisVolumes, or of (3, R**3) uint8 arrays as
    returned by read_mcv1. Channel order is local, global part, global
    context; voxels run x fastest.
    """
    rows = []
    for rec in records:
        if isinstance(rec, HypothesisVolumes):
            dense = rec.dense_channels()
        else:
            dense = np.asarray(rec, dtype=np.uint8)
        if dense.shape != (3, resolution ** 3):
            raise ValidationError(
                f"volume record has shape {dense.shape}, expected (3, {resolution ** 3})")
        rows.append(dense)
    blob = bytearray()
    blob += _MCV1_MAGIC
    blob += struct.pack("<III", resolution, 3, len(rows))
    for dense in rows:
        blob += dense.astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def read_mcv1(path) -> tuple[int, np.ndarray]:
    """Read an MCV1 file; returns (resolution, (N, 3, R**3) uint8 array)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MCV1_MAGIC:
        raise ValidationError("not an MCV1 file (bad magic)")
    if len(raw) < 16:
        raise ValidationError("truncated MCV1 header")
    res, channels, count = struct.unpack("<III", raw[4:16])
    if channels != 3:
        raise ValidationError(f"MCV1 must carry 3 channels, found {channels}")
    expected = 16 + count * channels * res ** 3
    if len(raw) != expected:
        raise ValidationError(
            f"MCV1 payload is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw[16:], dtype=np.uint8).reshape(count, channels, res ** 3)
    if data.size and data.max() > 1:
        raise ValidationError("MCV1 voxels must be 0 or 1")
    return res, data.copy()
