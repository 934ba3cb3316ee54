"""Part-hypothesis generation by greedy bottom-up grouping.

Three agglomerative hierarchies are built over the components of an
assembly, each merging the adjacent cluster pair that minimizes one
criterion:

  center   distance between convex-hull volume centroids
  contact  1 - contact ratio, where the ratio is the dilated shared volume
           over the smaller operand volume (capped at 1)
  size     joint voxel volume as a fraction of the whole shape

Adjacency means positive dilated contact; if the contact graph is
disconnected, isolated clusters are linked to their nearest cluster by
center distance so every hierarchy completes with 2n - 1 nodes. Internal
nodes of the hierarchies are the hypothesis pool; a seeded, perturbed sort
picks a budgeted subset. Ground-truth assignment and the delete/insert
augmentations used for scorer training live here too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .assembly import Assembly
from .errors import ValidationError
from .rng import Xoshiro256
from .voxel import UNIT_BOX, VoxelGrid, dilate, voxelize

GROUPING_RESOLUTION = 64
TRUTH_RESOLUTION = 200

CRITERIA = ("center", "contact", "size")


def hull_centroid(points: np.ndarray) -> np.ndarray:
    """Volume centroid of the convex hull of a point set.

    The hull is decomposed into tetrahedra against an interior reference
    point; the centroid is their volume-weighted mean. Degenerate (coplanar
    or collinear) sets fall back to the mean of the unique points.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 4:
        return pts.mean(axis=0)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return pts.mean(axis=0)
    ref = pts[hull.vertices].mean(axis=0)
    tri = pts[hull.simplices]                     # (m, 3, 3)
    a = tri[:, 0] - ref
    b = tri[:, 1] - ref
    c = tri[:, 2] - ref
    vol = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0
    centers = (tri.sum(axis=1) + ref) / 4.0
    total = vol.sum()
    if total <= 0.0:
        return pts.mean(axis=0)
    return (centers * vol[:, np.newaxis]).sum(axis=0) / total


class GroupGeometry:
    """Per-assembly voxel and centroid caches at the grouping resolution."""

    def __init__(self, assembly: Assembly, resolution: int = GROUPING_RESOLUTION):
        self.assembly = assembly
        self.resolution = resolution
        self.meshes = assembly.normalized_meshes()
        self.comp_vox: list[np.ndarray] = []
        self.comp_dil: list[np.ndarray] = []
        for mesh in self.meshes:
            grid = voxelize([mesh], UNIT_BOX, resolution)
            self.comp_vox.append(grid.indices)
            self.comp_dil.append(dilate(grid).indices)
        self.comp_counts = np.array([v.size for v in self.comp_vox])
        self.shape_count = int(np.unique(np.concatenate(self.comp_vox)).size)
        self.comp_centroids = np.array(
            [hull_centroid(verts) for verts, _ in self.meshes])
        bounds = np.array([[verts.min(axis=0), verts.max(axis=0)]
                           for verts, _ in self.meshes])
        self.comp_lo = bounds[:, 0, :]
        self.comp_hi = bounds[:, 1, :]
        self._union_cache: dict[frozenset, np.ndarray] = {}

    def grid(self, indices: np.ndarray) -> VoxelGrid:
        return VoxelGrid(self.resolution, UNIT_BOX, indices)

    def voxels(self, ids) -> np.ndarray:
        key = frozenset(int(i) for i in ids)
        if not key:
            raise ValidationError("empty component set")
        cached = self._union_cache.get(key)
        if cached is None:
            parts = [self.comp_vox[i] for i in key]
            cached = parts[0] if len(parts) == 1 else np.unique(np.concatenate(parts))
            self._union_cache[key] = cached
        return cached

    def dilated(self, ids) -> np.ndarray:
        parts = [self.comp_dil[int(i)] for i in set(ids)]
        return parts[0] if len(parts) == 1 else np.unique(np.concatenate(parts))

    def volume(self, ids) -> int:
        return int(self.voxels(ids).size)

    def points(self, ids) -> np.ndarray:
        return np.concatenate([self.meshes[int(i)][0] for i in sorted(set(ids))])

    def neighbors_possible(self, a: int, b: int) -> bool:
        """Cheap reject: boxes further apart than the dilation reach cannot touch."""
        margin = 2.5 / self.resolution
        return bool(np.all(self.comp_lo[a] <= self.comp_hi[b] + margin)
                    and np.all(self.comp_lo[b] <= self.comp_hi[a] + margin))

    def component_contacts(self) -> list[tuple[int, int]]:
        n = len(self.comp_vox)
        pairs = []
        for a in range(n):
            for b in range(a + 1, n):
                if not self.neighbors_possible(a, b):
                    continue
                if np.intersect1d(self.comp_dil[a], self.comp_dil[b],
                                  assume_unique=True).size > 0:
                    pairs.append((a, b))
        return pairs


def _check_disjoint(ids_a, ids_b) -> tuple[set, set]:
    sa, sb = set(int(i) for i in ids_a), set(int(i) for i in ids_b)
    if not sa or not sb:
        raise ValidationError("criterion operands must be non-empty")
    if sa & sb:
        raise ValidationError(f"criterion operands overlap: {sorted(sa & sb)}")
    return sa, sb


def center_distance(geometry: GroupGeometry, ids_a, ids_b) -> float:
    """Distance between the convex-hull volume centroids of two groups."""
    sa, sb = _check_disjoint(ids_a, ids_b)
    ca = hull_centroid(geometry.points(sa))
    cb = hull_centroid(geometry.points(sb))
    return float(np.linalg.norm(ca - cb))


def contact_ratio(geometry: GroupGeometry, ids_a, ids_b) -> float:
    """Dilated shared volume over the smaller operand volume, capped at 1."""
    sa, sb = _check_disjoint(ids_a, ids_b)
    va = geometry.volume(sa)
    vb = geometry.volume(sb)
    if va == 0 or vb == 0:
        raise ValidationError("contact ratio of a zero-volume group")
    shared = np.intersect1d(geometry.dilated(sa), geometry.dilated(sb),
                            assume_unique=True).size
    return min(1.0, shared / min(va, vb))


def group_size(geometry: GroupGeometry, ids_a, ids_b) -> float:
    """Joint volume of the merged pair as a fraction of the whole shape."""
    sa, sb = _check_disjoint(ids_a, ids_b)
    joint = np.unique(np.concatenate([geometry.voxels(sa), geometry.voxels(sb)])).size
    return joint / geometry.shape_count


# ============================================================
# Hierarchies
# ============================================================

@dataclass(frozen=True)
class HierarchyNode:
    members: frozenset[int]
    order: int  # 0 for leaves, merge step 1..n-1 otherwise


@dataclass(frozen=True)
class GroupingHierarchy:
    criterion: str
    nodes: tuple[HierarchyNode, ...]

    def leaves(self) -> list[HierarchyNode]:
        return [n for n in self.nodes if n.order == 0]

    def internal(self) -> list[HierarchyNode]:
        return [n for n in self.nodes if n.order > 0]

    def member_sets(self) -> set[frozenset[int]]:
        return {n.members for n in self.nodes}


class _Cluster:
    __slots__ = ("members", "vox", "dil", "points", "centroid", "min_id")

    def __init__(self, members, vox, dil, points, centroid):
        self.members = members
        self.vox = vox
        self.dil = dil
        self.points = points
        self.centroid = centroid
        self.min_id = min(members)


def _connect_isolated(geometry: GroupGeometry, n: int,
                      edges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Add nearest-centroid edges until the contact graph is connected."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        parent[find(a)] = find(b)
    extra = []
    while True:
        roots = {find(i) for i in range(n)}
        if len(roots) <= 1:
            break
        best = None
        for a in range(n):
            for b in range(a + 1, n):
                if find(a) == find(b):
                    continue
                d = float(np.linalg.norm(
                    geometry.comp_centroids[a] - geometry.comp_centroids[b]))
                cand = (d, a, b)
                if best is None or cand < best:
                    best = cand
        extra.append((best[1], best[2]))
        parent[find(best[1])] = find(best[2])
    return edges + extra


def build_hierarchy(geometry: GroupGeometry, criterion: str) -> GroupingHierarchy:
    """Greedy agglomeration under one criterion until a single cluster remains.

    Equal keys are broken by smaller center distance, then by the
    lexicographically smallest pair of cluster minimum member ids.
    """
    if criterion not in CRITERIA:
        raise ValidationError(f"unknown criterion {criterion!r}")
    n = len(geometry.comp_vox)
    nodes = [HierarchyNode(frozenset([i]), 0) for i in range(n)]
    if n == 1:
        return GroupingHierarchy(criterion, tuple(nodes))

    clusters: dict[int, _Cluster] = {}
    for i in range(n):
        clusters[i] = _Cluster(frozenset([i]), geometry.comp_vox[i],
                               geometry.comp_dil[i], geometry.meshes[i][0],
                               geometry.comp_centroids[i])

    adjacency: dict[int, set[int]] = {i: set() for i in range(n)}
    for a, b in _connect_isolated(geometry, n, geometry.component_contacts()):
        adjacency[a].add(b)
        adjacency[b].add(a)

    def pair_entry(a: int, b: int):
        ca, cb = clusters[a], clusters[b]
        cdist = float(np.linalg.norm(ca.centroid - cb.centroid))
        if criterion == "center":
            key = cdist
        elif criterion == "contact":
            shared = np.intersect1d(ca.dil, cb.dil, assume_unique=True).size
            ratio = min(1.0, shared / min(ca.vox.size, cb.vox.size))
            key = 1.0 - ratio
        else:
            joint = np.unique(np.concatenate([ca.vox, cb.vox])).size
            key = joint / geometry.shape_count
        tie = tuple(sorted((ca.min_id, cb.min_id)))
        return key, cdist, tie

    pairs: dict[tuple[int, int], tuple] = {}
    for a in adjacency:
        for b in adjacency[a]:
            if a < b:
                pairs[(a, b)] = pair_entry(a, b)

    next_id = n
    for order in range(1, n):
        (a, b) = min(pairs, key=lambda p: pairs[p])
        ca, cb = clusters.pop(a), clusters.pop(b)
        members = ca.members | cb.members
        vox = np.unique(np.concatenate([ca.vox, cb.vox]))
        dil = np.unique(np.concatenate([ca.dil, cb.dil]))
        points = np.concatenate([ca.points, cb.points])
        merged = _Cluster(members, vox, dil, points, hull_centroid(points))
        cid = next_id
        next_id += 1
        clusters[cid] = merged
        nodes.append(HierarchyNode(members, order))

        neighbors = (adjacency.pop(a) | adjacency.pop(b)) - {a, b}
        adjacency[cid] = set()
        for other in neighbors:
            adjacency[other].discard(a)
            adjacency[other].discard(b)
            adjacency[other].add(cid)
            adjacency[cid].add(other)
        for key in [p for p in pairs if a in p or b in p]:
            del pairs[key]
        for other in adjacency[cid]:
            pairs[tuple(sorted((cid, other)))] = pair_entry(cid, other)

    return GroupingHierarchy(criterion, tuple(nodes))


def build_hierarchies(geometry: GroupGeometry) -> list[GroupingHierarchy]:
    """The three hierarchies in canonical order (center, contact, size)."""
    return [build_hierarchy(geometry, c) for c in CRITERIA]


# ============================================================
# Selection
# ============================================================

@dataclass(frozen=True)
class PartHypothesis:
    id: int
    members: tuple[int, ...]
    source: str          # criterion that produced the node
    hierarchy_rank: int  # merge order within its hierarchy
    selection_rank: int  # 1-based rank after the perturbed sort


def select_hypotheses(hierarchies, budget: int, seed: int) -> list[PartHypothesis]:
    """Randomized budgeted pick of internal nodes from the hierarchies.

    Per hierarchy, internal nodes are sorted by merge order descending
    (larger coverage first), the 1-based sorted index i is perturbed to
    i * u_i with u_i drawn from the seeded generator, the nodes are resorted
    ascending, and the top ceil(budget / 3) survive. The union is
    deduplicated on identical member sets (best selection rank wins, then
    hierarchy order) and truncated to the budget. Selections are nested
    across budgets for a fixed seed, and bit-identical across platforms.
    """
    if budget < 3:
        raise ValidationError(f"budget must be >= 3, got {budget}")
    rng = Xoshiro256(seed)
    per_hier = -(-budget // 3)  # ceil
    pool = []
    for h_idx, hier in enumerate(hierarchies):
        internal = sorted(hier.internal(), key=lambda node: -node.order)
        perturbed = []
        for i, node in enumerate(internal, start=1):
            perturbed.append((i * rng.uniform_open(), i, node))
        perturbed.sort(key=lambda item: (item[0], item[1]))
        for rank, (_, _, node) in enumerate(perturbed[:per_hier], start=1):
            pool.append((rank, h_idx, node))

    pool.sort(key=lambda item: (item[0], item[1]))
    seen: set[frozenset[int]] = set()
    out: list[PartHypothesis] = []
    for rank, h_idx, node in pool:
        if node.members in seen:
            continue
        seen.add(node.members)
        out.append(PartHypothesis(
            id=len(out),
            members=tuple(sorted(node.members)),
            source=hierarchies[h_idx].criterion,
            hierarchy_rank=node.order,
            selection_rank=rank,
        ))
        if len(out) == budget:
            break
    return out


# ============================================================
# Ground truth
# ============================================================

@dataclass(frozen=True)
class GroundTruthPart:
    label: int
    members: tuple[int, ...]


def ground_truth_parts(assembly: Assembly,
                       geometry: GroupGeometry | None = None) -> list[GroundTruthPart]:
    """Part instances: maximal same-label groups connected by dilated contact."""
    assembly.require_labels()
    geometry = geometry or GroupGeometry(assembly)
    n = assembly.num_components
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in geometry.component_contacts():
        if assembly.labels[a] == assembly.labels[b]:
            parent[find(a)] = find(b)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    parts = [GroundTruthPart(assembly.labels[v[0]], tuple(sorted(v)))
             for v in groups.values()]
    parts.sort(key=lambda p: p.members)
    return parts


def voxelize_components(assembly: Assembly, resolution: int) -> list[np.ndarray]:
    """Sorted occupied-cell indices of each component on a shared grid."""
    return [voxelize([mesh], UNIT_BOX, resolution).indices
            for mesh in assembly.normalized_meshes()]


class GroundTruthContext:
    """Caches the high-resolution voxel sets needed to judge hypotheses."""

    def __init__(self, assembly: Assembly, resolution: int = TRUTH_RESOLUTION,
                 geometry: GroupGeometry | None = None):
        assembly.require_labels()
        self.assembly = assembly
        self.resolution = resolution
        self.parts = ground_truth_parts(assembly, geometry)
        self.comp_vox = voxelize_components(assembly, resolution)
        self.part_vox = [self._union(p.members) for p in self.parts]
        self._bounds_cache = [self._bounds(v) for v in self.part_vox]
        self._hyp_cache: dict[frozenset, np.ndarray] = {}

    def _union(self, ids) -> np.ndarray:
        arrays = [self.comp_vox[i] for i in ids]
        return arrays[0] if len(arrays) == 1 else np.unique(np.concatenate(arrays))

    def _bounds(self, vox: np.ndarray):
        if vox.size == 0:
            return None
        r = self.resolution
        x = vox % r
        y = (vox // r) % r
        z = vox // (r * r)
        return (x.min(), x.max(), y.min(), y.max(), z.min(), z.max())

    def hypothesis_voxels(self, members) -> np.ndarray:
        key = frozenset(int(m) for m in members)
        cached = self._hyp_cache.get(key)
        if cached is None:
            cached = self._union(sorted(key))
            self._hyp_cache[key] = cached
        return cached

    def assign(self, members) -> tuple[int, float]:
        """Ground-truth (label, confidence) for a hypothesis.

        The label is the majority ground-truth label over the hypothesis's own
        occupied voxels when its share exceeds 0.7, else 0 (null). Confidence
        is the best IoU against any ground-truth part instance.
        """
        members = sorted(set(int(m) for m in members))
        if not members:
            raise ValidationError("hypothesis has no members")
        hyp = self.hypothesis_voxels(members)
        total = hyp.size
        label = 0
        if total > 0:
            by_label: dict[int, list[int]] = {}
            for m in members:
                by_label.setdefault(self.assembly.labels[m], []).append(m)
            best_frac = -1.0
            best_label = 0
            for lid in sorted(by_label):
                frac = self._union(by_label[lid]).size / total
                if frac > best_frac:
                    best_frac = frac
                    best_label = lid
            if best_frac > 0.7:
                label = best_label

        confidence = 0.0
        hyp_bounds = self._bounds(hyp)
        for part_vox, bounds in zip(self.part_vox, self._bounds_cache):
            if bounds is None or hyp_bounds is None:
                continue
            if (hyp_bounds[0] > bounds[1] or bounds[0] > hyp_bounds[1]
                    or hyp_bounds[2] > bounds[3] or bounds[2] > hyp_bounds[3]
                    or hyp_bounds[4] > bounds[5] or bounds[4] > hyp_bounds[5]):
                continue
            inter = np.intersect1d(hyp, part_vox, assume_unique=True).size
            union = hyp.size + part_vox.size - inter
            if union > 0:
                confidence = max(confidence, inter / union)
        return label, float(confidence)


def assign_ground_truth(assembly: Assembly, members,
                        resolution: int = TRUTH_RESOLUTION) -> tuple[int, float]:
    """One-shot wrapper around GroundTruthContext.assign."""
    return GroundTruthContext(assembly, resolution).assign(members)


# ============================================================
# Augmentation
# ============================================================

def augment(assembly: Assembly, part_members, mode: str, seed: int,
            geometry: GroupGeometry | None = None,
            parts: list[GroundTruthPart] | None = None) -> tuple[int, ...]:
    """Perturb a part's member set for scorer training.

    delete: remove k members, k uniform in 1..floor(0.3 * n) (0 when the
    floor is 0). insert: add k components of parts in contact with this one,
    k uniform in 0..floor(0.3 * n), capped by the neighbor pool. Insert with
    no adjacent part is an error.
    """
    members = sorted(set(int(m) for m in part_members))
    if not members:
        raise ValidationError("part has no members")
    n = len(members)
    cap = int(0.3 * n)
    rng = Xoshiro256(seed)

    if mode == "delete":
        k = 0 if cap == 0 else 1 + rng.randint(cap)
        removed = set(rng.sample(members, k))
        return tuple(m for m in members if m not in removed)

    if mode == "insert":
        geometry = geometry or GroupGeometry(assembly)
        parts = parts if parts is not None else ground_truth_parts(assembly, geometry)
        mset = set(members)
        pool: list[int] = []
        for part in parts:
            others = set(part.members)
            if others & mset:
                continue
            touches = np.intersect1d(geometry.dilated(mset),
                                     geometry.dilated(others),
                                     assume_unique=True).size > 0
            if touches:
                pool.extend(part.members)
        if not pool:
            raise ValidationError("insert augmentation needs an adjacent part")
        k = min(rng.randint(cap + 1), len(pool))
        added = rng.sample(sorted(pool), k)
        return tuple(sorted(mset | set(added)))

    raise ValidationError(f"unknown augmentation mode {mode!r}")


# ============================================================
# Hypothesis JSONL
# ============================================================

def write_hypotheses(path, hypotheses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for hyp in hypotheses:
            fh.write(json.dumps({
                "id": hyp.id,
                "members": list(hyp.members),
                "source": hyp.source,
                "hierarchy_rank": hyp.hierarchy_rank,
                "selection_rank": hyp.selection_rank,
            }, separators=(",", ":")))
            fh.write("\n")


def read_hypotheses(path) -> list[PartHypothesis]:
    out = []
    seen_ids = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"hypothesis line {line_no}: bad JSON ({exc})")
            try:
                hyp = PartHypothesis(
                    id=int(doc["id"]),
                    members=tuple(int(m) for m in doc["members"]),
                    source=str(doc["source"]),
                    hierarchy_rank=int(doc["hierarchy_rank"]),
                    selection_rank=int(doc["selection_rank"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"hypothesis line {line_no}: {exc}")
            if hyp.source not in CRITERIA:
                raise ValidationError(
                    f"hypothesis line {line_no}: bad source {hyp.source!r}")
            if not hyp.members:
                raise ValidationError(f"hypothesis line {line_no}: empty members")
            if hyp.id in seen_ids:
                raise ValidationError(f"hypothesis line {line_no}: duplicate id {hyp.id}")
            seen_ids.add(hyp.id)
            out.append(hyp)
    return out
