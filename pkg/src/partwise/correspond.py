"""Component correspondence between two labeled assemblies of one category.

Alignment searches the four quarter-turn yaws about the up axis (+z, through
the center of the normalized unit cube) and keeps the one minimizing a
symmetric nearest-centroid cost over components that share a label. Matching
then pairs components label by label: centroids are mapped through the yaw
plus a per-label bounding-box alignment, and the closest cross pair is kept
repeatedly until one side runs out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .assembly import Assembly
from .errors import ValidationError

_CUBE_CENTER = np.array([0.5, 0.5, 0.5])


def yaw_matrix(quarter_turns: int) -> np.ndarray:
    """Rotation matrix for k quarter turns about +z."""
    k = quarter_turns % 4
    c = [1.0, 0.0, -1.0, 0.0][k]
    s = [0.0, 1.0, 0.0, -1.0][k]
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Alignment:
    quarter_turns: int
    scale: float
    translation: tuple[float, float, float]

    def apply(self, points: np.ndarray) -> np.ndarray:
        rot = yaw_matrix(self.quarter_turns)
        pts = np.asarray(points, dtype=np.float64)
        return (self.scale * (pts - _CUBE_CENTER) @ rot.T
                + _CUBE_CENTER + np.asarray(self.translation))


def _centroids(assembly: Assembly) -> np.ndarray:
    return np.array([assembly.normalized_points(c).mean(axis=0)
                     for c in range(assembly.num_components)])


def _shared_labels(a: Assembly, b: Assembly) -> list[tuple[int, int]]:
    """Pairs of (label id in a, label id in b) for labels present in both.

    Labels are matched by name when both assemblies carry a label set, by
    raw id otherwise.
    """
    la = set(a.labels.values())
    lb = set(b.labels.values())
    if a.label_set is not None and b.label_set is not None:
        by_name = {a.label_set.name_of(l): l for l in la}
        pairs = [(by_name[b.label_set.name_of(l)], l)
                 for l in sorted(lb) if b.label_set.name_of(l) in by_name]
    else:
        pairs = [(l, l) for l in sorted(la & lb)]
    if not pairs:
        raise ValidationError("assemblies share no labels")
    return sorted(pairs)


def _nearest_cost(src: np.ndarray, dst: np.ndarray) -> float:
    d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


def align(a: Assembly, b: Assembly) -> Alignment:
    """Coarse registration of a onto b over the four up-axis quarter turns.

    The cost of a candidate yaw is the symmetric sum of squared
    nearest-centroid distances between same-label component sets. After the
    yaw is fixed, a uniform scale (RMS spread ratio) and a translation
    (centroid difference) refine the fit. Ties keep the smaller turn count.
    """
    a.require_labels()
    b.require_labels()
    pairs = _shared_labels(a, b)
    ca = _centroids(a)
    cb = _centroids(b)
    groups = []
    for la, lb in pairs:
        ga = ca[[c for c in range(a.num_components) if a.labels[c] == la]]
        gb = cb[[c for c in range(b.num_components) if b.labels[c] == lb]]
        if len(ga) and len(gb):
            groups.append((ga, gb))
    if not groups:
        raise ValidationError("assemblies share no labeled components")

    best = None
    for k in range(4):
        rot = yaw_matrix(k)
        cost = 0.0
        for ga, gb in groups:
            ra = (ga - _CUBE_CENTER) @ rot.T + _CUBE_CENTER
            cost += _nearest_cost(ra, gb) + _nearest_cost(gb, ra)
        if best is None or cost < best[0] - 1e-12:
            best = (cost, k)
    k = best[1]

    rot = yaw_matrix(k)
    all_a = (np.concatenate([g[0] for g in groups]) - _CUBE_CENTER) @ rot.T + _CUBE_CENTER
    all_b = np.concatenate([g[1] for g in groups])
    spread_a = float(np.sqrt(((all_a - all_a.mean(axis=0)) ** 2).sum(axis=1).mean()))
    spread_b = float(np.sqrt(((all_b - all_b.mean(axis=0)) ** 2).sum(axis=1).mean()))
    scale = spread_b / spread_a if spread_a > 1e-12 and spread_b > 1e-12 else 1.0
    mapped = scale * (all_a - _CUBE_CENTER) + _CUBE_CENTER
    translation = all_b.mean(axis=0) - mapped.mean(axis=0)
    return Alignment(k, scale, tuple(float(t) for t in translation))


@dataclass(frozen=True)
class CorrespondenceMap:
    pairs: tuple[tuple[int, int], ...]
    unmatched_a: tuple[int, ...]
    unmatched_b: tuple[int, ...]
    alignment: Alignment

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "unmatched_a": list(self.unmatched_a),
            "unmatched_b": list(self.unmatched_b),
            "quarter_turns": self.alignment.quarter_turns,
            "scale": self.alignment.scale,
            "translation": list(self.alignment.translation),
        }


def _box_map(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Map src points through the per-axis affine taking src's bbox to dst's."""
    lo_s, hi_s = src.min(axis=0), src.max(axis=0)
    lo_d, hi_d = dst.min(axis=0), dst.max(axis=0)
    ext_s = hi_s - lo_s
    ext_d = hi_d - lo_d
    scale = np.ones(3)
    usable = (ext_s > 1e-12) & (ext_d > 1e-12)
    scale[usable] = ext_d[usable] / ext_s[usable]
    mid_s = (lo_s + hi_s) / 2.0
    mid_d = (lo_d + hi_d) / 2.0
    return (src - mid_s) * scale + mid_d


def match_components(a: Assembly, b: Assembly,
                     alignment: Alignment | None = None) -> CorrespondenceMap:
    """Injective per-label matching by centroid proximity.

    Within each shared label the transformed centroids of a are aligned to
    b's by bounding box, then the globally closest remaining cross pair is
    accepted until one side is exhausted (distance ties break on the smaller
    id pair). Components of unshared labels and the longer side's leftovers
    are reported unmatched.
    """
    alignment = alignment if alignment is not None else align(a, b)
    pairs_by_label = _shared_labels(a, b)
    ca = alignment.apply(_centroids(a))
    cb = _centroids(b)

    matched: list[tuple[int, int]] = []
    used_a: set[int] = set()
    used_b: set[int] = set()
    for la, lb in pairs_by_label:
        ids_a = [c for c in range(a.num_components) if a.labels[c] == la]
        ids_b = [c for c in range(b.num_components) if b.labels[c] == lb]
        if not ids_a or not ids_b:
            continue
        pa = _box_map(ca[ids_a], cb[ids_b]) if len(ids_a) > 1 and len(ids_b) > 1 \
            else ca[ids_a]
        pb = cb[ids_b]
        remaining_a = list(range(len(ids_a)))
        remaining_b = list(range(len(ids_b)))
        d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2))
        while remaining_a and remaining_b:
            best = None
            for i in remaining_a:
                for j in remaining_b:
                    cand = (d[i, j], ids_a[i], ids_b[j], i, j)
                    if best is None or cand < best:
                        best = cand
            matched.append((best[1], best[2]))
            used_a.add(best[1])
            used_b.add(best[2])
            remaining_a.remove(best[3])
            remaining_b.remove(best[4])

    matched.sort()
    unmatched_a = tuple(c for c in range(a.num_components) if c not in used_a)
    unmatched_b = tuple(c for c in range(b.num_components) if c not in used_b)
    return CorrespondenceMap(tuple(matched), unmatched_a, unmatched_b, alignment)


def write_correspondence(path, cmap: CorrespondenceMap) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cmap.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
