from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from partwise.assembly import Assembly, Component, LabelSet
from partwise.errors import ValidationError
from partwise.hypothesis import (
    CRITERIA,
    GroundTruthContext,
    GroupGeometry,
    augment,
    build_hierarchies,
    build_hierarchy,
    center_distance,
    contact_ratio,
    ground_truth_parts,
    group_size,
    hull_centroid,
    read_hypotheses,
    select_hypotheses,
    write_hypotheses,
)
from partwise.rng import Xoshiro256
from partwise.synth import box_mesh, synthesize_assembly


def _assembly_of_boxes(boxes, labels=None, label_names=None, shape_id="boxes"):
    comps = []
    for i, (lo, hi) in enumerate(boxes):
        verts, tris = box_mesh(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        comps.append(Component(i, f"c{i}", verts, tris.astype(np.int32)))
    label_set = LabelSet("test", tuple(label_names)) if label_names else None
    return Assembly.from_components(shape_id, comps, labels or {}, label_set)


# ------------------------------------------------------------------
# Criteria closed forms
# ------------------------------------------------------------------

def test_hull_centroid_of_cube_is_its_center():
    verts, _ = box_mesh(np.array([0.2, 0.3, 0.4]), np.array([0.6, 0.5, 0.8]))
    assert np.allclose(hull_centroid(verts), [0.4, 0.4, 0.6], atol=1e-12)


def test_hull_centroid_degenerate_falls_back_to_mean():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert np.allclose(hull_centroid(pts), [1.0, 0.0, 0.0])


def test_center_distance_between_two_cubes():
    # Normalization is identity here: the two cubes already span [0, 1] in x.
    asm = _assembly_of_boxes([
        ((0.0, 0.4, 0.4), (0.2, 0.6, 0.6)),
        ((0.8, 0.4, 0.4), (1.0, 0.6, 0.6)),
    ])
    geo = GroupGeometry(asm, resolution=20)
    d = center_distance(geo, [0], [1])
    assert d == pytest.approx(0.8, abs=1e-9)


def test_contact_ratio_matches_dense_reference():
    asm = _assembly_of_boxes([
        ((0.1, 0.1, 0.1), (0.5, 0.9, 0.9)),
        ((0.5, 0.1, 0.1), (0.9, 0.9, 0.9)),
    ])
    res = 16
    geo = GroupGeometry(asm, resolution=res)

    def dense(indices):
        flat = np.zeros(res ** 3, dtype=bool)
        flat[indices] = True
        return flat.reshape(res, res, res)

    da = ndimage.binary_dilation(dense(geo.comp_vox[0]), structure=np.ones((3, 3, 3)))
    db = ndimage.binary_dilation(dense(geo.comp_vox[1]), structure=np.ones((3, 3, 3)))
    shared = int(np.logical_and(da, db).sum())
    expected = min(1.0, shared / min(geo.comp_vox[0].size, geo.comp_vox[1].size))

    assert contact_ratio(geo, [0], [1]) == pytest.approx(expected)
    assert contact_ratio(geo, [1], [0]) == pytest.approx(expected)


def test_contact_ratio_caps_at_one():
    # A sliver in full face contact with a much larger box: the dilated
    # shared region swallows the sliver's own volume.
    asm = _assembly_of_boxes([
        ((0.3, 0.3, 0.46), (0.7, 0.7, 0.5)),
        ((0.1, 0.1, 0.5), (0.9, 0.9, 0.9)),
    ])
    geo = GroupGeometry(asm, resolution=16)
    assert contact_ratio(geo, [0], [1]) == 1.0


def test_group_size_of_everything_is_one():
    asm = _assembly_of_boxes([
        ((0.0, 0.0, 0.0), (0.5, 1.0, 1.0)),
        ((0.5, 0.0, 0.0), (1.0, 1.0, 1.0)),
    ])
    geo = GroupGeometry(asm, resolution=12)
    assert group_size(geo, [0], [1]) == pytest.approx(1.0)


def test_group_size_fraction_matches_counts():
    asm = _assembly_of_boxes([
        ((0.0, 0.0, 0.0), (0.3, 0.3, 0.3)),
        ((0.3, 0.0, 0.0), (0.6, 0.3, 0.3)),
        ((0.6, 0.0, 0.0), (1.0, 0.3, 0.3)),
    ])
    geo = GroupGeometry(asm, resolution=16)
    joint = np.unique(np.concatenate([geo.comp_vox[0], geo.comp_vox[1]])).size
    assert group_size(geo, [0], [1]) == pytest.approx(joint / geo.shape_count)
    assert group_size(geo, [0], [1]) < 1.0


def test_criteria_reject_overlapping_or_empty_operands():
    asm = _assembly_of_boxes([
        ((0.0, 0.0, 0.0), (0.5, 1.0, 1.0)),
        ((0.5, 0.0, 0.0), (1.0, 1.0, 1.0)),
    ])
    geo = GroupGeometry(asm, resolution=8)
    for fn in (center_distance, contact_ratio, group_size):
        with pytest.raises(ValidationError):
            fn(geo, [0], [0, 1])
        with pytest.raises(ValidationError):
            fn(geo, [], [1])


# ------------------------------------------------------------------
# Hierarchies
# ------------------------------------------------------------------

def _tower(n):
    boxes = []
    h = 1.0 / n
    for i in range(n):
        boxes.append(((0.2, 0.2, i * h), (0.8, 0.8, (i + 1) * h)))
    return _assembly_of_boxes(boxes)


@pytest.mark.parametrize("criterion", CRITERIA)
def test_hierarchy_has_2n_minus_1_nested_nodes(criterion):
    asm = _tower(5)
    geo = GroupGeometry(asm, resolution=16)
    hier = build_hierarchy(geo, criterion)
    assert hier.criterion == criterion
    assert len(hier.nodes) == 2 * 5 - 1
    assert len(hier.leaves()) == 5
    assert len(hier.internal()) == 4

    # Laminar family: any two member sets are nested or disjoint.
    sets = [n.members for n in hier.nodes]
    for a in sets:
        for b in sets:
            assert a <= b or b <= a or not (a & b)

    root = max(hier.nodes, key=lambda n: n.order)
    assert root.members == frozenset(range(5))
    # Merge orders are the steps 1..n-1 plus n zeros for leaves.
    assert sorted(n.order for n in hier.nodes) == [0] * 5 + [1, 2, 3, 4]


def test_center_hierarchy_merges_closest_pair_first():
    # Three aligned boxes; the left pair almost touches, the right one is far.
    asm = _assembly_of_boxes([
        ((0.00, 0.4, 0.4), (0.20, 0.6, 0.6)),
        ((0.21, 0.4, 0.4), (0.41, 0.6, 0.6)),
        ((0.80, 0.4, 0.4), (1.00, 0.6, 0.6)),
    ])
    geo = GroupGeometry(asm, resolution=32)
    hier = build_hierarchy(geo, "center")
    first = next(n for n in hier.nodes if n.order == 1)
    assert first.members == frozenset({0, 1})


def test_hierarchy_completes_on_disconnected_input():
    # Two islands without contact still agglomerate to a single root.
    asm = _assembly_of_boxes([
        ((0.0, 0.0, 0.0), (0.2, 0.2, 0.2)),
        ((0.8, 0.8, 0.8), (1.0, 1.0, 1.0)),
    ])
    geo = GroupGeometry(asm, resolution=16)
    for criterion in CRITERIA:
        hier = build_hierarchy(geo, criterion)
        assert len(hier.nodes) == 3
        assert max(n.order for n in hier.nodes) == 1


def test_build_hierarchies_covers_all_criteria():
    asm = _tower(4)
    geo = GroupGeometry(asm, resolution=16)
    hiers = build_hierarchies(geo)
    assert [h.criterion for h in hiers] == list(CRITERIA)


def test_unknown_criterion_is_rejected():
    geo = GroupGeometry(_tower(2), resolution=8)
    with pytest.raises(ValidationError):
        build_hierarchy(geo, "mass")


# ------------------------------------------------------------------
# Selection
# ------------------------------------------------------------------

def _hierarchies(n=12, seed=3):
    asm = synthesize_assembly("table", "t", Xoshiro256(seed))
    geo = GroupGeometry(asm)
    return build_hierarchies(geo), asm


def test_selection_respects_budget_and_dedupes():
    hiers, _ = _hierarchies()
    picked = select_hypotheses(hiers, budget=9, seed=1)
    assert 0 < len(picked) <= 9
    member_sets = [frozenset(h.members) for h in picked]
    assert len(set(member_sets)) == len(member_sets)
    assert [h.id for h in picked] == list(range(len(picked)))
    for hyp in picked:
        assert hyp.source in CRITERIA
        assert hyp.members == tuple(sorted(hyp.members))


def test_selection_is_deterministic_and_seed_sensitive():
    hiers, _ = _hierarchies()
    a = select_hypotheses(hiers, budget=12, seed=7)
    b = select_hypotheses(hiers, budget=12, seed=7)
    c = select_hypotheses(hiers, budget=12, seed=8)
    assert a == b
    assert [h.members for h in a] != [h.members for h in c]


def test_selection_nests_across_budgets():
    hiers, _ = _hierarchies()
    small = {frozenset(h.members) for h in select_hypotheses(hiers, budget=6, seed=5)}
    large = {frozenset(h.members) for h in select_hypotheses(hiers, budget=30, seed=5)}
    assert small <= large


def test_selection_rejects_tiny_budget():
    hiers, _ = _hierarchies()
    with pytest.raises(ValidationError):
        select_hypotheses(hiers, budget=2, seed=0)


def test_selection_exhausts_small_pools():
    # With a generous budget every distinct internal member set is picked.
    hiers, _ = _hierarchies()
    all_sets = set()
    for hier in hiers:
        all_sets.update(n.members for n in hier.internal())
    picked = select_hypotheses(hiers, budget=1000, seed=2)
    assert {frozenset(h.members) for h in picked} == all_sets


# ------------------------------------------------------------------
# Ground truth
# ------------------------------------------------------------------

def test_ground_truth_parts_split_disconnected_same_label():
    # Two same-label boxes with a gap are two part instances.
    asm = _assembly_of_boxes(
        [((0.0, 0.0, 0.0), (0.2, 0.2, 0.2)),
         ((0.8, 0.8, 0.8), (1.0, 1.0, 1.0)),
         ((0.0, 0.0, 0.8), (0.2, 0.2, 1.0))],
        labels={0: 1, 1: 1, 2: 2},
        label_names=("a", "b"))
    parts = ground_truth_parts(asm)
    assert [(p.label, p.members) for p in parts] == [
        (1, (0,)), (1, (1,)), (2, (2,))]


def test_assign_exact_part_gets_confidence_one():
    asm = synthesize_assembly("totem", "t", Xoshiro256(2))
    ctx = GroundTruthContext(asm)
    for part in ctx.parts:
        label, conf = ctx.assign(part.members)
        assert label == part.label
        assert conf == pytest.approx(1.0)


def test_assign_majority_rule_threshold():
    # Dominant big box plus a sliver of another label: labeled by majority.
    asm = _assembly_of_boxes(
        [((0.1, 0.1, 0.1), (0.9, 0.9, 0.8)),
         ((0.4, 0.4, 0.8), (0.5, 0.5, 0.85))],
        labels={0: 1, 1: 2},
        label_names=("big", "small"))
    ctx = GroundTruthContext(asm, resolution=50)
    label, conf = ctx.assign([0, 1])
    assert label == 1
    assert 0.0 < conf < 1.0

    # Two equal halves of different labels: no label reaches 70%.
    asm2 = _assembly_of_boxes(
        [((0.1, 0.1, 0.1), (0.5, 0.9, 0.9)),
         ((0.5, 0.1, 0.1), (0.9, 0.9, 0.9))],
        labels={0: 1, 1: 2},
        label_names=("l", "r"))
    ctx2 = GroundTruthContext(asm2, resolution=50)
    label2, _ = ctx2.assign([0, 1])
    assert label2 == 0


def test_assign_requires_members():
    asm = synthesize_assembly("totem", "t", Xoshiro256(2))
    ctx = GroundTruthContext(asm)
    with pytest.raises(ValidationError):
        ctx.assign([])


# ------------------------------------------------------------------
# Augmentation
# ------------------------------------------------------------------

def test_delete_augmentation_bounds():
    asm = synthesize_assembly("table", "t", Xoshiro256(5))
    part = max(ground_truth_parts(asm), key=lambda p: len(p.members))
    n = len(part.members)
    for seed in range(10):
        out = augment(asm, part.members, "delete", seed)
        assert set(out) < set(part.members)
        assert n - int(0.3 * n) <= len(out) < n


def test_delete_of_tiny_part_is_identity():
    asm = _assembly_of_boxes(
        [((0.0, 0.0, 0.0), (0.5, 1.0, 1.0)), ((0.5, 0.0, 0.0), (1.0, 1.0, 1.0))],
        labels={0: 1, 1: 2}, label_names=("a", "b"))
    assert augment(asm, (0,), "delete", 3) == (0,)


def test_insert_augmentation_draws_from_contacting_parts():
    asm = synthesize_assembly("table", "t", Xoshiro256(5))
    geo = GroupGeometry(asm)
    parts = ground_truth_parts(asm, geo)
    part = max(parts, key=lambda p: len(p.members))
    n = len(part.members)
    grew = False
    for seed in range(10):
        out = augment(asm, part.members, "insert", seed, geometry=geo, parts=parts)
        assert set(part.members) <= set(out)
        assert len(out) <= n + int(0.3 * n)
        extras = set(out) - set(part.members)
        grew = grew or bool(extras)
        for extra in extras:
            assert asm.labels[extra] != part.label or all(
                extra not in p.members for p in parts if p.members == part.members)
    assert grew


def test_insert_without_neighbors_is_an_error():
    asm = _assembly_of_boxes(
        [((0.0, 0.0, 0.0), (0.2, 0.2, 0.2)),
         ((0.8, 0.8, 0.8), (1.0, 1.0, 1.0))],
        labels={0: 1, 1: 2}, label_names=("a", "b"))
    with pytest.raises(ValidationError):
        augment(asm, (0,), "insert", 1)


def test_unknown_augmentation_mode():
    asm = synthesize_assembly("totem", "t", Xoshiro256(1))
    with pytest.raises(ValidationError):
        augment(asm, (0,), "rotate", 1)


# ------------------------------------------------------------------
# JSONL round trip
# ------------------------------------------------------------------

def test_hypothesis_jsonl_round_trip_byte_identical(tmp_path):
    hiers, _ = _hierarchies()
    hyps = select_hypotheses(hiers, budget=10, seed=4)
    first = tmp_path / "h1.jsonl"
    second = tmp_path / "h2.jsonl"
    write_hypotheses(first, hyps)
    back = read_hypotheses(first)
    assert back == hyps
    write_hypotheses(second, back)
    assert first.read_bytes() == second.read_bytes()


@pytest.mark.parametrize("line,fragment", [
    ("{broken", "bad JSON"),
    ('{"id": 0, "members": [], "source": "center", "hierarchy_rank": 1, "selection_rank": 1}',
     "empty members"),
    ('{"id": 0, "members": [1], "source": "magic", "hierarchy_rank": 1, "selection_rank": 1}',
     "bad source"),
    ('{"id": 0, "members": [1], "source": "center", "selection_rank": 1}',
     "hierarchy_rank"),
])
def test_hypothesis_jsonl_validation(tmp_path, line, fragment):
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(ValidationError) as err:
        read_hypotheses(path)
    assert fragment in str(err.value)


def test_hypothesis_jsonl_rejects_duplicate_ids(tmp_path):
    row = '{"id": 0, "members": [1], "source": "center", "hierarchy_rank": 1, "selection_rank": 1}'
    path = tmp_path / "dup.jsonl"
    path.write_text(row + "\n" + row + "\n")
    with pytest.raises(ValidationError) as err:
        read_hypotheses(path)
    assert "duplicate id" in str(err.value)
