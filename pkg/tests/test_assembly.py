from __future__ import annotations

import numpy as np
import pytest

from partwise.assembly import (
    Assembly,
    Component,
    LabelSet,
    Normalization,
    export_labeled_obj,
    label_color,
    load_assembly,
    load_manifest,
    load_obj,
    write_manifest,
    write_obj,
)
from partwise.errors import ParseError, ValidationError
from partwise.synth import box_mesh


def _two_box_assembly(shape_id="pair"):
    va, ta = box_mesh(np.array([0.0, 0.0, 0.0]), np.array([1.0, 1.0, 1.0]))
    vb, tb = box_mesh(np.array([1.0, 0.0, 0.0]), np.array([2.0, 1.0, 1.0]))
    comps = [Component(0, "left", va, ta.astype(np.int32)),
             Component(1, "right", vb, tb.astype(np.int32))]
    return Assembly.from_components(shape_id, comps)


# ------------------------------------------------------------------
# OBJ parsing
# ------------------------------------------------------------------

OBJ_TEXT = """\
# comment
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
g base
f 1 2 3 4
o lid extra_tokens_ignored_except_last
v 0 0 1
v 1 0 1
v 1 1 1
f -3 -2 -1
"""


def test_load_obj_groups_and_fan_triangulation(tmp_path):
    path = tmp_path / "shape.obj"
    path.write_text(OBJ_TEXT)
    records = load_obj(path)
    assert [name for name, _, _ in records] == ["base", "extra_tokens_ignored_except_last"]

    name, verts, tris = records[0]
    assert verts.shape == (4, 3)
    assert tris.shape == (2, 3)  # quad fan-triangulated
    # Faces were re-indexed into the group-private vertex array.
    assert tris.min() == 0 and tris.max() == 3

    _, verts2, tris2 = records[1]
    assert verts2.shape == (3, 3)  # negative indices resolved
    assert np.allclose(verts2[:, 2], 1.0)


def test_load_obj_merges_repeated_group_names(tmp_path):
    path = tmp_path / "merge.obj"
    path.write_text(
        "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
        "g a\nf 1 2 3\ng b\nf 1 2 4\ng a\nf 2 3 4\n")
    records = load_obj(path)
    assert [name for name, _, _ in records] == ["a", "b"]
    assert records[0][2].shape == (2, 3)


@pytest.mark.parametrize("text,line", [
    ("v 0 0\n", 1),
    ("v a b c\n", 1),
    ("v 0 0 0\nf 1 2\n", 2),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", 4),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", 4),
    ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n", 4),
])
def test_load_obj_reports_error_line(tmp_path, text, line):
    path = tmp_path / "bad.obj"
    path.write_text(text)
    with pytest.raises(ParseError) as err:
        load_obj(path)
    assert f"line {line}" in str(err.value)


def test_load_obj_rejects_faceless_file(tmp_path):
    path = tmp_path / "empty.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n")
    with pytest.raises(ParseError):
        load_obj(path)


def test_vertex_slash_syntax_is_accepted(tmp_path):
    path = tmp_path / "slashes.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 3/3\n")
    records = load_obj(path)
    assert records[0][2].shape == (1, 3)


def test_write_obj_round_trip(tmp_path):
    asm = _two_box_assembly()
    path = tmp_path / "out.obj"
    write_obj(asm, path)
    back = load_obj(path)
    assert [name for name, _, _ in back] == ["left", "right"]
    for (name, verts, tris), comp in zip(back, asm.components):
        # Same triangles up to the private re-indexing.
        assert verts.shape == comp.vertices.shape
        assert tris.shape == comp.triangles.shape
        got = set(map(tuple, np.sort(verts[tris].reshape(-1, 3), axis=0).round(9).tolist()))
        want = set(map(tuple, np.sort(comp.vertices[comp.triangles].reshape(-1, 3), axis=0).round(9).tolist()))
        assert got == want


# ------------------------------------------------------------------
# Normalization and assembly construction
# ------------------------------------------------------------------

def test_normalization_maps_bbox_into_unit_cube():
    pts = np.array([[2.0, 10.0, -1.0], [6.0, 12.0, 3.0]])
    norm = Normalization.fit(pts)
    mapped = norm.apply(pts)
    assert mapped.min() >= 0.0 - 1e-12
    assert mapped.max() <= 1.0 + 1e-12
    # Longest axis spans exactly [something, something + 1] scaled to unit length.
    assert np.isclose(np.ptp(mapped[:, 0]), 1.0)
    assert np.allclose(norm.invert(mapped), pts)


def test_normalization_degenerate_point_cloud():
    pts = np.zeros((3, 3))
    norm = Normalization.fit(pts)
    assert norm.scale == 1.0


def test_assembly_validates_ids_and_names():
    v, t = box_mesh(np.zeros(3), np.ones(3))
    with pytest.raises(ValidationError):
        Assembly.from_components("x", [Component(1, "a", v, t.astype(np.int32))])
    with pytest.raises(ValidationError):
        Assembly.from_components("x", [
            Component(0, "a", v, t.astype(np.int32)),
            Component(1, "a", v, t.astype(np.int32)),
        ])
    with pytest.raises(ValidationError):
        Assembly.from_components("x", [])


def test_component_rejects_out_of_range_triangles():
    v = np.zeros((3, 3))
    t = np.array([[0, 1, 5]], dtype=np.int32)
    with pytest.raises(ValidationError):
        Component(0, "bad", v, t).validate()


def test_require_labels_lists_missing_components():
    asm = _two_box_assembly()
    partial = Assembly(asm.id, asm.components, asm.normalization, {0: 1}, None)
    assert not partial.is_labeled()
    with pytest.raises(ValidationError) as err:
        partial.require_labels()
    assert "[1]" in str(err.value)


# ------------------------------------------------------------------
# Manifests
# ------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    label_set = LabelSet("furniture", ("top", "leg"))
    mapping = {"left": "top", "right": "leg"}
    path = tmp_path / "labels.json"
    write_manifest(path, label_set, mapping)
    got_set, got_map = load_manifest(path)
    assert got_set == label_set
    assert got_map == mapping


def test_manifest_errors(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_manifest(path)

    path.write_text('{"category": "c", "labels": ["a", "a"], "components": {}}')
    with pytest.raises(ValidationError):
        load_manifest(path)

    path.write_text('{"category": "c", "labels": ["a"], "components": {"g": "zzz"}}')
    with pytest.raises(ValidationError):
        load_manifest(path)

    path.write_text('{"labels": ["a"], "components": {}}')
    with pytest.raises(ValidationError):
        load_manifest(path)


def test_load_assembly_with_manifest(tmp_path):
    asm = _two_box_assembly()
    obj_path = tmp_path / "pair.obj"
    write_obj(asm, obj_path)
    manifest = tmp_path / "pair.json"
    write_manifest(manifest, LabelSet("demo", ("left_side", "right_side")),
                   {"left": "left_side", "right": "right_side"})
    loaded = load_assembly(obj_path, manifest)
    assert loaded.id == "pair"
    assert loaded.labels == {0: 1, 1: 2}
    assert loaded.label_set.size == 2
    assert loaded.is_labeled()


def test_load_assembly_rejects_manifest_with_unknown_group(tmp_path):
    asm = _two_box_assembly()
    obj_path = tmp_path / "pair.obj"
    write_obj(asm, obj_path)
    manifest = tmp_path / "pair.json"
    write_manifest(manifest, LabelSet("demo", ("x",)), {"ghost": "x"})
    with pytest.raises(ValidationError):
        load_assembly(obj_path, manifest)


def test_load_assembly_without_manifest_has_no_labels(tmp_path):
    asm = _two_box_assembly()
    obj_path = tmp_path / "bare.obj"
    write_obj(asm, obj_path)
    loaded = load_assembly(obj_path)
    assert loaded.labels == {}
    assert loaded.label_set is None


# ------------------------------------------------------------------
# Label sets and colored export
# ------------------------------------------------------------------

def test_label_set_lookup():
    ls = LabelSet("cat", ("a", "b", "c"))
    assert ls.id_of("b") == 2
    assert ls.name_of(3) == "c"
    with pytest.raises(ValidationError):
        ls.id_of("nope")
    with pytest.raises(ValidationError):
        ls.name_of(0)
    with pytest.raises(ValidationError):
        ls.name_of(4)


def test_label_colors_are_distinct_and_stable():
    colors = [label_color(i) for i in range(1, 9)]
    assert len(set(colors)) == len(colors)
    assert label_color(3) == label_color(3)
    assert all(0.0 <= ch <= 1.0 for c in colors for ch in c)


def test_export_labeled_obj_writes_mtl_sidecar(tmp_path):
    asm = _two_box_assembly()
    out = tmp_path / "colored.obj"
    export_labeled_obj(asm, {0: 1, 1: 2}, out)
    text = out.read_text()
    assert "mtllib colored.mtl" in text
    assert "usemtl label_1" in text
    assert "usemtl label_2" in text
    mtl = (tmp_path / "colored.mtl").read_text()
    assert mtl.count("newmtl") == 2

    with pytest.raises(ValidationError):
        export_labeled_obj(asm, {0: 1}, tmp_path / "partial.obj")
