import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from groundkit.core import BBox, GroundingSample, Instruction, Perspective, Point, Screenshot, iou, point_in_box

coord = st.floats(min_value=0, max_value=4000, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw, positive=False):
    x1, x2 = sorted([draw(coord), draw(coord)])
    y1, y2 = sorted([draw(coord), draw(coord)])
    if positive and (x2 - x1 < 1e-3 or y2 - y1 < 1e-3):
        x2, y2 = x1 + 1, y1 + 1
    return BBox(x1, y1, x2, y2)


def test_point_in_box_examples():
    assert point_in_box(Point(588, 67), BBox(560, 50, 620, 85))
    assert point_in_box(Point(5, 5), BBox(0, 0, 5, 5))
    assert not point_in_box(Point(6, 0), BBox(0, 0, 5, 5))


def test_iou_examples():
    assert iou(BBox(0, 0, 2, 2), BBox(0, 0, 2, 2)) == 1.0
    assert iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0
    # intersection 1, union 4 + 4 - 1
    assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)


def test_zero_area_iou_is_zero():
    z = BBox(3, 3, 3, 3)
    assert iou(z, z) == 0.0
    assert iou(z, BBox(0, 0, 5, 5)) == 0.0


@pytest.mark.parametrize("bad", [(-1, 0, 1, 1), (2, 0, 1, 1), (0, 2, 1, 1), (0, 0, math.inf, 1), (0, 0, math.nan, 1)])
def test_bbox_rejects_invalid(bad):
    with pytest.raises(ValueError):
        BBox(*bad)


def test_point_rejects_negative_and_nan():
    with pytest.raises(ValueError):
        Point(-1, 0)
    with pytest.raises(ValueError):
        Point(0, math.nan)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes(positive=True))
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0)


@given(boxes())
def test_center_inside(b):
    assert point_in_box(b.center(), b)


@given(boxes(), coord, coord, st.floats(0, 100), st.floats(0, 100))
def test_enlarging_box_keeps_containment(b, x, y, grow_l, grow_r):
    p = Point(x, y)
    big = BBox(max(0.0, b.x_l - grow_l), max(0.0, b.y_l - grow_l), b.x_r + grow_r, b.y_r + grow_r)
    if point_in_box(p, b):
        assert point_in_box(p, big)


@pytest.mark.parametrize("name, expected", [
    ("appearance", Perspective.APPEARANCE),
    ("Functionality", Perspective.FUNCTION),
    ("location", Perspective.SPATIAL),
    ("intent", Perspective.GOAL),
    ("Goal-Based", Perspective.GOAL),
    ("original", Perspective.ORIGINAL),
])
def test_perspective_aliases(name, expected):
    assert Perspective.parse(name) is expected


def test_perspective_members_and_serialization():
    assert [p.value for p in Perspective] == ["original", "appearance", "function", "spatial", "goal"]
    with pytest.raises(ValueError):
        Perspective.parse("colour")


def test_instruction_text_must_be_nonempty():
    with pytest.raises(ValueError):
        Instruction("   ")


def _sample(**kw):
    d = dict(id="a", screenshot=Screenshot("s", 100, 50, "x.png"), gt_bbox=BBox(1, 1, 10, 10),
             instructions={Perspective.ORIGINAL: "tap ok"})
    d.update(kw)
    return GroundingSample(**d)


def test_sample_invariants():
    with pytest.raises(ValueError):
        _sample(instructions={Perspective.APPEARANCE: "red"})
    with pytest.raises(ValueError):
        _sample(gt_bbox=BBox(0, 0, 101, 10))
    with pytest.raises(ValueError):
        _sample(instructions={Perspective.ORIGINAL: "ok", Perspective.GOAL: " "})
    with pytest.raises(ValueError):
        Screenshot("s", 0, 10, "")


def test_sample_round_trip_preserves_unknown_fields():
    raw = {
        "id": "a", "screenshot": {"id": "s", "width": 100, "height": 50, "image_ref": "x.png"},
        "gt_bbox": [1, 1, 10, 10], "instructions": {"original": "tap ok", "location": "top left"},
        "source": "web", "tags": ["platform:web", "type:icon"], "annotator": {"name": "q"},
    }
    s = GroundingSample.from_json(raw)
    assert s.instructions[Perspective.SPATIAL] == "top left"
    assert s.tag_value("platform") == "web"
    out = s.to_json()
    assert out["annotator"] == {"name": "q"}
    assert out["instructions"] == {"original": "tap ok", "spatial": "top left"}
    assert GroundingSample.from_json(out) == s
