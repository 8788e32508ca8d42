import math
import zlib
import struct

import pytest

import detpo


def png(width, height, rgb=(90, 100, 110)):
    raw = b"".join(b"\x00" + bytes(rgb) * width for _ in range(height))

    def chunk(kind, data):
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data))

    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw)) + chunk(b"IEND", b"")


def test_iou_and_convert():
    a = detpo.BoundingBox(0, 0, 10, 10)
    b = detpo.BoundingBox(5, 0, 15, 10)
    assert detpo.iou(a, b) == pytest.approx(1 / 3)
    assert detpo.iou(a, detpo.BoundingBox(20, 20, 30, 30)) == 0.0
    pixel = detpo.CoordinateSpace.pixel(200, 100)
    mille = detpo.CoordinateSpace.per_mille(detpo.CornerOrder.YXYX)
    assert detpo.convert(detpo.BoundingBox(100, 50, 200, 100), pixel, mille).to_tuple() == (500, 500, 1000, 1000)


def test_greedy_match_and_map():
    gts = [detpo.GroundTruthBox(1, 0, detpo.BoundingBox(0, 0, 10, 10))]
    dets = [
        detpo.Detection(1, 0, detpo.BoundingBox(0, 0, 10, 10), 0.9),
        detpo.Detection(1, 0, detpo.BoundingBox(0, 0, 10, 10), 0.8),
    ]
    pairs, unmatched_dets, unmatched_gts = detpo.greedy_match(dets, gts, 0.5)
    assert [(p[0], p[1]) for p in pairs] == [(0, 0)]
    assert unmatched_dets == [1]
    assert unmatched_gts == []
    result = detpo.coco_map(dets, gts, 1)
    assert result["map"] == pytest.approx(1.0)
    assert result["map50"] == pytest.approx(1.0)
    assert detpo.per_image_f1(dets, gts) == pytest.approx((0.5, 1.0, 2 / 3))


def test_severities():
    box = detpo.BoundingBox(0, 0, 10, 10)
    assert detpo.fp_severity(0.9, box, []) == pytest.approx(0.18)
    assert detpo.fp_severity(0.9, box, [detpo.BoundingBox(0, 0, 10, 5)]) == pytest.approx(0.45)
    epsilon, sigma = detpo.fn_severity(box, [detpo.Detection(1, 0, detpo.BoundingBox(0, 0, 10, 5), 0.8)])
    assert sigma == pytest.approx(0.4)
    assert epsilon == pytest.approx(0.6)


def test_parse_detections():
    space = detpo.CoordinateSpace.pixel(100, 100)
    dets, failed = detpo.parse_detections(
        '```json\n[{"bbox_2d":[1,2,3,4],"label":"dog","score":0.9}]\n```', space, 3, 100, 100, ["dog"]
    )
    assert not failed
    assert len(dets) == 1
    assert dets[0].score == 0.9
    assert dets[0].box.to_tuple() == (1, 2, 3, 4)
    dets, failed = detpo.parse_detections("no boxes here", space, 3, 100, 100, ["dog"])
    assert failed and dets == []


def test_draw_boxes_marks_border():
    image = png(40, 30)
    out = detpo.draw_boxes(image, [(detpo.BoundingBox(5, 5, 20, 20), "green")], "png")
    assert out[:8] == b"\x89PNG\r\n\x1a\n"
    assert out != image
    with pytest.raises(detpo.ImageError):
        detpo.draw_boxes(b"junk", [], "png")
    assert detpo.stroke_width(1000, 500) == 4


def test_prompts():
    text, quality = detpo.extract_definition("```python {'dog': 'A four-legged animal.'}```", "dog")
    assert text == "A four-legged animal."
    assert quality == "fenced_mapping"
    rendered = detpo.render_template("single-class-detect", {"class name": "cat"})
    assert "Locate every cat" in rendered
    with pytest.raises(detpo.TemplateError):
        detpo.render_template("vqa-score", {})


def test_vqa_score():
    assert detpo.vqa_score(0.45, 0.05) == pytest.approx(0.9)
    assert detpo.vqa_score(0.0, 0.0) is None
    assert not math.isnan(detpo.vqa_score(0.3, 0.3))
