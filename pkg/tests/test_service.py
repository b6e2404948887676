import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from segprop.annotations import PolygonAnnotation, rasterize_polygons
from segprop.core import FlowDirection, FlowField
from segprop.dataset import decode_label_image
from segprop.flow import DirectoryFlowSource, write_flow_file
from segprop.propagation import PropagationConfig, Propagator
from segprop.service import create_app
from segprop.synth import render_scene, translating_rectangles_scene


def _rect_points(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def _full_cover_annotation(w, h, fg_class, fg_box, revision=0):
    return {
        "revision": revision,
        "polygons": [
            {"class": 0, "z": 0, "points": _rect_points(-0.5, -0.5, w, h)},
            {"class": fg_class, "z": 1, "points": _rect_points(*fg_box)},
        ],
    }


@pytest.fixture()
def sequence_root(tmp_path):
    """One tiny sequence on disk: frames plus exact flow files."""
    spec = translating_rectangles_scene(width=24, height=24, frame_count=5, seed=2)
    scene = render_scene(spec)
    seq = tmp_path / "clip01"
    (seq / "frames").mkdir(parents=True)
    (seq / "flow").mkdir()
    for t in range(5):
        img = (scene.frames[t] * 255).astype(np.uint8)
        Image.fromarray(img).save(seq / "frames" / f"{t:06d}.png")
    for t, vec in enumerate(scene.flows_forward):
        write_flow_file(seq / "flow" / f"{t:06d}_fwd.flo",
                        FlowField(t, FlowDirection.FORWARD, vec))
    for t, vec in scene.flows_backward.items():
        write_flow_file(seq / "flow" / f"{t:06d}_bwd.flo",
                        FlowField(t, FlowDirection.BACKWARD, vec))
    return tmp_path


@pytest.fixture()
def client(sequence_root):
    app = create_app(sequence_root, workers=1)
    with TestClient(app) as c:
        yield c


def _wait_for_job(client, job_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/jobs/{job_id}").json()
        if doc["state"] in ("done", "failed"):
            return doc
        time.sleep(0.05)
    raise TimeoutError("job did not finish")


def test_palette_and_sequence_listing(client):
    palette = client.get("/api/palette").json()
    assert len(palette) == 12 and palette[0]["name"] == "land"
    seqs = client.get("/api/sequences").json()
    assert [s["name"] for s in seqs] == ["clip01"]
    assert seqs[0]["frame_count"] == 5
    detail = client.get("/api/sequences/clip01").json()
    assert detail["resolution"] == [24, 24]
    assert client.get("/api/sequences/nope").status_code == 404


def test_frame_image_served(client):
    r = client.get("/api/sequences/clip01/frames/0")
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert client.get("/api/sequences/clip01/frames/99").status_code == 404


def test_annotation_put_get_round_trip(client):
    body = _full_cover_annotation(24, 24, fg_class=2, fg_box=(4, 4, 12, 12))
    r = client.put("/api/sequences/clip01/annotations/0", json=body)
    assert r.status_code == 200
    assert r.json()["revision"] == 1
    got = client.get("/api/sequences/clip01/annotations/0").json()
    assert got["polygons"] == body["polygons"]  # vertex order preserved
    assert got["revision"] == 1
    assert client.get("/api/sequences/clip01/annotations/3").status_code == 404


def test_stale_revision_gets_409(client):
    body = _full_cover_annotation(24, 24, 2, (4, 4, 12, 12))
    assert client.put("/api/sequences/clip01/annotations/0", json=body).status_code == 200
    # same revision again: stale
    r = client.put("/api/sequences/clip01/annotations/0", json=body)
    assert r.status_code == 409
    assert r.json()["detail"]["current_revision"] == 1
    body["revision"] = 1
    assert client.put("/api/sequences/clip01/annotations/0", json=body).status_code == 200


def test_invalid_polygons_get_422(client):
    bad = {"revision": 0, "polygons": [{"class": 1, "z": 0, "points": [[0, 0], [1, 1]]}]}
    assert client.put("/api/sequences/clip01/annotations/0", json=bad).status_code == 422


def test_job_requires_two_keyframes(client):
    r = client.post("/api/sequences/clip01/jobs", json={})
    assert r.status_code == 422
    client.put("/api/sequences/clip01/annotations/0",
               json=_full_cover_annotation(24, 24, 2, (4, 4, 12, 12)))
    assert client.post("/api/sequences/clip01/jobs", json={}).status_code == 422


def test_job_rejects_incomplete_coverage(client):
    partial = {"revision": 0, "polygons": [
        {"class": 1, "z": 0, "points": _rect_points(0, 0, 5, 5)},
    ]}
    client.put("/api/sequences/clip01/annotations/0", json=partial)
    client.put("/api/sequences/clip01/annotations/4", json=partial)
    r = client.post("/api/sequences/clip01/jobs", json={})
    assert r.status_code == 422
    assert "frame 0" in r.json()["detail"]


def test_job_rejects_unknown_config(client):
    client.put("/api/sequences/clip01/annotations/0",
               json=_full_cover_annotation(24, 24, 2, (4, 4, 12, 12)))
    client.put("/api/sequences/clip01/annotations/4",
               json=_full_cover_annotation(24, 24, 2, (8, 8, 16, 16)))
    r = client.post("/api/sequences/clip01/jobs", json={"bogus_knob": 1})
    assert r.status_code == 422


def test_full_cycle_matches_engine_byte_for_byte(client, sequence_root):
    cfg_payload = {"iterations": 1, "radius": 1, "min_region_size": 8, "seed": 5}
    ann0 = _full_cover_annotation(24, 24, 2, (4, 4, 12, 12))
    ann4 = _full_cover_annotation(24, 24, 2, (8, 4, 16, 12))
    assert client.put("/api/sequences/clip01/annotations/0", json=ann0).status_code == 200
    assert client.put("/api/sequences/clip01/annotations/4", json=ann4).status_code == 200

    r = client.post("/api/sequences/clip01/jobs", json=cfg_payload)
    assert r.status_code == 202
    job = _wait_for_job(client, r.json()["id"])
    assert job["state"] == "done", job["error"]
    assert job["progress"] == 1.0
    assert job["keyframes"] == [0, 4]

    # direct engine run from the same single source of truth
    key0 = rasterize_polygons(
        PolygonAnnotation.from_dict({**ann0, "frame": 0}), 24, 24)
    key4 = rasterize_polygons(
        PolygonAnnotation.from_dict({**ann4, "frame": 4}), 24, 24)
    flows = DirectoryFlowSource(sequence_root / "clip01" / "flow")
    prop = Propagator(config=PropagationConfig(**cfg_payload))
    expected = prop.run([key0, key4], flows, 5)

    for k in range(5):
        resp = client.get(f"/api/sequences/clip01/labels/{k}")
        assert resp.status_code == 200
        served = decode_label_image(
            np.asarray(Image.open(__import__("io").BytesIO(resp.content)).convert("RGB")),
            frame_index=k,
        )
        assert np.array_equal(served.data, expected[k].data)


def test_revision_history_is_append_only(client, sequence_root):
    body = _full_cover_annotation(24, 24, 2, (4, 4, 12, 12))
    client.put("/api/sequences/clip01/annotations/0", json=body)
    body["revision"] = 1
    body["polygons"][1]["class"] = 3
    client.put("/api/sequences/clip01/annotations/0", json=body)
    history = sorted(
        (sequence_root / "clip01" / "annotations" / "history").glob("*.json")
    )
    assert [p.name for p in history] == ["000000_rev0001.json", "000000_rev0002.json"]


def test_rasterized_keyframe_preview(client):
    client.put("/api/sequences/clip01/annotations/0",
               json=_full_cover_annotation(24, 24, 5, (2, 2, 9, 9)))
    r = client.get("/api/sequences/clip01/keyframe_labels/0")
    assert r.status_code == 200
    img = np.asarray(Image.open(__import__("io").BytesIO(r.content)).convert("RGB"))
    lm = decode_label_image(img)
    assert (lm.data[4, 4] == 5) and (lm.data[20, 20] == 0)
