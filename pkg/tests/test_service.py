import base64
import os
import stat
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from clickseg import service
from clickseg.core import RasterImage
from clickseg.service import ServiceConfig, create_app, rle_decode, rle_encode
from synth import two_tone_instance
from test_sequence import translating_square_sequence


@pytest.fixture()
def workspace(tmp_path):
    image, gt = two_tone_instance(21, size=64)
    img_path = tmp_path / "scene.png"
    Image.fromarray(image.samples[:, :, 0]).save(img_path)
    return tmp_path, img_path, image, gt


@pytest.fixture()
def client(workspace):
    tmp_path, *_ = workspace
    app = create_app(ServiceConfig(save_dir=str(tmp_path / "out")))
    with TestClient(app) as c:
        yield c


def make_session(client, img_path, **engine):
    body = {"image_path": str(img_path)}
    if engine:
        body["engine"] = engine
    r = client.post("/sessions", json=body)
    assert r.status_code == 201, r.text
    return r.json()


def center_of(gt):
    ys, xs = np.nonzero(gt)
    return int(xs.mean()), int(ys.mean())


class TestRle:
    def test_roundtrip_binary(self):
        rng = np.random.default_rng(0)
        mask = rng.random((13, 7)) < 0.5
        payload = rle_encode(mask)
        assert payload["start_value"] == 0
        assert sum(payload["counts"]) == mask.size
        assert np.array_equal(rle_decode(payload).astype(bool), mask)

    def test_leading_foreground(self):
        mask = np.ones((2, 3), bool)
        payload = rle_encode(mask)
        assert payload["counts"][0] == 0
        assert np.array_equal(rle_decode(payload).astype(bool), mask)

    def test_multilabel_values(self):
        arr = np.array([[0, 2, 2], [3, 3, 0]], np.uint16)
        payload = rle_encode(arr)
        assert "values" in payload
        assert np.array_equal(rle_decode(payload), arr)


class TestSessions:
    def test_create_session(self, client, workspace):
        _, img_path, image, _ = workspace
        data = make_session(client, img_path)
        assert data["width"] == image.width and data["height"] == image.height
        assert "grid" not in data

    def test_missing_file_400(self, client, workspace):
        tmp_path = workspace[0]
        r = client.post("/sessions", json={"image_path": str(tmp_path / "nope.png")})
        assert r.status_code == 400

    def test_unsupported_format_415(self, client, workspace):
        tmp_path = workspace[0]
        bad = tmp_path / "file.tiff"
        bad.write_bytes(b"II*\x00")
        r = client.post("/sessions", json={"image_path": str(bad)})
        assert r.status_code == 415

    def test_upload_b64(self, client, workspace):
        _, img_path, image, _ = workspace
        payload = base64.b64encode(img_path.read_bytes()).decode()
        r = client.post("/sessions", json={"image_b64": payload, "image_name": "up.png"})
        assert r.status_code == 201
        assert r.json()["width"] == image.width

    def test_grid_trigger_4096(self, client, tmp_path):
        big = np.zeros((3000, 4096), np.uint8)
        p = tmp_path / "big.png"
        Image.fromarray(big).save(p)
        data = make_session(client, p)
        assert len(data["grid"]["origins"]) == 20

    def test_click_flow(self, client, workspace):
        _, img_path, image, gt = workspace
        sid = make_session(client, img_path)["session_id"]
        x, y = center_of(gt)
        r = client.post(f"/sessions/{sid}/clicks",
                        json={"x": x, "y": y, "polarity": "positive"})
        assert r.status_code == 200
        data = r.json()
        assert data["click_count"] == 1
        mask = rle_decode(data["mask"]).astype(bool)
        assert mask[y, x]

    def test_click_determinism_across_sessions(self, client, workspace):
        _, img_path, _, gt = workspace
        x, y = center_of(gt)
        payloads = []
        for _ in range(2):
            sid = make_session(client, img_path)["session_id"]
            r = client.post(f"/sessions/{sid}/clicks",
                            json={"x": x, "y": y, "polarity": "positive"})
            payloads.append(r.json()["mask"])
        assert payloads[0] == payloads[1]

    def test_first_click_negative_409(self, client, workspace):
        _, img_path, *_ = workspace
        sid = make_session(client, img_path)["session_id"]
        r = client.post(f"/sessions/{sid}/clicks",
                        json={"x": 1, "y": 1, "polarity": "negative"})
        assert r.status_code == 409

    def test_out_of_bounds_422(self, client, workspace):
        _, img_path, *_ = workspace
        sid = make_session(client, img_path)["session_id"]
        r = client.post(f"/sessions/{sid}/clicks",
                        json={"x": 1000, "y": 2, "polarity": "positive"})
        assert r.status_code == 422

    def test_undo_replays_exactly(self, client, workspace):
        _, img_path, _, gt = workspace
        sid = make_session(client, img_path)["session_id"]
        x, y = center_of(gt)
        first = client.post(f"/sessions/{sid}/clicks",
                            json={"x": x, "y": y, "polarity": "positive"}).json()
        client.post(f"/sessions/{sid}/clicks",
                    json={"x": 2, "y": 2, "polarity": "negative"})
        undone = client.post(f"/sessions/{sid}/undo").json()
        assert undone["mask"] == first["mask"]
        assert undone["click_count"] == 1

    def test_undo_to_zero_then_empty(self, client, workspace):
        _, img_path, _, gt = workspace
        sid = make_session(client, img_path)["session_id"]
        x, y = center_of(gt)
        client.post(f"/sessions/{sid}/clicks",
                    json={"x": x, "y": y, "polarity": "positive"})
        data = client.post(f"/sessions/{sid}/undo").json()
        assert data["click_count"] == 0
        assert rle_decode(data["mask"]).sum() == 0
        r = client.post(f"/sessions/{sid}/undo")
        assert r.status_code == 409

    def test_finish_and_edit_polygons(self, client, workspace):
        _, img_path, _, gt = workspace
        sid = make_session(client, img_path)["session_id"]
        x, y = center_of(gt)
        client.post(f"/sessions/{sid}/clicks",
                    json={"x": x, "y": y, "polarity": "positive"})
        r = client.post(f"/sessions/{sid}/finish",
                        json={"category_id": 1, "epsilon": 0.0})
        assert r.status_code == 200
        polys = r.json()["polygons"]
        assert len(polys) >= 1
        pid = polys[0]["id"]
        v0 = polys[0]["vertices"][0]
        r = client.patch(f"/sessions/{sid}/polygons/{pid}",
                         json={"op": "move", "index": 0,
                               "to": [v0[0] + 0.5, v0[1] + 0.5]})
        assert r.status_code == 200
        assert r.json()["vertices"][0] == [v0[0] + 0.5, v0[1] + 0.5]
        # deleting from a triangle maps geometry errors to 422
        r = client.patch(f"/sessions/{sid}/polygons/{pid}",
                         json={"op": "insert", "edge_index": 0, "to": [-50, -50]})
        assert r.status_code == 422

    def test_finish_empty_mask_409(self, client, workspace):
        _, img_path, *_ = workspace
        sid = make_session(client, img_path)["session_id"]
        r = client.post(f"/sessions/{sid}/finish", json={})
        assert r.status_code == 409

    def test_two_objects_distinct_ids(self, client, workspace):
        _, img_path, _, gt = workspace
        sid = make_session(client, img_path)["session_id"]
        x, y = center_of(gt)
        ids = []
        for _ in range(2):
            client.post(f"/sessions/{sid}/clicks",
                        json={"x": x, "y": y, "polarity": "positive"})
            r = client.post(f"/sessions/{sid}/finish", json={"epsilon": 0.0})
            ids.append(r.json()["object_id"])
        assert ids == [1, 2]

    def test_finish_after_finish_409(self, client, workspace):
        _, img_path, _, gt = workspace
        sid = make_session(client, img_path)["session_id"]
        x, y = center_of(gt)
        client.post(f"/sessions/{sid}/clicks",
                    json={"x": x, "y": y, "polarity": "positive"})
        client.post(f"/sessions/{sid}/finish", json={"epsilon": 0.0})
        r = client.post(f"/sessions/{sid}/finish", json={"epsilon": 0.0})
        assert r.status_code == 409

    def test_save_formats(self, client, workspace, tmp_path):
        _, img_path, _, gt = workspace
        sid = make_session(client, img_path)["session_id"]
        x, y = center_of(gt)
        client.post(f"/sessions/{sid}/clicks",
                    json={"x": x, "y": y, "polarity": "positive"})
        client.post(f"/sessions/{sid}/finish", json={"epsilon": 0.0})
        out = tmp_path / "savehere"
        r = client.post(f"/sessions/{sid}/save",
                        json={"formats": ["grayscale", "pseudocolor", "coco"],
                              "directory": str(out)})
        assert r.status_code == 200
        paths = r.json()["paths"]
        assert len(paths) == 3
        for p in paths:
            assert os.path.exists(p)
        again = client.post(f"/sessions/{sid}/save",
                            json={"formats": ["grayscale", "pseudocolor", "coco"],
                                  "directory": str(out)})
        assert again.json()["paths"] == paths

    def test_save_unwritable_507(self, client, workspace, tmp_path):
        if os.geteuid() == 0:
            pytest.skip("root ignores directory permissions")
        _, img_path, _, gt = workspace
        sid = make_session(client, img_path)["session_id"]
        x, y = center_of(gt)
        client.post(f"/sessions/{sid}/clicks",
                    json={"x": x, "y": y, "polarity": "positive"})
        client.post(f"/sessions/{sid}/finish", json={"epsilon": 0.0})
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(stat.S_IRUSR | stat.S_IXUSR)
        r = client.post(f"/sessions/{sid}/save",
                        json={"directory": str(locked / "sub")})
        assert r.status_code == 507

    def test_categories(self, client, workspace):
        _, img_path, *_ = workspace
        sid = make_session(client, img_path)["session_id"]
        r = client.post(f"/sessions/{sid}/categories",
                        json={"id": 2, "comment": "tree", "color": [0, 128, 0]})
        assert r.status_code == 201
        cats = client.get(f"/sessions/{sid}/categories").json()
        assert [c["id"] for c in cats] == [1, 2]
        r = client.post(f"/sessions/{sid}/categories",
                        json={"id": 2, "comment": "dup"})
        assert r.status_code == 409


class TestSequences:
    def write_frames(self, tmp_path):
        frames, gts = translating_square_sequence(3, shift=0)
        d = tmp_path / "frames"
        d.mkdir()
        for i, f in enumerate(frames.frames):
            Image.fromarray(f.samples[:, :, 0]).save(d / f"f{i:03d}.png")
        return d, gts

    def wait_done(self, client, qid, timeout=30.0):
        t0 = time.time()
        while time.time() - t0 < timeout:
            status = client.get(f"/sequences/{qid}/propagate/status").json()
            if status["state"] in ("done", "error"):
                return status
            time.sleep(0.05)
        raise TimeoutError("propagation did not finish")

    def test_identical_frames_propagation(self, client, tmp_path):
        d, gts = self.write_frames(tmp_path)
        qid = client.post("/sequences", json={"frames_dir": str(d)}).json()["sequence_id"]
        ref = rle_encode(gts[0] != 0)
        r = client.post(f"/sequences/{qid}/references",
                        json={"frame": 0, **ref})
        assert r.status_code == 201
        r = client.post(f"/sequences/{qid}/propagate", json={})
        assert r.status_code == 202
        status = self.wait_done(client, qid)
        assert status["state"] == "done"
        masks = []
        for k in range(3):
            payload = client.get(f"/sequences/{qid}/frames/{k}/mask").json()
            masks.append(rle_decode(payload))
        for m in masks[1:]:
            assert np.array_equal(m, masks[0])

    def test_propagate_without_reference_409(self, client, tmp_path):
        d, _ = self.write_frames(tmp_path)
        qid = client.post("/sequences", json={"frames_dir": str(d)}).json()["sequence_id"]
        r = client.post(f"/sequences/{qid}/propagate", json={})
        assert r.status_code == 409

    def test_bad_frame_404(self, client, tmp_path):
        d, gts = self.write_frames(tmp_path)
        qid = client.post("/sequences", json={"frames_dir": str(d)}).json()["sequence_id"]
        r = client.post(f"/sequences/{qid}/references",
                        json={"frame": 9, **rle_encode(gts[0] != 0)})
        assert r.status_code == 404
        r = client.get(f"/sequences/{qid}/frames/9/mask")
        assert r.status_code == 404

    def test_repropagation_bumps_epoch(self, client, tmp_path):
        d, gts = self.write_frames(tmp_path)
        qid = client.post("/sequences", json={"frames_dir": str(d)}).json()["sequence_id"]
        client.post(f"/sequences/{qid}/references",
                    json={"frame": 0, **rle_encode(gts[0] != 0)})
        e1 = client.post(f"/sequences/{qid}/propagate", json={}).json()["epoch"]
        self.wait_done(client, qid)
        client.post(f"/sequences/{qid}/references",
                    json={"frame": 2, **rle_encode(gts[2] != 0)})
        e2 = client.post(f"/sequences/{qid}/propagate", json={}).json()["epoch"]
        assert e2 == e1 + 1
        status = self.wait_done(client, qid)
        assert status["epoch"] == e2
