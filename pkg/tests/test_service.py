import numpy as np
import pytest
from fastapi.testclient import TestClient

from emoanchor import dataio, service
from emoanchor.config import RunConfig


@pytest.fixture(scope="module")
def client():
    return TestClient(service.app)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    req = service.SynthRequest(
        classes=3,
        conversations=10,
        utterances=6,
        dims={"T": 8, "A": 6, "V": 7},
        d_anc=8,
        separation=6.0,
        seed=2,
        anchors_per_class=4,
        out_dir=str(out),
    )
    service.do_synth(req)
    return out


def run_config(synth_dir, out_dir, **training):
    defaults = dict(epochs=2, batch_size=4, split=(0.6, 0.2, 0.2))
    defaults.update(training)
    return RunConfig.model_validate(
        {
            "data": str(synth_dir / "manifest.json"),
            "anchors": str(synth_dir / "anchors.vea"),
            "out_dir": str(out_dir),
            "seeds": [0],
            "model": {"d": 16, "heads": 2, "dropout": 0.1, "proj_hidden": 12},
            "optimizer": {"weight_decay": 0.01},
            "training": defaults,
        }
    )


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


def test_synth_endpoint_writes_files(client, tmp_path):
    response = client.post(
        "/synth",
        json={
            "classes": 2,
            "conversations": 3,
            "utterances": 4,
            "dims": {"T": 5, "A": 4, "V": 6},
            "d_anc": 6,
            "separation": 1.0,
            "seed": 0,
            "anchors_per_class": 2,
            "out_dir": str(tmp_path),
        },
    )
    assert response.status_code == 200
    body = response.json()
    assert body["conversations"] == 3 and body["utterances"] == 12
    dataset = dataio.load_manifest(body["manifest"])
    assert dataset.num_utterances() == 12


def test_synth_rejects_unknown_key(client, tmp_path):
    response = client.post("/synth", json={"out_dir": str(tmp_path), "bogus": 1})
    assert response.status_code == 422


def test_synth_rejects_negative_separation(client, tmp_path):
    response = client.post("/synth", json={"out_dir": str(tmp_path), "separation": -1.0})
    assert response.status_code == 400


def test_anchor_center_and_stats(client, synth_dir, tmp_path):
    response = client.post(
        "/anchors/center",
        json={"src": str(synth_dir / "anchors.vea"), "dst": str(tmp_path / "centers.vea")},
    )
    assert response.status_code == 200
    centers = dataio.read_anchor_file(tmp_path / "centers.vea")
    original = dataio.read_anchor_file(synth_dir / "anchors.vea")
    for name in original.classes:
        assert centers.vectors[name].shape[0] == 1
        np.testing.assert_allclose(
            centers.vectors[name][0], original.vectors[name].mean(axis=0), atol=1e-5
        )

    stats = client.post("/anchors/stats", json={"path": str(synth_dir / "anchors.vea")})
    assert stats.status_code == 200
    rows = stats.json()["classes"]
    assert len(rows) == 3 and all(r["count"] == 4 for r in rows)

    dup_stats = client.post("/anchors/stats", json={"path": str(tmp_path / "centers.vea")})
    assert all(r["mean_intra_cosine"] == 1.0 for r in dup_stats.json()["classes"])


def test_train_then_eval_roundtrip(client, synth_dir, tmp_path):
    cfg = run_config(synth_dir, tmp_path / "runs")
    response = client.post("/train", json={"config": cfg.model_dump()})
    assert response.status_code == 200, response.text
    body = response.json()
    assert len(body["runs"]) == 1
    checkpoint = body["runs"][0]["checkpoint"]

    eval_response = client.post(
        "/eval", json={"config": cfg.model_dump(), "checkpoint": checkpoint, "split": "test"}
    )
    assert eval_response.status_code == 200, eval_response.text
    report = eval_response.json()
    assert report["classes"] == ["class_0", "class_1", "class_2"]
    assert 0.0 <= report["accuracy"] <= 1.0
    total = sum(sum(row) for row in report["confusion"])
    assert total == 2 * 6  # 2 test conversations x 6 utterances

    params_response = client.post("/params", json={"checkpoint": checkpoint})
    counts = params_response.json()
    assert counts["total"] == counts["encoder"] + counts["supervision"] + counts["anchor_head"]
    assert counts["anchor_head"] > 0


def test_eval_missing_checkpoint_is_client_error(client, synth_dir, tmp_path):
    cfg = run_config(synth_dir, tmp_path)
    response = client.post(
        "/eval", json={"config": cfg.model_dump(), "checkpoint": str(tmp_path / "nope.vck")}
    )
    assert response.status_code in (400, 500)


def test_train_missing_anchors_reports_config_error(client, synth_dir, tmp_path):
    cfg = run_config(synth_dir, tmp_path)
    doc = cfg.model_dump()
    doc["anchors"] = None
    response = client.post("/train", json={"config": doc})
    assert response.status_code == 400
    assert "anchor" in response.json()["detail"]


def test_gradcheck_endpoint_single_seed(client):
    response = client.post("/gradcheck", json={"seeds": [0], "jobs": 1})
    assert response.status_code == 200
    body = response.json()
    assert body["passed"] and len(body["checks"]) == 19
