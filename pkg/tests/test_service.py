"""HTTP service: job lifecycle, bit-exact image round-trips, verdicts."""

import base64
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from backdoorlab import images
from backdoorlab.evaluation import evaluate_asr
from backdoorlab.experiments import DeskConfig, Stages
from backdoorlab.registry import Registry
from backdoorlab.service import create_app
from backdoorlab.triggers import TriggerSpec
from backdoorlab.util import derive_seed

DESK = DeskConfig(image_size=16, pool_per_class=30, train_per_class=40,
                  test_per_class=20, epochs=3, denoiser_epochs=2,
                  num_poisons=20, trigger_size=3, candidate_size=5,
                  attack_steps=3, attack_mc=2, num_adv_examples=2,
                  num_candidates=2, pred_samples=8)


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc-registry")
    reg = Registry(root)
    st = Stages(reg, DESK, seed=11)
    ids, (pool, train_ds, test_ds) = st.dataset("binary")
    trig_id, trig = st.trigger("blocks")
    model_id, model, _ = st.poisoned_model("badnet", ids, pool, train_ds,
                                           test_ds, trig_id, trig)
    st.denoiser(ids, train_ds, DESK.sigma_analysis, "analysis")
    client = TestClient(create_app(reg))
    return client, reg, model_id, trig_id, test_ds


def poll(client, path, timeout=120.0):
    t0 = time.time()
    while time.time() - t0 < timeout:
        r = client.get(path)
        assert r.status_code == 200, r.text
        job = r.json()
        if job["status"] in ("done", "failed"):
            return job
        time.sleep(0.1)
    raise TimeoutError(path)


def decode(b64png):
    return images.from_png_bytes(base64.b64decode(b64png))


def test_meta_and_models(service):
    client, reg, model_id, trig_id, _ = service
    meta = client.get("/api/v1/meta").json()
    assert meta["sigma_reference"] == 1.0
    assert len(meta["epsilon_presets"]) == 2
    hidden = client.get("/api/v1/models").json()["models"]
    entry = next(m for m in hidden if m["id"] == model_id)
    assert "poisoning" not in entry
    shown = client.get("/api/v1/models", params={"reveal": True}).json()
    entry = next(m for m in shown["models"] if m["id"] == model_id)
    assert entry["poisoning"] == "badnet"


def test_attack_epsilon_zero_returns_sources(service):
    client, _, model_id, _, _ = service
    r = client.post("/api/v1/attacks", json={
        "model_id": model_id, "epsilon": 0.0, "steps": 1, "mc": 1,
        "num_images": 2})
    assert r.status_code == 200
    job = poll(client, f"/api/v1/attacks/{r.json()['job_id']}")
    assert job["status"] == "done", job["error"]
    for item in job["result"]["items"]:
        np.testing.assert_array_equal(decode(item["image_png"]),
                                      decode(item["source_png"]))


@pytest.fixture(scope="module")
def attack_job(service):
    client, _, model_id, _, _ = service
    r = client.post("/api/v1/attacks", json={
        "model_id": model_id, "num_images": 2, "seed": 5})
    job_id = r.json()["job_id"]
    job = poll(client, f"/api/v1/attacks/{job_id}")
    assert job["status"] == "done", job["error"]
    return job_id, job


def test_color_trigger_roundtrip_exact(service, attack_job):
    client, _, _, _, _ = service
    job_id, job = attack_job
    item = job["result"]["items"][0]
    adv = decode(item["image_png"])
    x, y = 4, 7
    r = client.post("/api/v1/triggers", json={
        "source": {"attack_job": job_id, "image_index": 0},
        "kind": "color", "pixel": [x, y], "size": [5, 5]})
    assert r.status_code == 200, r.text
    tid = r.json()["trigger_id"]
    got = decode(client.get(f"/api/v1/triggers/{tid}").json()["png"])
    assert got.shape == (5, 5, 3)
    np.testing.assert_array_equal(
        got, np.broadcast_to(adv[y, x], (5, 5, 3)))


def test_crop_trigger_roundtrip_exact(service, attack_job):
    client, _, _, _, _ = service
    job_id, job = attack_job
    adv = decode(job["result"]["items"][1]["image_png"])
    x, y, h, w = 2, 3, 5, 6
    r = client.post("/api/v1/triggers", json={
        "source": {"attack_job": job_id, "image_index": 1},
        "kind": "crop", "bbox": [x, y, h, w]})
    assert r.status_code == 200, r.text
    got = decode(client.get(f"/api/v1/triggers/{r.json()['trigger_id']}")
                 .json()["png"])
    np.testing.assert_array_equal(got, adv[y:y + h, x:x + w])


def test_eval_job_matches_library(service):
    client, reg, model_id, trig_id, test_ds = service
    r = client.post("/api/v1/evaluations", json={
        "model_id": model_id, "trigger_id": trig_id, "target_class": 1,
        "placement": "random", "seed": 9})
    job = poll(client, f"/api/v1/evaluations/{r.json()['job_id']}")
    assert job["status"] == "done", job["error"]
    got = job["result"]
    model = reg.load_model(model_id)
    trig = reg.load_trigger(trig_id)
    want = evaluate_asr(model, test_ds,
                        TriggerSpec(trig.patch, "random", name=trig.name),
                        1, seed=derive_seed(9, "svc-eval"),
                        model_id=model_id, trigger_id=trig_id)
    assert got["asr"] == want.asr
    assert got["clean_accuracy"] == want.clean_accuracy
    assert got["histogram"] == want.histogram


def test_verdict_flow_and_session_accuracy(service):
    client, _, model_id, _, _ = service
    r = client.post("/api/v1/verdicts", json={
        "model_id": model_id, "verdict": "poisoned", "session": "s1"})
    assert r.status_code == 200
    dup = client.post("/api/v1/verdicts", json={
        "model_id": model_id, "verdict": "clean", "session": "s1"})
    assert dup.status_code == 409
    ok = client.post("/api/v1/verdicts", json={
        "model_id": model_id, "verdict": "poisoned", "session": "s1",
        "overwrite": True})
    assert ok.status_code == 200
    hidden = client.get("/api/v1/verdicts", params={"session": "s1"}).json()
    assert "session_accuracy" not in hidden
    shown = client.get("/api/v1/verdicts",
                       params={"session": "s1", "reveal": True}).json()
    assert shown["session_accuracy"] == 1.0  # model is badnet-poisoned


def test_error_codes(service, attack_job):
    client, _, model_id, trig_id, _ = service
    job_id, _ = attack_job
    assert client.post("/api/v1/attacks", json={
        "model_id": "ghost"}).status_code == 404
    assert client.get("/api/v1/attacks/ghost").status_code == 404
    assert client.get("/api/v1/triggers/ghost").status_code == 404
    assert client.post("/api/v1/triggers", json={
        "source": {"attack_job": job_id, "image_index": 0},
        "kind": "color"}).status_code == 400  # pixel missing
    assert client.post("/api/v1/triggers", json={
        "source": {"attack_job": job_id, "image_index": 0},
        "kind": "color", "pixel": [99, 0]}).status_code == 400
    assert client.post("/api/v1/evaluations", json={
        "model_id": model_id, "trigger_id": trig_id,
        "target_class": 7}).status_code == 400
    assert client.post("/api/v1/verdicts", json={
        "model_id": model_id, "verdict": "maybe"}).status_code == 400
