import numpy as np
import pytest
from fastapi.testclient import TestClient

from patchbank.service import create_app


@pytest.fixture()
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture()
def benchmark(client, tmp_path):
    body = {
        "out_dir": str(tmp_path / "bench"),
        "n_train": 14,
        "n_test_normal": 8,
        "n_test_anomalous": 6,
        "height": 4,
        "width": 4,
        "channels": 8,
        "outlier_shift": 5.0,
        "cluster_std": 0.1,
        "seed": 7,
        "mask_scale": 4,
    }
    response = client.post("/synthetic", json=body)
    assert response.status_code == 200
    return response.json()


def train_config(**overrides):
    config = {
        "method": "lof",
        "tau": 0.15,
        "sampler": "greedy",
        "sampling_ratio": 0.10,
        "projection_dim": None,
        "lof_k": 4,
        "epsilon": 0.01,
        "sigma": 2.0,
        "seed": 0,
        "threads": 1,
    }
    config.update(overrides)
    return config


def test_healthz(client):
    body = client.get("/healthz").json()
    assert body["status"] == "ok"


def test_train_infer_eval_round_trip(client, benchmark, tmp_path):
    bank_path = str(tmp_path / "bank.spb")
    train = client.post(
        "/train",
        json={
            "train_manifest": benchmark["train_manifest"],
            "out_bank": bank_path,
            "config": train_config(),
        },
    )
    assert train.status_code == 200
    body = train.json()
    assert body["bank_size"] >= 1
    assert body["retained"] + body["removed"] == body["total_patches"]
    assert body["weight_min"] > 0

    scores_path = str(tmp_path / "scores.txt")
    infer = client.post(
        "/infer",
        json={
            "bank": bank_path,
            "manifest": benchmark["test_manifest"],
            "out_scores": scores_path,
            "maps_dir": str(tmp_path / "maps"),
            "config": train_config(),
        },
    )
    assert infer.status_code == 200
    infer_body = infer.json()
    assert infer_body["fingerprint"] == body["fingerprint"]
    assert len(infer_body["scores"]) == 14

    report = client.post(
        "/eval",
        json={
            "scores": scores_path,
            "manifest": benchmark["test_manifest"],
            "maps_dir": str(tmp_path / "maps"),
            "out_report": str(tmp_path / "report.txt"),
        },
    )
    assert report.status_code == 200
    report_body = report.json()
    assert report_body["image_auroc"] == 1.0
    assert report_body["pixel_auroc"] is not None and report_body["pixel_auroc"] > 0.9
    assert (tmp_path / "report.txt").read_text().startswith("# config_fingerprint=")


def test_missing_manifest_maps_to_input_category(client, tmp_path):
    response = client.post(
        "/train",
        json={
            "train_manifest": str(tmp_path / "missing.manifest"),
            "out_bank": str(tmp_path / "bank.spb"),
            "config": train_config(),
        },
    )
    assert response.status_code == 400
    detail = response.json()["detail"]
    assert detail["category"] == "input"
    assert "missing.manifest" in detail["message"]


def test_corrupt_bank_maps_to_format_category(client, benchmark, tmp_path):
    bad_bank = tmp_path / "band.spb"
    bad_bank.write_bytes(b"WRONG" + b"\x00" * 64)
    response = client.post(
        "/infer",
        json={
            "bank": str(bad_bank),
            "manifest": benchmark["test_manifest"],
            "out_scores": str(tmp_path / "s.txt"),
            "config": train_config(),
        },
    )
    assert response.status_code == 400
    detail = response.json()["detail"]
    assert detail["category"] == "format"
    assert "bad magic" in detail["message"]


def test_excessive_injection_maps_to_infeasible(client, benchmark, tmp_path):
    response = client.post(
        "/inject",
        json={
            "train_manifest": benchmark["train_manifest"],
            "test_manifest": benchmark["test_manifest"],
            "noise_ratio": 0.5,
            "setting": "no_overlap",
            "seed": 0,
            "out_dir": str(tmp_path / "inj"),
        },
    )
    assert response.status_code == 400
    assert response.json()["detail"]["category"] == "infeasible"


def test_inject_writes_resolvable_manifests(client, benchmark, tmp_path):
    response = client.post(
        "/inject",
        json={
            "train_manifest": benchmark["train_manifest"],
            "test_manifest": benchmark["test_manifest"],
            "noise_ratio": 0.2,
            "setting": "no_overlap",
            "seed": 3,
            "out_dir": str(tmp_path / "inj"),
        },
    )
    assert response.status_code == 200
    body = response.json()
    assert body["injected"] == 3
    from patchbank.featureio import load_dataset, read_manifest

    manifest = read_manifest(body["train_manifest"])
    dataset = load_dataset(manifest, body["train_manifest"])
    assert dataset.n_images == 17


def test_bank_registry_scores_payloads(client, benchmark, tmp_path):
    bank_path = str(tmp_path / "bank.spb")
    client.post(
        "/train",
        json={
            "train_manifest": benchmark["train_manifest"],
            "out_bank": bank_path,
            "config": train_config(),
        },
    )
    loaded = client.post("/banks/load", json={"path": bank_path}).json()
    assert loaded["channels"] == 8

    listed = client.get("/banks").json()
    assert any(b["bank_id"] == loaded["bank_id"] for b in listed)

    rng = np.random.default_rng(0)
    features = rng.normal(size=(4, 4, 8)).astype(np.float32)
    response = client.post(
        f"/banks/{loaded['bank_id']}/score",
        json={
            "image_id": "probe",
            "features": features.tolist(),
            "render_map": True,
            "map_height": 16,
            "map_width": 16,
            "sigma": 1.0,
        },
    )
    assert response.status_code == 200
    body = response.json()
    assert body["image_score"] > 0
    assert np.asarray(body["patch_scores"]).shape == (4, 4)
    assert np.asarray(body["pixel_map"]).shape == (16, 16)

    # payload scoring matches the library path
    from patchbank.coreset import load_bank
    from patchbank.featureio import FeatureMap
    from patchbank.inference import score_image

    direct = score_image(load_bank(bank_path), FeatureMap("probe", features))
    assert np.isclose(body["image_score"], direct.image_score, rtol=1e-12)


def test_unknown_bank_id(client):
    response = client.post(
        "/banks/bank-999/score",
        json={"features": [[[0.0]]]},
    )
    assert response.status_code == 400
    assert "unknown bank id" in response.json()["detail"]["message"]


def test_validation_error_is_422(client):
    response = client.post("/train", json={"out_bank": "x"})
    assert response.status_code == 422


def test_sweep_endpoint_produces_tables_and_reports(client, benchmark, tmp_path):
    response = client.post(
        "/sweep",
        json={
            "train_manifest": benchmark["train_manifest"],
            "test_manifest": benchmark["test_manifest"],
            "ratios": [0.0, 0.2],
            "settings": ["overlap"],
            "methods": ["lof", "none"],
            "repeats": 1,
            "out_dir": str(tmp_path / "sweep"),
            "config": train_config(),
        },
    )
    assert response.status_code == 200
    body = response.json()
    assert len(body["cells"]) == 4
    assert "overlap/image_auroc" in body["tables"]
    table = body["tables"]["overlap/image_auroc"]
    assert "lof" in table and "none" in table and "0.2" in table
    reports = list((tmp_path / "sweep").glob("*.report"))
    assert len(reports) == 4
    assert (tmp_path / "sweep" / "sweep_table.txt").exists()
