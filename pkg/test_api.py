"""
Tests for the FastAPI service and background worker
Kiểm tra API xếp hàng thí nghiệm và worker chạy nền
"""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from config.settings import Settings, TrainingConfig
from graindoe.main import app
from graindoe.nn.hyperparams import VERIFIED_CONFIG
from graindoe.services.doe import DesignKind, DesignMatrix, FactorDef
from graindoe.workers.background_worker import BackgroundWorker


@pytest.fixture
def client():
    with TestClient(app) as c:
        yield c


class TestEndpoints:
    def test_health(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json()["status"] == "healthy"

    def test_config_sections(self, client):
        body = client.get("/api/v1/config").json()
        assert set(body) == {"imgprep", "augment", "training", "experiment", "server"}
        assert body["imgprep"]["black_fraction_threshold"] == 0.05

    def test_invalid_job_id(self, client):
        assert client.get("/api/v1/experiments/not-a-job/status").status_code == 400

    def test_unknown_job(self, client):
        assert client.get("/api/v1/experiments/job_0123456789abcdef/status").status_code == 404

    def test_unknown_design(self, client, tmp_path):
        response = client.post("/api/v1/experiments/trigger", json={"design": "nonsense", "manifest": str(tmp_path)})
        assert response.status_code == 400
        assert "built-in" in response.json()["detail"]

    def test_missing_manifest(self, client, tmp_path):
        response = client.post(
            "/api/v1/experiments/trigger",
            json={"design": "optimization", "manifest": str(tmp_path / "missing.csv")},
        )
        assert response.status_code == 400

    def test_unknown_profile(self, client, synthetic_dataset_dir):
        response = client.post(
            "/api/v1/experiments/trigger",
            json={"design": "optimization", "manifest": str(synthetic_dataset_dir / "manifest.csv"), "profile": "huge"},
        )
        assert response.status_code == 400

    def test_job_that_cannot_split_is_reported_failed(self, client, synthetic_dataset_dir, tmp_path):
        response = client.post(
            "/api/v1/experiments/trigger",
            json={
                "design": "optimization",
                "manifest": str(synthetic_dataset_dir / "manifest.csv"),
                "output_dir": str(tmp_path / "run"),
                "profile": "tiny",
                "epochs": 1,
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["treatments"] == 26

        status = client.get(f"/api/v1/experiments/{body['job_id']}/status").json()
        assert status["status"] == "failed"
        assert status["errors"]


class TestBackgroundWorker:
    async def test_job_completes_with_progress(self, synthetic_dataset_dir, tmp_path):
        config = Settings().model_copy(
            update={"training": TrainingConfig(train_size=24, val_size=12, test_size=12)}
        )
        worker = BackgroundWorker(config)
        design = DesignMatrix(
            kind=DesignKind.CUSTOM,
            factors=[FactorDef(name="DropD1", param="drop_d1", levels=(0.1, 0.3, 0.5), interpolate=True)],
            rows=np.array([[-1.0], [1.0]]),
            fixed=VERIFIED_CONFIG.model_copy(update={"batch_size": 16}),
            name="drop",
        )
        await worker.start()
        await worker.process_experiment_job(
            "job_00000000000000aa", design, str(synthetic_dataset_dir / "manifest.csv"),
            str(tmp_path / "run"), epochs=1, replicates=1, seed=0, profile="tiny",
        )
        await worker.stop()

        job = worker.get_job_status("job_00000000000000aa")
        assert job["status"] == "completed"
        assert job["progress"] == {"total": 2, "completed": 2, "failed": 0}
        assert "responses" in job["outputs"]
        assert worker.get_stats()["completed_jobs"] == 1
