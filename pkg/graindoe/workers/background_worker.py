"""
Background Worker
Worker chạy các job thí nghiệm DoE bất đồng bộ
"""

import asyncio
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import structlog

from config.settings import Settings, settings as default_settings
from .. import __version__
from ..services.doe import DesignMatrix
from ..services.trainer import ResponseRecord, run_design_to_dir
from ..utils.helpers import format_datetime


logger = structlog.get_logger(__name__)


class BackgroundWorker:
    """Worker xử lý job thí nghiệm bất đồng bộ"""

    def __init__(self, config: Optional[Settings] = None):
        self.config = config or default_settings
        self.running_jobs: Dict[str, Dict[str, Any]] = {}
        self.completed_jobs: Dict[str, Dict[str, Any]] = {}
        self.start_time = datetime.now()
        self._running = False

    async def start(self):
        """Khởi động background worker"""
        self._running = True
        logger.info("🚀 Background worker started")

    async def stop(self):
        """Dừng background worker"""
        self._running = False
        logger.info("🛑 Background worker stopped")

    def register_job(self, job_id: str, design: DesignMatrix, replicates: int) -> Dict[str, Any]:
        """Ghi nhận job ở trạng thái queued"""
        job = {
            "job_id": job_id,
            "status": "queued",
            "design": design.name,
            "created_at": format_datetime(datetime.now()),
            "progress": {"total": design.n_rows * replicates, "completed": 0, "failed": 0},
            "outputs": {},
            "errors": [],
        }
        self.running_jobs[job_id] = job
        return job

    def _on_record(self, job_id: str, record: ResponseRecord):
        job = self.running_jobs.get(job_id)
        if not job:
            return
        job["progress"]["completed"] += 1
        if record.fault:
            job["progress"]["failed"] += 1
            job["errors"].append(f"TC {record.tc} replicate {record.replicate}: {record.fault}")

    async def process_experiment_job(
        self,
        job_id: str,
        design: DesignMatrix,
        manifest: str,
        output_dir: str,
        epochs: int,
        replicates: int,
        seed: int,
        profile: str,
    ):
        """Xử lý experiment job; lỗi được ghi vào job record"""
        if job_id not in self.running_jobs:
            self.register_job(job_id, design, replicates)
        self.running_jobs[job_id]["status"] = "running"
        logger.info("🎯 Starting experiment job", job_id=job_id, design=design.name)

        training = self.config.training
        try:
            outputs = await asyncio.to_thread(
                run_design_to_dir,
                design,
                manifest,
                Path(output_dir),
                epochs,
                replicates,
                seed,
                (training.train_size, training.val_size, training.test_size),
                profile=profile,
                threads=self.config.experiment.threads,
                threshold=training.threshold,
                window=training.last_epochs_window,
                config_text=self.config.model_dump_json(),
                version=__version__,
                progress=lambda record: self._on_record(job_id, record),
            )
            self.running_jobs[job_id].update({
                "status": "completed",
                "completed_at": format_datetime(datetime.now()),
                "outputs": outputs,
            })
            self.completed_jobs[job_id] = self.running_jobs.pop(job_id)
            logger.info("✅ Experiment job completed", job_id=job_id)

        except Exception as e:
            logger.error("❌ Experiment job failed", job_id=job_id, error=str(e))
            if job_id in self.running_jobs:
                self.running_jobs[job_id].update({
                    "status": "failed",
                    "completed_at": format_datetime(datetime.now()),
                })
                self.running_jobs[job_id]["errors"].append(str(e))
                self.completed_jobs[job_id] = self.running_jobs.pop(job_id)

    def get_job_status(self, job_id: str) -> Optional[Dict[str, Any]]:
        """Lấy trạng thái job"""
        if job_id in self.running_jobs:
            return self.running_jobs[job_id]
        if job_id in self.completed_jobs:
            return self.completed_jobs[job_id]
        return None

    def get_stats(self) -> Dict[str, Any]:
        """Lấy thống kê worker"""
        return {
            "running_jobs": len(self.running_jobs),
            "completed_jobs": len(self.completed_jobs),
            "total_jobs": len(self.running_jobs) + len(self.completed_jobs),
            "uptime": str(datetime.now() - self.start_time),
        }
