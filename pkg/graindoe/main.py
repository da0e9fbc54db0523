"""
Main FastAPI Application
Ứng dụng FastAPI để xếp hàng thí nghiệm DoE và theo dõi trạng thái
"""

from contextlib import asynccontextmanager
from datetime import datetime
from pathlib import Path

import structlog
import uvicorn
from fastapi import BackgroundTasks, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from config.settings import settings
from . import __version__
from .api.models.schemas import (
    ConfigResponse,
    ErrorResponse,
    ExperimentTriggerRequest,
    ExperimentTriggerResponse,
    HealthResponse,
    JobStatus,
    JobStatusResponse,
)
from .exceptions import GrainDoeError
from .nn.hyperparams import get_profile
from .services.doe import load_design
from .utils.helpers import generate_job_id, validate_job_id
from .utils.log_config import configure_logging
from .workers.background_worker import BackgroundWorker


configure_logging(settings.log_level)
logger = structlog.get_logger(__name__)

# Dịch vụ toàn cục
background_worker = BackgroundWorker()


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Quản lý vòng đời ứng dụng"""
    logger.info("🚀 Starting GrainDoE server", version=__version__)
    await background_worker.start()

    yield

    await background_worker.stop()
    logger.info("🛑 GrainDoE server stopped")


app = FastAPI(
    title="GrainDoE",
    description="Chạy thí nghiệm DoE cho mạng CNN phân loại vi cấu trúc hạt",
    version=__version__,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.server.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/health", response_model=HealthResponse)
async def health_check():
    """Health check endpoint"""
    return HealthResponse(
        status="healthy",
        version=__version__,
        uptime=str(datetime.now() - background_worker.start_time),
    )


@app.post("/api/v1/experiments/trigger", response_model=ExperimentTriggerResponse)
async def trigger_experiment(request: ExperimentTriggerRequest, background_tasks: BackgroundTasks):
    """Xếp hàng chạy một ma trận thiết kế"""
    config = background_worker.config
    try:
        design = load_design(request.design)
        profile = request.profile or config.training.profile
        get_profile(profile)
    except GrainDoeError as e:
        raise HTTPException(status_code=400, detail=str(e))

    if not Path(request.manifest).exists():
        raise HTTPException(status_code=400, detail=f"manifest not found: {request.manifest}")

    job_id = generate_job_id()
    replicates = request.replicates or config.training.replicates
    output_dir = request.output_dir or str(Path(config.experiment.output_dir) / job_id)
    background_worker.register_job(job_id, design, replicates)

    background_tasks.add_task(
        background_worker.process_experiment_job,
        job_id=job_id,
        design=design,
        manifest=request.manifest,
        output_dir=output_dir,
        epochs=request.epochs or config.training.epochs,
        replicates=replicates,
        seed=request.seed if request.seed is not None else config.experiment.master_seed,
        profile=profile,
    )

    logger.info("📝 Experiment job queued", job_id=job_id, design=design.name, rows=design.n_rows)
    return ExperimentTriggerResponse(
        job_id=job_id,
        status=JobStatus.QUEUED,
        message="Experiment job queued successfully",
        treatments=design.n_rows,
    )


@app.get("/api/v1/experiments/{job_id}/status", response_model=JobStatusResponse)
async def get_experiment_status(job_id: str):
    """Lấy trạng thái job"""
    if not validate_job_id(job_id):
        raise HTTPException(status_code=400, detail="Invalid job ID")
    status_data = background_worker.get_job_status(job_id)
    if not status_data:
        raise HTTPException(status_code=404, detail="Experiment job not found")
    return JobStatusResponse(**status_data)


@app.get("/api/v1/config", response_model=ConfigResponse)
async def get_config():
    """Lấy cấu hình hiện tại"""
    config = background_worker.config
    return ConfigResponse(
        imgprep=config.imgprep.model_dump(),
        augment=config.augment.model_dump(),
        training=config.training.model_dump(),
        experiment=config.experiment.model_dump(),
        server=config.server.model_dump(),
    )


@app.exception_handler(Exception)
async def global_exception_handler(request, exc):
    """Global exception handler"""
    logger.error("💥 Unhandled exception", error=str(exc))
    return JSONResponse(
        status_code=500,
        content=ErrorResponse(
            error="Internal server error",
            code="INTERNAL_ERROR",
            details={"message": str(exc)},
        ).model_dump(),
    )


def serve(host: str = None, port: int = None):
    """Chạy server bằng uvicorn"""
    uvicorn.run(
        app,
        host=host or settings.server.host,
        port=port or settings.server.port,
        log_level=settings.log_level.lower(),
    )
