"""
API Models và Schemas cho GrainDoE
API models and schemas for GrainDoE
"""

from datetime import datetime
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class JobStatus(str, Enum):
    """Trạng thái job thí nghiệm"""
    QUEUED = "queued"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class ExperimentTriggerRequest(BaseModel):
    """Request để chạy một ma trận thiết kế"""
    design: str = Field(..., description="Tên thiết kế có sẵn hoặc đường dẫn CSV thiết kế")
    manifest: str = Field(..., description="Manifest CSV của tile có nhãn")
    epochs: Optional[int] = Field(None, ge=1, description="Số epoch (mặc định theo cấu hình)")
    replicates: Optional[int] = Field(None, ge=1, description="Số lần lặp lại")
    seed: Optional[int] = Field(None, description="Master seed")
    output_dir: Optional[str] = Field(None, description="Thư mục kết quả")
    profile: Optional[str] = Field(None, description="Profile mạng: paper hoặc tiny")


class ExperimentTriggerResponse(BaseModel):
    """Response khi trigger thí nghiệm"""
    job_id: str = Field(..., description="ID của job")
    status: JobStatus = Field(..., description="Trạng thái hiện tại")
    message: str = Field(..., description="Thông điệp")
    treatments: int = Field(..., description="Số treatment trong thiết kế")


class ProgressInfo(BaseModel):
    """Thông tin tiến độ"""
    total: int = Field(0, description="Tổng số lần chạy (treatment x replicate)")
    completed: int = Field(0, description="Số lần chạy đã xong")
    failed: int = Field(0, description="Số lần chạy bị lỗi")


class JobStatusResponse(BaseModel):
    """Response trạng thái job"""
    job_id: str = Field(..., description="ID của job")
    status: JobStatus = Field(..., description="Trạng thái hiện tại")
    progress: ProgressInfo = Field(default_factory=ProgressInfo, description="Thông tin tiến độ")
    created_at: Optional[str] = Field(None, description="Thời gian tạo")
    completed_at: Optional[str] = Field(None, description="Thời gian hoàn thành")
    outputs: Dict[str, str] = Field(default_factory=dict, description="File kết quả")
    errors: List[str] = Field(default_factory=list, description="Danh sách lỗi")


class ConfigResponse(BaseModel):
    """Response cấu hình hiện tại"""
    imgprep: Dict = Field(..., description="Cấu hình cắt tile")
    augment: Dict = Field(..., description="Cấu hình augmentation")
    training: Dict = Field(..., description="Cấu hình huấn luyện")
    experiment: Dict = Field(..., description="Cấu hình thí nghiệm")
    server: Dict = Field(..., description="Cấu hình server")


class HealthResponse(BaseModel):
    """Response health check"""
    status: str = Field(..., description="Trạng thái hệ thống")
    timestamp: datetime = Field(default_factory=datetime.now, description="Thời gian check")
    version: str = Field(..., description="Phiên bản")
    uptime: str = Field(..., description="Thời gian hoạt động")


class ErrorResponse(BaseModel):
    """Response lỗi"""
    error: str = Field(..., description="Thông điệp lỗi")
    code: str = Field(..., description="Mã lỗi")
    details: Optional[Dict] = Field(None, description="Chi tiết lỗi")


class RunManifest(BaseModel):
    """Manifest tái lập của một lệnh sinh artifact"""
    command: str = Field(..., description="Tên lệnh")
    master_seed: int = Field(..., description="Master seed")
    config_hash: str = Field(..., description="SHA-256 của cấu hình đã dùng")
    dataset_manifest_hash: Optional[str] = Field(None, description="SHA-256 của manifest dataset")
    inputs: Dict[str, str] = Field(default_factory=dict, description="File đầu vào")
    outputs: Dict[str, str] = Field(default_factory=dict, description="File đầu ra")
    tool_version: str = Field("", description="Phiên bản công cụ")
    created_at: str = Field(..., description="Thời gian tạo")
