"""
obstacle_flow Runtime Configuration
Solver, frame and fixed-point settings plus environment-driven runtime options
"""

import os
from pathlib import Path
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

from .exceptions import ConfigurationError, ValidationError

load_dotenv()


class SolverSettings(BaseModel):
    """Discrete complementarity solver settings"""
    method: Literal["psor", "active_set"] = Field(default="psor")
    omega: float = Field(default=1.8, gt=1.0, lt=2.0)
    tolerance: float = Field(default=1e-8, gt=0.0, le=1e-2)
    max_sweeps: int = Field(default=20000, ge=1)
    max_outer: int = Field(default=20, ge=1, le=200)
    max_active_set_iterations: int = Field(default=200, ge=1)
    margin_fraction: float = Field(default=0.25, ge=0.0, lt=0.5)
    rho_fraction: float = Field(default=0.5, gt=0.0, le=1.0)


class FrameSettings(BaseModel):
    """Transversal frame construction settings"""
    smoothing: int = Field(default=2, ge=0, le=50)
    collar_fraction: float = Field(default=0.25, gt=0.0, le=1.0)
    epsilon: float = Field(default=0.05, gt=0.0, le=0.05)
    offsets: int = Field(default=8, ge=2, le=64)


class ThetaSettings(BaseModel):
    """Fixed-point settings for the second-order boundary density"""
    tolerance: float = Field(default=1e-8, gt=0.0)
    max_iterations: int = Field(default=50, ge=1, le=1000)
    damping: float = Field(default=0.8, gt=0.0, le=1.0)


class RuntimeSettings(BaseModel):
    """Process-level options for the command line runner"""
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="structured")
    output_root: Path = Field(default=Path("output"))

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v):
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        if v.upper() not in valid_levels:
            raise ValidationError(f"Invalid log level: {v}. Must be one of {valid_levels}",
                                  field="log_level", value=v)
        return v.upper()

    @field_validator('log_format')
    @classmethod
    def validate_log_format(cls, v):
        if v not in {"structured", "text"}:
            raise ValidationError(f"Invalid log format: {v}", field="log_format", value=v)
        return v

    @classmethod
    def from_env(cls, output_root: Optional[str] = None) -> "RuntimeSettings":
        """Load settings from environment variables"""
        try:
            return cls(
                log_level=os.getenv("OBSTACLE_FLOW_LOG_LEVEL", "INFO"),
                log_format=os.getenv("OBSTACLE_FLOW_LOG_FORMAT", "structured"),
                output_root=Path(output_root or os.getenv("OBSTACLE_FLOW_OUTPUT_ROOT", "output")),
            )
        except ValidationError:
            raise
        except ValueError as e:
            raise ConfigurationError(f"Invalid environment configuration: {e}")
