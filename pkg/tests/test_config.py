"""
Tests for settings, logging and the exception helpers
"""

import json
import logging
from pathlib import Path

import pytest
from pydantic import ValidationError as PydanticValidationError

from obstacle_flow.exceptions import (
    BoxTooSmall, FixedPointDiverged, MultipleComponents, NoConvergence, ObstacleFlowError,
    ValidationError, handle_exception,
)
from obstacle_flow.logging_config import StructuredFormatter, get_logger
from obstacle_flow.runtime_config import FrameSettings, RuntimeSettings, SolverSettings, ThetaSettings


class TestSolverSettings:
    """Test cases for solver, frame and fixed-point settings"""

    def test_defaults(self):
        settings = SolverSettings()
        assert settings.method == "psor"
        assert settings.omega == 1.8
        assert settings.tolerance == 1e-8
        assert FrameSettings().epsilon == 0.05
        assert ThetaSettings().max_iterations == 50

    @pytest.mark.parametrize("overrides", [
        {"omega": 1.0},
        {"omega": 2.0},
        {"tolerance": 0.0},
        {"method": "multigrid"},
        {"margin_fraction": 0.5},
    ])
    def test_solver_bounds(self, overrides):
        with pytest.raises(PydanticValidationError):
            SolverSettings(**overrides)

    def test_frame_bounds(self):
        """The alignment slack never exceeds 0.05"""
        with pytest.raises(PydanticValidationError):
            FrameSettings(epsilon=0.1)
        with pytest.raises(PydanticValidationError):
            FrameSettings(offsets=1)

    def test_theta_bounds(self):
        with pytest.raises(PydanticValidationError):
            ThetaSettings(damping=0.0)


class TestRuntimeSettings:
    """Test cases for environment-driven options"""

    def test_from_env(self, monkeypatch, temp_dir):
        monkeypatch.setenv("OBSTACLE_FLOW_LOG_LEVEL", "debug")
        monkeypatch.setenv("OBSTACLE_FLOW_LOG_FORMAT", "text")
        monkeypatch.setenv("OBSTACLE_FLOW_OUTPUT_ROOT", str(temp_dir))
        settings = RuntimeSettings.from_env()
        assert settings.log_level == "DEBUG"
        assert settings.log_format == "text"
        assert settings.output_root == temp_dir

    def test_explicit_output_root_wins(self, monkeypatch, temp_dir):
        monkeypatch.setenv("OBSTACLE_FLOW_OUTPUT_ROOT", str(temp_dir))
        assert RuntimeSettings.from_env("elsewhere").output_root == Path("elsewhere")

    def test_invalid_log_level(self, monkeypatch):
        monkeypatch.setenv("OBSTACLE_FLOW_LOG_LEVEL", "LOUD")
        with pytest.raises(ValidationError) as excinfo:
            RuntimeSettings.from_env()
        assert excinfo.value.field == "log_level"

    def test_invalid_log_format(self):
        with pytest.raises(ValidationError):
            RuntimeSettings(log_format="xml")


class TestStructuredLogging:
    """Test cases for the JSON formatter and the logger adapter"""

    def test_formatter_includes_context(self):
        record = logging.LogRecord("obstacle_flow.test", logging.INFO, __file__, 10, "solved %s", ("ok",), None)
        record.scenario = "radial"
        record.operation = "solve_obstacle"
        record.stage = "solve"
        payload = json.loads(StructuredFormatter().format(record))
        assert payload["message"] == "solved ok"
        assert payload["level"] == "INFO"
        assert payload["scenario"] == "radial"
        assert payload["stage"] == "solve"
        assert "correlation_id" not in payload

    def test_adapter_adds_scenario_and_operation(self, caplog):
        logger = get_logger("obstacle_flow.test_config", "demo")
        with caplog.at_level(logging.DEBUG, logger="obstacle_flow"):
            logger.info_operation("solve_obstacle", "Solved", extra={"iterations": 4})
        record = caplog.records[-1]
        assert record.scenario == "demo"
        assert record.operation == "solve_obstacle"
        assert record.iterations == 4

    def test_loggers_are_cached(self):
        assert get_logger("obstacle_flow.cached", "a") is get_logger("obstacle_flow.cached", "a")
        assert get_logger("obstacle_flow.cached", "a") is not get_logger("obstacle_flow.cached", "b")


class TestExceptions:
    """Test cases for the error hierarchy and handle_exception"""

    def test_to_dict(self):
        error = NoConvergence("PSOR stalled", iterations=20000, residual=1e-3)
        payload = error.to_dict()
        assert payload["error_type"] == "NoConvergence"
        assert payload["details"]["iterations"] == 20000

    def test_family_attributes(self):
        assert MultipleComponents("two", components=2).components == 2
        assert FixedPointDiverged("slow", contraction=1.2).details["contraction"] == 1.2
        assert ValidationError("bad", field="mass", value=-1).details["field"] == "mass"

    def test_stage_is_stamped(self):
        logger = get_logger("obstacle_flow.test_config")

        @handle_exception(logger, "solve_obstacle", stage="solve")
        def failing():
            raise BoxTooSmall("contact reaches the margin")

        with pytest.raises(BoxTooSmall) as excinfo:
            failing()
        assert excinfo.value.stage == "solve"

    def test_existing_stage_is_kept(self):
        logger = get_logger("obstacle_flow.test_config")

        @handle_exception(logger, "run_scenario", stage="verify")
        def failing():
            raise BoxTooSmall("inner", details={"stage": "solve"})

        with pytest.raises(BoxTooSmall) as excinfo:
            failing()
        assert excinfo.value.stage == "solve"

    def test_unexpected_errors_are_wrapped(self):
        logger = get_logger("obstacle_flow.test_config")

        @handle_exception(logger, "build_frame", stage="frame")
        def failing():
            raise KeyError("missing")

        with pytest.raises(ObstacleFlowError) as excinfo:
            failing()
        assert excinfo.value.error_code == "UNEXPECTED_ERROR"
        assert excinfo.value.stage == "frame"
        assert isinstance(excinfo.value.__cause__, KeyError)
