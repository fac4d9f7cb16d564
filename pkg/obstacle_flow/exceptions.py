"""
Custom Exceptions for the obstacle_flow toolkit
Provides specific exception types for solver, geometry and pipeline failures
"""

import functools
from typing import Optional, Dict, Any


class ObstacleFlowError(Exception):
    """Base exception for all obstacle_flow errors"""

    def __init__(self, message: str, error_code: Optional[str] = None,
                 details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}

    @property
    def stage(self) -> Optional[str]:
        """Pipeline stage that produced the error, if known"""
        return self.details.get("stage")

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for logging/serialization"""
        return {
            "error_type": self.__class__.__name__,
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details
        }


class ConfigurationError(ObstacleFlowError):
    """Raised when there are configuration-related errors"""
    pass


class ValidationError(ObstacleFlowError):
    """Raised when input validation fails"""

    def __init__(self, message: str, field: Optional[str] = None,
                 value: Optional[Any] = None, error_code: Optional[str] = None,
                 details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code, details)
        self.field = field
        self.value = value
        if field:
            self.details["field"] = field
        if value is not None:
            self.details["value"] = str(value)


class GeometryError(ObstacleFlowError):
    """Base class for grid, curve and frame errors"""
    pass


class NoContour(GeometryError):
    """Raised when a field has no crossing of the requested level"""
    pass


class MultipleComponents(GeometryError):
    """Raised when the level crossing forms more than one closed loop"""

    def __init__(self, message: str, components: int = 0,
                 error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code, details)
        self.components = components
        self.details["components"] = components


class CollarOverlap(GeometryError):
    """Raised when transversal segments of a frame intersect"""
    pass


class FrameMisaligned(GeometryError):
    """Raised when the transversal field drifts too far from the curve normal"""
    pass


class OutsideCollar(GeometryError):
    """Raised when a curve leaves the collar of a frame"""
    pass


class NonGraphical(GeometryError):
    """Raised when a transversal meets a curve zero or several times"""
    pass


class GridMismatch(GeometryError):
    """Raised when two grid-based objects live on different grids"""
    pass


class SolverError(ObstacleFlowError):
    """Base class for obstacle solver errors"""
    pass


class NoConvergence(SolverError):
    """Raised when an iteration budget is exhausted"""

    def __init__(self, message: str, iterations: int = 0, residual: Optional[float] = None,
                 error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code, details)
        self.iterations = iterations
        self.residual = residual
        self.details["iterations"] = iterations
        if residual is not None:
            self.details["residual"] = residual


class EmptyContact(SolverError):
    """Raised when a contact set is required but empty"""
    pass


class BoxTooSmall(SolverError):
    """Raised when the contact set reaches the box margin"""
    pass


class BisectionFailed(SolverError):
    """Raised when the mass/constant relation cannot be bracketed or solved"""
    pass


class PerturbationError(ObstacleFlowError):
    """Base class for first- and second-order response errors"""
    pass


class DegenerateLaplacian(PerturbationError):
    """Raised when the obstacle Laplacian is too small on the free boundary"""
    pass


class EmptyBoundary(PerturbationError):
    """Raised when a velocity problem has no free boundary"""
    pass


class FixedPointDiverged(PerturbationError):
    """Raised when the Theta fixed point fails to contract"""

    def __init__(self, message: str, contraction: Optional[float] = None,
                 error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code, details)
        self.contraction = contraction
        if contraction is not None:
            self.details["contraction"] = contraction


class LayerPotentialError(ObstacleFlowError):
    """Base class for kernel and quadrature errors"""
    pass


class OriginSingularity(LayerPotentialError):
    """Raised when the Newtonian kernel is evaluated at the origin"""
    pass


class TooCloseToCurve(LayerPotentialError):
    """Raised when an off-curve quadrature target sits on the curve"""
    pass


class DegenerateCurve(LayerPotentialError):
    """Raised when a curve is too coarse or has zero-length panels"""
    pass


class ScenarioError(ObstacleFlowError):
    """Base class for scenario, study and output errors"""
    pass


class ParseError(ScenarioError):
    """Raised when a scenario cannot be read or references unknown ids"""
    pass


class SpacingsNotDistinct(ScenarioError):
    """Raised when a convergence study repeats a grid spacing"""
    pass


class OutputError(ScenarioError):
    """Raised when a report or figure cannot be written"""
    pass


def handle_exception(logger, operation: str, stage: Optional[str] = None,
                     correlation_id: Optional[str] = None):
    """Decorator for standardized exception handling and logging"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except ObstacleFlowError as e:
                if stage and "stage" not in e.details:
                    e.details["stage"] = stage
                logger.error_operation(
                    operation,
                    f"Toolkit error in {func.__name__}: {e.message}",
                    correlation_id,
                    extra={"error_details": e.to_dict(), "stage": e.stage}
                )
                raise
            except Exception as e:
                logger.error_operation(
                    operation,
                    f"Unexpected error in {func.__name__}: {str(e)}",
                    correlation_id,
                    exc_info=True
                )
                details = {"original_error": str(e), "function": func.__name__}
                if stage:
                    details["stage"] = stage
                raise ObstacleFlowError(
                    f"Unexpected error in {operation}",
                    error_code="UNEXPECTED_ERROR",
                    details=details
                ) from e
        return wrapper
    return decorator
