"""
Pytest configuration and fixtures for obstacle_flow tests
"""

import shutil
import tempfile
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from obstacle_flow.geometry import Curve, Grid2D, ScalarField, build_frame
from obstacle_flow.logging_config import configure_logging
from obstacle_flow.obstacle import ObstacleProblem, ObstacleSolution, solve_obstacle
from obstacle_flow.runtime_config import SolverSettings


# Configure test logging
configure_logging(log_level="DEBUG", console_output=False)

SPACING = 1.0 / 64.0
HALF_WIDTH = 1.25
RADIUS = (2.0 * np.pi) ** -0.5


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Provide a temporary directory for tests"""
    temp_path = Path(tempfile.mkdtemp())
    yield temp_path
    shutil.rmtree(temp_path, ignore_errors=True)


@pytest.fixture(scope="session")
def grid() -> Grid2D:
    """Coarse square box around the origin"""
    return Grid2D.centered(HALF_WIDTH, SPACING)


@pytest.fixture(scope="session")
def active_set() -> SolverSettings:
    return SolverSettings(method="active_set")


@pytest.fixture(scope="session")
def quadratic_Q(grid: Grid2D) -> ScalarField:
    """Q = |x|^2"""
    return ScalarField.from_function(grid, lambda x, y: x ** 2 + y ** 2)


@pytest.fixture(scope="session")
def radial_problem(quadratic_Q: ScalarField, active_set: SolverSettings) -> ObstacleProblem:
    """h = 1/(2 pi) - |x|^2/2 with unit mass"""
    c = 1.0 / (2.0 * np.pi)
    return ObstacleProblem(h=ScalarField(quadratic_Q.grid, c - 0.5 * quadratic_Q.values), c=c,
                           solver=active_set, name="radial")


@pytest.fixture(scope="session")
def radial_solution(radial_problem: ObstacleProblem) -> ObstacleSolution:
    return solve_obstacle(radial_problem)


@pytest.fixture(scope="session")
def radial_frame(radial_solution: ObstacleSolution):
    return build_frame(radial_solution.require_gamma(), smoothing=2)


@pytest.fixture(scope="session")
def unit_circle() -> Curve:
    """256 vertices on the unit circle with outward normals"""
    return Curve.circle((0.0, 0.0), 1.0, 256)


def pytest_collection_modifyitems(config, items):
    """Add markers to tests based on their location"""
    for item in items:
        # Add unit marker to all tests by default
        if "integration" not in item.keywords:
            item.add_marker(pytest.mark.unit)

        # Add specific markers based on test file location
        path = str(item.fspath)
        for name in ("geometry", "obstacle", "layerpot", "perturb", "cli", "config"):
            if f"test_{name}" in path:
                item.add_marker(getattr(pytest.mark, name))


# Custom assertions for testing
class AssertionHelpers:
    """Helper methods for common test assertions"""

    @staticmethod
    def assert_radius(curve: Curve, radius: float, tolerance: float,
                      center=(0.0, 0.0)) -> None:
        """Assert that every vertex lies within tolerance of the circle"""
        distance = np.linalg.norm(curve.vertices - np.asarray(center), axis=1)
        worst = float(np.max(np.abs(distance - radius)))
        assert worst <= tolerance, f"vertex radius off by {worst:.3e} (allowed {tolerance:.3e})"

    @staticmethod
    def assert_relative(value, expected, tolerance: float) -> None:
        """Assert max |value - expected| <= tolerance max |expected|"""
        value = np.asarray(value, dtype=float)
        expected = np.asarray(expected, dtype=float)
        scale = float(np.max(np.abs(expected)))
        error = float(np.max(np.abs(value - expected)))
        assert error <= tolerance * scale, f"relative error {error / scale:.3e} exceeds {tolerance}"

    @staticmethod
    def assert_unit_normals(curve: Curve) -> None:
        lengths = np.linalg.norm(curve.normals, axis=1)
        assert np.allclose(lengths, 1.0, atol=1e-9)


@pytest.fixture
def assert_helpers() -> AssertionHelpers:
    """Provide assertion helpers for tests"""
    return AssertionHelpers()
