"""
Obstacle and Perturbation Path Catalog
Code-defined external fields Q and obstacle families keyed by id
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from .exceptions import ParseError
from .geometry import Grid2D, ScalarField, filled_laplacian, load_field
from .obstacle import ObstacleProblem, ObstacleSolution, smooth_bump


class BaseObstacle(ABC):
    """External field Q; the obstacle is h = c - Q/2"""

    def __init__(self, params: Optional[Dict[str, Any]] = None):
        self.params = dict(params or {})

    @property
    @abstractmethod
    def name(self) -> str:
        """Catalog id"""

    @abstractmethod
    def external_field(self, grid: Grid2D) -> ScalarField:
        """Q sampled on the grid"""

    def radial_field(self) -> Optional[Callable[[np.ndarray], np.ndarray]]:
        """Q(r) when the field is radial, else None"""
        return None

    def contact_radius(self, mass: float) -> Optional[float]:
        """Exact radius of the contact disk when known"""
        return None

    def obstacle(self, grid: Grid2D, c: float) -> ScalarField:
        return ScalarField(grid, c - 0.5 * self.external_field(grid).values)


class RadialQuadratic(BaseObstacle):
    """Q = a |x|^2"""
    name = "radial-quadratic"

    def external_field(self, grid: Grid2D) -> ScalarField:
        a = float(self.params.get("a", 1.0))
        return ScalarField.from_function(grid, lambda x, y: a * (x ** 2 + y ** 2))

    def radial_field(self):
        a = float(self.params.get("a", 1.0))
        return lambda r: a * np.asarray(r) ** 2

    def contact_radius(self, mass: float) -> Optional[float]:
        # mu = Laplace Q / 2 = 2a on a disk of mass m
        a = float(self.params.get("a", 1.0))
        return float(np.sqrt(mass / (2.0 * np.pi * a)))


class TiltedQuadratic(BaseObstacle):
    """Q = |x|^2 + b x_1"""
    name = "tilted-quadratic"

    def external_field(self, grid: Grid2D) -> ScalarField:
        b = float(self.params.get("b", 0.2))
        return ScalarField.from_function(grid, lambda x, y: x ** 2 + y ** 2 + b * x)


class BumpPerturbed(BaseObstacle):
    """Q = |x|^2 - 2 bump, so the obstacle is raised by a smooth bump"""
    name = "bump-perturbed"

    def external_field(self, grid: Grid2D) -> ScalarField:
        center = tuple(self.params.get("center", (0.1, 0.0)))
        bump = smooth_bump(grid, center, float(self.params.get("radius", 0.2)),
                           float(self.params.get("amplitude", 0.02)))
        x, y = grid.mesh()
        return ScalarField(grid, x ** 2 + y ** 2 - 2.0 * bump)


class GridFile(BaseObstacle):
    """Q read from a field file written by geometry.save_field"""
    name = "grid-file"

    def external_field(self, grid: Grid2D) -> ScalarField:
        path = self.params.get("path")
        if not path:
            raise ParseError("grid-file obstacle needs a 'path' parameter")
        loaded = load_field(Path(path))
        if not loaded.grid.matches(grid):
            raise ParseError(f"Grid file {path} does not match the scenario grid",
                             details={"file_grid": loaded.grid.to_dict(), "grid": grid.to_dict()})
        return loaded


@dataclass(frozen=True)
class PathFields:
    """Derivatives at t = 0 and the sampler of a perturbation family"""
    hdot: ScalarField
    hddot: ScalarField
    cdot: float
    cddot: float
    sampler: Callable[[float], Tuple[ScalarField, float]]
    support_radius: float
    symmetric: bool = True


class BasePath(ABC):
    """Obstacle family h^t built from a base obstacle"""

    def __init__(self, params: Optional[Dict[str, Any]] = None):
        self.params = dict(params or {})

    @property
    @abstractmethod
    def name(self) -> str:
        """Catalog id"""

    @abstractmethod
    def build(self, problem: ObstacleProblem, Q: ScalarField) -> PathFields:
        """Derivatives of h^t at t = 0 and the sampler of h^t, c^t"""

    def oracle(self, solution: ObstacleSolution, normals: np.ndarray,
               N: np.ndarray) -> Dict[str, Optional[np.ndarray]]:
        """Exact etadot / etaddot along N when known"""
        return {"etadot": None, "etaddot": None}


class RadialScaling(BasePath):
    """h^t = c - (1 + rate t) Q / 2 at fixed c"""
    name = "radial-scaling"
    quadratic: Optional[float] = None

    def build(self, problem: ObstacleProblem, Q: ScalarField) -> PathFields:
        rate = float(self.params.get("rate", 1.0))
        # Q = a |x|^2 has Laplace Q = 4a
        self.quadratic = float(np.median(filled_laplacian(Q))) / 4.0
        c = problem.c if problem.c is not None else problem.target_mass / (2.0 * np.pi)
        grid = problem.box

        def sampler(t: float) -> Tuple[ScalarField, float]:
            return ScalarField(grid, c - 0.5 * (1.0 + rate * t) * Q.values), c

        return PathFields(
            hdot=Q.scaled(-0.5 * rate), hddot=ScalarField.zeros(grid), cdot=0.0, cddot=0.0,
            sampler=sampler, support_radius=grid.size,
        )

    def oracle(self, solution, normals, N):
        # R_t = R_0 (1 + rate t)^(-1/2) with R_0 = sqrt(m / (2 pi a)) and m = 2 pi c
        rate = float(self.params.get("rate", 1.0))
        quadratic = self.quadratic if self.quadratic is not None else float(self.params.get("a", 1.0))
        radius = float(np.sqrt(solution.c_used / quadratic))
        a = np.sum(N * normals, axis=1)
        return {"etadot": -0.5 * rate * radius / a, "etaddot": 0.75 * rate ** 2 * radius / a}


class Tilt(BasePath):
    """h^t = h^0 - t beta x_1 / 2: the support translates by (-beta t / 2, 0)"""
    name = "tilt"

    def build(self, problem: ObstacleProblem, Q: ScalarField) -> PathFields:
        beta = float(self.params.get("beta", 0.4))
        grid = problem.box
        x, _ = grid.mesh()
        hdot = ScalarField(grid, -0.5 * beta * x)
        c = problem.c if problem.c is not None else problem.target_mass / (2.0 * np.pi)

        def sampler(t: float) -> Tuple[ScalarField, float]:
            return ScalarField(grid, problem.h.values + t * hdot.values), c

        return PathFields(hdot=hdot, hddot=ScalarField.zeros(grid), cdot=0.0, cddot=0.0,
                          sampler=sampler, support_radius=grid.size)

    def oracle(self, solution, normals, N):
        beta = float(self.params.get("beta", 0.4))
        a = np.sum(N * normals, axis=1)
        return {"etadot": -0.5 * beta * normals[:, 0] / a, "etaddot": None}


class Bump(BasePath):
    """h^t = h^0 + t amplitude bump(x), compactly supported"""
    name = "bump"

    def build(self, problem: ObstacleProblem, Q: ScalarField) -> PathFields:
        grid = problem.box
        center = tuple(self.params.get("center", (0.0, 0.0)))
        radius = float(self.params.get("radius", 0.3))
        bump = smooth_bump(grid, center, radius, float(self.params.get("amplitude", 0.1)))
        c = problem.c if problem.c is not None else problem.target_mass / (2.0 * np.pi)

        def sampler(t: float) -> Tuple[ScalarField, float]:
            return ScalarField(grid, problem.h.values + t * bump), c

        return PathFields(hdot=ScalarField(grid, bump), hddot=ScalarField.zeros(grid), cdot=0.0,
                          cddot=0.0, sampler=sampler,
                          support_radius=float(np.hypot(*center)) + radius + grid.spacing)


class Frozen(BasePath):
    """h^t = h^0"""
    name = "frozen"

    def build(self, problem: ObstacleProblem, Q: ScalarField) -> PathFields:
        grid = problem.box
        c = problem.c if problem.c is not None else problem.target_mass / (2.0 * np.pi)
        return PathFields(hdot=ScalarField.zeros(grid), hddot=ScalarField.zeros(grid), cdot=0.0,
                          cddot=0.0, sampler=lambda t: (problem.h, c), support_radius=1.0)

    def oracle(self, solution, normals, N):
        zeros = np.zeros(len(normals))
        return {"etadot": zeros, "etaddot": zeros}


class Catalog:
    """Registry of obstacle and path classes by id"""

    def __init__(self):
        self.obstacles: Dict[str, type] = {}
        self.paths: Dict[str, type] = {}

    def register_obstacle(self, cls: type) -> None:
        self.obstacles[cls.name] = cls

    def register_path(self, cls: type) -> None:
        self.paths[cls.name] = cls

    def obstacle(self, name: str, params: Optional[Dict[str, Any]] = None) -> BaseObstacle:
        if name not in self.obstacles:
            raise ParseError(f"Unknown obstacle id '{name}'", details={"id": name,
                             "available": self.list_available()["obstacles"]})
        return self.obstacles[name](params)

    def path(self, name: str, params: Optional[Dict[str, Any]] = None) -> BasePath:
        if name not in self.paths:
            raise ParseError(f"Unknown path id '{name}'", details={"id": name,
                             "available": self.list_available()["paths"]})
        return self.paths[name](params)

    def list_available(self) -> Dict[str, list]:
        return {"obstacles": sorted(self.obstacles), "paths": sorted(self.paths)}


_catalog = Catalog()
for _cls in (RadialQuadratic, TiltedQuadratic, BumpPerturbed, GridFile):
    _catalog.register_obstacle(_cls)
for _cls in (RadialScaling, Tilt, Bump, Frozen):
    _catalog.register_path(_cls)


def get_catalog() -> Catalog:
    """Get the global catalog"""
    return _catalog
