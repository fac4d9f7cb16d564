"""
Global obstacle problem and equilibrium measure on a truncated box

The planar-log flavor is solved on the grid with Dirichlet box data m P(x - x_c) + kappa,
where kappa fixes the discrete mass and x_c follows the centroid of the measure.
The decaying flavor (n >= 3) goes through the radial oracle.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import sparse
from scipy.sparse.linalg import splu

from .exceptions import (
    BoxTooSmall, EmptyContact, GridMismatch, NoConvergence, ValidationError,
)
from .geometry import (
    Curve, Grid2D, RegionMask, ScalarField, discrete_laplacian, extract_free_boundary,
    filled_laplacian, local_quadratic_fit,
)
from .layerpot import newtonian_potential
from .logging_config import get_logger
from .radial import RadialObstacle, RadialSolution, solve_radial, solve_radial_mass
from .runtime_config import SolverSettings

logger = get_logger("obstacle_flow.obstacle")

Flavor = Literal["planar-log", "decaying"]
CONTACT_FACTOR = 10.0


@dataclass(frozen=True)
class ObstacleProblem:
    """Obstacle h on a box with far-field constant c or prescribed total mass"""
    h: ScalarField
    flavor: Flavor = "planar-log"
    c: Optional[float] = None
    mass: Optional[float] = None
    rho: float = 1.0
    solver: SolverSettings = field(default_factory=SolverSettings)
    dimension: int = 2
    radial_profile: Optional[RadialObstacle] = None
    name: str = "obstacle"

    def __post_init__(self):
        if (self.c is None) == (self.mass is None):
            raise ValidationError("Give exactly one of far-field constant c or mass", field="c/mass")
        if self.rho <= 0:
            raise ValidationError("rho must be positive", field="rho", value=self.rho)
        if self.mass is not None and self.mass < 0:
            raise ValidationError("Mass must be nonnegative", field="mass", value=self.mass)
        if self.flavor == "planar-log":
            if self.dimension != 2:
                raise ValidationError("planar-log flavor lives in two dimensions",
                                      field="dimension", value=self.dimension)
            if self.c is not None and self.c <= 0:
                raise ValidationError("planar-log flavor needs c > 0", field="c", value=self.c)
        elif self.flavor == "decaying":
            if self.dimension < 3:
                raise ValidationError("decaying flavor needs n >= 3", field="dimension",
                                      value=self.dimension)
            if self.radial_profile is None:
                raise ValidationError("decaying flavor is solved radially; give radial_profile",
                                      field="radial_profile")
        else:
            raise ValidationError(f"Unknown flavor {self.flavor}", field="flavor", value=self.flavor)

    @property
    def box(self) -> Grid2D:
        return self.h.grid

    @property
    def target_mass(self) -> Optional[float]:
        """Total mass m; for planar-log a given c means m = 2 pi c"""
        if self.mass is not None:
            return float(self.mass)
        if self.flavor == "planar-log":
            return 2.0 * np.pi * float(self.c)
        return None

    def with_obstacle(self, h: ScalarField, c: Optional[float] = None,
                      mass: Optional[float] = None,
                      radial_profile: Optional[RadialObstacle] = None) -> "ObstacleProblem":
        """Same settings, new obstacle and far-field data"""
        if c is None and mass is None:
            c, mass = self.c, self.mass
        return ObstacleProblem(
            h=h, flavor=self.flavor, c=c, mass=mass, rho=self.rho, solver=self.solver,
            dimension=self.dimension, radial_profile=radial_profile or self.radial_profile,
            name=self.name,
        )


@dataclass(frozen=True)
class ObstacleSolution:
    u: ScalarField
    contact: RegionMask
    omega: RegionMask
    gamma: Optional[Curve]
    mass: float
    c_used: float
    residual: float
    touching_radius: float
    empty_contact: bool = False
    level_field: Optional[ScalarField] = None
    center: Tuple[float, float] = (0.0, 0.0)
    kappa: float = 0.0
    iterations: int = 0
    method: str = "psor"
    regular_boundary: bool = True
    radial: Optional[RadialSolution] = None

    def gap(self, h: ScalarField) -> ScalarField:
        """u - h"""
        return self.u - h

    def require_gamma(self) -> Curve:
        if self.empty_contact or self.gamma is None:
            raise EmptyContact("Solution has an empty contact set and no free boundary")
        return self.gamma

    def summary(self) -> Dict[str, object]:
        return {
            "mass": self.mass,
            "c_used": self.c_used,
            "residual": self.residual,
            "touching_radius": self.touching_radius,
            "empty_contact": self.empty_contact,
            "contact_area": self.contact.area(),
            "center": list(self.center),
            "iterations": self.iterations,
            "method": self.method,
            "regular_boundary": self.regular_boundary,
        }


def grid_laplacian_matrix(grid: Grid2D) -> sparse.csr_matrix:
    """spacing^2 times the five-point -Laplacian on every node (C-order flattening)"""
    def second_difference(count: int) -> sparse.spmatrix:
        return sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(count, count))
    return (sparse.kron(second_difference(grid.nx), sparse.identity(grid.ny))
            + sparse.kron(sparse.identity(grid.nx), second_difference(grid.ny))).tocsr()


def pinned_system(matrix: sparse.csr_matrix, fixed: np.ndarray) -> sparse.csc_matrix:
    """Replace the rows of fixed nodes by identity rows"""
    fixed = fixed.ravel().astype(float)
    return (sparse.diags(1.0 - fixed) @ matrix + sparse.diags(fixed)).tocsc()


def _far_field(grid: Grid2D, mass: float, center: np.ndarray) -> np.ndarray:
    x, y = grid.mesh()
    offsets = np.stack([x - center[0], y - center[1]], axis=-1)
    values = np.zeros(grid.shape)
    edge = grid.boundary_mask()
    values[edge] = mass * newtonian_potential(offsets[edge])
    return values


def _discrete_mass(grid: Grid2D, values: np.ndarray) -> float:
    density = discrete_laplacian(values, grid.spacing)
    return float(-np.sum(density) * grid.spacing ** 2)


def _measure_centroid(grid: Grid2D, values: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    density = -discrete_laplacian(values, grid.spacing)
    total = density.sum()
    if total <= 0:
        return fallback
    x, y = grid.mesh()
    return np.array([np.sum(x * density) / total, np.sum(y * density) / total])


def complementarity_residual(u: np.ndarray, h: np.ndarray, spacing: float) -> float:
    """max |min(-Laplace_h u, u - h)| over interior nodes"""
    laplace = -discrete_laplacian(u, spacing)
    return float(np.max(np.abs(np.minimum(laplace, u - h))[1:-1, 1:-1]))


def _active_set_solve(problem: ObstacleProblem, data: np.ndarray, mass: float,
                      active: np.ndarray) -> Tuple[np.ndarray, float, np.ndarray, int]:
    """Primal-dual active set with the additive constant fixed by the mass"""
    grid = problem.box
    h = problem.h.values
    edge = grid.boundary_mask()
    interior = ~edge
    matrix = grid_laplacian_matrix(grid)
    settings = problem.solver

    for iteration in range(1, settings.max_active_set_iterations + 1):
        if not np.any(active):
            active = np.zeros_like(active)
            flat = np.argmax(np.where(interior, h, -np.inf))
            active.flat[flat] = True
        lu = splu(pinned_system(matrix, edge | active))
        base = lu.solve(np.where(edge, data, np.where(active, h, 0.0)).ravel()).reshape(grid.shape)
        unit = lu.solve(edge.astype(float).ravel()).reshape(grid.shape)
        unit_mass = float(np.sum((matrix @ unit.ravel()).reshape(grid.shape)[interior]))
        base_mass = float(np.sum((matrix @ base.ravel()).reshape(grid.shape)[interior]))
        kappa = (mass - base_mass) / unit_mass
        u = base + kappa * unit
        multiplier = np.where(active, (matrix @ u.ravel()).reshape(grid.shape), 0.0)
        updated = interior & (multiplier + 4.0 * (h - u) > 0.0)
        if np.array_equal(updated, active):
            return u, kappa, active, iteration
        active = updated
    raise NoConvergence("Active set did not settle", iterations=settings.max_active_set_iterations)


def _psor(u: np.ndarray, h: np.ndarray, settings: SolverSettings, spacing: float,
          budget: int) -> Tuple[np.ndarray, int, float]:
    """Red-black projected SOR with frozen boundary ring"""
    nx, ny = u.shape
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    interior = np.zeros(u.shape, dtype=bool)
    interior[1:-1, 1:-1] = True
    colours = [interior & ((i + j) % 2 == parity) for parity in (0, 1)]
    omega = settings.omega
    residual = np.inf
    for sweep in range(1, budget + 1):
        for colour in colours:
            average = np.zeros_like(u)
            average[1:-1, 1:-1] = 0.25 * (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2])
            relaxed = np.maximum(h, u + omega * (average - u))
            u = np.where(colour, relaxed, u)
        if sweep % 10 == 0:
            residual = complementarity_residual(u, h, spacing)
            if residual <= settings.tolerance:
                return u, sweep, residual
    return u, budget, residual


def _psor_solve(problem: ObstacleProblem, data: np.ndarray, mass: float,
                kappa_guess: Optional[float], start: Optional[np.ndarray]) -> Tuple[np.ndarray, float, int]:
    """PSOR at fixed kappa wrapped in a safeguarded secant on mass(kappa) = m"""
    grid = problem.box
    h = problem.h.values
    edge = grid.boundary_mask()
    settings = problem.solver
    spent = 0
    cache: List[Tuple[float, np.ndarray, float]] = []

    def evaluate(kappa: float) -> float:
        nonlocal spent
        if cache:
            nearest = min(cache, key=lambda entry: abs(entry[0] - kappa))[1]
            u = nearest.copy()
        else:
            u = h.copy() if start is None else start.copy()
        u[edge] = data[edge] + kappa
        u = np.maximum(u, h)
        u[edge] = data[edge] + kappa
        remaining = settings.max_sweeps - spent
        if remaining <= 0:
            raise NoConvergence("PSOR sweep budget exhausted", iterations=settings.max_sweeps)
        u, sweeps, residual = _psor(u, h, settings, grid.spacing, remaining)
        spent += sweeps
        if residual > settings.tolerance:
            raise NoConvergence("PSOR sweep budget exhausted", iterations=spent, residual=residual)
        excess = _discrete_mass(grid, u) - mass
        cache.append((kappa, u, excess))
        return excess

    floor = float(np.max((h - data)[edge]))
    step = 0.05 * max(float(h.max() - h.min()), 1e-3)
    low = floor if kappa_guess is None else kappa_guess
    f_low = evaluate(low)
    while f_low <= 0.0:
        low -= step
        f_low = evaluate(low)
    high = low + step
    f_high = evaluate(high)
    while f_high > 0.0:
        low, f_low = high, f_high
        step *= 2.0
        high = low + step
        f_high = evaluate(high)

    # Illinois regula falsi on the bracket [low, high]
    side = 0
    tolerance = CONTACT_FACTOR * settings.tolerance
    for _ in range(60):
        kappa = (low * f_high - high * f_low) / (f_high - f_low)
        excess = evaluate(kappa)
        if abs(excess) <= tolerance or abs(high - low) <= 1e-15 * max(1.0, abs(kappa)):
            u = min(cache, key=lambda entry: abs(entry[2]))[1]
            return u, kappa, spent
        if excess > 0.0:
            low, f_low = kappa, excess
            if side == 1:
                f_high *= 0.5
            side = 1
        else:
            high, f_high = kappa, excess
            if side == -1:
                f_low *= 0.5
            side = -1
    raise NoConvergence("Mass matching on kappa did not converge", iterations=spent,
                        residual=float(min(abs(entry[2]) for entry in cache)))


BAND_DEPTH = (2.0, 7.0)
FIT_WINDOW = 8.0


def level_field(u: ScalarField, h: ScalarField, contact: RegionMask, rho: float) -> ScalarField:
    """Signed level function psi with Gamma = {psi = 0}, psi > 0 on Omega

    Away from the contact set psi = sqrt(2 (u - h) / -Laplace h). Near it psi is the value
    at the node of a local quadratic fit of |grad(u - h)| / -Laplace h, taken from Omega nodes
    two to seven steps from the contact set; the slope of u - h carries no constant offset.
    Deeper contact nodes get minus their distance to Omega.
    """
    grid = u.grid
    gap = u.values - h.values
    curvature = np.maximum(-filled_laplacian(h), 0.5 * rho)
    omega = ~contact.flags
    depth = RegionMask(grid, omega).depth()
    contact_depth = contact.depth()
    psi = np.where(omega, np.sqrt(2.0 * np.maximum(gap, 0.0) / curvature), -contact_depth * grid.spacing)

    gx, gy = np.gradient(gap, grid.spacing)
    slope = np.hypot(gx, gy) / curvature
    band = omega & (depth >= BAND_DEPTH[0]) & (depth <= BAND_DEPTH[1])
    near = (omega & (depth < 3.0)) | (contact.flags & (contact_depth <= 2.0))
    x, y = grid.mesh()
    points = np.column_stack([x[near], y[near]])
    fitted = local_quadratic_fit(grid, slope, band, points, FIT_WINDOW * grid.spacing)[:, 0]
    psi[near] = np.where(np.isfinite(fitted), fitted, psi[near])
    return ScalarField(grid, psi)


def touching_radius(gamma: Curve) -> float:
    """Two-sided ball radius estimate: curvature bound capped by half the curve's width"""
    bound = 1.0 / max(float(np.max(np.abs(gamma.curvature()))), 1e-12)
    spread = np.linalg.norm(gamma.vertices[:, None, :] - gamma.vertices[None], axis=2)
    count = len(gamma)
    index = np.arange(count)
    gap = np.abs(index[:, None] - index[None])
    far = np.minimum(gap, count - gap) >= count // 4
    width = 0.5 * float(np.min(spread[far])) if np.any(far) else bound
    return min(bound, width)


def _finish(problem: ObstacleProblem, u: np.ndarray, contact: np.ndarray, kappa: float,
            center: np.ndarray, iterations: int, method: str, arc_spacing: float,
            c_used: float, radial: Optional[RadialSolution] = None,
            mass: Optional[float] = None, boundary: bool = True) -> ObstacleSolution:
    grid = problem.box
    settings = problem.solver
    contact_mask = RegionMask(grid, contact)
    field_u = ScalarField(grid, u)

    if np.any(contact & (grid.distance_to_edge() < settings.margin_fraction * grid.size)):
        raise BoxTooSmall("Contact set reaches the box margin",
                          details={"margin_fraction": settings.margin_fraction, "box": grid.to_dict()})

    gamma = None
    psi = None
    radius = 0.0
    regular = True
    if np.any(contact) and boundary:
        if radial is not None:
            count = max(16, int(round(2.0 * np.pi * radial.contact_radius / arc_spacing)))
            gamma = Curve.circle((0.0, 0.0), radial.contact_radius, count)
        else:
            psi = level_field(field_u, problem.h, contact_mask, problem.rho)
            gamma = extract_free_boundary(psi, 0.0, arc_spacing)
        radius = touching_radius(gamma)
        scale = np.sqrt(contact_mask.area() / np.pi)
        regular = radius >= settings.rho_fraction * scale
        if not regular:
            logger.warning_operation("solve_obstacle", "Free boundary fails the touching-ball check",
                                     extra={"touching_radius": radius, "scale": scale})

    if problem.flavor == "decaying":
        residual = _decaying_residual(grid, u, problem.h.values, problem.dimension)
    else:
        residual = complementarity_residual(u, problem.h.values, grid.spacing)

    return ObstacleSolution(
        u=field_u,
        contact=contact_mask,
        omega=contact_mask.complement(),
        gamma=gamma,
        mass=_discrete_mass(grid, u) if mass is None else mass,
        c_used=c_used,
        residual=residual,
        touching_radius=radius,
        empty_contact=not np.any(contact),
        level_field=psi,
        center=(float(center[0]), float(center[1])),
        kappa=float(kappa),
        iterations=iterations,
        method=method,
        regular_boundary=regular,
        radial=radial,
    )


def decaying_laplacian(grid: Grid2D, u: np.ndarray, dimension: int) -> np.ndarray:
    """Laplacian of a radial function of n variables sampled in the plane"""
    laplace = discrete_laplacian(u, grid.spacing)
    gx, gy = np.gradient(u, grid.spacing, edge_order=2)
    x, y = grid.mesh()
    r2 = x ** 2 + y ** 2
    radial = np.where(r2 > 0, (x * gx + y * gy) / np.where(r2 > 0, r2, 1.0), 0.0)
    return laplace + (dimension - 2) * radial


def _decaying_residual(grid: Grid2D, u: np.ndarray, h: np.ndarray, dimension: int) -> float:
    laplace = -decaying_laplacian(grid, u, dimension)
    return float(np.max(np.abs(np.minimum(laplace, u - h))[1:-1, 1:-1]))


def _solve_decaying(problem: ObstacleProblem, arc_spacing: float) -> ObstacleSolution:
    grid = problem.box
    x, y = grid.mesh()
    corner = float(np.max(np.hypot(x, y)))
    nodes = max(2001, int(4 * corner / grid.spacing))
    if problem.mass is not None:
        radial = solve_radial_mass(problem.radial_profile, problem.dimension, corner,
                                   problem.mass, nodes=nodes)
    else:
        radial = solve_radial(problem.radial_profile, problem.dimension, corner, nodes=nodes,
                              c=problem.c)
    distance = np.hypot(x, y)
    if radial.empty_contact:
        contact = np.zeros(grid.shape, dtype=bool)
        logger.info_operation("solve_obstacle", "Contact set is empty", extra={"c": radial.c})
    else:
        contact = (distance <= radial.contact_radius) & ~grid.boundary_mask()
    u = np.where(contact, problem.h.values, np.maximum(radial.profile(distance), problem.h.values))
    return _finish(problem, u, contact, 0.0, np.zeros(2), radial.iterations, "radial",
                   arc_spacing, radial.c, radial=radial, mass=radial.mass)


def solve_obstacle(problem: ObstacleProblem, arc_spacing: Optional[float] = None,
                   boundary: bool = True) -> ObstacleSolution:
    """Discrete complementarity solve with far-field matched box data

    With boundary=False the free boundary is not extracted and gamma is None.
    """
    grid = problem.box
    settings = problem.solver
    arc_spacing = arc_spacing or grid.spacing
    logger.info_operation("solve_obstacle", "Solving obstacle problem",
                          extra={"problem": problem.name, "flavor": problem.flavor,
                                 "method": settings.method, "nodes": grid.nx * grid.ny})

    if problem.flavor == "decaying":
        return _solve_decaying(problem, arc_spacing)

    mass = problem.target_mass
    if mass == 0.0:
        u = np.full(grid.shape, float(problem.h.values.max()))
        logger.info_operation("solve_obstacle", "Zero mass: constant solution, empty contact")
        return _finish(problem, u, np.zeros(grid.shape, dtype=bool), float(u.max()), np.zeros(2),
                       0, settings.method, arc_spacing, 0.0)

    h = problem.h.values
    interior = ~grid.boundary_mask()
    x, y = grid.mesh()
    peak = np.unravel_index(np.argmax(np.where(interior, h, -np.inf)), grid.shape)
    center = np.array([x[peak], y[peak]])
    threshold = np.quantile(h[interior], 0.98)
    active = interior & (h >= threshold)
    u = None
    kappa = None
    total_iterations = 0

    for outer in range(1, settings.max_outer + 1):
        data = _far_field(grid, mass, center)
        if settings.method == "active_set":
            u, kappa, active, iterations = _active_set_solve(problem, data, mass, active)
        else:
            u, kappa, iterations = _psor_solve(problem, data, mass, kappa, u)
        total_iterations += iterations
        updated = _measure_centroid(grid, u, center)
        shift = float(np.linalg.norm(updated - center))
        center = updated
        logger.debug_operation("solve_obstacle", "Outer far-field update",
                               extra={"outer": outer, "center_shift": shift, "kappa": kappa})
        if shift <= 1e-3 * grid.spacing ** 2:
            break
    else:
        raise NoConvergence("Far-field centre did not settle", iterations=settings.max_outer,
                            residual=shift)

    if settings.method == "active_set":
        contact = active
    else:
        contact = interior & (u - h <= CONTACT_FACTOR * settings.tolerance)
    if not np.any(contact):
        logger.info_operation("solve_obstacle", "Contact set is empty")

    solution = _finish(problem, u, contact, kappa, center, total_iterations, settings.method,
                       arc_spacing, mass / (2.0 * np.pi), boundary=boundary)
    logger.info_operation("solve_obstacle", "Obstacle problem solved",
                          extra={"residual": solution.residual, "mass": solution.mass,
                                 "iterations": total_iterations,
                                 "contact_area": solution.contact.area()})
    return solution


def _check_growth(Q: ScalarField, mass: float) -> None:
    """Q/2 + m P must increase across the outermost ring of nodes"""
    grid = Q.grid
    x, y = grid.mesh()
    pairs = (((0, slice(None)), (1, slice(None))), ((-1, slice(None)), (-2, slice(None))),
             ((slice(None), 0), (slice(None), 1)), ((slice(None), -1), (slice(None), -2)))
    for outer, inner in pairs:
        outside = 0.5 * Q.values[outer] + mass * newtonian_potential(np.stack([x[outer], y[outer]], -1))
        inside = 0.5 * Q.values[inner] + mass * newtonian_potential(np.stack([x[inner], y[inner]], -1))
        if np.any(outside <= inside):
            raise ValidationError("Q does not dominate the potential at the box edge", field="Q")


@dataclass(frozen=True)
class EquilibriumMeasure:
    mu: ScalarField
    solution: ObstacleSolution
    c: float


def solve_equilibrium_measure(Q: ScalarField, mass: float, flavor: Flavor = "planar-log",
                              solver: Optional[SolverSettings] = None, rho: float = 1.0,
                              dimension: int = 2, radial_Q: Optional[RadialObstacle] = None,
                              arc_spacing: Optional[float] = None) -> EquilibriumMeasure:
    """mu = -Laplace u for the obstacle c - Q/2"""
    solver = solver or SolverSettings()
    grid = Q.grid
    if mass < 0:
        raise ValidationError("Mass must be nonnegative", field="mass", value=mass)

    if flavor == "decaying":
        if radial_Q is None:
            raise ValidationError("decaying flavor needs a radial Q profile", field="radial_Q")
        shifted = Q.scaled(-0.5)
        problem = ObstacleProblem(h=shifted, flavor="decaying", mass=mass, rho=rho, solver=solver,
                                  dimension=dimension, radial_profile=lambda r: -0.5 * radial_Q(r))
        base = solve_obstacle(problem, arc_spacing)
        # u - c_far solves the problem with obstacle (-c_far) - Q/2 and zero far field
        c = -base.c_used
        u = ScalarField(grid, base.u.values + c)
        solution = replace(base, u=u, c_used=c)
        density = -decaying_laplacian(grid, u.values, dimension)
        mu = ScalarField(grid, np.where(base.contact.flags, density, 0.0))
        return EquilibriumMeasure(mu=mu, solution=solution, c=c)

    if mass > 0:
        _check_growth(Q, mass)

    c = mass / (2.0 * np.pi)
    h = ScalarField(grid, c - 0.5 * Q.values)
    if mass == 0.0:
        problem = ObstacleProblem(h=h, mass=0.0, rho=rho, solver=solver)
    else:
        problem = ObstacleProblem(h=h, c=c, rho=rho, solver=solver)
    solution = solve_obstacle(problem, arc_spacing)
    density = -discrete_laplacian(solution.u.values, grid.spacing)
    mu = ScalarField(grid, np.where(solution.contact.flags, density, 0.0))
    return EquilibriumMeasure(mu=mu, solution=solution, c=c)


class ComplementarityReport(BaseModel):
    """Residual diagnostics of a discrete obstacle solution"""
    residual: float
    within_tolerance: bool
    min_gap: float
    min_laplacian_omega: float
    laplacian_violations: int
    violation_nodes: List[Tuple[int, int]] = Field(default_factory=list)
    max_laplace_h_on_contact: Optional[float] = None
    rho_holds: bool
    supersolution_holds: bool
    tolerance_used: float = 0.0

    @property
    def passed(self) -> bool:
        return (self.laplacian_violations == 0 and self.supersolution_holds
                and self.min_gap >= -self.tolerance_used)


def smooth_bump(grid: Grid2D, center: Tuple[float, float], radius: float, amplitude: float) -> np.ndarray:
    """amplitude (1 - |x - center|^2 / radius^2)^3, zero outside the disk"""
    x, y = grid.mesh()
    s = 1.0 - ((x - center[0]) ** 2 + (y - center[1]) ** 2) / radius ** 2
    return amplitude * np.where(s > 0.0, s, 0.0) ** 3


def verify_complementarity(solution: ObstacleSolution, problem: ObstacleProblem,
                           bumps: int = 8, seed: int = 0) -> ComplementarityReport:
    """Residuals of min(-Laplace u, u - h) = 0 plus the (rho1) and infimum spot checks"""
    grid = problem.box
    if not solution.u.grid.matches(grid):
        raise GridMismatch("Solution and problem live on different grids")
    tolerance = problem.solver.tolerance
    u = solution.u.values
    h = problem.h.values
    if problem.flavor == "decaying":
        laplace_u = decaying_laplacian(grid, u, problem.dimension)
        laplace_h = decaying_laplacian(grid, h, problem.dimension)
    else:
        laplace_u = discrete_laplacian(u, grid.spacing)
        laplace_h = discrete_laplacian(h, grid.spacing)

    interior = ~grid.boundary_mask()
    residual = float(np.max(np.abs(np.minimum(-laplace_u, u - h))[interior]))
    omega = solution.omega.flags & interior
    negative = omega & (-laplace_u < -tolerance)
    nodes = [(int(i), int(j)) for i, j in zip(*np.nonzero(negative))][:10]

    contact = solution.contact.flags & interior
    if np.any(contact):
        worst = float(np.max(laplace_h[contact]))
        rho_holds = worst <= -problem.rho
    else:
        worst = None
        rho_holds = True

    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = grid.extent
    supersolution = True
    for _ in range(bumps):
        center = (rng.uniform(xmin, xmax), rng.uniform(ymin, ymax))
        radius = rng.uniform(2.0, 10.0) * grid.spacing
        candidate = u + smooth_bump(grid, center, radius, rng.uniform(0.01, 1.0))
        supersolution &= bool(np.all(candidate >= u))

    report = ComplementarityReport(
        residual=residual,
        within_tolerance=residual <= tolerance,
        min_gap=float(np.min((u - h)[interior])),
        min_laplacian_omega=float(np.min(-laplace_u[omega])) if np.any(omega) else 0.0,
        laplacian_violations=int(np.count_nonzero(negative)),
        violation_nodes=nodes,
        max_laplace_h_on_contact=worst,
        rho_holds=rho_holds,
        supersolution_holds=supersolution,
        tolerance_used=tolerance,
    )
    if not rho_holds:
        logger.warning_operation("verify_complementarity", "Laplace h exceeds -rho on the contact set",
                                 extra={"max_laplace_h": worst, "rho": problem.rho})
    return report


def ordering_holds(perturbed: ObstacleSolution, base: ObstacleSolution) -> bool:
    """Omega of the perturbed solution lies inside Omega of the base solution"""
    return perturbed.omega.issubset(base.omega)


class MonotonicityReport(BaseModel):
    min_increase: List[float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(value >= -self.tolerance for value in self.min_increase)


def monotonicity_holds(problem: ObstacleProblem, solution: ObstacleSolution, bumps: int = 5,
                       amplitude: float = 0.01, radius: float = 0.08, seed: int = 0,
                       tolerance: float = 1e-6) -> MonotonicityReport:
    """Raise h by nonnegative bumps around the contact set and check u never decreases

    Bump centres are drawn from the nodes within two bump radii of the contact set,
    so both contact and Omega nodes are raised.
    """
    grid = problem.box
    rng = np.random.default_rng(seed)
    if solution.contact.is_empty():
        raise EmptyContact("Monotonicity check places bumps around the contact set")
    reach = solution.omega.depth() * grid.spacing
    candidates = np.argwhere((reach <= 2.0 * radius)
                             & (grid.distance_to_edge() > problem.solver.margin_fraction * grid.size))
    x, y = grid.mesh()
    increases = []
    for _ in range(bumps):
        i, j = candidates[rng.integers(len(candidates))]
        bump = smooth_bump(grid, (x[i, j], y[i, j]), radius, amplitude * rng.uniform(0.5, 1.0))
        raised = problem.with_obstacle(problem.h.with_values(problem.h.values + bump))
        resolved = solve_obstacle(raised, boundary=False)
        increases.append(float(np.min(resolved.u.values - solution.u.values)))
    report = MonotonicityReport(min_increase=increases, tolerance=tolerance)
    logger.info_operation("monotonicity_holds", "Obstacle monotonicity checked",
                          extra={"min_increase": min(increases), "passed": report.passed})
    return report
