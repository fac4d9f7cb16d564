"""
First- and second-order response of the obstacle solution to obstacle perturbations

Velocity potential V and normal velocity, the decomposition of w into solid, single,
double and implicit parts, the boundary density Theta and the normal acceleration,
the monotone decomposition of the perturbation, and verification by direct re-solves.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import ndimage, sparse, special, stats
from scipy.sparse.linalg import splu

from .exceptions import (
    DegenerateLaplacian, EmptyBoundary, FixedPointDiverged, ValidationError,
)
from .geometry import (
    Curve, ScalarField, TransversalFrame, discrete_laplacian, filled_laplacian, hausdorff_distance,
    height_function, intersect_transversals, local_quadratic_fit, sample_array, swept_area,
)
from .layerpot import (
    LayerDensity, double_layer_gradient, double_layer_on_grid, newtonian_gradient,
    newtonian_potential, normal_derivative_matrix, one_sided_gradient, single_layer_gradient,
    single_layer_on_grid, volume_potential_gradient, volume_potential_grid,
)
from .logging_config import get_logger
from .obstacle import (
    BAND_DEPTH, FIT_WINDOW, ObstacleProblem, ObstacleSolution, grid_laplacian_matrix, ordering_holds,
    pinned_system, solve_obstacle,
)
from .runtime_config import ThetaSettings

logger = get_logger("obstacle_flow.perturb")

Sampler = Callable[[float], Tuple[ScalarField, float]]


@dataclass(frozen=True)
class PerturbationPath:
    """Obstacle family h^t, c^t around a solved base problem"""
    problem: ObstacleProblem
    solution: ObstacleSolution
    hdot: ScalarField
    hddot: ScalarField
    cdot: float
    cddot: float
    sampler: Sampler
    support_radius: float = 1.0
    symmetric: bool = True
    name: str = "path"

    def __post_init__(self):
        if self.problem.flavor != "planar-log":
            raise ValidationError("Perturbation paths are solved on the planar grid",
                                  field="flavor", value=self.problem.flavor)
        for name in ("hdot", "hddot"):
            if not getattr(self, name).grid.matches(self.problem.box):
                raise ValidationError(f"{name} lives on another grid", field=name)

    def problem_at(self, t: float) -> ObstacleProblem:
        h_t, c_t = self.sampler(t)
        return self.problem.with_obstacle(h_t, c=c_t)

    def compact_support_holds(self, t: float, tolerance: float = 1e-8) -> bool:
        """Laplace(h^t - h^0) vanishes outside B_R"""
        h_t, _ = self.sampler(t)
        difference = filled_laplacian(h_t - self.problem.h)
        x, y = self.problem.box.mesh()
        outside = np.hypot(x, y) > self.support_radius
        return bool(np.all(np.abs(difference[outside]) <= tolerance * max(1.0, abs(t))))

    def consistency_error(self, ts: Sequence[float] = (1e-3, 5e-4)) -> List[float]:
        """max |(h^t - h^0)/t - hdot| at each t; should shrink with t"""
        errors = []
        for t in ts:
            h_t, _ = self.sampler(t)
            errors.append(float(np.max(np.abs((h_t.values - self.problem.h.values) / t - self.hdot.values))))
        return errors


@dataclass(frozen=True)
class BoundaryData:
    """Geometry of Gamma^0 seen from the transversal frame, one sample per reference vertex"""
    curve: Curve
    eta0: np.ndarray
    a: np.ndarray
    b: np.ndarray
    curvature: np.ndarray
    laplace_h: np.ndarray
    grad_g: np.ndarray
    jacobian: np.ndarray
    d_jacobian: np.ndarray
    offset: float

    @property
    def weights(self) -> np.ndarray:
        return self.curve.weights()

    @property
    def g(self) -> np.ndarray:
        return -self.laplace_h


def boundary_data(problem: ObstacleProblem, solution: ObstacleSolution,
                  frame: TransversalFrame) -> BoundaryData:
    """Transversal hits on Gamma^0 with normals, curvature and obstacle data there"""
    gamma0 = solution.require_gamma()
    hits = intersect_transversals(frame, gamma0)
    curve = Curve(hits.points, hits.normals, float(np.mean(np.linalg.norm(
        np.roll(hits.points, -1, axis=0) - hits.points, axis=1))))
    tangent = curve.tangents()
    grid = problem.box
    laplace = filled_laplacian(problem.h)
    gx, gy = np.gradient(-laplace, grid.spacing, edge_order=2)
    grad_g = np.column_stack([sample_array(grid, gx, hits.points, order=3),
                              sample_array(grid, gy, hits.points, order=3)])
    return BoundaryData(
        curve=curve,
        eta0=hits.eta,
        a=np.sum(frame.N * hits.normals, axis=1),
        b=np.sum(frame.N * tangent, axis=1),
        curvature=hits.curvature,
        laplace_h=sample_array(grid, laplace, hits.points, order=3),
        grad_g=grad_g,
        jacobian=frame.jacobian_at(hits.eta),
        d_jacobian=frame.jacobian_ds(hits.eta),
        offset=2.0 * grid.spacing,
    )


@dataclass(frozen=True)
class VelocityResult:
    V: ScalarField
    udot: ScalarField
    etadot: Optional[np.ndarray] = None
    kappa_dot: float = 0.0
    center_dot: Tuple[float, float] = (0.0, 0.0)
    mass_dot: float = 0.0


def _velocity_matrix(solution: ObstacleSolution) -> sparse.csc_matrix:
    """spacing^2 times -Laplace on Omega nodes; contact and box nodes are pinned"""
    grid = solution.u.grid
    return pinned_system(grid_laplacian_matrix(grid), solution.contact.flags | grid.boundary_mask())


def solve_velocity_potential(problem: ObstacleProblem, solution: ObstacleSolution,
                             hdot: ScalarField, cdot: float,
                             frame: Optional[TransversalFrame] = None) -> VelocityResult:
    """Laplace V = -Laplace hdot on Omega^0 nodes, V = 0 on contact nodes, linearised far field on the box

    V is the derivative of the discrete solution map along the path.
    """
    if solution.empty_contact or solution.gamma is None:
        raise EmptyBoundary("Velocity problem needs a free boundary on the grid")
    grid = problem.box
    x, y = grid.mesh()
    edge = grid.boundary_mask()
    omega = solution.omega.flags
    unknown = omega & ~edge
    mass = 2.0 * np.pi * solution.c_used
    mass_dot = 2.0 * np.pi * cdot
    center = np.array(solution.center)
    offsets = np.stack([x - center[0], y - center[1]], axis=-1)

    source = np.where(unknown, grid.spacing ** 2 * filled_laplacian(hdot), 0.0)
    gradient = newtonian_gradient(offsets[edge])
    edge_data = [
        mass_dot * newtonian_potential(offsets[edge]) - hdot.values[edge],
        np.ones(np.count_nonzero(edge)),
        -mass * gradient[:, 0],
        -mass * gradient[:, 1],
    ]
    lu = splu(_velocity_matrix(solution))
    parts = []
    for k, data in enumerate(edge_data):
        rhs = source.copy() if k == 0 else np.zeros(grid.shape)
        rhs[edge] = data
        parts.append(np.where(omega, lu.solve(rhs.ravel()).reshape(grid.shape), 0.0))

    matrix = grid_laplacian_matrix(grid)
    interior = ~edge

    def moments(values: np.ndarray) -> np.ndarray:
        charge = (matrix @ values.ravel()).reshape(grid.shape)[interior]
        return np.array([charge.sum(), (x[interior] * charge).sum(), (y[interior] * charge).sum()])

    base = moments(hdot.values + parts[0])
    columns = np.column_stack([moments(part) for part in parts[1:]])
    columns[1, 1] -= mass
    columns[2, 2] -= mass
    target = np.array([mass_dot, mass_dot * center[0], mass_dot * center[1]])
    kappa_dot, xdot, ydot = np.linalg.solve(columns, target - base)

    V = parts[0] + kappa_dot * parts[1] + xdot * parts[2] + ydot * parts[3]
    udot = hdot.values + np.where(omega, V, 0.0)
    result = VelocityResult(
        V=ScalarField(grid, V),
        udot=ScalarField(grid, udot),
        kappa_dot=float(kappa_dot),
        center_dot=(float(xdot), float(ydot)),
        mass_dot=mass_dot,
    )
    if frame is not None:
        etadot = normal_velocity(result, problem, solution, frame)
        result = VelocityResult(V=result.V, udot=result.udot, etadot=etadot,
                                kappa_dot=result.kappa_dot, center_dot=result.center_dot,
                                mass_dot=mass_dot)
    logger.info_operation("solve_velocity_potential", "Velocity potential solved",
                          extra={"kappa_dot": float(kappa_dot), "center_dot": [float(xdot), float(ydot)],
                                 "max_abs_V": float(np.max(np.abs(V)))})
    return result


def boundary_gradient(values: ScalarField, solution: ObstacleSolution, points: np.ndarray) -> np.ndarray:
    """Gradient at points of Gamma^0 of a quadratic fitted on Omega nodes two to seven steps inside"""
    grid = values.grid
    depth = solution.omega.depth()
    band = (depth >= BAND_DEPTH[0]) & (depth <= BAND_DEPTH[1])
    coefficients = local_quadratic_fit(grid, values.values, band, points, FIT_WINDOW * grid.spacing)
    missing = ~np.isfinite(coefficients[:, 0])
    if np.any(missing):
        raise EmptyBoundary("Too few Omega nodes next to Gamma for a boundary fit",
                            details={"points": int(np.count_nonzero(missing))})
    return coefficients[:, 1:3] / grid.spacing


def normal_velocity(velocity: VelocityResult, problem: ObstacleProblem, solution: ObstacleSolution,
                    frame: TransversalFrame, data: Optional[BoundaryData] = None) -> np.ndarray:
    """etadot = d_N V / ((N.nu)^2 Laplace h) at every reference vertex"""
    data = data or boundary_data(problem, solution, frame)
    _require_nondegenerate(data, problem.rho)
    dNV = np.sum(boundary_gradient(velocity.V, solution, data.curve.vertices) * frame.N, axis=1)
    return dNV / (data.a ** 2 * data.laplace_h)


def _require_nondegenerate(data: BoundaryData, rho: float) -> None:
    smallest = float(np.min(np.abs(data.laplace_h)))
    if smallest < 0.5 * rho:
        raise DegenerateLaplacian(f"|Laplace h| = {smallest:.3g} below rho/2 on Gamma",
                                  details={"min_abs_laplace_h": smallest, "rho": rho})


@dataclass(frozen=True)
class WParts:
    """Known parts of the distributional limit w and the densities that generate them"""
    w_solid: ScalarField
    w_single: ScalarField
    w_double: ScalarField
    solid_source: ScalarField
    single_density: LayerDensity
    double_density: LayerDensity
    directions: np.ndarray
    boundary: BoundaryData
    etadot: np.ndarray = field(repr=False)
    laplace_hdot: np.ndarray = field(repr=False, default=None)


def assemble_w_parts(problem: ObstacleProblem, solution: ObstacleSolution, velocity: VelocityResult,
                     hdot: ScalarField, hddot: ScalarField, frame: TransversalFrame,
                     data: Optional[BoundaryData] = None) -> WParts:
    """Solid, single and double layer parts of w on the grid"""
    grid = problem.box
    data = data or boundary_data(problem, solution, frame)
    etadot = velocity.etadot
    if etadot is None:
        etadot = normal_velocity(velocity, problem, solution, frame, data)

    points = data.curve.vertices
    laplace_hdot = sample_array(grid, filled_laplacian(hdot), points, order=3)
    laplace_h = filled_laplacian(problem.h)
    delta = data.offset
    ahead = data.eta0 + delta
    behind = data.eta0 - delta
    weighted_ahead = frame.jacobian_at(ahead) * sample_array(grid, laplace_h, frame.points_at(ahead), order=3)
    weighted_behind = frame.jacobian_at(behind) * sample_array(grid, laplace_h, frame.points_at(behind), order=3)
    dN_weighted = (weighted_ahead - weighted_behind) / (2.0 * delta) / data.jacobian

    single = -data.a * (etadot * laplace_hdot + 0.5 * etadot ** 2 * dN_weighted)
    double = -0.5 * etadot ** 2 * data.a * data.laplace_h
    single_density = LayerDensity(data.curve, single)
    double_density = LayerDensity(data.curve, double)

    source = ScalarField(grid, np.where(solution.omega.flags, 0.5 * filled_laplacian(hddot), 0.0))
    w_solid = volume_potential_grid(source)
    w_single = single_layer_on_grid(single_density, grid)
    w_double = double_layer_on_grid(double_density, frame.N, grid)
    logger.debug_operation("assemble_w_parts", "Known w parts assembled",
                           extra={"single_charge": single_density.integral(),
                                  "solid_charge": float(source.values.sum() * grid.spacing ** 2)})
    return WParts(
        w_solid=w_solid, w_single=w_single, w_double=w_double, solid_source=source,
        single_density=single_density, double_density=double_density, directions=frame.N,
        boundary=data, etadot=etadot, laplace_hdot=laplace_hdot,
    )


@dataclass(frozen=True)
class AccelerationResult:
    w_solid: ScalarField
    w_single: ScalarField
    w_double: ScalarField
    w_implicit: ScalarField
    theta: LayerDensity
    etaddot: np.ndarray
    farfield_const: float
    fixedpoint_iters: int
    residual: float
    contraction: float
    constant: float = 0.0
    history: List[float] = field(default_factory=list)

    def w_total(self) -> ScalarField:
        """Sum of the four parts plus the additive constant"""
        total = self.w_solid + self.w_single + self.w_double + self.w_implicit
        return total.with_values(total.values + self.constant)


def _arclength_derivative(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    forward = np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)
    backward = np.roll(forward, 1)
    return (np.roll(values, -1) - np.roll(values, 1)) / (forward + backward)


def _offset_points(data: BoundaryData, N: np.ndarray) -> Tuple[np.ndarray, float]:
    spacing = 3.0 * data.curve.arc_spacing
    steps = np.arange(1, 5, dtype=float)
    return data.curve.vertices[None] + steps[:, None, None] * spacing * N[None], spacing


def _implicit_tangential_matrix(data: BoundaryData, N: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """omega . grad of the single layer with density -q, extrapolated onto Gamma, as a matrix in q"""
    samples, _ = _offset_points(data, N)
    y = data.curve.vertices
    weights = data.curve.weights()
    matrix = np.zeros((len(y), len(y)))
    for coefficient, block in zip(np.array([4.0, -6.0, 4.0, -1.0]), samples):
        r = block[:, None, :] - y[None]
        r2 = np.sum(r ** 2, axis=2)
        matrix += coefficient * np.sum(omega[:, None, :] * r, axis=2) / (2.0 * np.pi * r2)
    return matrix * weights[None, :]


def _null_direction(operator: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Right singular vector of the smallest singular value, scaled to unit integral"""
    _, _, vt = np.linalg.svd(operator)
    direction = vt[-1]
    return direction / np.sum(direction * weights)


def solve_theta(problem: ObstacleProblem, solution: ObstacleSolution, velocity: VelocityResult,
                w_parts: WParts, frame: TransversalFrame, cddot: float = 0.0,
                settings: Optional[ThetaSettings] = None) -> AccelerationResult:
    """Fixed point for Theta, then etaddot = 2 Theta / ((N.nu)^2 Laplace h)"""
    settings = settings or ThetaSettings()
    grid = problem.box
    data = w_parts.boundary
    curve = data.curve
    N = frame.N
    a, b, kappa = data.a, data.b, data.curvature
    nu = curve.normals
    tau = curve.tangents()
    etadot = w_parts.etadot
    weights = curve.weights()

    g = data.g
    d_nu_g = np.sum(data.grad_g * nu, axis=1)
    d_tau_g = np.sum(data.grad_g * tau, axis=1)
    third = a ** 3 * (d_nu_g + kappa * g) + 3.0 * a ** 2 * b * d_tau_g - 3.0 * a * b ** 2 * kappa * g

    V_nu = np.sum(boundary_gradient(velocity.V, solution, curve.vertices) * nu, axis=1)
    laplace_hdot = w_parts.laplace_hdot
    second_v = (a ** 2 * (-laplace_hdot + kappa * V_nu)
                + 2.0 * a * b * _arclength_derivative(V_nu, curve.vertices) - b ** 2 * kappa * V_nu)

    samples, _ = _offset_points(data, N)
    gradient = (volume_potential_gradient(w_parts.solid_source, None, samples)
                + single_layer_gradient(w_parts.single_density, samples)
                + double_layer_gradient(w_parts.double_density, w_parts.directions, samples))
    known = np.sum(one_sided_gradient(gradient) * N, axis=1)
    forcing = 0.5 * third * etadot ** 2 + etadot * second_v + known

    T = normal_derivative_matrix(curve)
    omega = N - a[:, None] * nu
    tangential = _implicit_tangential_matrix(data, N, omega)
    null = _null_direction(0.5 * np.eye(len(curve)) + T, weights)
    target = (w_parts.single_density.integral()
              + float(w_parts.solid_source.values.sum() * grid.spacing ** 2)
              - np.pi * cddot)

    theta = np.zeros(len(curve))
    history: List[float] = []
    damping = 1.0
    for iteration in range(1, settings.max_iterations + 1):
        q = theta / a
        updated = 2.0 * (forcing - a * (T @ q) + tangential @ q)
        q_new = updated / a
        q_new += (target - np.sum(q_new * weights)) * null
        updated = a * q_new
        if len(history) >= 2 and history[-1] > history[-2]:
            damping = settings.damping
        updated = damping * updated + (1.0 - damping) * theta
        change = float(np.max(np.abs(updated - theta)))
        history.append(change)
        theta = updated
        if not np.isfinite(change) or change > 1e6:
            raise FixedPointDiverged("Theta iteration blew up", contraction=_contraction(history),
                                     details={"iterations": iteration})
        if change <= settings.tolerance:
            break
    else:
        raise FixedPointDiverged("Theta iteration did not reach tolerance",
                                 contraction=_contraction(history),
                                 details={"iterations": settings.max_iterations, "change": history[-1]})

    _require_nondegenerate(data, problem.rho)
    etaddot = 2.0 * theta / (a ** 2 * data.laplace_h)
    w_implicit = single_layer_on_grid(LayerDensity(curve, -theta / a), grid)

    total = w_parts.w_solid.values + w_parts.w_single.values + w_parts.w_double.values + w_implicit.values
    deep = ndimage.binary_erosion(solution.contact.flags, iterations=3)
    if not np.any(deep):
        deep = solution.contact.flags
    constant = -float(np.mean(total[deep]))

    result = AccelerationResult(
        w_solid=w_parts.w_solid, w_single=w_parts.w_single, w_double=w_parts.w_double,
        w_implicit=w_implicit, theta=LayerDensity(curve, theta), etaddot=etaddot,
        farfield_const=0.5 * cddot, fixedpoint_iters=iteration, residual=history[-1],
        contraction=_contraction(history), constant=constant, history=history,
    )
    logger.info_operation("solve_theta", "Theta fixed point converged",
                          extra={"iterations": iteration, "residual": history[-1],
                                 "contraction": result.contraction})
    return result


def _contraction(history: List[float]) -> float:
    """Geometric mean ratio of successive changes"""
    ratios = [later / earlier for earlier, later in zip(history, history[1:]) if earlier > 0 and later > 0]
    if not ratios:
        return 0.0
    return float(np.exp(np.mean(np.log(ratios))))


def phi_plus(z: np.ndarray) -> np.ndarray:
    """1 + (1 + z e^z) / (e^z + e^-z)"""
    z = np.asarray(z, dtype=float)
    return 1.0 + 0.5 * _sech(z) + z * special.expit(2.0 * z)


def phi_minus(z: np.ndarray) -> np.ndarray:
    """z - phi_plus(z)"""
    z = np.asarray(z, dtype=float)
    return -1.0 - 0.5 * _sech(z) + z * special.expit(-2.0 * z)


def _sech(z: np.ndarray) -> np.ndarray:
    decay = np.exp(-np.abs(z))
    return 2.0 * decay / (1.0 + decay ** 2)


def radial_cutoff(distance: np.ndarray, radius: float) -> np.ndarray:
    """Smooth cutoff, 1 on B_R and 0 outside B_2R"""
    s = np.asarray(distance, dtype=float) / radius - 1.0

    def bump(x: np.ndarray) -> np.ndarray:
        positive = x > 0.0
        return np.where(positive, np.exp(-1.0 / np.where(positive, x, 1.0)), 0.0)

    inner = bump(1.0 - s)
    return inner / (inner + bump(s))


@dataclass(frozen=True)
class MonotoneDecomposition:
    xi_plus: ScalarField
    xi_minus: ScalarField
    density_error: float
    laplacian_error: float
    cutoff_inside_box: bool


def _decomposition_densities(path: PerturbationPath, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if t == 0:
        raise ValidationError("t must be nonzero", field="t", value=t)
    grid = path.problem.box
    h_t, _ = path.sampler(t)
    difference = filled_laplacian(h_t - path.problem.h)
    x, y = grid.mesh()
    cutoff = radial_cutoff(np.hypot(x, y), path.support_radius)
    z = difference / t
    return t * phi_plus(z) * cutoff, t * phi_minus(z) * cutoff, difference, cutoff


def monotone_decomposition(path: PerturbationPath, t: float) -> MonotoneDecomposition:
    """xi_pm = -P * (t phi_pm(Laplace(h^t - h^0)/t) zeta)"""
    grid = path.problem.box
    plus, minus, difference, cutoff = _decomposition_densities(path, t)
    xi_plus = volume_potential_grid(ScalarField(grid, plus)).scaled(-1.0)
    xi_minus = volume_potential_grid(ScalarField(grid, minus)).scaled(-1.0)

    x, y = grid.mesh()
    ball = (np.hypot(x, y) <= path.support_radius) & ~grid.boundary_mask()
    density_error = float(np.max(np.abs(plus + minus - difference)[ball]))
    laplace = discrete_laplacian(xi_plus.values + xi_minus.values, grid.spacing)
    laplacian_error = float(np.max(np.abs(laplace - difference)[ball]))

    inside = grid.contains_ball((0.0, 0.0), 2.0 * path.support_radius)
    if not inside:
        logger.warning_operation("monotone_decomposition", "Cutoff support leaves the box",
                                 extra={"support_radius": path.support_radius})
    return MonotoneDecomposition(xi_plus, xi_minus, density_error, laplacian_error, inside)


def monotone_increase(path: PerturbationPath, taus: Sequence[float], ts: Sequence[float]) -> float:
    """min over the (tau, t) lattice of Laplace(xi_plus^(tau+t) - xi_plus^tau) = densities difference"""
    worst = np.inf
    for tau in taus:
        base, _, _, _ = _decomposition_densities(path, tau)
        for t in ts:
            later, _, _, _ = _decomposition_densities(path, tau + t)
            worst = min(worst, float(np.min(later - base)))
    return worst


class ExpansionRow(BaseModel):
    t: float
    error_u: float
    error_eta: float
    error_second: Optional[float] = None
    hausdorff_over_t: float
    area_over_t: float
    ordering: Optional[bool] = None


class ExpansionReport(BaseModel):
    path: str
    rows: List[ExpansionRow]
    order_u: Optional[float] = None
    order_eta: Optional[float] = None
    order_second: Optional[float] = None
    hausdorff_spread: float = 0.0
    area_spread: float = 0.0
    symmetric_t: Optional[float] = None
    udot_oracle_error: Optional[float] = None


def fit_order(ts: Sequence[float], errors: Sequence[Optional[float]],
              floor_ratio: float = 0.75) -> Optional[float]:
    """Least-squares slope of log error against log t, stopping at the discretization floor

    Falls back to every valid point when the floor leaves fewer than two.
    """
    pairs = sorted(zip(ts, errors), key=lambda pair: -pair[0])
    valid = [(t, error) for t, error in pairs
             if error is not None and np.isfinite(error) and error > 0.0]
    kept = []
    for t, error in valid:
        if kept and error > floor_ratio * kept[-1][1]:
            break
        kept.append((t, error))
    if len(kept) < 2:
        kept = valid
    if len(kept) < 2:
        return None
    fit = stats.linregress(np.log([t for t, _ in kept]), np.log([e for _, e in kept]))
    return float(fit.slope)


def _spread(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    mean = float(np.mean(values))
    if mean == 0.0:
        return 0.0
    return float((values.max() - values.min()) / abs(mean))


def verify_expansion(path: PerturbationPath, t_list: Sequence[float], frame: TransversalFrame,
                     velocity: VelocityResult, acceleration: Optional[AccelerationResult] = None,
                     symmetric_t: Optional[float] = 0.02) -> ExpansionReport:
    """Compare the first- and second-order predictions against direct re-solves"""
    if not t_list or any(t <= 0 for t in t_list):
        raise ValidationError("t_list must hold positive values", field="t_list", value=t_list)
    base = path.solution
    gamma0 = base.require_gamma()
    eta0 = height_function(frame, gamma0)
    arc = gamma0.arc_spacing
    etadot = velocity.etadot
    if etadot is None:
        etadot = normal_velocity(velocity, path.problem, base, frame)

    rows = []
    for t in t_list:
        solved = solve_obstacle(path.problem_at(t), arc)
        gamma_t = solved.require_gamma()
        eta_t = height_function(frame, gamma_t)
        first = eta_t - eta0 - t * etadot
        second = None
        if acceleration is not None:
            second = float(np.max(np.abs(first - 0.5 * t ** 2 * acceleration.etaddot)))
        rows.append(ExpansionRow(
            t=t,
            error_u=float(np.max(np.abs(solved.u.values - base.u.values - t * velocity.udot.values))),
            error_eta=float(np.max(np.abs(first))),
            error_second=second,
            hausdorff_over_t=hausdorff_distance(gamma_t, gamma0) / t,
            area_over_t=swept_area(frame, eta0, eta_t) / t,
            ordering=ordering_holds(solved, base),
        ))
        logger.debug_operation("verify_expansion", "Re-solve compared",
                               extra={"t": t, "error_u": rows[-1].error_u, "error_eta": rows[-1].error_eta})

    oracle_error = None
    if symmetric_t is not None and path.symmetric:
        ahead = solve_obstacle(path.problem_at(symmetric_t), arc)
        behind = solve_obstacle(path.problem_at(-symmetric_t), arc)
        oracle = (ahead.u.values - behind.u.values) / (2.0 * symmetric_t)
        scale = float(np.max(np.abs(velocity.udot.values)))
        oracle_error = float(np.max(np.abs(oracle - velocity.udot.values)))
        if scale > 0:
            oracle_error /= scale

    ts = [row.t for row in rows]
    report = ExpansionReport(
        path=path.name,
        rows=rows,
        order_u=fit_order(ts, [row.error_u for row in rows]),
        order_eta=fit_order(ts, [row.error_eta for row in rows]),
        order_second=(fit_order(ts, [row.error_second for row in rows])
                      if acceleration is not None else None),
        hausdorff_spread=_spread([row.hausdorff_over_t for row in rows]),
        area_spread=_spread([row.area_over_t for row in rows]),
        symmetric_t=symmetric_t if oracle_error is not None else None,
        udot_oracle_error=oracle_error,
    )
    logger.info_operation("verify_expansion", "Expansion verified",
                          extra={"order_u": report.order_u, "order_eta": report.order_eta,
                                 "order_second": report.order_second})
    return report
