"""
Radial obstacle problems in dimension n >= 2 on [0, R_box]

The contact set of a radially decreasing obstacle is a centred ball B_rho. Outside it u is
harmonic: c + (h(rho) - c)(rho / r)^(n - 2) for decaying solutions (n >= 3) and
h(rho) - m/(2 pi) log(r / rho) in the plane. Matching u' = h' at rho gives the detachment
equation rho h'(rho) + (n - 2)(h(rho) - c) = 0, or rho h'(rho) + m/(2 pi) = 0, which is
bracketed and solved with brentq.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .exceptions import BisectionFailed, BoxTooSmall, NoConvergence, ValidationError
from .layerpot import unit_ball_volume
from .logging_config import get_logger

logger = get_logger("obstacle_flow.radial")

RadialObstacle = Callable[[np.ndarray], np.ndarray]
CONTACT_LIMIT = 0.75


@dataclass(frozen=True)
class RadialSolution:
    r: np.ndarray
    u: np.ndarray
    h: np.ndarray
    dimension: int
    c: float
    mass: float
    contact_radius: float
    empty_contact: bool
    iterations: int

    def profile(self, radius: np.ndarray) -> np.ndarray:
        """u at arbitrary radii; beyond the box the exterior harmonic continuation is used"""
        radius = np.asarray(radius, dtype=float)
        inside = np.interp(radius, self.r, self.u)
        edge = self.r[-1]
        beyond = radius > edge
        if not np.any(beyond):
            return inside
        if self.dimension == 2:
            tail = self.u[-1] - self.mass / (2.0 * np.pi) * np.log(radius / edge)
        else:
            tail = self.c + (self.u[-1] - self.c) * (radius / edge) ** (2.0 - self.dimension)
        return np.where(beyond, tail, inside)

    @property
    def tilde_u(self) -> np.ndarray:
        return self.u - self.h


def _value(h: RadialObstacle, radius: float) -> float:
    return float(np.asarray(h(np.array([radius])), dtype=float).ravel()[0])


def detachment_defect(h: RadialObstacle, dimension: int, radius: float, c: Optional[float] = None,
                      mass: Optional[float] = None, step: float = 1e-7) -> float:
    """Mismatch of u' and h' at radius for the harmonic exterior; zero at the contact radius"""
    step = min(step, 0.5 * radius)
    slope = (_value(h, radius + step) - _value(h, radius - step)) / (2.0 * step)
    if dimension == 2:
        return radius * slope + mass / (2.0 * np.pi)
    return radius * slope + (dimension - 2) * (_value(h, radius) - c)


def _exterior(r: np.ndarray, radius: float, h_edge: float, dimension: int,
              c: float, mass: float) -> np.ndarray:
    safe = np.maximum(r, radius)
    if dimension == 2:
        return h_edge - mass / (2.0 * np.pi) * np.log(safe / radius)
    return c + (h_edge - c) * (radius / safe) ** (dimension - 2)


def solve_radial(h: RadialObstacle, dimension: int, box_radius: float, nodes: int = 2001,
                 c: Optional[float] = None, mass: Optional[float] = None,
                 max_iterations: int = 200) -> RadialSolution:
    """Radial obstacle solution with far-field constant c (n >= 3) or total mass (n = 2)"""
    if dimension < 2:
        raise ValidationError("Dimension must be at least 2", field="dimension", value=dimension)
    if dimension >= 3 and c is None:
        raise ValidationError("Decaying radial problems need the far-field constant c", field="c")
    if dimension == 2 and mass is None:
        raise ValidationError("Planar radial problems need the total mass", field="mass")
    if nodes < 16:
        raise ValidationError("At least 16 radial nodes are required", field="nodes", value=nodes)

    r = np.linspace(0.0, box_radius, nodes)
    obstacle = np.asarray(h(r), dtype=float)
    n = dimension

    if n == 2 and mass == 0.0:
        u = np.full_like(r, obstacle.max())
        return RadialSolution(r, u, obstacle, n, 0.0, 0.0, 0.0, True, 0)
    if n >= 3 and np.max(obstacle) <= c:
        logger.debug_operation("solve_radial", "Obstacle stays below c: empty contact",
                               extra={"dimension": n, "c": c})
        return RadialSolution(r, np.full_like(r, float(c)), obstacle, n, float(c), 0.0, 0.0, True, 0)

    step = 1e-6 * box_radius

    def defect(radius: float) -> float:
        return detachment_defect(h, n, radius, c=c, mass=mass, step=step)

    low, high = float(r[1]), CONTACT_LIMIT * box_radius
    # contact balls smaller than one radial step
    while defect(low) <= 0.0 and low > 1e-9 * box_radius:
        low *= 0.1
    if defect(low) <= 0.0:
        raise NoConvergence("Radial contact set is not a centred ball", iterations=0,
                            residual=defect(low))
    if defect(high) > 0.0:
        raise BoxTooSmall("Radial contact set reaches the box margin",
                          details={"box_radius": box_radius, "limit": high})
    radius, result = optimize.brentq(defect, low, high, xtol=1e-13 * box_radius,
                                     maxiter=max_iterations, full_output=True)
    if not result.converged:
        raise NoConvergence("Detachment equation did not converge", iterations=result.iterations,
                            residual=defect(radius))

    h_edge = _value(h, radius)
    total = float(mass) if n == 2 else 0.0
    u = np.where(r <= radius, obstacle, _exterior(r, radius, h_edge, n, c, total))
    scale = max(1.0, float(np.max(np.abs(obstacle))))
    if np.min(u - obstacle) < -1e-8 * scale:
        raise NoConvergence("Radial contact set is not a centred ball", iterations=result.iterations,
                            residual=float(np.min(u - obstacle)))

    if n == 2:
        c_used = total / (2.0 * np.pi)
    else:
        c_used = float(c)
        total = float(n * (n - 2) * unit_ball_volume(n) * (h_edge - c_used) * radius ** (n - 2))

    logger.debug_operation("solve_radial", "Radial problem solved",
                           extra={"dimension": n, "iterations": result.iterations,
                                  "contact_radius": radius})
    return RadialSolution(
        r=r, u=u, h=obstacle, dimension=n, c=c_used, mass=total,
        contact_radius=float(radius), empty_contact=False, iterations=result.iterations,
    )


def solve_radial_mass(h: RadialObstacle, dimension: int, box_radius: float, mass: float,
                      nodes: int = 2001, tolerance: float = 1e-10) -> RadialSolution:
    """Decaying flavor with prescribed mass: bisection on the monotone mass(c) relation"""
    if dimension == 2:
        return solve_radial(h, 2, box_radius, nodes, mass=mass)
    if mass < 0:
        raise ValidationError("Mass must be nonnegative", field="mass", value=mass)

    r = np.linspace(0.0, box_radius, nodes)
    c_high = float(np.max(h(r)))
    if mass == 0.0:
        return solve_radial(h, dimension, box_radius, nodes, c=c_high)

    def excess(c_value: float) -> float:
        return solve_radial(h, dimension, box_radius, nodes, c=c_value).mass - mass

    width = 1.0
    c_low = c_high - width
    for _ in range(60):
        if excess(c_low) > 0.0:
            break
        width *= 2.0
        c_low = c_high - width
    else:
        raise BisectionFailed("Could not bracket the far-field constant",
                              details={"mass": mass, "c_high": c_high})

    try:
        c_value = optimize.brentq(excess, c_low, c_high, xtol=tolerance, maxiter=200)
    except (ValueError, RuntimeError) as exc:
        raise BisectionFailed(f"Bisection on c failed: {exc}", details={"mass": mass}) from exc
    return solve_radial(h, dimension, box_radius, nodes, c=c_value)
