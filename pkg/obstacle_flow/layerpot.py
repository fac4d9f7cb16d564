"""
Logarithmic potentials: single and double layers on closed curves, grid volume potentials

The kernel is P(x) = -(1/2pi) log|x| so that -Laplacian P = delta.
"""

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import signal, special

from .exceptions import DegenerateCurve, OriginSingularity, TooCloseToCurve, ValidationError
from .geometry import Curve, Grid2D, RegionMask, ScalarField
from .logging_config import get_logger

logger = get_logger("obstacle_flow.layerpot")

TWO_PI = 2.0 * np.pi
# Cell average of log|x| over [-1/2, 1/2]^2 is C0, so the self cell integrates to -(h^2/2pi)(log h + C0)
SELF_CELL_CONSTANT = 0.5 * (np.pi / 2.0 - 3.0 - np.log(2.0))
CHUNK = 512


@dataclass(frozen=True)
class LayerDensity:
    """Density values sampled at the vertices of a closed curve"""
    curve: Curve
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.curve),):
            raise ValidationError("One density value per vertex is required", field="values",
                                  value=values.shape)
        if not np.all(np.isfinite(values)):
            raise ValidationError("Density values must be finite", field="values")
        if self.curve.length() <= 0:
            raise DegenerateCurve("Curve has zero length")
        object.__setattr__(self, "values", values)

    @property
    def weights(self) -> np.ndarray:
        return self.curve.weights()

    def integral(self) -> float:
        return float(np.sum(self.values * self.weights))

    def upsampled(self, factor: int) -> "LayerDensity":
        """Band-limited resampling of the curve and the density"""
        if factor <= 1:
            return self
        count = factor * len(self.curve)
        vertices = signal.resample(self.curve.vertices, count, axis=0)
        normals = signal.resample(self.curve.normals, count, axis=0)
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        values = signal.resample(self.values, count)
        curve = Curve(vertices, normals, self.curve.arc_spacing / factor)
        return LayerDensity(curve, values)


def unit_ball_volume(n: int) -> float:
    return float(np.pi ** (n / 2.0) / special.gamma(n / 2.0 + 1.0))


def newtonian_potential(x: np.ndarray, n: int = 2) -> np.ndarray:
    """Fundamental solution of -Laplacian in dimension n at points of shape (..., n)

    -(1/2pi) log|x| for n = 2 and |x|^(2-n) / (n(n-2)|B_1|) for n >= 3.
    """
    if n < 2:
        raise ValidationError("Dimension must be at least 2", field="n", value=n)
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    if np.any(r == 0.0):
        raise OriginSingularity("Newtonian potential is singular at the origin")
    if n == 2:
        return -np.log(r) / TWO_PI
    return r ** (2.0 - n) / (n * (n - 2) * unit_ball_volume(n))


def newtonian_gradient(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x ** 2, axis=-1)
    if np.any(r2 == 0.0):
        raise OriginSingularity("Newtonian gradient is singular at the origin")
    return -x / (TWO_PI * r2[..., None])


def _check_clearance(density: LayerDensity, points: np.ndarray) -> None:
    limit = 0.1 * density.curve.arc_spacing
    for lo in range(0, len(points), CHUNK):
        r = points[lo:lo + CHUNK, None, :] - density.curve.vertices[None]
        nearest = np.min(np.linalg.norm(r, axis=2))
        if nearest < limit:
            raise TooCloseToCurve(f"Evaluation point within {nearest:.3g} of the curve",
                                  details={"distance": float(nearest), "limit": limit})


def _as_points(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return points.reshape(-1, 2)


def _chunked(points: np.ndarray, kernel, width: int = 1) -> np.ndarray:
    out = np.empty((len(points), width)) if width > 1 else np.empty(len(points))
    for lo in range(0, len(points), CHUNK):
        out[lo:lo + CHUNK] = kernel(points[lo:lo + CHUNK])
    return out


def single_layer(density: LayerDensity, points: np.ndarray, check: bool = True,
                 floor: float = 0.0) -> np.ndarray:
    """S sigma(x) = sum_j sigma_j w_j P(x - y_j)"""
    pts = _as_points(points)
    if check:
        _check_clearance(density, pts)
    y = density.curve.vertices
    weighted = density.values * density.weights

    def kernel(block):
        r2 = np.maximum(np.sum((block[:, None, :] - y[None]) ** 2, axis=2), floor ** 2)
        return -(np.log(r2) @ weighted) / (2.0 * TWO_PI)

    return _chunked(pts, kernel).reshape(np.shape(points)[:-1])


def single_layer_gradient(density: LayerDensity, points: np.ndarray) -> np.ndarray:
    pts = _as_points(points)
    _check_clearance(density, pts)
    y = density.curve.vertices
    weighted = density.values * density.weights

    def kernel(block):
        r = block[:, None, :] - y[None]
        r2 = np.sum(r ** 2, axis=2)
        return -np.einsum("pjk,j->pk", r / r2[..., None], weighted) / TWO_PI

    return _chunked(pts, kernel, width=2).reshape(np.shape(points))


def double_layer(density: LayerDensity, directions: np.ndarray, points: np.ndarray,
                 check: bool = True, floor: float = 0.0) -> np.ndarray:
    """D g(x) = sum_j g_j w_j d_j . grad_y P(x - y_j) = sum_j g_j w_j d_j.(x - y_j) / (2pi |x - y_j|^2)"""
    directions = np.asarray(directions, dtype=float)
    if directions.shape != density.curve.vertices.shape:
        raise ValidationError("One direction per vertex is required", field="directions")
    pts = _as_points(points)
    if check:
        _check_clearance(density, pts)
    y = density.curve.vertices
    weighted = density.values * density.weights

    def kernel(block):
        r = block[:, None, :] - y[None]
        r2 = np.maximum(np.sum(r ** 2, axis=2), floor ** 2)
        return (np.sum(r * directions[None], axis=2) / r2) @ weighted / TWO_PI

    return _chunked(pts, kernel).reshape(np.shape(points)[:-1])


def double_layer_gradient(density: LayerDensity, directions: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = _as_points(points)
    _check_clearance(density, pts)
    y = density.curve.vertices
    d = np.asarray(directions, dtype=float)
    weighted = density.values * density.weights

    def kernel(block):
        r = block[:, None, :] - y[None]
        r2 = np.sum(r ** 2, axis=2)[..., None]
        dr = np.sum(r * d[None], axis=2)[..., None]
        terms = d[None] / r2 - 2.0 * dr * r / r2 ** 2
        return np.einsum("pjk,j->pk", terms, weighted) / TWO_PI

    return _chunked(pts, kernel, width=2).reshape(np.shape(points))


def normal_derivative_matrix(curve: Curve) -> np.ndarray:
    """Nystrom matrix of T sigma(x_i) = p.v. sum_j nu_i . grad_x P(x_i - y_j) sigma_j w_j"""
    x = curve.vertices
    r = x[:, None, :] - x[None, :, :]
    r2 = np.sum(r ** 2, axis=2)
    np.fill_diagonal(r2, 1.0)
    kernel = -np.sum(curve.normals[:, None, :] * r, axis=2) / (TWO_PI * r2)
    np.fill_diagonal(kernel, curve.curvature() / (2.0 * TWO_PI))
    return kernel * curve.weights()[None, :]


def normal_derivative_operator(density: LayerDensity) -> np.ndarray:
    """Principal value T sigma at each vertex"""
    return normal_derivative_matrix(density.curve) @ density.values


def single_layer_trace(density: LayerDensity, side: Literal["in", "out"]) -> np.ndarray:
    """One-sided normal derivative of S sigma: T sigma - sigma/2 on the nu side, + sigma/2 opposite"""
    principal = normal_derivative_operator(density)
    if side == "out":
        return principal - 0.5 * density.values
    if side == "in":
        return principal + 0.5 * density.values
    raise ValidationError("side must be 'in' or 'out'", field="side", value=side)


def _support_nodes(f: ScalarField, support: Optional[RegionMask]):
    grid = f.grid
    x, y = grid.mesh()
    mask = np.ones(grid.shape, dtype=bool) if support is None else support.flags
    weights = f.values[mask] * grid.spacing ** 2
    nodes = np.column_stack([x[mask], y[mask]])
    keep = weights != 0.0
    return nodes[keep], weights[keep]


def volume_potential(f: ScalarField, support: Optional[RegionMask], points: np.ndarray) -> np.ndarray:
    """Midpoint-rule P * (f chi) at arbitrary points; a coincident node uses the self-cell integral"""
    nodes, weights = _support_nodes(f, support)
    h = f.grid.spacing
    self_value = -(np.log(h) + SELF_CELL_CONSTANT) / TWO_PI * h ** 2
    pts = _as_points(points)

    def kernel(block):
        r2 = np.sum((block[:, None, :] - nodes[None]) ** 2, axis=2)
        coincident = r2 < (1e-9 * h) ** 2
        logs = -0.5 * np.log(np.where(coincident, 1.0, r2)) / TWO_PI
        values = np.where(coincident, self_value / h ** 2, logs)
        return values @ weights

    return _chunked(pts, kernel).reshape(np.shape(points)[:-1])


def volume_potential_grid(f: ScalarField, support: Optional[RegionMask] = None) -> ScalarField:
    """P * (f chi) at every node through one FFT convolution"""
    grid = f.grid
    h = grid.spacing
    source = f.values if support is None else np.where(support.flags, f.values, 0.0)
    i = np.arange(-(grid.nx - 1), grid.nx)[:, None]
    j = np.arange(-(grid.ny - 1), grid.ny)[None, :]
    r2 = (i ** 2 + j ** 2).astype(float) * h ** 2
    with np.errstate(divide="ignore"):
        kernel = -0.5 * np.log(r2) / TWO_PI * h ** 2
    kernel[grid.nx - 1, grid.ny - 1] = -(np.log(h) + SELF_CELL_CONSTANT) / TWO_PI * h ** 2
    return ScalarField(grid, signal.fftconvolve(source, kernel, mode="same"))


def volume_potential_gradient(f: ScalarField, support: Optional[RegionMask], points: np.ndarray) -> np.ndarray:
    nodes, weights = _support_nodes(f, support)
    pts = _as_points(points)

    def kernel(block):
        r = block[:, None, :] - nodes[None]
        r2 = np.sum(r ** 2, axis=2)
        if np.any(r2 == 0.0):
            raise OriginSingularity("Gradient requested at a support node")
        return -np.einsum("pjk,j->pk", r / r2[..., None], weights) / TWO_PI

    return _chunked(pts, kernel, width=2).reshape(np.shape(points))


EXTRAPOLATION_WEIGHTS = np.array([4.0, -6.0, 4.0, -1.0])


def one_sided_gradient(samples: np.ndarray, weights: Sequence[float] = EXTRAPOLATION_WEIGHTS) -> np.ndarray:
    """Extrapolate values sampled at offsets k*delta, k = 1..len(weights), back to offset zero

    samples has the offset index on its first axis.
    """
    samples = np.asarray(samples, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if samples.shape[0] != len(weights):
        raise ValidationError("Need one sample per extrapolation weight", field="samples",
                              value=samples.shape)
    return np.tensordot(weights, samples, axes=(0, 0))


def single_layer_on_grid(density: LayerDensity, grid: Grid2D, upsample: int = 4) -> ScalarField:
    """S sigma at every node; quadrature is upsampled and distances floored near the curve"""
    fine = density.upsampled(upsample)
    x, y = grid.mesh()
    points = np.stack([x, y], axis=-1)
    values = single_layer(fine, points, check=False, floor=0.5 * fine.curve.arc_spacing)
    return ScalarField(grid, values)


def double_layer_on_grid(density: LayerDensity, directions: np.ndarray, grid: Grid2D,
                         upsample: int = 4) -> ScalarField:
    """D g at every node with the same quadrature as single_layer_on_grid"""
    fine = density.upsampled(upsample)
    d = signal.resample(np.asarray(directions, dtype=float), len(fine.curve), axis=0)
    x, y = grid.mesh()
    points = np.stack([x, y], axis=-1)
    values = double_layer(fine, d, points, check=False, floor=0.5 * fine.curve.arc_spacing)
    return ScalarField(grid, values)
