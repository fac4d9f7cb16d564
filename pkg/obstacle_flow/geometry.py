"""
Grids, scalar fields, closed curves and the transversal (z, s) frame

Everything here is a pure function of its inputs. Grid values are stored as
arrays of shape (nx, ny) indexed [i, j] with node position origin + spacing*(i, j).
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .exceptions import (
    CollarOverlap, FrameMisaligned, GeometryError, GridMismatch, MultipleComponents,
    NoContour, NonGraphical, OutsideCollar, ValidationError,
)
from .logging_config import get_logger

logger = get_logger("obstacle_flow.geometry")

MIN_NODES = 16


@dataclass(frozen=True)
class Grid2D:
    """Uniform planar grid with equal spacing in both axes"""
    origin: Tuple[float, float]
    spacing: float
    nx: int
    ny: int

    def __post_init__(self):
        if not np.isfinite(self.spacing) or self.spacing <= 0:
            raise ValidationError("Grid spacing must be positive", field="spacing", value=self.spacing)
        if self.nx < MIN_NODES or self.ny < MIN_NODES:
            raise ValidationError(f"Grid needs at least {MIN_NODES} nodes per axis",
                                  field="nx/ny", value=(self.nx, self.ny))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def centered(cls, half_width: float, spacing: float,
                 center: Sequence[float] = (0.0, 0.0)) -> "Grid2D":
        """Square grid of the given half width around center"""
        n = int(round(2.0 * half_width / spacing)) + 1
        offset = 0.5 * (n - 1) * spacing
        return cls((center[0] - offset, center[1] - offset), spacing, n, n)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def extent(self) -> Tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0, x0 + (self.nx - 1) * self.spacing, y0, y0 + (self.ny - 1) * self.spacing)

    @property
    def size(self) -> float:
        """Side length of the (shorter) box edge"""
        return min(self.nx - 1, self.ny - 1) * self.spacing

    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        x0, y0 = self.origin
        return (x0 + self.spacing * np.arange(self.nx), y0 + self.spacing * np.arange(self.ny))

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="ij")

    def node(self, i: int, j: int) -> np.ndarray:
        return np.array([self.origin[0] + self.spacing * i, self.origin[1] + self.spacing * j])

    def fractional_index(self, points: np.ndarray) -> np.ndarray:
        """Map points of shape (..., 2) to fractional (i, j) coordinates of shape (2, ...)"""
        points = np.asarray(points, dtype=float)
        return np.stack([(points[..., 0] - self.origin[0]) / self.spacing,
                         (points[..., 1] - self.origin[1]) / self.spacing])

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def distance_to_edge(self) -> np.ndarray:
        """Distance of every node to the nearest box edge"""
        i = np.arange(self.nx)[:, None]
        j = np.arange(self.ny)[None, :]
        steps = np.minimum(np.minimum(i, self.nx - 1 - i), np.minimum(j, self.ny - 1 - j))
        return steps * self.spacing

    def contains_ball(self, center: Sequence[float], radius: float) -> bool:
        """True when the closed ball lies strictly inside the box"""
        xmin, xmax, ymin, ymax = self.extent
        return (xmin < center[0] - radius and center[0] + radius < xmax
                and ymin < center[1] - radius and center[1] + radius < ymax)

    def matches(self, other: "Grid2D") -> bool:
        return (self.nx == other.nx and self.ny == other.ny
                and np.isclose(self.spacing, other.spacing, rtol=1e-12, atol=0.0)
                and np.allclose(self.origin, other.origin, rtol=0.0, atol=1e-12 * self.spacing))

    def to_dict(self) -> Dict[str, object]:
        return {"origin": list(self.origin), "spacing": self.spacing, "nx": self.nx, "ny": self.ny}


def discrete_laplacian(values: np.ndarray, spacing: float) -> np.ndarray:
    """Five-point Laplacian on interior nodes; the boundary ring is left at zero"""
    out = np.zeros_like(values, dtype=float)
    out[1:-1, 1:-1] = (values[2:, 1:-1] + values[:-2, 1:-1] + values[1:-1, 2:]
                       + values[1:-1, :-2] - 4.0 * values[1:-1, 1:-1]) / spacing ** 2
    return out


@dataclass(frozen=True)
class ScalarField:
    """Finite real values sampled on every node of a grid"""
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size != self.grid.nx * self.grid.ny:
            raise ValidationError("Field size does not match grid",
                                  field="values", value=values.size)
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValidationError("Field values must be finite", field="values")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid2D, func) -> "ScalarField":
        x, y = grid.mesh()
        return cls(grid, np.broadcast_to(func(x, y), grid.shape).astype(float))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def laplacian(self) -> np.ndarray:
        return discrete_laplacian(self.values, self.grid.spacing)

    def gradient(self) -> Tuple[np.ndarray, np.ndarray]:
        gx, gy = np.gradient(self.values, self.grid.spacing, edge_order=2)
        return gx, gy

    def sample(self, points: np.ndarray, order: int = 1) -> np.ndarray:
        """Interpolate at arbitrary points (shape (..., 2))"""
        return sample_array(self.grid, self.values, points, order=order)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _require_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _require_same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def scaled(self, factor: float) -> "ScalarField":
        return ScalarField(self.grid, factor * self.values)


def sample_array(grid: Grid2D, values: np.ndarray, points: np.ndarray, order: int = 1) -> np.ndarray:
    """Spline interpolation of a grid array at points (shape (..., 2))"""
    points = np.asarray(points, dtype=float)
    coords = grid.fractional_index(points.reshape(-1, 2))
    sampled = ndimage.map_coordinates(values, coords, order=order, mode="nearest")
    return sampled.reshape(points.shape[:-1])


QUADRATIC_TERMS = 6


def local_quadratic_fit(grid: Grid2D, values: np.ndarray, mask: np.ndarray, points: np.ndarray,
                        radius: float, min_nodes: int = 12) -> np.ndarray:
    """Least-squares quadratic through the masked nodes within radius of each point

    Returns coefficients of shape (M, 6) for 1, y1, y2, y1^2, y1 y2, y2^2 where y is the
    offset from the point in grid steps. Rows with fewer than min_nodes nodes are NaN.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    reach = int(np.ceil(radius / grid.spacing))
    di, dj = np.meshgrid(np.arange(-reach, reach + 1), np.arange(-reach, reach + 1), indexing="ij")
    frac = grid.fractional_index(points)
    i = np.rint(frac[0]).astype(int)[:, None] + di.ravel()[None]
    j = np.rint(frac[1]).astype(int)[:, None] + dj.ravel()[None]
    on_grid = (i >= 0) & (i < grid.nx) & (j >= 0) & (j < grid.ny)
    i, j = np.clip(i, 0, grid.nx - 1), np.clip(j, 0, grid.ny - 1)
    y1 = i - frac[0][:, None]
    y2 = j - frac[1][:, None]
    use = on_grid & mask[i, j] & (y1 ** 2 + y2 ** 2 <= (radius / grid.spacing) ** 2)

    basis = np.stack([np.ones_like(y1), y1, y2, y1 * y1, y1 * y2, y2 * y2], axis=-1)
    weight = use.astype(float)
    normal = np.einsum("mk,mka,mkb->mab", weight, basis, basis)
    rhs = np.einsum("mk,mka->ma", weight * np.where(use, values[i, j], 0.0), basis)

    coefficients = np.full((len(points), QUADRATIC_TERMS), np.nan)
    enough = use.sum(axis=1) >= min_nodes
    if np.any(enough):
        coefficients[enough] = np.einsum("mab,mb->ma", np.linalg.pinv(normal[enough]), rhs[enough])
    return coefficients


@dataclass(frozen=True)
class RegionMask:
    """One boolean flag per grid node"""
    grid: Grid2D
    flags: np.ndarray

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=bool)
        if flags.size != self.grid.nx * self.grid.ny:
            raise ValidationError("Mask size does not match grid", field="flags", value=flags.size)
        object.__setattr__(self, "flags", flags.reshape(self.grid.shape))

    def area(self) -> float:
        return float(np.count_nonzero(self.flags)) * self.grid.spacing ** 2

    def complement(self) -> "RegionMask":
        return RegionMask(self.grid, ~self.flags)

    def is_empty(self) -> bool:
        return not np.any(self.flags)

    def centroid(self) -> np.ndarray:
        x, y = self.grid.mesh()
        if self.is_empty():
            raise ValidationError("Empty mask has no centroid", field="flags")
        return np.array([x[self.flags].mean(), y[self.flags].mean()])

    def issubset(self, other: "RegionMask") -> bool:
        _require_same_grid(self.grid, other.grid)
        return bool(np.all(~self.flags | other.flags))

    def depth(self) -> np.ndarray:
        """Distance in node steps from every flagged node to the nearest unflagged one; 0 off the mask"""
        return ndimage.distance_transform_edt(self.flags)


def _require_same_grid(a: Grid2D, b: Grid2D) -> None:
    if not a.matches(b):
        raise GridMismatch("Objects live on different grids",
                           details={"left": a.to_dict(), "right": b.to_dict()})


def _cross(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def periodic_derivatives(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Five-point first and second index derivatives of a closed polyline"""
    p2, p1 = np.roll(points, -2, axis=0), np.roll(points, -1, axis=0)
    m1, m2 = np.roll(points, 1, axis=0), np.roll(points, 2, axis=0)
    first = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / 12.0
    second = (-p2 + 16.0 * p1 - 30.0 * points + 16.0 * m1 - m2) / 12.0
    return first, second


def _wavenumbers(count: int) -> np.ndarray:
    return np.fft.fftfreq(count, d=1.0 / count)


def spectral_derivatives(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """First and second index derivatives of the trigonometric interpolant of a closed polyline"""
    count = len(points)
    k = _wavenumbers(count)
    coefficients = np.fft.fft(points, axis=0)
    scale = 2.0 * np.pi / count
    odd = k.copy()
    if count % 2 == 0:
        odd[count // 2] = 0.0
    first = np.fft.ifft(1j * odd[:, None] * coefficients, axis=0).real * scale
    second = np.fft.ifft(-(k ** 2)[:, None] * coefficients, axis=0).real * scale ** 2
    return first, second


def _tangent_rate(first: np.ndarray, second: np.ndarray, normals: np.ndarray) -> np.ndarray:
    speed = np.linalg.norm(first, axis=-1)[..., None]
    rate = (second * speed ** 2 - first * np.sum(first * second, axis=-1)[..., None]) / speed ** 4
    return np.sum(rate * normals, axis=-1)


def lowpass_closed(points: np.ndarray, modes: int) -> np.ndarray:
    """Keep the Fourier modes |k| <= modes of a closed polyline"""
    coefficients = np.fft.fft(points, axis=0)
    coefficients[np.abs(_wavenumbers(len(points))) > modes] = 0.0
    return np.fft.ifft(coefficients, axis=0).real


def filled_laplacian(scalar: "ScalarField") -> np.ndarray:
    """Five-point Laplacian with the boundary ring copied from its inner neighbours"""
    inner = discrete_laplacian(scalar.values, scalar.grid.spacing)[1:-1, 1:-1]
    return np.pad(inner, 1, mode="edge")


@dataclass(frozen=True)
class Curve:
    """Closed polyline with one unit normal per vertex pointing toward Omega"""
    vertices: np.ndarray
    normals: np.ndarray
    arc_spacing: float

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        normals = np.asarray(self.normals, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or len(vertices) < 3:
            raise ValidationError("Curve needs at least three planar vertices", field="vertices")
        if normals.shape != vertices.shape:
            raise ValidationError("One normal per vertex is required", field="normals")
        if not (np.all(np.isfinite(vertices)) and np.all(np.isfinite(normals))):
            raise ValidationError("Curve data must be finite", field="vertices")
        lengths = np.linalg.norm(normals, axis=1)
        if np.max(np.abs(lengths - 1.0)) > 1e-9:
            raise ValidationError("Curve normals must have unit length", field="normals")
        if not self.arc_spacing > 0:
            raise ValidationError("arc_spacing must be positive", field="arc_spacing",
                                  value=self.arc_spacing)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "normals", normals / lengths[:, None])
        object.__setattr__(self, "arc_spacing", float(self.arc_spacing))

    @classmethod
    def from_vertices(cls, vertices: np.ndarray, arc_spacing: Optional[float] = None,
                      outward: bool = True) -> "Curve":
        """Build normals from the spectral tangent; outward means away from the enclosed region"""
        vertices = np.asarray(vertices, dtype=float)
        chord = np.roll(vertices, -1, axis=0) - np.roll(vertices, 1, axis=0)
        if np.any(np.linalg.norm(chord, axis=1) == 0.0):
            raise ValidationError("Repeated vertices in curve", field="vertices")
        tangent, _ = spectral_derivatives(vertices)
        # a sharp corner can stall the interpolant; fall back to the chord there
        stalled = np.linalg.norm(tangent, axis=1) <= 1e-3 * np.linalg.norm(chord, axis=1)
        tangent = _unit(np.where(stalled[:, None], chord, tangent))
        normals = np.column_stack([tangent[:, 1], -tangent[:, 0]])
        if polygon_area(vertices) < 0:
            normals = -normals
        if not outward:
            normals = -normals
        if arc_spacing is None:
            arc_spacing = float(np.mean(segment_lengths(vertices)))
        return cls(vertices, normals, arc_spacing)

    @classmethod
    def circle(cls, center: Sequence[float], radius: float, count: int,
               phase: float = 0.0) -> "Curve":
        """Counter-clockwise circle with exact outward normals"""
        theta = phase + 2.0 * np.pi * np.arange(count) / count
        normals = np.column_stack([np.cos(theta), np.sin(theta)])
        vertices = np.asarray(center, dtype=float) + radius * normals
        return cls(vertices, normals, 2.0 * np.pi * radius / count)

    @classmethod
    def ellipse(cls, center: Sequence[float], axes: Sequence[float], count: int) -> "Curve":
        """Counter-clockwise ellipse sampled uniformly in angle with exact outward normals"""
        a, b = axes
        theta = 2.0 * np.pi * np.arange(count) / count
        vertices = np.asarray(center, dtype=float) + np.column_stack([a * np.cos(theta), b * np.sin(theta)])
        normals = _unit(np.column_stack([np.cos(theta) / a, np.sin(theta) / b]))
        curve = cls(vertices, normals, 1.0)
        return cls(vertices, normals, curve.length() / count)

    def __len__(self) -> int:
        return len(self.vertices)

    def segment_lengths(self) -> np.ndarray:
        return segment_lengths(self.vertices)

    def length(self) -> float:
        return float(np.sum(self.segment_lengths()))

    def signed_area(self) -> float:
        return polygon_area(self.vertices)

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def tangents(self) -> np.ndarray:
        first, _ = spectral_derivatives(self.vertices)
        return _unit(first)

    def weights(self) -> np.ndarray:
        """Trapezoidal arclength weights: spectral speed times parameter step"""
        first, _ = spectral_derivatives(self.vertices)
        return np.linalg.norm(first, axis=1)

    def curvature(self) -> np.ndarray:
        """Signed curvature (d tau/ds) . normal of the trigonometric interpolant"""
        first, second = spectral_derivatives(self.vertices)
        return _tangent_rate(first, second, self.normals)

    def translated(self, offset: Sequence[float]) -> "Curve":
        return Curve(self.vertices + np.asarray(offset, dtype=float), self.normals, self.arc_spacing)

    def displaced(self, distance: np.ndarray, directions: np.ndarray) -> "Curve":
        """Move each vertex along its direction; normals are rebuilt from the new polyline"""
        moved = self.vertices + np.asarray(distance)[:, None] * directions
        outward = np.sum(self.normals * Curve.from_vertices(self.vertices).normals) > 0
        return Curve.from_vertices(moved, self.arc_spacing, outward=bool(outward))

    def to_csv(self, path: Path, extra: Optional[Dict[str, np.ndarray]] = None) -> None:
        """Write columns x, y, nx, ny plus optional per-vertex columns"""
        extra = extra or {}
        columns = ["x", "y", "nx", "ny"] + list(extra)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(columns)
            for k in range(len(self.vertices)):
                row = [self.vertices[k, 0], self.vertices[k, 1], self.normals[k, 0], self.normals[k, 1]]
                row += [extra[name][k] for name in extra]
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: Path) -> "Curve":
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
        if not rows:
            raise ValidationError(f"No vertices in {path}", field="path", value=path)
        vertices = np.array([[float(r["x"]), float(r["y"])] for r in rows])
        normals = np.array([[float(r["nx"]), float(r["ny"])] for r in rows])
        return cls(vertices, normals, float(np.mean(segment_lengths(vertices))))


def segment_lengths(vertices: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.roll(vertices, -1, axis=0) - vertices, axis=1)


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace signed area, positive for counter-clockwise order"""
    return 0.5 * float(np.sum(_cross(vertices, np.roll(vertices, -1, axis=0))))


def resample_closed(points: np.ndarray, arc_spacing: float) -> np.ndarray:
    """Redistribute a closed polyline to uniform arclength"""
    closed = np.vstack([points, points[:1]])
    steps = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(steps)])
    total = cumulative[-1]
    count = max(MIN_NODES, int(round(total / arc_spacing)))
    targets = np.linspace(0.0, total, count, endpoint=False)
    return np.column_stack([np.interp(targets, cumulative, closed[:, 0]),
                            np.interp(targets, cumulative, closed[:, 1])])


# Marching squares. Edge keys: ("x", i, j) joins nodes (i, j)-(i+1, j);
# ("y", i, j) joins nodes (i, j)-(i, j+1).
_CELL_EDGES = (("x", 0, 0), ("y", 1, 0), ("x", 0, 1), ("y", 0, 0))  # bottom, right, top, left
_CORNERS = ((0, 0), (1, 0), (1, 1), (0, 1))
_CORNER_EDGES = ((0, 3), (0, 1), (1, 2), (2, 3))


def _edge_point(grid: Grid2D, d: np.ndarray, key: Tuple[str, int, int]) -> np.ndarray:
    kind, i, j = key
    a = (i, j)
    b = (i + 1, j) if kind == "x" else (i, j + 1)
    da, db = d[a], d[b]
    t = da / (da - db)
    pa, pb = grid.node(*a), grid.node(*b)
    return pa + t * (pb - pa)


def _contour_segments(grid: Grid2D, d: np.ndarray) -> List[Tuple[tuple, tuple]]:
    inside = d > 0
    corners = np.stack([inside[:-1, :-1], inside[1:, :-1], inside[1:, 1:], inside[:-1, 1:]])
    mixed = np.any(corners, axis=0) & ~np.all(corners, axis=0)
    segments = []
    for i, j in zip(*np.nonzero(mixed)):
        flags = [bool(inside[i + di, j + dj]) for di, dj in _CORNERS]
        keys = [(kind, i + di, j + dj) for kind, di, dj in _CELL_EDGES]
        crossed = [e for e in range(4) if flags[e] != flags[(e + 1) % 4]]
        if len(crossed) == 2:
            segments.append((keys[crossed[0]], keys[crossed[1]]))
            continue
        # saddle: the cell-centre value decides which corners are joined
        centre_inside = d[i:i + 2, j:j + 2].mean() > 0
        for corner, (e1, e2) in enumerate(_CORNER_EDGES):
            if flags[corner] != centre_inside:
                segments.append((keys[e1], keys[e2]))
    return segments


def _stitch_loops(segments: List[Tuple[tuple, tuple]]) -> List[List[tuple]]:
    neighbours: Dict[tuple, List[tuple]] = {}
    for a, b in segments:
        neighbours.setdefault(a, []).append(b)
        neighbours.setdefault(b, []).append(a)
    if any(len(v) != 2 for v in neighbours.values()):
        raise GeometryError("Contour leaves the grid or is not a closed loop")
    loops = []
    visited = set()
    for start in sorted(neighbours):
        if start in visited:
            continue
        loop = [start]
        visited.add(start)
        previous, current = start, neighbours[start][0]
        while current != start:
            loop.append(current)
            visited.add(current)
            a, b = neighbours[current]
            previous, current = current, (b if a == previous else a)
        loops.append(loop)
    return loops


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd ray casting of points (M, 2) against a closed polygon"""
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    ax, ay = polygon[:, 0][None], polygon[:, 1][None]
    bx, by = np.roll(polygon[:, 0], -1)[None], np.roll(polygon[:, 1], -1)[None]
    straddles = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        crossing = ax + (y - ay) * (bx - ax) / (by - ay)
    return np.count_nonzero(straddles & (x < crossing), axis=1) % 2 == 1


def extract_free_boundary(field: ScalarField, level: float, arc_spacing: float,
                          modes: Optional[int] = None) -> Curve:
    """Outermost level-set contour of a field, resampled and low-passed, normals toward larger values

    Loops nested inside another loop are dropped. The contour keeps the Fourier modes
    up to one per eight grid spacings of its length unless modes is given.
    """
    d = field.values - level
    if not (np.any(d > 0) and np.any(d <= 0)):
        raise NoContour(f"Field does not cross level {level}", details={"level": level})
    loops = _stitch_loops(_contour_segments(field.grid, d))
    if not loops:
        raise NoContour(f"Field does not cross level {level}", details={"level": level})

    polygons = [np.array([_edge_point(field.grid, d, key) for key in loop]) for loop in loops]
    outer = [k for k, polygon in enumerate(polygons)
             if not any(points_in_polygon(polygon[:1], other)[0]
                        for m, other in enumerate(polygons) if m != k)]
    if len(outer) != 1:
        raise MultipleComponents(f"Level {level} forms {len(outer)} separate loops",
                                 components=len(outer))
    if len(polygons) > 1:
        logger.warning_operation("extract_free_boundary", "Nested level loops dropped",
                                 extra={"loops": len(polygons)})

    points = polygons[outer[0]]
    if polygon_area(points) < 0:
        points = points[::-1]
    points = resample_closed(points, arc_spacing)
    if modes is None:
        modes = max(8, int(np.sum(segment_lengths(points)) / (8.0 * field.grid.spacing)))
    points = lowpass_closed(points, modes)
    curve = Curve.from_vertices(points, arc_spacing, outward=True)

    offset = 0.5 * field.grid.spacing
    ahead = field.sample(curve.vertices + offset * curve.normals)
    behind = field.sample(curve.vertices - offset * curve.normals)
    if np.mean(ahead - behind) < 0:
        curve = Curve(curve.vertices, -curve.normals, arc_spacing)

    logger.debug_operation("extract_free_boundary", "Contour extracted",
                           extra={"vertices": len(curve), "length": curve.length(), "modes": modes})
    return curve


@dataclass(frozen=True)
class TransversalFrame:
    """Reference curve, straight transversals along N and the collar Jacobian"""
    reference: Curve
    N: np.ndarray
    collar_halfwidth: float
    offsets: np.ndarray
    jacobian: np.ndarray
    area_coefficients: Tuple[np.ndarray, np.ndarray]
    alignment: np.ndarray
    epsilon: float = 0.05

    @property
    def min_alignment(self) -> float:
        return float(np.min(self.alignment))

    def jacobian_at(self, s: np.ndarray) -> np.ndarray:
        """J(z_i, s_i) for one offset per reference vertex"""
        a, b = self.area_coefficients
        return np.abs(a + np.asarray(s) * b)

    def jacobian_ds(self, s: np.ndarray) -> np.ndarray:
        a, b = self.area_coefficients
        return np.sign(a + np.asarray(s) * b) * b

    def points_at(self, s: np.ndarray) -> np.ndarray:
        return self.reference.vertices + np.asarray(s)[..., None] * self.N

    def omega(self, normals: np.ndarray) -> np.ndarray:
        """Tangential part N - (N.nu) nu of N against the given normals"""
        a = np.sum(self.N * normals, axis=1)
        return self.N - a[:, None] * normals


def _smooth_closed(points: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        points = 0.25 * (np.roll(points, 1, axis=0) + 2.0 * points + np.roll(points, -1, axis=0))
    return points


def _segments_cross(p0: np.ndarray, p1: np.ndarray, q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """Proper intersection test between segment arrays broadcast against each other"""
    r = p1 - p0
    s = q1 - q0
    d1 = _cross(r, q0 - p0)
    d2 = _cross(r, q1 - p0)
    d3 = _cross(s, p0 - q0)
    d4 = _cross(s, p1 - q0)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def build_frame(gamma0: Curve, collar_halfwidth: Optional[float] = None, smoothing: int = 0,
                epsilon: float = 0.05, offsets: int = 8,
                collar_fraction: float = 0.25) -> TransversalFrame:
    """Smoothed reference curve with straight transversals along its normals"""
    reference_points = _smooth_closed(gamma0.vertices, smoothing)
    reference = Curve.from_vertices(reference_points, gamma0.arc_spacing, outward=True)
    if np.sum(reference.normals * gamma0.normals) < 0:
        reference = Curve(reference.vertices, -reference.normals, gamma0.arc_spacing)
    N = reference.normals

    if collar_halfwidth is None:
        curvature = np.max(np.abs(reference.curvature()))
        collar_halfwidth = (collar_fraction / curvature if curvature > 0
                            else collar_fraction * reference.length())
    if not collar_halfwidth > 0:
        raise ValidationError("collar_halfwidth must be positive", field="collar_halfwidth",
                              value=collar_halfwidth)

    alignment = np.sum(N * gamma0.normals, axis=1)
    if np.min(alignment) < 1.0 - epsilon:
        raise FrameMisaligned(f"min N.nu = {np.min(alignment):.4f} below 1 - {epsilon}",
                              details={"min_alignment": float(np.min(alignment))})

    first, _ = periodic_derivatives(reference.vertices)
    speed = np.linalg.norm(first, axis=1)
    tangent = first / speed[:, None]
    dN, _ = periodic_derivatives(N)
    dN = dN / speed[:, None]
    a = _cross(tangent, N)
    b = _cross(dN, N)

    lattice = np.linspace(-collar_halfwidth, collar_halfwidth, 2 * offsets + 1)
    signed = a[:, None] + lattice[None, :] * b[:, None]
    if np.any(signed * np.sign(a)[:, None] <= 0):
        raise CollarOverlap("Collar map folds: J vanishes inside the collar",
                            details={"collar_halfwidth": collar_halfwidth})

    starts = reference.vertices - collar_halfwidth * N
    ends = reference.vertices + collar_halfwidth * N
    count = len(reference)
    index = np.arange(count)
    gap = np.abs(index[:, None] - index[None, :])
    far = np.minimum(gap, count - gap) > 1
    chunk = 256
    for lo in range(0, count, chunk):
        hi = min(count, lo + chunk)
        hits = _segments_cross(starts[lo:hi, None], ends[lo:hi, None], starts[None], ends[None])
        if np.any(hits & far[lo:hi]):
            raise CollarOverlap("Transversal segments intersect; reduce collar_halfwidth",
                                details={"collar_halfwidth": collar_halfwidth})

    logger.debug_operation("build_frame", "Frame built",
                           extra={"vertices": count, "collar_halfwidth": collar_halfwidth,
                                  "min_alignment": float(np.min(alignment))})
    return TransversalFrame(
        reference=reference,
        N=N,
        collar_halfwidth=float(collar_halfwidth),
        offsets=lattice,
        jacobian=np.abs(signed),
        area_coefficients=(a, b),
        alignment=alignment,
        epsilon=epsilon,
    )


@dataclass(frozen=True)
class TransversalHits:
    """Where each transversal meets a curve, with the curve's normal and curvature there"""
    eta: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    curvature: np.ndarray
    edges: np.ndarray = field(repr=False)


def trigonometric_interpolant(vertices: np.ndarray,
                              theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position and first two index derivatives of a closed polyline's interpolant at fractional indices"""
    count = len(vertices)
    k = _wavenumbers(count)
    coefficients = np.fft.fft(vertices, axis=0) / count
    phase = np.exp(2j * np.pi * np.outer(theta, k) / count)
    scale = 2.0 * np.pi / count
    position = (phase @ coefficients).real
    first = (phase @ (1j * k[:, None] * coefficients)).real * scale
    second = (phase @ (-(k ** 2)[:, None] * coefficients)).real * scale ** 2
    return position, first, second


def intersect_transversals(frame: TransversalFrame, gamma: Curve, newton_steps: int = 4) -> TransversalHits:
    """Intersect every transversal with gamma, then refine onto gamma's trigonometric interpolant"""
    z = frame.reference.vertices
    N = frame.N
    a = gamma.vertices
    e = np.roll(a, -1, axis=0) - a
    d = a[None, :, :] - z[:, None, :]
    det = _cross(N[:, None, :], -e[None, :, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        s = _cross(d, -e[None, :, :]) / det
        u = _cross(N[:, None, :], d) / det
    # half-open with a shift so a transversal through a vertex counts once
    valid = (np.abs(det) > 1e-14) & (u >= -1e-9) & (u < 1.0 - 1e-9)
    within = valid & (np.abs(s) <= frame.collar_halfwidth)
    counts = within.sum(axis=1)

    if np.any((counts == 0) & valid.any(axis=1)):
        raise OutsideCollar("Curve leaves the collar of the frame",
                            details={"transversals": int(np.count_nonzero(counts == 0))})
    if np.any(counts != 1):
        raise NonGraphical("Some transversal meets the curve zero or several times",
                           details={"max_hits": int(counts.max()), "min_hits": int(counts.min())})

    edges = np.argmax(within, axis=1)
    rows = np.arange(len(z))
    t = np.clip(u[rows, edges], 0.0, 1.0)
    nxt = (edges + 1) % len(a)
    polyline_normals = _unit((1.0 - t)[:, None] * gamma.normals[edges] + t[:, None] * gamma.normals[nxt])

    start = edges + t
    theta = start.copy()
    for _ in range(newton_steps):
        position, first, _ = trigonometric_interpolant(a, theta)
        slope = _cross(N, first)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(np.abs(slope) > 0.0, _cross(N, position - z) / slope, 0.0)
        theta = theta - np.clip(np.nan_to_num(step), -1.0, 1.0)
    position, first, second = trigonometric_interpolant(a, theta)
    eta = np.sum((position - z) * N, axis=1)
    settled = (np.abs(theta - start) <= 1.5) & (np.abs(eta - s[rows, edges]) <= frame.collar_halfwidth)
    eta = np.where(settled, eta, s[rows, edges])

    normals = _unit(np.column_stack([first[:, 1], -first[:, 0]]))
    normals = np.where(np.sum(normals * polyline_normals, axis=1)[:, None] < 0, -normals, normals)
    normals = np.where(settled[:, None], normals, polyline_normals)
    curvature = _tangent_rate(first, second, normals)
    points = z + eta[:, None] * N
    return TransversalHits(eta=eta, points=points, normals=normals, curvature=curvature, edges=edges)


def height_function(frame: TransversalFrame, gamma: Curve) -> np.ndarray:
    """Signed transversal offset s = eta(z) of gamma at every reference vertex"""
    return intersect_transversals(frame, gamma).eta


def _directed_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    starts = b
    edges = np.roll(b, -1, axis=0) - b
    lengths2 = np.maximum(np.sum(edges ** 2, axis=1), 1e-300)
    worst = 0.0
    for lo in range(0, len(a), 256):
        p = a[lo:lo + 256, None, :]
        t = np.clip(np.sum((p - starts[None]) * edges[None], axis=2) / lengths2[None], 0.0, 1.0)
        nearest = starts[None] + t[..., None] * edges[None]
        dist = np.min(np.linalg.norm(p - nearest, axis=2), axis=1)
        worst = max(worst, float(np.max(dist)))
    return worst


def hausdorff_distance(a: Curve, b: Curve) -> float:
    """Symmetric Hausdorff distance between two closed polylines"""
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("Hausdorff distance needs nonempty curves")
    return max(_directed_hausdorff(a.vertices, b.vertices),
               _directed_hausdorff(b.vertices, a.vertices))


def symmetric_difference_area(a: RegionMask, b: RegionMask) -> float:
    """spacing^2 times the number of nodes where the masks differ"""
    _require_same_grid(a.grid, b.grid)
    return float(np.count_nonzero(a.flags != b.flags)) * a.grid.spacing ** 2


def swept_area(frame: TransversalFrame, eta_a: np.ndarray, eta_b: np.ndarray) -> float:
    """Area between two graphs over the frame: sum of |integral of J ds| from eta_a to eta_b"""
    a, b = frame.area_coefficients
    eta_a, eta_b = np.asarray(eta_a), np.asarray(eta_b)
    strip = a * (eta_b - eta_a) + 0.5 * b * (eta_b ** 2 - eta_a ** 2)
    return float(np.sum(frame.reference.weights() * np.abs(strip)))


def save_field(field: ScalarField, path: Path) -> None:
    """Write a JSON header next to a CSV of values (rows indexed by i)"""
    path = Path(path)
    values_path = path.with_suffix(".csv")
    header = dict(field.grid.to_dict(), values_file=values_path.name)
    path.write_text(json.dumps(header, indent=2, sort_keys=True))
    np.savetxt(values_path, field.values, delimiter=",", fmt="%.17g")


def load_field(path: Path) -> ScalarField:
    """Read a field written by save_field"""
    path = Path(path)
    header = json.loads(path.read_text())
    grid = Grid2D(tuple(header["origin"]), float(header["spacing"]), int(header["nx"]), int(header["ny"]))
    values = np.loadtxt(path.parent / header["values_file"], delimiter=",", ndmin=2)
    return ScalarField(grid, values)
