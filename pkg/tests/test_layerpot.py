"""
Tests for Newtonian, single layer, double layer and volume potentials
"""

import numpy as np
import pytest

from obstacle_flow.exceptions import OriginSingularity, TooCloseToCurve, ValidationError
from obstacle_flow.geometry import Grid2D, RegionMask, ScalarField
from obstacle_flow.layerpot import (
    LayerDensity, double_layer, double_layer_on_grid, newtonian_gradient, newtonian_potential,
    normal_derivative_operator, one_sided_gradient, single_layer, single_layer_gradient,
    single_layer_on_grid, single_layer_trace, volume_potential, volume_potential_grid,
)


@pytest.fixture
def unit_density(unit_circle):
    return LayerDensity(unit_circle, np.ones(len(unit_circle)))


class TestNewtonian:
    """Test cases for the fundamental solution"""

    def test_planar_log(self):
        value = newtonian_potential(np.array([np.e, 0.0]))
        assert value == pytest.approx(-1.0 / (2.0 * np.pi))

    def test_three_dimensions(self):
        """|x|^(-1) / (4 pi) in three dimensions"""
        value = newtonian_potential(np.array([0.5, 0.0, 0.0]), n=3)
        assert value == pytest.approx(1.0 / (4.0 * np.pi * 0.5))

    def test_gradient_points_inward(self):
        grad = newtonian_gradient(np.array([[2.0, 0.0]]))
        assert np.allclose(grad, [[-1.0 / (4.0 * np.pi), 0.0]])

    def test_origin_is_singular(self):
        with pytest.raises(OriginSingularity):
            newtonian_potential(np.array([0.0, 0.0]))
        with pytest.raises(OriginSingularity):
            newtonian_gradient(np.zeros((1, 2)))

    def test_dimension_one_rejected(self):
        with pytest.raises(ValidationError):
            newtonian_potential(np.array([1.0]), n=1)


class TestLayerDensity:
    """Test cases for densities on curves"""

    def test_integral_is_length(self, unit_density):
        assert unit_density.integral() == pytest.approx(2.0 * np.pi, rel=1e-10)

    def test_upsampling_preserves_integral(self, unit_circle):
        theta = np.arctan2(unit_circle.vertices[:, 1], unit_circle.vertices[:, 0])
        density = LayerDensity(unit_circle, 1.0 + np.cos(theta))
        fine = density.upsampled(4)
        assert len(fine.curve) == 4 * len(unit_circle)
        assert fine.integral() == pytest.approx(2.0 * np.pi, rel=1e-10)

    def test_wrong_length_rejected(self, unit_circle):
        with pytest.raises(ValidationError):
            LayerDensity(unit_circle, np.ones(3))


class TestSingleLayer:
    """Test cases for S sigma and its traces"""

    def test_constant_density_inside_and_outside(self, unit_density):
        """S 1 vanishes inside the unit circle and equals -log r outside"""
        inside = single_layer(unit_density, np.array([[0.5, 0.1], [-0.2, -0.3]]))
        outside_points = np.array([[1.5, 0.5], [0.0, -2.0]])
        outside = single_layer(unit_density, outside_points)
        assert np.allclose(inside, 0.0, atol=1e-10)
        assert np.allclose(outside, -np.log(np.linalg.norm(outside_points, axis=1)), atol=1e-10)

    def test_gradient_outside(self, unit_density):
        points = np.array([[1.5, 0.5], [0.0, -2.0]])
        r2 = np.sum(points ** 2, axis=1)
        expected = -points / r2[:, None]
        assert np.allclose(single_layer_gradient(unit_density, points), expected, atol=1e-10)
        assert np.allclose(single_layer_gradient(unit_density, np.array([[0.2, 0.1]])), 0.0, atol=1e-10)

    def test_jump_relations_for_constant_density(self, unit_density):
        """T 1 = -1/2 on the unit circle, so the outside trace is -1 and the inside trace 0"""
        assert np.allclose(normal_derivative_operator(unit_density), -0.5, atol=1e-8)
        assert np.allclose(single_layer_trace(unit_density, "out"), -1.0, atol=1e-8)
        assert np.allclose(single_layer_trace(unit_density, "in"), 0.0, atol=1e-8)

    def test_principal_value_of_first_mode_vanishes(self, unit_circle):
        density = LayerDensity(unit_circle, unit_circle.vertices[:, 0])
        assert np.allclose(normal_derivative_operator(density), 0.0, atol=1e-8)

    def test_invalid_side(self, unit_density):
        with pytest.raises(ValidationError):
            single_layer_trace(unit_density, "across")

    def test_points_on_the_curve_are_rejected(self, unit_density):
        with pytest.raises(TooCloseToCurve):
            single_layer(unit_density, np.array([[1.0 + 1e-4, 0.0]]))

    def test_grid_evaluation(self, grid, unit_density):
        """The upsampled grid evaluation matches the closed form away from the curve"""
        field = single_layer_on_grid(unit_density, grid)
        assert field.values[80, 80] == pytest.approx(0.0, abs=1e-8)
        assert field.values[-1, -1] == pytest.approx(-np.log(np.hypot(1.25, 1.25)), abs=1e-8)


class TestDoubleLayer:
    """Test cases for D g"""

    def test_gauss_integral(self, unit_density, unit_circle):
        """A unit dipole density along the outward normals gives -1 inside and 0 outside"""
        points = np.array([[0.0, 0.0], [0.3, 0.2], [2.0, 0.0], [0.0, -1.7]])
        values = double_layer(unit_density, unit_circle.normals, points)
        assert np.allclose(values, [-1.0, -1.0, 0.0, 0.0], atol=1e-8)

    def test_direction_count_must_match(self, unit_density):
        with pytest.raises(ValidationError):
            double_layer(unit_density, np.ones((3, 2)), np.zeros((1, 2)))

    def test_grid_evaluation(self, grid, unit_density, unit_circle):
        field = double_layer_on_grid(unit_density, unit_circle.normals, grid)
        assert field.values[80, 80] == pytest.approx(-1.0, abs=1e-8)
        assert field.values[0, 0] == pytest.approx(0.0, abs=1e-8)


class TestVolumePotential:
    """Test cases for P * (f chi) on grids"""

    @pytest.fixture
    def fine_grid(self):
        return Grid2D.centered(0.5, 1.0 / 128.0)

    def test_disk_potential_at_center(self, fine_grid):
        """P * chi_B(0) = -(R^2/2 log R - R^2/4) for the disk of radius R"""
        radius = 0.3
        x, y = fine_grid.mesh()
        disk = RegionMask(fine_grid, x ** 2 + y ** 2 <= radius ** 2)
        ones = ScalarField.from_function(fine_grid, lambda x, y: np.ones_like(x))
        potential = volume_potential_grid(ones, disk)
        center = fine_grid.nx // 2
        expected = -(0.5 * radius ** 2 * np.log(radius) - 0.25 * radius ** 2)
        assert expected == pytest.approx(0.076679, abs=1e-6)
        assert potential.values[center, center] == pytest.approx(expected, rel=0.02)

    def test_pointwise_matches_grid(self, fine_grid):
        """Both quadratures use the same kernel and self-cell value"""
        f = ScalarField.from_function(fine_grid, lambda x, y: np.exp(-(x ** 2 + y ** 2) / 0.05))
        on_grid = volume_potential_grid(f)
        x, y = fine_grid.mesh()
        index = [(64, 64), (10, 90), (100, 3)]
        points = np.array([[x[i, j], y[i, j]] for i, j in index])
        pointwise = volume_potential(f, None, points)
        expected = np.array([on_grid.values[i, j] for i, j in index])
        assert np.allclose(pointwise, expected, rtol=1e-8, atol=1e-12)


class TestExtrapolation:
    """Test cases for the one-sided extrapolation weights"""

    def test_cubic_is_reproduced(self):
        """Weights (4, -6, 4, -1) recover a cubic at offset zero"""
        delta = 0.01
        offsets = delta * np.arange(1, 5)
        cubic = 1.0 + 2.0 * offsets - offsets ** 2 + 0.5 * offsets ** 3
        assert float(one_sided_gradient(cubic)) == pytest.approx(1.0, abs=1e-12)

    def test_vector_samples(self):
        samples = np.stack([np.full((5, 2), k) for k in (1.0, 2.0, 3.0, 4.0)])
        assert np.allclose(one_sided_gradient(samples), 0.0, atol=1e-12)

    def test_sample_count_must_match(self):
        with pytest.raises(ValidationError):
            one_sided_gradient(np.ones(3))
