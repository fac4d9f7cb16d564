"""
Tests for the velocity potential, the normal velocity and acceleration, and the
monotone decomposition of obstacle perturbations
"""

from dataclasses import replace

import numpy as np
import pytest

from obstacle_flow.catalog import get_catalog
from obstacle_flow.exceptions import DegenerateLaplacian, EmptyBoundary, ValidationError
from obstacle_flow.geometry import Grid2D, ScalarField, build_frame
from obstacle_flow.obstacle import ObstacleProblem, ordering_holds, solve_equilibrium_measure, solve_obstacle
from obstacle_flow.perturb import (
    PerturbationPath, assemble_w_parts, boundary_data, fit_order, monotone_decomposition,
    monotone_increase, normal_velocity, phi_minus, phi_plus, radial_cutoff, solve_theta,
    solve_velocity_potential, verify_expansion,
)

from obstacle_flow.runtime_config import SolverSettings

from .conftest import RADIUS

FINE_SPACING = 1.0 / 128.0


def make_path(problem, solution, Q, path_id, params=None):
    """Perturbation path from a catalog entry"""
    fields = get_catalog().path(path_id, params).build(problem, Q)
    return PerturbationPath(
        problem=problem, solution=solution, hdot=fields.hdot, hddot=fields.hddot,
        cdot=fields.cdot, cddot=fields.cddot, sampler=fields.sampler,
        support_radius=fields.support_radius, symmetric=fields.symmetric, name=path_id,
    )


@pytest.fixture(scope="module")
def scaling_path(radial_problem, radial_solution, quadratic_Q):
    return make_path(radial_problem, radial_solution, quadratic_Q, "radial-scaling", {"rate": 1.0})


@pytest.fixture(scope="module")
def scaling_velocity(scaling_path, radial_frame):
    return solve_velocity_potential(scaling_path.problem, scaling_path.solution, scaling_path.hdot,
                                    scaling_path.cdot, frame=radial_frame)


@pytest.fixture(scope="module")
def fine_scaling():
    """Radial scaling on a 1/128 grid: path, frame, velocity and acceleration"""
    grid = Grid2D.centered(1.0, FINE_SPACING)
    Q = ScalarField.from_function(grid, lambda x, y: x ** 2 + y ** 2)
    c = 1.0 / (2.0 * np.pi)
    problem = ObstacleProblem(h=ScalarField(grid, c - 0.5 * Q.values), c=c,
                              solver=SolverSettings(method="active_set"), name="radial-fine")
    solution = solve_obstacle(problem)
    frame = build_frame(solution.require_gamma(), smoothing=2)
    path = make_path(problem, solution, Q, "radial-scaling", {"rate": 1.0})
    velocity = solve_velocity_potential(problem, solution, path.hdot, path.cdot, frame=frame)
    parts = assemble_w_parts(problem, solution, velocity, path.hdot, path.hddot, frame)
    acceleration = solve_theta(problem, solution, velocity, parts, frame)
    return path, frame, velocity, acceleration


class TestPerturbationPath:
    """Test cases for obstacle families"""

    def test_sampler_is_consistent_with_hdot(self, scaling_path):
        assert max(scaling_path.consistency_error()) <= 1e-10

    def test_problem_at_zero_is_base(self, scaling_path):
        problem = scaling_path.problem_at(0.0)
        assert np.allclose(problem.h.values, scaling_path.problem.h.values)
        assert problem.c == scaling_path.problem.c

    def test_bump_has_compact_support(self, radial_problem, radial_solution, quadratic_Q):
        path = make_path(radial_problem, radial_solution, quadratic_Q, "bump",
                         {"center": [0.0, 0.0], "radius": 0.3, "amplitude": 0.1})
        # the five-point stencil reaches one node past the bump
        assert path.support_radius == pytest.approx(0.3 + radial_problem.box.spacing)
        assert path.compact_support_holds(0.05)

    def test_decaying_problems_rejected(self, radial_problem, radial_solution):
        decaying = ObstacleProblem(h=radial_problem.h, flavor="decaying", mass=1.0, dimension=3,
                                   radial_profile=lambda r: -0.5 * r ** 2)
        zeros = radial_problem.h.scaled(0.0)
        with pytest.raises(ValidationError):
            PerturbationPath(decaying, radial_solution, zeros, zeros, 0.0, 0.0,
                             lambda t: (radial_problem.h, 0.1))


class TestVelocity:
    """Test cases for V and the normal velocity"""

    def test_radial_scaling_normal_velocity(self, scaling_velocity, radial_problem, radial_solution,
                                            radial_frame, assert_helpers):
        """etadot = -R/2 (along N) when the obstacle is scaled by 1 + t"""
        data = boundary_data(radial_problem, radial_solution, radial_frame)
        expected = -0.5 * RADIUS / data.a
        assert_helpers.assert_relative(scaling_velocity.etadot, expected, 0.05)

    def test_radial_scaling_far_field(self, scaling_velocity):
        """udot is the constant -m/(4 pi) in Omega; the centre does not move"""
        assert scaling_velocity.kappa_dot == pytest.approx(-1.0 / (4.0 * np.pi), rel=0.05)
        assert np.allclose(scaling_velocity.center_dot, 0.0, atol=1e-8)
        assert scaling_velocity.mass_dot == 0.0

    def test_tilt_translates_support(self, radial_problem, radial_solution, quadratic_Q, radial_frame,
                                     assert_helpers):
        """A tilt beta x_1 moves the support by (-beta/2, 0) per unit t"""
        beta = 0.4
        path = make_path(radial_problem, radial_solution, quadratic_Q, "tilt", {"beta": beta})
        velocity = solve_velocity_potential(radial_problem, radial_solution, path.hdot, path.cdot,
                                            frame=radial_frame)
        data = boundary_data(radial_problem, radial_solution, radial_frame)
        expected = -0.5 * beta * data.curve.normals[:, 0] / data.a
        assert_helpers.assert_relative(velocity.etadot, expected, 0.05)
        assert velocity.center_dot[0] == pytest.approx(-0.5 * beta, abs=0.02)

    def test_normal_velocity_matches_frame_solve(self, scaling_velocity, scaling_path, radial_frame):
        """normal_velocity on a frameless solve reproduces the etadot computed with the frame"""
        bare = solve_velocity_potential(scaling_path.problem, scaling_path.solution, scaling_path.hdot,
                                        scaling_path.cdot)
        assert bare.etadot is None
        etadot = normal_velocity(bare, scaling_path.problem, scaling_path.solution, radial_frame)
        assert np.allclose(etadot, scaling_velocity.etadot, atol=1e-12)

    def test_degenerate_laplacian(self, scaling_velocity, radial_problem, radial_solution, radial_frame):
        """|Laplace h| = 2 on Gamma is below rho/2 when rho = 5"""
        strict = replace(radial_problem, rho=5.0)
        with pytest.raises(DegenerateLaplacian):
            normal_velocity(scaling_velocity, strict, radial_solution, radial_frame)

    def test_frozen_path_has_zero_velocity(self, radial_problem, radial_solution, quadratic_Q,
                                           radial_frame):
        path = make_path(radial_problem, radial_solution, quadratic_Q, "frozen")
        velocity = solve_velocity_potential(radial_problem, radial_solution, path.hdot, path.cdot,
                                            frame=radial_frame)
        assert np.max(np.abs(velocity.V.values)) == 0.0
        assert np.max(np.abs(velocity.etadot)) <= 1e-12

    def test_empty_contact_has_no_velocity(self, quadratic_Q, active_set):
        empty = solve_equilibrium_measure(quadratic_Q, 0.0, solver=active_set).solution
        problem = ObstacleProblem(h=quadratic_Q.scaled(-0.5), mass=0.0, solver=active_set)
        with pytest.raises(EmptyBoundary):
            solve_velocity_potential(problem, empty, quadratic_Q.scaled(0.0), 0.0)


@pytest.mark.slow
class TestAcceleration:
    """Test cases for the Theta fixed point"""

    def test_radial_scaling_acceleration(self, scaling_path, scaling_velocity, radial_frame):
        """etaddot = 3R/4 for the scaled quadratic obstacle"""
        parts = assemble_w_parts(scaling_path.problem, scaling_path.solution, scaling_velocity,
                                 scaling_path.hdot, scaling_path.hddot, radial_frame)
        result = solve_theta(scaling_path.problem, scaling_path.solution, scaling_velocity, parts,
                             radial_frame)
        assert result.residual <= 1e-8
        assert result.fixedpoint_iters <= 50
        assert float(np.mean(result.etaddot)) == pytest.approx(0.75 * RADIUS, rel=0.30)
        assert np.all(np.isfinite(result.w_total().values))

    def test_radial_scaling_acceleration_pointwise(self, fine_scaling, assert_helpers):
        """Every vertex sees etaddot = 3R/4 along N within 10%"""
        path, frame, _, acceleration = fine_scaling
        data = boundary_data(path.problem, path.solution, frame)
        assert_helpers.assert_relative(acceleration.etaddot, 0.75 * RADIUS / data.a, 0.10)

    def test_theta_iteration_contracts(self, fine_scaling):
        _, _, _, acceleration = fine_scaling
        assert acceleration.contraction <= 0.5
        assert acceleration.fixedpoint_iters <= 50
        assert acceleration.residual <= 1e-8


@pytest.mark.slow
class TestExpansion:
    """Test cases comparing predictions against direct re-solves"""

    def test_radial_scaling_expansion(self, scaling_path, scaling_velocity, radial_frame):
        report = verify_expansion(scaling_path, [0.08, 0.04, 0.02], radial_frame, scaling_velocity)
        assert [row.t for row in report.rows] == [0.08, 0.04, 0.02]
        assert report.rows[0].error_u > report.rows[-1].error_u
        assert report.rows[0].error_u <= 1e-3
        for row in report.rows:
            # |dR/dt| = R/2 at t = 0
            assert 0.15 <= row.hausdorff_over_t <= 0.25
        assert report.udot_oracle_error is not None
        assert report.udot_oracle_error <= 0.10
        assert report.order_second is None

    def test_first_order_convergence(self, fine_scaling):
        """max|u^t - u^0 - t udot| falls like t^2"""
        path, frame, velocity, _ = fine_scaling
        report = verify_expansion(path, [0.2, 0.1, 0.05], frame, velocity, symmetric_t=None)
        assert report.order_u is not None
        assert report.order_u >= 1.8
        assert report.order_eta is not None
        assert report.udot_oracle_error is None

    def test_second_order_convergence(self, fine_scaling):
        """The remainder after the quadratic Taylor term of eta falls at least like t^2.5"""
        path, frame, velocity, acceleration = fine_scaling
        report = verify_expansion(path, [0.5, 0.25, 0.125], frame, velocity, acceleration,
                                  symmetric_t=None)
        assert report.order_second is not None
        assert report.order_second >= 2.5
        assert all(row.error_second is not None for row in report.rows)

    def test_boundary_moves_linearly_in_t(self, fine_scaling):
        """d_H(Gamma^t, Gamma^0) / t and the swept area over t stay within 10% across t"""
        path, frame, velocity, _ = fine_scaling
        report = verify_expansion(path, [0.08, 0.04, 0.02], frame, velocity, symmetric_t=None)
        assert report.hausdorff_spread <= 0.10
        assert report.area_spread <= 0.10
        # |Omega^0 - Omega^t| / t = pi R^2 / (1 + t)
        for row in report.rows:
            assert row.area_over_t == pytest.approx(np.pi * RADIUS ** 2 / (1.0 + row.t), rel=0.10)

    def test_growing_contact_orders_omega(self, radial_problem, radial_solution, quadratic_Q):
        """Raising the obstacle with Laplace(h^t - h^0) > 0 shrinks Omega"""
        path = make_path(radial_problem, radial_solution, quadratic_Q, "radial-scaling", {"rate": -1.5})
        solved = solve_obstacle(path.problem_at(0.04))
        assert ordering_holds(solved, radial_solution)
        assert solved.contact.area() > radial_solution.contact.area()

    def test_t_list_must_be_positive(self, scaling_path, scaling_velocity, radial_frame):
        with pytest.raises(ValidationError):
            verify_expansion(scaling_path, [0.02, -0.01], radial_frame, scaling_velocity)


class TestMonotoneDecomposition:
    """Test cases for phi_plus, phi_minus and the cutoff"""

    def test_phi_functions_split_identity(self):
        z = np.linspace(-10.0, 10.0, 2001)
        assert np.allclose(phi_plus(z) + phi_minus(z), z, atol=1e-12)
        assert np.all(np.diff(phi_plus(z)) > 0.0)
        assert np.all(phi_plus(z) > 0.0)

    def test_radial_cutoff(self):
        radius = 0.3
        distance = np.linspace(0.0, 1.0, 501)
        zeta = radial_cutoff(distance, radius)
        assert np.all(zeta[distance <= radius] == 1.0)
        assert np.all(zeta[distance >= 2.0 * radius] == 0.0)
        middle = (distance > radius) & (distance < 2.0 * radius)
        assert np.all((zeta[middle] >= 0.0) & (zeta[middle] <= 1.0))
        assert float(radial_cutoff(np.array([1.5 * radius]), radius)[0]) == pytest.approx(0.5)
        assert np.all(np.diff(zeta) <= 0.0)

    def test_bump_decomposition(self, radial_problem, radial_solution, quadratic_Q):
        path = make_path(radial_problem, radial_solution, quadratic_Q, "bump",
                         {"center": [0.0, 0.0], "radius": 0.3, "amplitude": 0.1})
        decomposition = monotone_decomposition(path, 0.02)
        assert decomposition.density_error <= 1e-12
        assert decomposition.cutoff_inside_box
        assert monotone_increase(path, [0.01, 0.02], [0.01]) >= 0.0

    def test_zero_t_rejected(self, scaling_path):
        with pytest.raises(ValidationError):
            monotone_decomposition(scaling_path, 0.0)


class TestFitOrder:
    """Test cases for the convergence-order fit"""

    def test_quadratic_errors(self):
        ts = [0.08, 0.04, 0.02, 0.01]
        assert fit_order(ts, [3.0 * t ** 2 for t in ts]) == pytest.approx(2.0, abs=1e-10)

    def test_fit_stops_at_floor(self):
        ts = [0.08, 0.04, 0.02, 0.01]
        errors = [3.0 * 0.08 ** 2, 3.0 * 0.04 ** 2, 3.0 * 0.04 ** 2, 3.0 * 0.04 ** 2]
        assert fit_order(ts, errors) == pytest.approx(2.0, abs=1e-10)

    def test_single_point_has_no_order(self):
        assert fit_order([0.05], [1e-3]) is None

    def test_flat_errors_still_get_an_order(self):
        """When the first step already sits on the floor every valid point is fitted"""
        ts = [0.08, 0.04, 0.02]
        order = fit_order(ts, [1e-3, 9e-4, 8e-4])
        assert order is not None
        assert 0.0 < order < 0.5

    def test_missing_errors_are_skipped(self):
        ts = [0.08, 0.04, 0.02]
        assert fit_order(ts, [3.0 * 0.08 ** 3, None, 3.0 * 0.02 ** 3]) == pytest.approx(3.0, abs=1e-10)
