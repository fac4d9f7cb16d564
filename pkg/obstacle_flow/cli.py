"""
obstacle_flow Scenario Runner
Solve, frame, velocity, acceleration and verification stages driven by JSON scenarios,
convergence studies over grid spacings, and curve overlays.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator
from pydantic import ValidationError as PydanticValidationError
from scipy import ndimage

from .catalog import BaseObstacle, BasePath, get_catalog
from .exceptions import (
    ObstacleFlowError, ParseError, SpacingsNotDistinct, ValidationError, handle_exception,
)
from .geometry import Curve, Grid2D, ScalarField, TransversalFrame, build_frame
from .logging_config import configure_logging, get_logger
from .obstacle import (
    ObstacleProblem, ObstacleSolution, solve_equilibrium_measure, solve_obstacle,
    verify_complementarity,
)
from .perturb import (
    AccelerationResult, BoundaryData, ExpansionReport, PerturbationPath, VelocityResult,
    assemble_w_parts, boundary_data, fit_order, monotone_decomposition, solve_theta,
    solve_velocity_potential, verify_expansion,
)
from .reporting import (
    Report, StageError, StudyRow, StudyTable, ThresholdCheck, render_svg, write_report, write_table,
)
from .runtime_config import FrameSettings, RuntimeSettings, SolverSettings, ThetaSettings

logger = get_logger("obstacle_flow.cli")

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_FAIL = 2


class GridSpec(BaseModel):
    """Square box centred at center"""
    half_width: float = Field(default=1.25, gt=0.0)
    spacing: float = Field(default=1.0 / 128.0, gt=0.0)
    center: Tuple[float, float] = (0.0, 0.0)

    def build(self) -> Grid2D:
        return Grid2D.centered(self.half_width, self.spacing, self.center)


class CatalogRef(BaseModel):
    id: str
    params: Dict[str, Any] = Field(default_factory=dict)


class Thresholds(BaseModel):
    """Acceptance limits; orders are lower bounds, everything else upper bounds"""
    residual: float = Field(default=1e-8, gt=0.0)
    radius_spacings: float = Field(default=2.0, gt=0.0)
    order_u: float = 1.8
    order_second: float = 2.5
    udot_oracle: float = Field(default=0.10, gt=0.0)
    etadot_oracle: float = Field(default=0.05, gt=0.0)
    etaddot_oracle: float = Field(default=0.10, gt=0.0)
    theta_residual: float = Field(default=1e-8, gt=0.0)
    spread: float = Field(default=0.10, gt=0.0)
    order_radius: float = 0.9


class Scenario(BaseModel):
    """Declarative description of one run"""
    name: str
    flavor: Literal["planar-log", "decaying"] = "planar-log"
    mass: float = Field(default=1.0, ge=0.0)
    dimension: int = Field(default=2, ge=2)
    rho: float = Field(default=1.0, gt=0.0)
    obstacle: CatalogRef
    path: CatalogRef = Field(default_factory=lambda: CatalogRef(id="frozen"))
    grid: GridSpec = Field(default_factory=GridSpec)
    t_list: List[float] = Field(default_factory=lambda: [0.08, 0.04, 0.02, 0.01, 0.005])
    symmetric_t: Optional[float] = Field(default=0.02, gt=0.0)
    acceleration: bool = True
    solver: SolverSettings = Field(default_factory=SolverSettings)
    frame: FrameSettings = Field(default_factory=FrameSettings)
    theta: ThetaSettings = Field(default_factory=ThetaSettings)
    thresholds: Thresholds = Field(default_factory=Thresholds)
    output_dir: Optional[str] = None

    @field_validator('t_list')
    @classmethod
    def validate_t_list(cls, v):
        if not v:
            raise ValueError("t_list must not be empty")
        if any(t <= 0 for t in v):
            raise ValueError("t_list must hold positive values")
        if any(later >= earlier for earlier, later in zip(v, v[1:])):
            raise ValueError("t_list must be strictly decreasing")
        return v


def load_scenario(path: Path) -> Scenario:
    """Parse a scenario file and check its catalog ids"""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ParseError(f"Cannot read scenario {path}: {e}", details={"path": str(path)}) from e
    except json.JSONDecodeError as e:
        raise ParseError(f"Scenario {path} is not valid JSON: {e.msg}",
                         details={"path": str(path), "line": e.lineno}) from e
    try:
        scenario = Scenario.model_validate(raw)
    except PydanticValidationError as e:
        problems = [{"loc": [str(part) for part in err["loc"]], "msg": err["msg"]} for err in e.errors()]
        raise ParseError(f"Scenario {path} is invalid", details={"path": str(path), "errors": problems}) from e

    catalog = get_catalog()
    catalog.obstacle(scenario.obstacle.id, scenario.obstacle.params)
    catalog.path(scenario.path.id, scenario.path.params)
    return scenario


def _relative_error(values: np.ndarray, exact: Optional[np.ndarray]) -> Optional[float]:
    if exact is None:
        return None
    error = float(np.max(np.abs(values - exact)))
    scale = float(np.max(np.abs(exact)))
    return error / scale if scale > 0 else error


def _absolute_error(values: np.ndarray, exact: Optional[np.ndarray]) -> Optional[float]:
    if exact is None:
        return None
    return float(np.max(np.abs(values - exact)))


class ScenarioRun:
    """State carried between the pipeline stages of one scenario"""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        catalog = get_catalog()
        self.obstacle: BaseObstacle = catalog.obstacle(scenario.obstacle.id, scenario.obstacle.params)
        self.path_entry: BasePath = catalog.path(scenario.path.id, scenario.path.params)
        self.logger = get_logger("obstacle_flow.cli", scenario.name)

        self.grid: Optional[Grid2D] = None
        self.Q: Optional[ScalarField] = None
        self.problem: Optional[ObstacleProblem] = None
        self.solution: Optional[ObstacleSolution] = None
        self.frame: Optional[TransversalFrame] = None
        self.data: Optional[BoundaryData] = None
        self.path: Optional[PerturbationPath] = None
        self.velocity: Optional[VelocityResult] = None
        self.acceleration: Optional[AccelerationResult] = None
        self.expansion: Optional[ExpansionReport] = None
        self.oracle: Dict[str, Optional[np.ndarray]] = {"etadot": None, "etaddot": None}
        self.oracle_errors: Dict[str, Optional[float]] = {}
        self.diagnostics: Dict[str, Any] = {}
        self.checks: List[ThresholdCheck] = []

    @property
    def perturbs(self) -> bool:
        return self.scenario.flavor == "planar-log"

    def stages(self) -> List[Callable[[], None]]:
        stages = [self.solve]
        if self.perturbs:
            stages += [self.build_frame, self.solve_velocity]
            if self.scenario.acceleration:
                stages.append(self.solve_acceleration)
            stages.append(self.verify)
        return stages

    def _problem(self, c: float) -> ObstacleProblem:
        s = self.scenario
        h = ScalarField(self.grid, c - 0.5 * self.Q.values)
        if s.flavor == "decaying":
            radial_Q = self.obstacle.radial_field()
            return ObstacleProblem(h=h, flavor="decaying", mass=s.mass, rho=s.rho, solver=s.solver,
                                   dimension=s.dimension, radial_profile=lambda r: c - 0.5 * radial_Q(r),
                                   name=s.name)
        if s.mass == 0.0:
            return ObstacleProblem(h=h, mass=0.0, rho=s.rho, solver=s.solver, name=s.name)
        return ObstacleProblem(h=h, c=c, rho=s.rho, solver=s.solver, name=s.name)

    @handle_exception(logger, "run_scenario", stage="solve")
    def solve(self) -> None:
        s = self.scenario
        self.grid = s.grid.build()
        self.Q = self.obstacle.external_field(self.grid)
        measure = solve_equilibrium_measure(
            self.Q, s.mass, flavor=s.flavor, solver=s.solver, rho=s.rho, dimension=s.dimension,
            radial_Q=self.obstacle.radial_field(), arc_spacing=self.grid.spacing,
        )
        self.solution = measure.solution
        self.problem = self._problem(measure.c)

        complementarity = verify_complementarity(self.solution, self.problem)
        core = ndimage.binary_erosion(self.solution.contact.flags, iterations=2)
        self.diagnostics["solution"] = self.solution.summary()
        self.diagnostics["complementarity"] = complementarity.model_dump()
        self.diagnostics["mu_on_contact_core"] = (
            {"min": float(np.min(measure.mu.values[core])), "max": float(np.max(measure.mu.values[core]))}
            if np.any(core) else None
        )
        self.checks.append(ThresholdCheck.evaluate("complementarity_residual", self.solution.residual,
                                                   s.thresholds.residual))

        exact = self.obstacle.contact_radius(s.mass) if self.perturbs else None
        if exact is not None and self.solution.gamma is not None:
            offsets = self.solution.gamma.vertices - np.asarray(self.solution.center)
            error = float(np.max(np.abs(np.linalg.norm(offsets, axis=1) - exact)))
            self.oracle_errors["radius"] = error
            self.diagnostics["radius"] = {"exact": exact, "error": error}
            self.checks.append(ThresholdCheck.evaluate(
                "radius_error", error, s.thresholds.radius_spacings * self.grid.spacing))

    @handle_exception(logger, "run_scenario", stage="frame")
    def build_frame(self) -> None:
        settings = self.scenario.frame
        self.frame = build_frame(self.solution.require_gamma(), smoothing=settings.smoothing,
                                 epsilon=settings.epsilon, offsets=settings.offsets,
                                 collar_fraction=settings.collar_fraction)
        self.data = boundary_data(self.problem, self.solution, self.frame)
        self.diagnostics["frame"] = {
            "collar_halfwidth": self.frame.collar_halfwidth,
            "min_alignment": self.frame.min_alignment,
            "vertices": len(self.frame.reference),
        }

    @handle_exception(logger, "run_scenario", stage="velocity")
    def solve_velocity(self) -> None:
        s = self.scenario
        fields = self.path_entry.build(self.problem, self.Q)
        self.path = PerturbationPath(
            problem=self.problem, solution=self.solution, hdot=fields.hdot, hddot=fields.hddot,
            cdot=fields.cdot, cddot=fields.cddot, sampler=fields.sampler,
            support_radius=fields.support_radius, symmetric=fields.symmetric, name=self.path_entry.name,
        )
        self.velocity = solve_velocity_potential(self.problem, self.solution, fields.hdot, fields.cdot,
                                                 self.frame)
        self.oracle = self.path_entry.oracle(self.solution, self.data.curve.normals, self.frame.N)
        etadot = self.velocity.etadot
        relative = _relative_error(etadot, self.oracle["etadot"])
        self.oracle_errors["velocity"] = _absolute_error(etadot, self.oracle["etadot"])
        self.diagnostics["velocity"] = {
            "kappa_dot": self.velocity.kappa_dot,
            "center_dot": list(self.velocity.center_dot),
            "mass_dot": self.velocity.mass_dot,
            "etadot_mean": float(np.mean(etadot)),
            "etadot_max_abs": float(np.max(np.abs(etadot))),
            "etadot_oracle_error": relative,
        }
        if relative is not None:
            self.checks.append(ThresholdCheck.evaluate("etadot_oracle", relative, s.thresholds.etadot_oracle))

    @handle_exception(logger, "run_scenario", stage="acceleration")
    def solve_acceleration(self) -> None:
        s = self.scenario
        parts = assemble_w_parts(self.problem, self.solution, self.velocity, self.path.hdot,
                                 self.path.hddot, self.frame, self.data)
        self.acceleration = solve_theta(self.problem, self.solution, self.velocity, parts, self.frame,
                                        cddot=self.path.cddot, settings=s.theta)
        etaddot = self.acceleration.etaddot
        relative = _relative_error(etaddot, self.oracle["etaddot"])
        self.oracle_errors["acceleration"] = _absolute_error(etaddot, self.oracle["etaddot"])
        self.diagnostics["acceleration"] = {
            "fixedpoint_iters": self.acceleration.fixedpoint_iters,
            "residual": self.acceleration.residual,
            "contraction": self.acceleration.contraction,
            "farfield_const": self.acceleration.farfield_const,
            "etaddot_mean": float(np.mean(etaddot)),
            "etaddot_oracle_error": relative,
        }
        self.checks.append(ThresholdCheck.evaluate("theta_residual", self.acceleration.residual,
                                                   s.thresholds.theta_residual))
        if relative is not None:
            self.checks.append(ThresholdCheck.evaluate("etaddot_oracle", relative, s.thresholds.etaddot_oracle))

    @handle_exception(logger, "run_scenario", stage="verify")
    def verify(self) -> None:
        s = self.scenario
        limits = s.thresholds
        self.expansion = verify_expansion(self.path, s.t_list, self.frame, self.velocity, self.acceleration,
                                          s.symmetric_t)
        self.checks.append(ThresholdCheck.evaluate("order_u", self.expansion.order_u, limits.order_u, ">="))
        if self.acceleration is not None:
            self.checks.append(ThresholdCheck.evaluate("order_second", self.expansion.order_second,
                                                       limits.order_second, ">="))
        if self.expansion.udot_oracle_error is not None:
            self.checks.append(ThresholdCheck.evaluate("udot_oracle", self.expansion.udot_oracle_error,
                                                       limits.udot_oracle))
        if len(s.t_list) > 1:
            self.checks.append(ThresholdCheck.evaluate("hausdorff_spread", self.expansion.hausdorff_spread,
                                                       limits.spread))
            self.checks.append(ThresholdCheck.evaluate("area_spread", self.expansion.area_spread, limits.spread))

        decomposition = monotone_decomposition(self.path, s.t_list[0])
        self.diagnostics["path"] = {
            "compact_support": self.path.compact_support_holds(s.t_list[0]),
            "consistency_error": self.path.consistency_error(),
            "decomposition_density_error": decomposition.density_error,
            "decomposition_cutoff_inside_box": decomposition.cutoff_inside_box,
        }

    @handle_exception(logger, "run_scenario", stage="render")
    def render(self, directory: Path) -> None:
        gamma0 = self.solution.require_gamma()
        directory.mkdir(parents=True, exist_ok=True)
        curves = [gamma0]
        labels = ["Gamma^0"]
        if self.path is not None and self.velocity is not None:
            t = self.scenario.t_list[0]
            gamma_t = solve_obstacle(self.path.problem_at(t), gamma0.arc_spacing).require_gamma()
            predicted = Curve.from_vertices(self.data.curve.vertices
                                            + t * self.velocity.etadot[:, None] * self.frame.N)
            curves += [gamma_t, predicted]
            labels += [f"Gamma^t (t={t:g})", f"Gamma^0 + t etadot N (t={t:g})"]
            gamma_t.to_csv(directory / "gamma_t.csv")
        gamma0.to_csv(directory / "gamma0.csv")
        render_svg(curves, labels, directory / "overlay.svg")

    def report(self, errors: Sequence[StageError]) -> Report:
        return Report(
            scenario=self.scenario.model_dump(mode="json"),
            diagnostics=self.diagnostics,
            expansion=self.expansion,
            checks=self.checks,
            errors=list(errors),
        )

    @handle_exception(logger, "run_scenario", stage="report")
    def write_outputs(self, report: Report, directory: Path) -> None:
        write_report(report, directory)
        if self.expansion is not None:
            write_table(directory / "errors.csv", [row.model_dump() for row in self.expansion.rows],
                        fields=["t", "error_u", "error_eta", "error_second", "hausdorff_over_t",
                                "area_over_t", "ordering"])
        if self.velocity is not None and self.data is not None:
            etaddot = self.acceleration.etaddot if self.acceleration is not None else None
            rows = []
            for k, point in enumerate(self.data.curve.vertices):
                rows.append({
                    "vertex": k,
                    "x": point[0],
                    "y": point[1],
                    "eta0": self.data.eta0[k],
                    "etadot": self.velocity.etadot[k],
                    "etadot_oracle": None if self.oracle["etadot"] is None else self.oracle["etadot"][k],
                    "etaddot": None if etaddot is None else etaddot[k],
                    "etaddot_oracle": None if self.oracle["etaddot"] is None else self.oracle["etaddot"][k],
                })
            write_table(directory / "etadot.csv", rows)


def output_directory(scenario: Scenario, output_root: Optional[Path] = None) -> Path:
    if scenario.output_dir:
        return Path(scenario.output_dir)
    root = Path(output_root) if output_root is not None else RuntimeSettings.from_env().output_root
    return root / scenario.name


def execute(scenario: Scenario, directory: Path) -> Report:
    """Run every stage, record the first failure with its stage, render and write the outputs"""
    run = ScenarioRun(scenario)
    errors: List[StageError] = []
    run.logger.info_operation("run_scenario", "Scenario started",
                              extra={"obstacle": scenario.obstacle.id, "path": scenario.path.id})
    for stage in run.stages():
        try:
            stage()
        except ObstacleFlowError as e:
            errors.append(StageError.from_exception(e, e.stage or "unknown"))
            break

    if run.solution is not None and run.solution.gamma is not None:
        try:
            run.render(directory)
        except ObstacleFlowError as e:
            errors.append(StageError.from_exception(e, "render"))

    report = run.report(errors)
    run.write_outputs(report, directory)
    run.logger.info_operation("run_scenario", "Scenario finished",
                              extra={"status": report.status, "directory": str(directory)})
    return report


def run_scenario(path: Path, output_root: Optional[Path] = None) -> Report:
    """Parse the scenario file, run the pipeline and write the report"""
    scenario = load_scenario(path)
    return execute(scenario, output_directory(scenario, output_root))


def _study_order(rows: Sequence[StudyRow], attribute: str) -> Optional[float]:
    pairs = [(row.spacing, getattr(row, attribute)) for row in rows if getattr(row, attribute) is not None]
    if len(pairs) < 2:
        return None
    return fit_order([p for p, _ in pairs], [e for _, e in pairs])


def _check_spacings(spacings: Sequence[float]) -> List[float]:
    spacings = [float(s) for s in spacings]
    if not spacings:
        raise ValidationError("A convergence study needs spacings", field="spacings", value=spacings)
    if len(set(spacings)) != len(spacings):
        raise SpacingsNotDistinct("Spacings must be distinct", details={"spacings": spacings})
    if len(spacings) < 3:
        raise ValidationError("A convergence study needs at least three spacings",
                              field="spacings", value=spacings)
    if any(s <= 0 for s in spacings):
        raise ValidationError("Spacings must be positive", field="spacings", value=spacings)
    ordered = sorted(spacings, reverse=True)
    ratios = np.array(ordered[:-1]) / np.array(ordered[1:])
    if np.ptp(ratios) > 1e-6 * np.max(ratios):
        raise ValidationError("Spacings must form a geometric sequence", field="spacings", value=spacings)
    return ordered


def convergence_study(scenario: Scenario, spacings: Sequence[float],
                      output_root: Optional[Path] = None) -> Report:
    """Rerun the solve, velocity and acceleration stages per spacing and fit orders against the oracles"""
    ordered = _check_spacings(spacings)
    rows: List[StudyRow] = []
    errors: List[StageError] = []
    for spacing in ordered:
        variant = scenario.model_copy(update={"grid": scenario.grid.model_copy(update={"spacing": spacing})})
        run = ScenarioRun(variant)
        stages = [stage for stage in run.stages() if stage != run.verify]
        try:
            for stage in stages:
                stage()
        except ObstacleFlowError as e:
            errors.append(StageError.from_exception(e, e.stage or "study"))
        rows.append(StudyRow(
            spacing=spacing,
            radius_error=run.oracle_errors.get("radius"),
            velocity_error=run.oracle_errors.get("velocity"),
            acceleration_error=run.oracle_errors.get("acceleration"),
        ))
        logger.info_operation("convergence_study", "Spacing finished", extra=rows[-1].model_dump())

    table = StudyTable(
        rows=rows,
        order_radius=_study_order(rows, "radius_error"),
        order_velocity=_study_order(rows, "velocity_error"),
        order_acceleration=_study_order(rows, "acceleration_error"),
    )
    checks = [ThresholdCheck.evaluate("order_radius", table.order_radius,
                                      scenario.thresholds.order_radius, ">=")]
    echo = scenario.model_dump(mode="json")
    echo["spacings"] = ordered
    report = Report(scenario=echo, study=table, checks=checks, errors=errors)

    directory = output_directory(scenario, output_root) / "study"
    write_report(report, directory)
    write_table(directory / "study.csv", [row.model_dump() for row in rows],
                fields=["spacing", "radius_error", "velocity_error", "acceleration_error"])
    return report


def exit_code(report: Report) -> int:
    if report.errors:
        return EXIT_ERROR
    return EXIT_PASS if report.passed else EXIT_FAIL


def _read_curve(path: Path) -> Curve:
    try:
        return Curve.from_csv(path)
    except (OSError, KeyError, ValueError) as e:
        raise ParseError(f"Cannot read curve file {path}: {e}", details={"path": str(path)}) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obstacle-flow",
        description="Free-boundary response of obstacle problems to obstacle perturbations",
    )
    parser.add_argument("--output-root", default=None,
                        help="Output root (defaults to OBSTACLE_FLOW_OUTPUT_ROOT or ./output)")
    parser.add_argument("--log-level", default=None, help="Overrides OBSTACLE_FLOW_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Run a scenario and write its report")
    solve.add_argument("scenario", type=Path)

    study = commands.add_parser("study", help="Convergence study over grid spacings")
    study.add_argument("scenario", type=Path)
    study.add_argument("--spacings", type=float, nargs="+", required=True)

    render = commands.add_parser("render", help="Overlay curve CSV files in one SVG")
    render.add_argument("curves", type=Path, nargs="+")
    render.add_argument("--labels", nargs="+", default=None)
    render.add_argument("--out", type=Path, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = RuntimeSettings.from_env(args.output_root)
        configure_logging(args.log_level or settings.log_level, settings.log_format)
        if args.command == "solve":
            report = run_scenario(args.scenario, settings.output_root)
        elif args.command == "study":
            report = convergence_study(load_scenario(args.scenario), args.spacings, settings.output_root)
        else:
            curves = [_read_curve(path) for path in args.curves]
            labels = args.labels or [path.stem for path in args.curves]
            render_svg(curves, labels, args.out or settings.output_root / "overlay.svg")
            return EXIT_PASS
    except ObstacleFlowError as e:
        logger.error_operation("main", f"{args.command} failed: {e.message}",
                               extra={"error_details": e.to_dict()})
        print(json.dumps({"status": "error", "error": e.to_dict()}, sort_keys=True, default=str),
              file=sys.stderr)
        return EXIT_ERROR

    print(json.dumps({"status": report.status, "checks": len(report.checks),
                      "errors": len(report.errors)}, sort_keys=True))
    return exit_code(report)
