"""
Tests for scenarios, the catalog, reports and the command line runner
"""

import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from obstacle_flow.catalog import get_catalog
from obstacle_flow.cli import (
    EXIT_ERROR, EXIT_FAIL, EXIT_PASS, Scenario, _check_spacings, convergence_study, exit_code,
    load_scenario, main, output_directory, run_scenario,
)
from obstacle_flow.exceptions import ObstacleFlowError, ParseError, SpacingsNotDistinct, ValidationError
from obstacle_flow.geometry import Curve, Grid2D, ScalarField, save_field
from obstacle_flow.reporting import (
    Report, StageError, ThresholdCheck, render_svg, report_json, write_report, write_table,
)

from .conftest import RADIUS

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
SVG = "{http://www.w3.org/2000/svg}"


def write_scenario(directory: Path, **overrides) -> Path:
    """Small radial scenario on a 1/32 grid"""
    payload = {
        "name": "radial-small",
        "obstacle": {"id": "radial-quadratic", "params": {"a": 1.0}},
        "path": {"id": "frozen"},
        "grid": {"half_width": 1.25, "spacing": 0.03125},
        "t_list": [0.02, 0.01],
        "symmetric_t": 0.02,
        "solver": {"method": "active_set"},
        "output_dir": str(directory / "out"),
    }
    payload.update(overrides)
    path = directory / "scenario.json"
    path.write_text(json.dumps(payload))
    return path


class TestCatalog:
    """Test cases for obstacle and path lookup"""

    def test_unknown_ids_raise_parse_error(self):
        catalog = get_catalog()
        with pytest.raises(ParseError) as excinfo:
            catalog.obstacle("no-such-obstacle")
        assert "radial-quadratic" in excinfo.value.details["available"]
        with pytest.raises(ParseError):
            catalog.path("no-such-path")

    def test_list_available(self):
        available = get_catalog().list_available()
        assert available["obstacles"] == ["bump-perturbed", "grid-file", "radial-quadratic",
                                          "tilted-quadratic"]
        assert available["paths"] == ["bump", "frozen", "radial-scaling", "tilt"]

    def test_radial_quadratic_contact_radius(self):
        obstacle = get_catalog().obstacle("radial-quadratic", {"a": 1.0})
        assert obstacle.contact_radius(1.0) == pytest.approx(RADIUS)
        assert obstacle.radial_field()(np.array([2.0])) == pytest.approx(4.0)

    def test_radial_scaling_oracle_uses_exact_radius(self, radial_problem, radial_solution, quadratic_Q):
        """R_0 = sqrt(m / (2 pi a)) whatever the discrete free boundary looks like"""
        entry = get_catalog().path("radial-scaling", {"rate": 2.0})
        entry.build(radial_problem, quadratic_Q.scaled(3.0))
        normals = radial_solution.require_gamma().normals
        oracle = entry.oracle(radial_solution, normals, normals)
        radius = np.sqrt(1.0 / (2.0 * np.pi * 3.0))
        assert np.allclose(oracle["etadot"], -radius, rtol=1e-10)
        assert np.allclose(oracle["etaddot"], 3.0 * radius, rtol=1e-10)

    def test_grid_file_obstacle(self, temp_dir, grid, quadratic_Q):
        path = temp_dir / "q.json"
        save_field(quadratic_Q, path)
        loaded = get_catalog().obstacle("grid-file", {"path": str(path)}).external_field(grid)
        assert np.array_equal(loaded.values, quadratic_Q.values)

    def test_grid_file_errors(self, temp_dir, grid):
        with pytest.raises(ParseError):
            get_catalog().obstacle("grid-file").external_field(grid)
        other = Grid2D.centered(1.0, 1.0 / 32.0)
        path = temp_dir / "other.json"
        save_field(ScalarField.zeros(other), path)
        with pytest.raises(ParseError):
            get_catalog().obstacle("grid-file", {"path": str(path)}).external_field(grid)


class TestScenario:
    """Test cases for scenario parsing"""

    def test_bundled_scenarios_load(self):
        for name in ("radial_quadratic.json", "tilted_quadratic.json"):
            scenario = load_scenario(SCENARIOS / name)
            assert scenario.grid.spacing == pytest.approx(1.0 / 128.0)
            assert scenario.t_list == sorted(scenario.t_list, reverse=True)

    @pytest.mark.parametrize("t_list", [[], [0.02, -0.01], [0.01, 0.02], [0.02, 0.02]])
    def test_invalid_t_list(self, t_list):
        with pytest.raises(PydanticValidationError):
            Scenario(name="x", obstacle={"id": "radial-quadratic"}, t_list=t_list)

    def test_invalid_t_list_in_file_is_parse_error(self, temp_dir):
        with pytest.raises(ParseError):
            load_scenario(write_scenario(temp_dir, t_list=[0.01, 0.02]))

    def test_unknown_obstacle_in_file(self, temp_dir):
        with pytest.raises(ParseError):
            load_scenario(write_scenario(temp_dir, obstacle={"id": "mystery"}))

    def test_malformed_and_missing_files(self, temp_dir):
        broken = temp_dir / "broken.json"
        broken.write_text("{not json")
        with pytest.raises(ParseError):
            load_scenario(broken)
        with pytest.raises(ParseError):
            load_scenario(temp_dir / "missing.json")

    def test_output_directory(self, temp_dir):
        scenario = Scenario(name="demo", obstacle={"id": "radial-quadratic"})
        assert output_directory(scenario, temp_dir) == temp_dir / "demo"
        explicit = scenario.model_copy(update={"output_dir": str(temp_dir / "here")})
        assert output_directory(explicit, temp_dir) == temp_dir / "here"


class TestSpacings:
    """Test cases for convergence-study spacing validation"""

    def test_geometric_spacings_are_sorted(self):
        assert _check_spacings([1 / 128, 1 / 32, 1 / 64]) == [1 / 32, 1 / 64, 1 / 128]

    def test_empty_list(self):
        with pytest.raises(ValidationError):
            _check_spacings([])

    def test_duplicates(self):
        with pytest.raises(SpacingsNotDistinct):
            _check_spacings([1 / 32, 1 / 32, 1 / 64])

    def test_too_few(self):
        with pytest.raises(ValidationError):
            _check_spacings([1 / 32, 1 / 64])

    def test_not_geometric(self):
        with pytest.raises(ValidationError):
            _check_spacings([0.1, 0.05, 0.02])


class TestReporting:
    """Test cases for checks, reports and tables"""

    def test_threshold_checks(self):
        assert ThresholdCheck.evaluate("r", 1e-9, 1e-8).passed is True
        assert ThresholdCheck.evaluate("r", 1e-7, 1e-8).passed is False
        assert ThresholdCheck.evaluate("order", 2.1, 1.8, ">=").passed is True
        assert ThresholdCheck.evaluate("order", None, 1.8, ">=").passed is None
        assert ThresholdCheck.evaluate("order", float("nan"), 1.8, ">=").value is None

    def test_status_and_exit_codes(self):
        """Errors win over failing checks, which win over passing ones"""
        passing = Report(scenario={}, checks=[ThresholdCheck.evaluate("a", 0.0, 1.0),
                                              ThresholdCheck.evaluate("b", None, 1.0)])
        failing = Report(scenario={}, checks=[ThresholdCheck.evaluate("a", 2.0, 1.0)])
        broken = Report(scenario={}, errors=[StageError(stage="solve", error_type="X",
                                                        error_code="X", message="boom")])
        assert (passing.status, exit_code(passing)) == ("pass", EXIT_PASS)
        assert (failing.status, exit_code(failing)) == ("fail", EXIT_FAIL)
        assert (broken.status, exit_code(broken)) == ("error", EXIT_ERROR)

    def test_stage_error_from_exception(self):
        error = ObstacleFlowError("bad", details={"stage": "velocity"})
        recorded = StageError.from_exception(error, "unknown")
        assert recorded.stage == "velocity"
        assert recorded.error_type == "ObstacleFlowError"
        unexpected = StageError.from_exception(RuntimeError("oops"), "solve")
        assert unexpected.error_code == "UNEXPECTED_ERROR"

    def test_report_json_is_deterministic(self):
        report = Report(scenario={"name": "x", "b": 1, "a": 2},
                        diagnostics={"value": np.float64(0.5), "bad": float("inf")})
        text = report_json(report)
        assert text == report_json(report)
        payload = json.loads(text)
        assert payload["status"] == "pass"
        assert payload["diagnostics"]["bad"] is None

    def test_write_report_keeps_timestamps_out_of_report(self, temp_dir):
        path = write_report(Report(scenario={"name": "x"}), temp_dir / "r")
        assert "generated_at" not in path.read_text()
        metadata = json.loads((temp_dir / "r" / "metadata.json").read_text())
        assert metadata["status"] == "pass"
        assert "generated_at" in metadata

    def test_write_table_leaves_missing_values_empty(self, temp_dir):
        path = write_table(temp_dir / "t.csv", [{"t": 0.1, "error": None}, {"t": 0.05, "error": 1e-3}])
        lines = path.read_text().splitlines()
        assert lines[0] == "t,error"
        assert lines[1] == "0.1,"


class TestRenderSvg:
    """Test cases for curve overlays"""

    def test_one_path_per_curve_with_distinct_strokes(self, temp_dir):
        curves = [Curve.circle((0.0, 0.0), 0.4, 64), Curve.ellipse((0.0, 0.0), (0.5, 0.3), 64)]
        path = render_svg(curves, ["circle", "ellipse"], temp_dir / "overlay.svg")
        root = ET.parse(path).getroot()
        paths = root.findall(f".//{SVG}path")
        assert len(paths) == 2
        assert paths[0].get("stroke") != paths[1].get("stroke")
        texts = [node.text for node in root.findall(f".//{SVG}text")]
        assert texts == ["circle", "ellipse"]

    def test_empty_and_mismatched_inputs(self, temp_dir):
        with pytest.raises(ValidationError):
            render_svg([], [], temp_dir / "empty.svg")
        with pytest.raises(ValidationError):
            render_svg([Curve.circle((0.0, 0.0), 0.4, 64)], ["a", "b"], temp_dir / "bad.svg")


class TestMain:
    """Test cases for the command line entry point"""

    def test_render_command(self, temp_dir):
        first = temp_dir / "a.csv"
        second = temp_dir / "b.csv"
        Curve.circle((0.0, 0.0), 0.4, 64).to_csv(first)
        Curve.circle((0.0, 0.0), 0.5, 64).to_csv(second)
        out = temp_dir / "overlay.svg"
        assert main(["render", str(first), str(second), "--out", str(out)]) == EXIT_PASS
        assert out.exists()

    def test_render_missing_curve(self, temp_dir):
        assert main(["render", str(temp_dir / "nope.csv"), "--out", str(temp_dir / "o.svg")]) == EXIT_ERROR

    def test_missing_scenario(self, temp_dir, capsys):
        assert main(["solve", str(temp_dir / "missing.json")]) == EXIT_ERROR
        assert '"status": "error"' in capsys.readouterr().err

    def test_study_rejects_duplicate_spacings(self, temp_dir):
        scenario = write_scenario(temp_dir)
        code = main(["study", str(scenario), "--spacings", "0.0625", "0.0625", "0.03125"])
        assert code == EXIT_ERROR


@pytest.mark.integration
class TestScenarioRun:
    """End-to-end runs on a coarse grid"""

    def test_frozen_scenario_passes(self, temp_dir, capsys):
        scenario = write_scenario(temp_dir)
        assert main(["--output-root", str(temp_dir), "solve", str(scenario)]) == EXIT_PASS
        assert '"status": "pass"' in capsys.readouterr().out
        out = temp_dir / "out"
        for name in ("report.json", "metadata.json", "errors.csv", "etadot.csv", "gamma0.csv",
                     "gamma_t.csv", "overlay.svg"):
            assert (out / name).exists(), name
        report = json.loads((out / "report.json").read_text())
        assert report["errors"] == []
        names = {check["name"] for check in report["checks"]}
        assert {"complementarity_residual", "radius_error", "etadot_oracle"} <= names

    def test_tight_threshold_fails(self, temp_dir):
        scenario = write_scenario(temp_dir, acceleration=False, t_list=[0.02],
                                  thresholds={"radius_spacings": 1e-9})
        report = run_scenario(scenario)
        assert report.status == "fail"
        assert exit_code(report) == EXIT_FAIL
        radius = next(check for check in report.checks if check.name == "radius_error")
        assert radius.passed is False

    def test_single_t_leaves_orders_empty(self, temp_dir):
        report = run_scenario(write_scenario(temp_dir, acceleration=False, t_list=[0.02]))
        assert report.expansion is not None
        assert report.expansion.order_u is None
        assert len(report.expansion.rows) == 1

    def test_stage_failure_is_reported(self, temp_dir):
        """A box too small for the contact set fails in the solve stage"""
        scenario = write_scenario(temp_dir, grid={"half_width": 0.5, "spacing": 0.03125})
        report = run_scenario(scenario)
        assert report.status == "error"
        assert report.errors[0].stage == "solve"
        assert report.errors[0].error_type == "BoxTooSmall"
        assert (temp_dir / "out" / "report.json").exists()

    def test_convergence_study_writes_table(self, temp_dir):
        scenario = load_scenario(write_scenario(temp_dir, acceleration=False))
        report = convergence_study(scenario, [1 / 32, 1 / 64, 1 / 16])
        assert [row.spacing for row in report.study.rows] == [1 / 16, 1 / 32, 1 / 64]
        assert report.scenario["spacings"] == [1 / 16, 1 / 32, 1 / 64]
        study = temp_dir / "out" / "study"
        assert (study / "report.json").exists()
        assert (study / "study.csv").read_text().splitlines()[0] == (
            "spacing,radius_error,velocity_error,acceleration_error")
