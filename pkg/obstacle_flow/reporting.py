"""
Reports, tables and curve overlays written by the scenario runner
"""

import csv
import json
import math
import xml.etree.ElementTree as ET
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .exceptions import ObstacleFlowError, OutputError, ValidationError
from .geometry import Curve
from .logging_config import get_logger
from .perturb import ExpansionReport

logger = get_logger("obstacle_flow.reporting")

STROKES = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]
DASHES = ["none", "6 3", "2 2", "8 3 2 3"]


class StageError(BaseModel):
    """A failure recorded against the pipeline stage that produced it"""
    stage: str
    error_type: str
    error_code: str
    message: str
    details: Dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def from_exception(cls, exc: Exception, stage: str) -> "StageError":
        if isinstance(exc, ObstacleFlowError):
            return cls(stage=exc.stage or stage, error_type=type(exc).__name__,
                       error_code=exc.error_code, message=exc.message,
                       details=_jsonable(exc.details))
        return cls(stage=stage, error_type=type(exc).__name__, error_code="UNEXPECTED_ERROR",
                   message=str(exc))


class ThresholdCheck(BaseModel):
    """value compared against limit; passed is None when the value could not be computed"""
    name: str
    value: Optional[float] = None
    limit: float
    comparison: str = "<="
    passed: Optional[bool] = None

    @classmethod
    def evaluate(cls, name: str, value: Optional[float], limit: float,
                 comparison: str = "<=") -> "ThresholdCheck":
        if value is None or not math.isfinite(value):
            return cls(name=name, value=None, limit=limit, comparison=comparison)
        ok = value <= limit if comparison == "<=" else value >= limit
        return cls(name=name, value=value, limit=limit, comparison=comparison, passed=bool(ok))


class StudyRow(BaseModel):
    spacing: float
    radius_error: Optional[float] = None
    velocity_error: Optional[float] = None
    acceleration_error: Optional[float] = None


class StudyTable(BaseModel):
    rows: List[StudyRow]
    order_radius: Optional[float] = None
    order_velocity: Optional[float] = None
    order_acceleration: Optional[float] = None


class Report(BaseModel):
    """Everything a scenario run produced, without wall-clock data"""
    scenario: Dict[str, Any]
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    expansion: Optional[ExpansionReport] = None
    study: Optional[StudyTable] = None
    checks: List[ThresholdCheck] = Field(default_factory=list)
    errors: List[StageError] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        """No errors and no computed check failing"""
        return not self.errors and all(check.passed is not False for check in self.checks)

    @property
    def status(self) -> str:
        if self.errors:
            return "error"
        return "pass" if self.passed else "fail"


def _jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become None"""
    if isinstance(value, BaseModel):
        return _jsonable(value.model_dump(mode="python"))
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def report_json(report: Report) -> str:
    """Deterministic JSON text of a report"""
    payload = _jsonable(report)
    payload["status"] = report.status
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: Report, directory: Path) -> Path:
    """report.json plus metadata.json (timestamps live only in the latter)"""
    from . import __version__

    try:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "report.json"
        path.write_text(report_json(report), encoding="utf-8")
        metadata = {
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "version": __version__,
            "status": report.status,
        }
        (directory / "metadata.json").write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    except OSError as e:
        raise OutputError(f"Could not write report to {directory}: {e}",
                          details={"directory": str(directory)}) from e
    logger.info_operation("write_report", "Report written",
                          extra={"path": str(path), "status": report.status})
    return path


def write_table(path: Path, rows: Sequence[Mapping[str, Any]], fields: Optional[List[str]] = None) -> Path:
    """CSV table with a header row; missing values are left empty"""
    rows = [_jsonable(row) for row in rows]
    fields = fields or (list(rows[0].keys()) if rows else [])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            for row in rows:
                writer.writerow({key: ("" if row.get(key) is None else row.get(key)) for key in fields})
    except OSError as e:
        raise OutputError(f"Could not write table {path}: {e}", details={"path": str(path)}) from e
    return path


def _path_data(vertices: np.ndarray, to_svg) -> str:
    points = [to_svg(p) for p in vertices]
    head = f"M {points[0][0]:.4f} {points[0][1]:.4f}"
    body = " ".join(f"L {x:.4f} {y:.4f}" for x, y in points[1:])
    return f"{head} {body} Z"


def render_svg(curves: Sequence[Curve], labels: Sequence[str], path: Path,
               size: int = 600) -> Path:
    """One closed path per curve on an equal-aspect canvas with a legend"""
    if not curves:
        raise ValidationError("render_svg needs at least one curve", field="curves")
    if len(labels) != len(curves):
        raise ValidationError("One label per curve is required", field="labels", value=len(labels))

    stacked = np.vstack([curve.vertices for curve in curves])
    low = stacked.min(axis=0)
    high = stacked.max(axis=0)
    span = float(max(np.max(high - low), 1e-12))
    margin = 0.05 * span
    width = span + 2.0 * margin
    center = 0.5 * (low + high)
    x0 = center[0] - 0.5 * width
    y_top = center[1] + 0.5 * width
    scale = size / width

    def to_svg(point: np.ndarray):
        # y axis flipped to SVG's downward convention
        return (float((point[0] - x0) * scale), float((y_top - point[1]) * scale))

    legend_height = 18 * len(curves) + 8
    root = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "width": str(size),
        "height": str(size + legend_height),
        "viewBox": f"0 0 {size} {size + legend_height}",
    })
    canvas = ET.SubElement(root, "g", {"id": "curves"})
    legend = ET.SubElement(root, "g", {"id": "legend", "font-family": "sans-serif", "font-size": "12"})
    for index, (curve, label) in enumerate(zip(curves, labels)):
        stroke = STROKES[index % len(STROKES)]
        dash = DASHES[(index // len(STROKES)) % len(DASHES)]
        attributes = {"d": _path_data(curve.vertices, to_svg), "fill": "none", "stroke": stroke,
                      "stroke-width": "1.5"}
        if dash != "none":
            attributes["stroke-dasharray"] = dash
        ET.SubElement(canvas, "path", attributes)
        y = size + 14 + 18 * index
        ET.SubElement(legend, "line", {"x1": "8", "y1": str(y - 4), "x2": "32", "y2": str(y - 4),
                                       "stroke": stroke, "stroke-width": "2"})
        text = ET.SubElement(legend, "text", {"x": "40", "y": str(y)})
        text.text = label

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)
    except OSError as e:
        raise OutputError(f"Could not write figure {path}: {e}", details={"path": str(path)}) from e
    logger.debug_operation("render_svg", "Overlay written", extra={"path": str(path), "curves": len(curves)})
    return path
