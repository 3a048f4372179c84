"""Programmability scorecard over a device feature matrix.

Each device scores six components on four axes: input space (E1), output
space (E2), configuration parameters (E3) and processing logic (E4). Data
type axes take NA or 0..2, processing logic NA or 0..3.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field

from phv import AVSError

logger = logging.getLogger(__name__)

NA = "NA"
SCORED_COMPONENTS = (
    "parser",
    "ingress_buffer_engine",
    "ingress_mau",
    "deparser",
    "bre",
    "scheduler",
)
AXES = ("E1", "E2", "E3", "E4")
AXIS_NAMES = {"E1": "input", "E2": "output", "E3": "conf_param", "E4": "proc_logic"}
AXIS_MAX = {"E1": 2, "E2": 2, "E3": 2, "E4": 3}

Score = Union[int, Literal["NA"]]


class InvalidScore(AVSError):
    """Raised when a score is outside its axis domain."""

    def __init__(self, axis: str, value, where: str = ""):
        self.axis = axis
        self.value = value
        super().__init__(f"{where}{axis} ({AXIS_NAMES[axis]}) score {value!r} outside NA/0..{AXIS_MAX[axis]}")


class UnknownComponent(AVSError):
    """Raised when a matrix names a component that is not scored."""


class DeviceScores(BaseModel):
    """Scores of one device, component -> [E1, E2, E3, E4]."""

    device: str = Field(..., min_length=1, examples=["FlexPipe"])
    scores: Dict[str, List[Score]] = Field(
        ..., description="Component name to four axis scores", examples=[{"parser": ["NA", 1, "NA", 1]}]
    )


class FeatureMatrix(BaseModel):
    """Feature matrix of several devices."""

    baseline: Optional[str] = Field("PSA", description="Device other rows are compared against")
    devices: List[DeviceScores] = Field(default_factory=list)


@dataclass
class BelowBaseline:
    device: str
    component: str
    axis: str
    value: int
    baseline: int


@dataclass
class ScoreReport:
    matrix: FeatureMatrix
    totals: Dict[str, int] = field(default_factory=dict)
    below_baseline: List[BelowBaseline] = field(default_factory=list)
    out_of_domain: List[str] = field(default_factory=list)

    def rows(self) -> List[Tuple[str, str, List[Score]]]:
        """(component, device, scores) in component-major order."""
        out = []
        for component in SCORED_COMPONENTS:
            for entry in self.matrix.devices:
                if component in entry.scores:
                    out.append((component, entry.device, entry.scores[component]))
        return out

    def render(self) -> str:
        width = max([len(d.device) for d in self.matrix.devices] + [6])
        lines = [f"{'Component':<22} {'Device':<{width}}  " + "  ".join(f"{a:>3}" for a in AXES)]
        lines.append("─" * len(lines[0]))
        for component, device, values in self.rows():
            cells = "  ".join(f"{str(v):>3}" for v in values)
            lines.append(f"{component:<22} {device:<{width}}  {cells}")
        lines.append("")
        lines.append("Totals (derived; NA excluded):")
        for device, total in self.totals.items():
            lines.append(f"  {device:<{width}}  {total}")
        if self.below_baseline:
            lines.append("")
            lines.append(f"Below baseline {self.matrix.baseline}:")
            for flag in self.below_baseline:
                lines.append(f"  {flag.device} {flag.component} {flag.axis}: {flag.value} < {flag.baseline}")
        if self.out_of_domain:
            lines.append("")
            lines.append("Out-of-domain scores kept as given:")
            lines.extend(f"  {warning}" for warning in self.out_of_domain)
        return "\n".join(lines)


def load_matrix(path: Union[str, Path]) -> FeatureMatrix:
    return FeatureMatrix.model_validate(json.loads(Path(path).read_text()))


def score(matrix: FeatureMatrix, strict: bool = True) -> ScoreReport:
    """Check domains, total each device and flag scores below the baseline.

    With ``strict`` off, out-of-domain values are kept and reported instead
    of rejected.

    Raises:
        InvalidScore: Value outside its axis domain (strict mode).
        UnknownComponent: Component not in the scored set.
    """
    report = ScoreReport(matrix)
    for entry in matrix.devices:
        total = 0
        for component, values in entry.scores.items():
            if component not in SCORED_COMPONENTS:
                raise UnknownComponent(f"{entry.device}: unknown component '{component}'")
            if len(values) != len(AXES):
                raise InvalidScore("E1", values, f"{entry.device} {component}: expected 4 scores, ")
            for axis, value in zip(AXES, values):
                if value == NA:
                    continue
                if not 0 <= value <= AXIS_MAX[axis]:
                    if strict:
                        raise InvalidScore(axis, value, f"{entry.device} {component}: ")
                    report.out_of_domain.append(f"{entry.device} {component} {axis}={value}")
                    logger.warning("out-of-domain score %s %s %s=%s", entry.device, component, axis, value)
                total += value
        report.totals[entry.device] = total

    baseline = next((d for d in matrix.devices if d.device == matrix.baseline), None)
    if baseline is not None:
        for entry in matrix.devices:
            if entry is baseline:
                continue
            for component, values in entry.scores.items():
                reference = baseline.scores.get(component)
                if reference is None:
                    continue
                for axis, value, ref in zip(AXES, values, reference):
                    if value != NA and ref != NA and value < ref:
                        report.below_baseline.append(BelowBaseline(entry.device, component, axis, value, ref))
    return report
