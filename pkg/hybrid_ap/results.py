import json
import logging
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Optional

from hybrid_ap.errors import MetricError
from hybrid_ap.graph import HeteroGraph
from hybrid_ap.objective import (
    Labeling,
    ObjectiveBreakdown,
    semantic_exemplarness,
    visual_exemplarness,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one solver run. Exemplar lists are the sorted distinct values of
    the assignments; an AP run leaves the side it did not solve empty."""

    image_exemplars: List[int]
    image_assignment: List[int]
    tag_exemplars: List[int]
    tag_assignment: List[int]
    objective: ObjectiveBreakdown
    iterations: int
    converged: bool
    visual_exemplarness: Optional[float] = None
    semantic_exemplarness: Optional[float] = None

    @property
    def labeling(self) -> Labeling:
        return Labeling.of(self.image_assignment, self.tag_assignment)

    def without_metrics(self) -> "SolveResult":
        return replace(self, visual_exemplarness=None, semantic_exemplarness=None)

    def to_document(self) -> Dict[str, Any]:
        """The result as a plain mapping, keys in field order"""
        return asdict(self)

    def to_json(self) -> str:
        # repr-precision floats survive a round trip exactly
        return json.dumps(self.to_document(), indent=2) + "\n"


def _metric(name: str, compute, g: HeteroGraph, c: List[int]) -> Optional[float]:
    try:
        return compute(g, c)
    except MetricError as e:
        logger.info(f"{name} exemplarness is not reported: {e}")
        return None


def build_result(
    g: HeteroGraph,
    labeling: Labeling,
    objective: ObjectiveBreakdown,
    iterations: int,
    converged: bool,
) -> SolveResult:
    """Assemble a SolveResult, measuring exemplarness where it is defined"""
    c = list(labeling.c)
    b = list(labeling.b)
    visual = semantic = None
    if c:
        visual = _metric("Visual", visual_exemplarness, g, c)
        semantic = _metric("Semantic", semantic_exemplarness, g, c)

    return SolveResult(
        image_exemplars=sorted(set(c)),
        image_assignment=c,
        tag_exemplars=sorted(set(b)),
        tag_assignment=b,
        objective=objective,
        iterations=iterations,
        converged=converged,
        visual_exemplarness=visual,
        semantic_exemplarness=semantic,
    )
