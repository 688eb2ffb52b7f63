"""Single-domain affinity propagation over one sparse similarity side.

Messages live in flat arrays aligned with the side's stored entries (CSR order),
so one update touches every stored pair once. The kernels here are shared with
the hybrid solver in `hybrid_ap.h2mp`.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from hybrid_ap.config import H2mpConfig
from hybrid_ap.errors import SolverError
from hybrid_ap.graph import HeteroGraph, SimilaritySide
from hybrid_ap.objective import Labeling, ObjectiveBreakdown, side_objective
from hybrid_ap.results import SolveResult, build_result

logger = logging.getLogger(__name__)

# Value of a maximum taken over an empty set of rivals. A node whose only
# candidate is itself therefore keeps r(i,i) = s(i,i) and always picks itself.
EMPTY_RIVAL = 0.0


def damp(new: np.ndarray, old: np.ndarray, damping: float) -> np.ndarray:
    return (1.0 - damping) * new + damping * old


def _first_row_max(side: SimilaritySide, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row maxima and the position of the first entry reaching it in each row"""
    starts = side.indptr[:-1]
    row_max = np.maximum.reduceat(values, starts)
    positions = np.arange(values.size)
    at_max = np.where(values == row_max[side.rows], positions, values.size)
    return row_max, np.minimum.reduceat(at_max, starts)


def rival_max(side: SimilaritySide, values: np.ndarray) -> np.ndarray:
    """For every stored entry (i,k), the maximum of `values` over the other
    entries (i,k') of row i, EMPTY_RIVAL when k is the only one"""
    if values.size == 0:
        return values.copy()
    row_max, first = _first_row_max(side, values)
    masked = values.copy()
    masked[first] = -np.inf
    second = np.maximum.reduceat(masked, side.indptr[:-1])
    second[np.isneginf(second)] = EMPTY_RIVAL

    rivals = row_max[side.rows]
    rivals[first] = second
    return rivals


def responsibilities(side: SimilaritySide, sbar: np.ndarray, a: np.ndarray) -> np.ndarray:
    """r(i,k) = s(i,k) - max_{k' != k} [s(i,k') + a(i,k')], undamped"""
    return sbar - rival_max(side, sbar + a)


def availabilities(side: SimilaritySide, r: np.ndarray) -> np.ndarray:
    """a(k,k) = sum_{i' != k} max(0, r(i',k)) and
    a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k))), undamped"""
    if r.size == 0:
        return r.copy()
    support = np.maximum(r, 0.0)
    diag = side.diag
    support[diag] = r[diag]
    column_sums = np.bincount(side.cols, weights=support, minlength=side.size)

    a = column_sums[side.cols] - support
    off = side.off_diagonal
    a[off] = np.minimum(a[off], 0.0)
    return a


def argmax_labels(side: SimilaritySide, t: np.ndarray) -> np.ndarray:
    """Per node, the candidate with the largest belief t, lowest index on ties"""
    if side.size == 0:
        return np.zeros(0, dtype=np.int64)
    _, first = _first_row_max(side, t)
    return side.cols[first]


def repair_labels(
    side: SimilaritySide, labels: np.ndarray, t: np.ndarray
) -> Tuple[np.ndarray, bool]:
    """Make a labeling valid.

    With no exemplar at all the node with the largest t(i,i) is promoted. Then, in
    index order, a node whose exemplar does not choose itself moves to its best
    candidate among the exemplars, or becomes an exemplar when it has none.

    Returns:
        The repaired labels and whether anything had to change.
    """
    labels = np.array(labels, dtype=np.int64)
    nodes = np.arange(side.size)
    is_exemplar = labels == nodes
    if is_exemplar[labels].all():
        return labels, False

    if not is_exemplar.any():
        promoted = int(np.argmax(t[side.diag]))
        labels[promoted] = promoted
        is_exemplar[promoted] = True

    for i in range(side.size):
        if is_exemplar[labels[i]]:
            continue
        lo, hi = side.indptr[i], side.indptr[i + 1]
        allowed = is_exemplar[side.cols[lo:hi]]
        if allowed.any():
            scores = np.where(allowed, t[lo:hi], -np.inf)
            labels[i] = side.cols[lo + int(np.argmax(scores))]
        else:
            labels[i] = i
            is_exemplar[i] = True
    return labels, True


def assign_labels(side: SimilaritySide, t: np.ndarray) -> np.ndarray:
    labels, repaired = repair_labels(side, argmax_labels(side, t), t)
    if repaired:
        logger.warning(
            f"The {side.name} assignment was not a valid labeling and was repaired"
        )
    return labels


def check_side(side: SimilaritySide) -> None:
    """Raises SolverError unless every node has itself as a candidate exemplar"""
    if not side.has_all_diagonals():
        missing = int(np.flatnonzero(side.diag < 0)[0])
        raise SolverError(f"{side.name} node {missing} has no candidate exemplar")


@dataclass(frozen=True, eq=False)
class ApState:
    """Responsibilities and availabilities on the stored entries of one side"""

    r: np.ndarray
    a: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, side: SimilaritySide) -> "ApState":
        return cls(r=np.zeros(side.n_entries), a=np.zeros(side.n_entries))

    def beliefs(self) -> np.ndarray:
        return self.r + self.a


def ap_update_responsibility(
    state: ApState, side: SimilaritySide, damping: float = 0.5
) -> ApState:
    r = damp(responsibilities(side, side.sims, state.a), state.r, damping)
    return replace(state, r=r)


def ap_update_availability(
    state: ApState, side: SimilaritySide, damping: float = 0.5
) -> ApState:
    a = damp(availabilities(side, state.r), state.a, damping)
    return replace(state, a=a)


class ApSolver:
    """Affinity propagation on one side of a scaled graph, one sweep per `step`"""

    def __init__(self, g: HeteroGraph, config: H2mpConfig, side: str = "image"):
        if not g.scaled:
            raise SolverError("Similarities must be scaled before solving")
        self.g = g
        self.config = config
        self.side_name = side
        self.side = g.side(side)
        check_side(self.side)
        self.state = ApState.zeros(self.side)

    def step(self):
        state = ap_update_responsibility(self.state, self.side, self.config.damping)
        state = ap_update_availability(state, self.side, self.config.damping)
        self.state = replace(state, iteration=state.iteration + 1)

    def labels(self) -> np.ndarray:
        return argmax_labels(self.side, self.state.beliefs())

    def nodes(self) -> np.ndarray:
        return np.arange(self.side.size)

    def run(self) -> SolveResult:
        logger.info(
            f"Running affinity propagation on {self.side.size} {self.side_name} nodes "
            f"with {self.side.n_entries} candidate pairs"
        )
        converged = run_until_stable(self, self.config)

        labels = assign_labels(self.side, self.state.beliefs())
        fit, valid = side_objective(self.side, labels)
        if self.side_name == "image":
            labeling = Labeling.of(labels, ())
            objective = ObjectiveBreakdown.from_parts(fit_image=fit, validity_image=valid)
        else:
            labeling = Labeling.of((), labels)
            objective = ObjectiveBreakdown.from_parts(fit_tag=fit, validity_tag=valid)

        logger.info(
            f"Affinity propagation found {np.unique(labels).size} exemplars after "
            f"{self.state.iteration} iterations"
        )
        return build_result(
            self.g, labeling, objective, self.state.iteration, converged
        )


def run_until_stable(solver, config: H2mpConfig) -> bool:
    """Step `solver` until its raw labels have not changed for conv_window
    consecutive iterations or max_iter is reached. Returns whether it converged."""
    previous: Optional[np.ndarray] = None
    unchanged = 0
    for _ in range(config.max_iter):
        solver.step()
        labels = solver.labels()
        if previous is not None and np.array_equal(labels, previous):
            unchanged += 1
        else:
            unchanged = 0
        previous = labels

        iteration = solver.state.iteration
        if iteration % config.log_every == 0:
            logger.debug(
                f"Iteration {iteration}: {int((labels == solver.nodes()).sum())} "
                f"self-chosen nodes, unchanged for {unchanged} iterations"
            )
        if unchanged >= config.conv_window:
            return True

    logger.warning(
        f"Did not converge within {config.max_iter} iterations; "
        "using the last assignment"
    )
    return False


def ap_run(g: HeteroGraph, config: H2mpConfig, side: str = "image") -> SolveResult:
    """Cluster one side of a scaled graph with affinity propagation.

    Raises:
        SolverError: If the graph is unscaled or a node lacks a self-similarity.
    """
    return ApSolver(g, config, side).run()
