"""Hybrid message passing over images and tags.

Each iteration runs affinity propagation sweeps on both sides with the image
(tag) preferences shifted by the contributability messages of the attached tags
(images), then refreshes the two cross-domain message families on every
association edge:

    w  discardability: a node's self-exemplar belief without one neighbour's
       contribution, w(i,j) = t(i,i) - v(i,j)
    v  contributability: the support an associated node lends to a node being
       an exemplar, derived from the four-valued coupling e_ij

All eight tables are flat arrays, so the cost of one iteration is linear in the
number of stored similarities plus association edges.
"""
import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from hybrid_ap.ap import (
    argmax_labels,
    assign_labels,
    availabilities,
    check_side,
    damp,
    responsibilities,
    run_until_stable,
)
from hybrid_ap.config import H2mpConfig
from hybrid_ap.errors import SolverError
from hybrid_ap.graph import HeteroGraph, HetPotential
from hybrid_ap.objective import Labeling, evaluate
from hybrid_ap.results import SolveResult, build_result

__all__ = [
    "H2mpConfig",
    "MessageState",
    "H2mpSolver",
    "compute_sbar",
    "update_responsibility_h",
    "update_availability_h",
    "update_discardability",
    "update_contributability",
    "assign_exemplars",
    "h2mp_run",
    "message_update_count",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MessageState:
    """The eight message tables plus the adjusted similarities they feed.

    Homogeneous messages are aligned with each side's stored entries, the
    cross-domain ones with the graph's association edges.
    """

    r_image: np.ndarray
    a_image: np.ndarray
    r_tag: np.ndarray
    a_tag: np.ndarray
    w_image_to_tag: np.ndarray
    v_tag_to_image: np.ndarray
    w_tag_to_image: np.ndarray
    v_image_to_tag: np.ndarray
    sbar_image: np.ndarray
    sbar_tag: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, g: HeteroGraph) -> "MessageState":
        n_image, n_tag, n_assoc = g.image.n_entries, g.tag.n_entries, g.n_assoc
        return cls(
            r_image=np.zeros(n_image),
            a_image=np.zeros(n_image),
            r_tag=np.zeros(n_tag),
            a_tag=np.zeros(n_tag),
            w_image_to_tag=np.zeros(n_assoc),
            v_tag_to_image=np.zeros(n_assoc),
            w_tag_to_image=np.zeros(n_assoc),
            v_image_to_tag=np.zeros(n_assoc),
            sbar_image=g.image.sims.copy(),
            sbar_tag=g.tag.sims.copy(),
        )

    def homogeneous(self, side: str) -> Tuple[np.ndarray, np.ndarray]:
        if side == "image":
            return self.r_image, self.a_image
        return self.r_tag, self.a_tag

    def beliefs(self, side: str) -> np.ndarray:
        r, a = self.homogeneous(side)
        return r + a

    def self_beliefs(self, g: HeteroGraph, side: str) -> np.ndarray:
        """t(i,i) for every node of one side"""
        return self.beliefs(side)[g.side(side).diag]


def _incoming(g: HeteroGraph, state: MessageState, side: str):
    if side == "image":
        return g.assoc_images, state.v_tag_to_image, g.image_degrees
    return g.assoc_tags, state.v_image_to_tag, g.tag_degrees


def compute_sbar(state: MessageState, g: HeteroGraph, side: str) -> np.ndarray:
    """s(i,k) with s(i,i) shifted by the contributability sum of node i.

    Nodes without association edges keep their preference untouched.
    """
    sims = g.side(side)
    sbar = sims.sims.copy()
    nodes, v, degrees = _incoming(g, state, side)
    if nodes.size:
        totals = np.bincount(nodes, weights=v, minlength=sims.size)
        linked = np.flatnonzero(degrees > 0)
        sbar[sims.diag[linked]] += totals[linked]
    return sbar


def update_responsibility_h(
    state: MessageState, g: HeteroGraph, side: str, damping: float = 0.5
) -> MessageState:
    sims = g.side(side)
    sbar = compute_sbar(state, g, side)
    r_old, a = state.homogeneous(side)
    r = damp(responsibilities(sims, sbar, a), r_old, damping)
    if side == "image":
        return replace(state, r_image=r, sbar_image=sbar)
    return replace(state, r_tag=r, sbar_tag=sbar)


def update_availability_h(
    state: MessageState, g: HeteroGraph, side: str, damping: float = 0.5
) -> MessageState:
    r, a_old = state.homogeneous(side)
    a = damp(availabilities(g.side(side), r), a_old, damping)
    if side == "image":
        return replace(state, a_image=a)
    return replace(state, a_tag=a)


def update_discardability(
    state: MessageState, g: HeteroGraph, damping: float = 0.5
) -> MessageState:
    """w(i,j) = t(i,i) - v(i,j) on every association edge, both directions"""
    t_image = state.self_beliefs(g, "image")
    t_tag = state.self_beliefs(g, "tag")
    w_image = t_image[g.assoc_images] - state.v_tag_to_image
    w_tag = t_tag[g.assoc_tags] - state.v_image_to_tag
    return replace(
        state,
        w_image_to_tag=damp(w_image, state.w_image_to_tag, damping),
        w_tag_to_image=damp(w_tag, state.w_tag_to_image, damping),
    )


def update_contributability(
    state: MessageState, pot: HetPotential, damping: float = 0.5
) -> MessageState:
    """v(i,j) = max{p(i,j), q_bar + w(j,i)} - max{q, p(j,i) + w(j,i)} and the
    symmetric message to tags, both damped"""
    w_tag = state.w_tag_to_image
    w_image = state.w_image_to_tag
    v_image = np.maximum(pot.p_img, pot.q_bar + w_tag) - np.maximum(
        pot.q, pot.p_tag + w_tag
    )
    v_tag = np.maximum(pot.p_tag, pot.q_bar + w_image) - np.maximum(
        pot.q, pot.p_img + w_image
    )
    return replace(
        state,
        v_tag_to_image=damp(v_image, state.v_tag_to_image, damping),
        v_image_to_tag=damp(v_tag, state.v_image_to_tag, damping),
    )


def assign_exemplars(state: MessageState, g: HeteroGraph) -> Labeling:
    """Exemplars of both sides from t = r + a, repaired to a valid labeling"""
    c = assign_labels(g.image, state.beliefs("image"))
    b = assign_labels(g.tag, state.beliefs("tag"))
    return Labeling.of(c, b)


def message_update_count(g: HeteroGraph) -> int:
    """Scalar message updates per iteration: r and a on every stored pair of both
    sides, w and v in both directions on every association edge"""
    return 2 * g.image.n_entries + 2 * g.tag.n_entries + 4 * g.n_assoc


class H2mpSolver:
    """Hybrid message passing on a scaled graph, one full iteration per `step`"""

    def __init__(self, g: HeteroGraph, pot: HetPotential, config: H2mpConfig):
        if not g.scaled:
            raise SolverError("Similarities must be scaled before solving")
        if pot.n_edges != g.n_assoc:
            raise SolverError(
                f"Potentials cover {pot.n_edges} association edges, "
                f"the graph has {g.n_assoc}"
            )
        check_side(g.image)
        check_side(g.tag)
        self.g = g
        self.pot = pot
        self.config = config
        self.state = MessageState.zeros(g)

    def step(self):
        g, d = self.g, self.config.damping
        state = self.state
        for side in ("image", "tag"):
            state = update_responsibility_h(state, g, side, d)
            state = update_availability_h(state, g, side, d)
        state = update_discardability(state, g, d)
        state = update_contributability(state, self.pot, d)
        self.state = replace(state, iteration=state.iteration + 1)

    def labels(self) -> np.ndarray:
        """Raw argmax assignments, images then tags"""
        return np.concatenate(
            (
                argmax_labels(self.g.image, self.state.beliefs("image")),
                argmax_labels(self.g.tag, self.state.beliefs("tag")),
            )
        )

    def nodes(self) -> np.ndarray:
        return np.concatenate(
            (np.arange(self.g.n_images), np.arange(self.g.n_tags))
        )

    def run(self) -> SolveResult:
        logger.info(
            f"Running hybrid message passing on {self.g.n_images} images, "
            f"{self.g.n_tags} tags and {self.g.n_assoc} associations "
            f"({message_update_count(self.g)} message updates per iteration)"
        )
        converged = run_until_stable(self, self.config)

        labeling = assign_exemplars(self.state, self.g)
        objective = evaluate(self.g, self.pot, labeling)
        logger.info(
            f"Found {len(set(labeling.c))} image and {len(set(labeling.b))} tag "
            f"exemplars after {self.state.iteration} iterations"
        )
        return build_result(
            self.g, labeling, objective, self.state.iteration, converged
        )


def h2mp_run(g: HeteroGraph, pot: HetPotential, config: H2mpConfig) -> SolveResult:
    """Jointly cluster images and tags.

    Raises:
        SolverError: If the graph is unscaled, a node lacks a self-similarity or
            the potentials do not belong to the graph.
    """
    return H2mpSolver(g, pot, config).run()
