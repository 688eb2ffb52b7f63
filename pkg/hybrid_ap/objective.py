import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from hybrid_ap.errors import GraphError, MetricError
from hybrid_ap.graph import HeteroGraph, HetPotential, SimilaritySide

logger = logging.getLogger(__name__)

NEG_INF = float("-inf")


@dataclass(frozen=True)
class Labeling:
    """Exemplar choices: c[i] for every image, b[j] for every tag.

    A labeling may be invalid; validity is checked with `validity`.
    """

    c: Tuple[int, ...]
    b: Tuple[int, ...]

    @classmethod
    def of(cls, c: Sequence[int], b: Sequence[int] = ()) -> "Labeling":
        return cls(tuple(int(x) for x in c), tuple(int(x) for x in b))


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Every term of the overall objective. Validity terms are 0 or -inf."""

    fit_image: float
    fit_tag: float
    validity_image: float
    validity_tag: float
    hetero: float
    total: float

    @classmethod
    def from_parts(
        cls,
        fit_image: float = 0.0,
        fit_tag: float = 0.0,
        validity_image: float = 0.0,
        validity_tag: float = 0.0,
        hetero: float = 0.0,
    ) -> "ObjectiveBreakdown":
        total = fit_image + fit_tag + validity_image + validity_tag + hetero
        return cls(fit_image, fit_tag, validity_image, validity_tag, hetero, total)


def _check_range(labels: np.ndarray, side_size: int) -> None:
    if labels.size != side_size:
        raise GraphError(f"Expected {side_size} labels, got {labels.size}")
    if labels.size and (labels.min() < 0 or labels.max() >= side_size):
        raise GraphError(f"Labels must lie in [0, {side_size})")


def validity(labels: Sequence[int], side_size: int) -> float:
    """0 if every chosen exemplar chooses itself, -inf otherwise"""
    labels = np.asarray(labels, dtype=np.int64)
    _check_range(labels, side_size)
    is_exemplar = labels == np.arange(side_size)
    return 0.0 if is_exemplar[labels].all() else NEG_INF


def _het_values(
    pot: HetPotential, self_img: np.ndarray, self_tag: np.ndarray
) -> np.ndarray:
    return np.select(
        [self_img & self_tag, self_img & ~self_tag, ~self_img & self_tag],
        [pot.q_bar, pot.p_img, pot.p_tag],
        default=pot.q,
    )


def het_term(pot: HetPotential, edge: Tuple[int, int], self_i: bool, self_j: bool) -> float:
    """Value of e_ij for one association edge given whether image i and tag j
    choose themselves.

    Raises:
        GraphError: If (i, j) is not an association edge.
    """
    i, j = edge
    hits = np.flatnonzero((pot.assoc_images == i) & (pot.assoc_tags == j))
    if hits.size == 0:
        raise GraphError(f"({i}, {j}) is not an association edge")
    value = _het_values(
        pot, np.array([bool(self_i)]), np.array([bool(self_j)])
    )
    # _het_values broadcasts over all edges; keep the requested one
    return float(value[hits[0]])


def side_objective(side: SimilaritySide, labels: Sequence[int]) -> Tuple[float, float]:
    """(fit, validity) of one side: sum of s(i, labels_i) and the validity term.
    A label pair with no stored similarity makes the fit -inf."""
    labels = np.asarray(labels, dtype=np.int64)
    valid = validity(labels, side.size)
    if side.size == 0:
        return 0.0, valid
    positions = side.lookup(np.arange(side.size), labels)
    if (positions < 0).any():
        return NEG_INF, valid
    return float(side.sims[positions].sum()), valid


def evaluate(g: HeteroGraph, pot: HetPotential, L: Labeling) -> ObjectiveBreakdown:
    """Evaluate the overall objective on the (scaled) graph"""
    if not g.scaled:
        logger.warning("Evaluating the objective on unscaled similarities")
    fit_image, validity_image = side_objective(g.image, L.c)
    fit_tag, validity_tag = side_objective(g.tag, L.b)

    c = np.asarray(L.c, dtype=np.int64)
    b = np.asarray(L.b, dtype=np.int64)
    if pot.n_edges:
        self_img = c[pot.assoc_images] == pot.assoc_images
        self_tag = b[pot.assoc_tags] == pot.assoc_tags
        hetero = float(_het_values(pot, self_img, self_tag).sum())
    else:
        hetero = 0.0

    return ObjectiveBreakdown.from_parts(
        fit_image=fit_image,
        fit_tag=fit_tag,
        validity_image=validity_image,
        validity_tag=validity_tag,
        hetero=hetero,
    )


def _require_valid(labels: np.ndarray, size: int) -> None:
    try:
        valid = validity(labels, size)
    except GraphError as e:
        raise MetricError(str(e))
    if valid != 0.0:
        raise MetricError("Exemplarness is only reported for valid labelings")


def visual_exemplarness(g: HeteroGraph, c: Sequence[int]) -> float:
    """Mean raw image similarity between each image and its exemplar.

    Raises:
        MetricError: If the labeling is invalid or some (i, c_i) has no stored
            similarity.
    """
    c = np.asarray(c, dtype=np.int64)
    _require_valid(c, g.n_images)
    if g.n_images == 0:
        raise MetricError("There are no images to measure")
    positions = g.image.lookup(np.arange(g.n_images), c)
    if (positions < 0).any():
        i = int(np.flatnonzero(positions < 0)[0])
        raise MetricError(f"Image {i} has no stored similarity to its exemplar {c[i]}")
    return float(g.image.raw[positions].mean())


def semantic_exemplarness(g: HeteroGraph, c: Sequence[int]) -> float:
    """Mean tag-set similarity between each image and its exemplar.

    The similarity of tags(i) to tags(c_i) is the mean, over t in tags(i), of the
    best raw similarity s'_W(t, u) with u in tags(c_i). Tags with no stored
    similarity to any of the exemplar's tags are left out with a warning, as are
    images where either tag set is empty.

    Raises:
        MetricError: If the labeling is invalid or no image contributes.
    """
    c = np.asarray(c, dtype=np.int64)
    _require_valid(c, g.n_images)

    per_image = []
    dropped = 0
    for i in range(g.n_images):
        own = g.tags_of_image(i)
        theirs = g.tags_of_image(int(c[i]))
        if own.size == 0 or theirs.size == 0:
            continue
        best = []
        for t in own:
            positions = g.tag.lookup(np.full(theirs.size, t), theirs)
            found = positions[positions >= 0]
            if found.size:
                best.append(g.tag.raw[found].max())
            else:
                dropped += 1
        if best:
            per_image.append(np.mean(best))

    if dropped:
        logger.warning(
            f"Left out {dropped} tags with no stored similarity to their exemplar's tags"
        )
    if not per_image:
        raise MetricError("No image has comparable tags with its exemplar")
    return float(np.mean(per_image))
