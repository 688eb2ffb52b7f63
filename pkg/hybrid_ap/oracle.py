"""Ground truth for the message passing solvers, at toy sizes only.

`brute_force_optimum` searches every valid labeling. The vector engine runs max-sum
with one full-length message per (variable, factor) incidence, stored as dense
arrays with -inf outside a variable's candidate exemplars:

    rho[i, k, c]    variable c_i to validity factor k
    alpha[i, k, c]  validity factor k to variable c_i
    pi[e, c]        variable to the coupling factor of association edge e
    ups[e, c]       coupling factor of edge e to the variable

Variable-to-factor messages are kept normalized: their entries other than the
distinguished one (c = k for rho, c = i for pi) have their maximum shifted to
zero, and the distinguished entry carries the damped reduced value. Factor-to-
variable messages only take two values and are stored as the difference at the
distinguished entry and zero elsewhere, so they damp linearly.
"""
import itertools
import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from hybrid_ap.ap import EMPTY_RIVAL, argmax_labels, repair_labels
from hybrid_ap.config import H2mpConfig
from hybrid_ap.errors import OracleError
from hybrid_ap.graph import HeteroGraph, HetPotential, SimilaritySide
from hybrid_ap.h2mp import H2mpSolver, MessageState
from hybrid_ap.objective import Labeling, ObjectiveBreakdown, evaluate

logger = logging.getLogger(__name__)

MAX_BRUTE_IMAGES = 8
MAX_BRUTE_TAGS = 6
MAX_VECTOR_NODES = 64

# Totals this close to the best one count as ties
TIE_TOLERANCE = 1e-12


def _check_brute_size(n: int, m: int):
    if n > MAX_BRUTE_IMAGES or m > MAX_BRUTE_TAGS:
        raise OracleError(
            f"Exhaustive search is limited to {MAX_BRUTE_IMAGES} images and "
            f"{MAX_BRUTE_TAGS} tags, got {n} and {m}"
        )


def _valid_side_labelings(size: int) -> Iterator[Tuple[int, ...]]:
    if size == 0:
        yield ()
        return
    nodes = range(size)
    for count in range(1, size + 1):
        for exemplars in itertools.combinations(nodes, count):
            others = [i for i in nodes if i not in exemplars]
            for choice in itertools.product(exemplars, repeat=len(others)):
                labels = list(nodes)
                for i, k in zip(others, choice):
                    labels[i] = k
                yield tuple(labels)


def enumerate_valid_labelings(n: int, m: int) -> Iterator[Labeling]:
    """Every labeling of n images and m tags with both validity terms 0.

    Raises:
        OracleError: If n > 8 or m > 6.
    """
    _check_brute_size(n, m)
    tag_labelings = list(_valid_side_labelings(m))
    for c in _valid_side_labelings(n):
        for b in tag_labelings:
            yield Labeling(c, b)


def _best_fits(side: SimilaritySide) -> Tuple[np.ndarray, List[Tuple[int, ...]], np.ndarray]:
    """For every nonempty exemplar set of one side: the best fit, the lowest-index
    labeling reaching it and the exemplar indicator. Infeasible sets get -inf."""
    if side.size == 0:
        return np.zeros(1), [()], np.zeros((1, 0), dtype=bool)

    dense = side.dense()
    fits, labelings, indicators = [], [], []
    for count in range(1, side.size + 1):
        for exemplars in itertools.combinations(range(side.size), count):
            is_exemplar = np.zeros(side.size, dtype=bool)
            is_exemplar[list(exemplars)] = True
            scores = np.where(is_exemplar[None, :], dense, -np.inf)
            labels = np.argmax(scores, axis=1)
            labels[is_exemplar] = np.flatnonzero(is_exemplar)
            chosen = scores[np.arange(side.size), labels]
            fits.append(float(chosen.sum()))
            labelings.append(tuple(int(k) for k in labels))
            indicators.append(is_exemplar)
    return np.array(fits), labelings, np.array(indicators)


def brute_force_optimum(g: HeteroGraph, pot: HetPotential) -> Tuple[Labeling, ObjectiveBreakdown]:
    """The valid labeling with the largest objective, the lexicographically
    smallest (c, b) among ties.

    Raises:
        OracleError: If the graph exceeds the exhaustive search limits.
    """
    _check_brute_size(g.n_images, g.n_tags)

    image_fits, image_labelings, image_exemplars = _best_fits(g.image)
    tag_fits, tag_labelings, tag_exemplars = _best_fits(g.tag)

    totals = image_fits[:, None] + tag_fits[None, :]
    if pot.n_edges:
        self_img = image_exemplars[:, None, pot.assoc_images]
        self_tag = tag_exemplars[None, :, pot.assoc_tags]
        het = np.select(
            [self_img & self_tag, self_img & ~self_tag, ~self_img & self_tag],
            [pot.q_bar, pot.p_img, pot.p_tag],
            default=pot.q,
        )
        totals = totals + het.sum(axis=2)

    best = totals.max()
    if np.isneginf(best):
        raise OracleError("No valid labeling uses only stored similarities")
    tolerance = TIE_TOLERANCE * (1.0 + abs(best))
    ties = np.argwhere(totals >= best - tolerance)
    x, y = min(ties, key=lambda t: (image_labelings[t[0]], tag_labelings[t[1]]))

    labeling = Labeling(image_labelings[x], tag_labelings[y])
    return labeling, evaluate(g, pot, labeling)


@dataclass(frozen=True, eq=False)
class VectorMessages:
    """Full-length max-sum messages for both sides, see the module docstring"""

    rho_image: np.ndarray
    alpha_image: np.ndarray
    rho_tag: np.ndarray
    alpha_tag: np.ndarray
    pi_image: np.ndarray
    ups_image: np.ndarray
    pi_tag: np.ndarray
    ups_tag: np.ndarray
    image_candidates: np.ndarray
    tag_candidates: np.ndarray
    assoc_images: np.ndarray
    assoc_tags: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, g: HeteroGraph) -> "VectorMessages":
        if max(g.n_images, g.n_tags) > MAX_VECTOR_NODES:
            raise OracleError(
                f"The vector engine is limited to {MAX_VECTOR_NODES} nodes per side"
            )
        image = np.isfinite(g.image.dense())
        tag = np.isfinite(g.tag.dense())

        def factor_grid(cand: np.ndarray) -> np.ndarray:
            return np.where(cand[:, :, None] & cand[:, None, :], 0.0, -np.inf)

        return cls(
            rho_image=factor_grid(image),
            alpha_image=np.zeros(image.shape + (image.shape[0],)),
            rho_tag=factor_grid(tag),
            alpha_tag=np.zeros(tag.shape + (tag.shape[0],)),
            pi_image=np.where(image[g.assoc_images], 0.0, -np.inf),
            ups_image=np.zeros((g.n_assoc, g.n_images)),
            pi_tag=np.where(tag[g.assoc_tags], 0.0, -np.inf),
            ups_tag=np.zeros((g.n_assoc, g.n_tags)),
            image_candidates=image,
            tag_candidates=tag,
            assoc_images=g.assoc_images,
            assoc_tags=g.assoc_tags,
        )


def _rival_max(values: np.ndarray, skip: np.ndarray) -> np.ndarray:
    """Max over the last axis leaving out the entries flagged in `skip`,
    EMPTY_RIVAL when nothing is left"""
    rivals = np.where(skip, -np.inf, values).max(axis=-1)
    return np.where(np.isneginf(rivals), EMPTY_RIVAL, rivals)


def _factor_diagonal(size: int) -> np.ndarray:
    """mask[k, c] is c == k, broadcast over the sender axis"""
    return np.eye(size, dtype=bool)[None, :, :]


def _damp_distinguished(
    fresh: np.ndarray,
    old: np.ndarray,
    distinguished: np.ndarray,
    valid: np.ndarray,
    damping: float,
) -> np.ndarray:
    """Normalize `fresh` and put the damped reduced value at the distinguished
    entry. `valid` flags messages that exist; the others stay -inf."""
    fresh_rival = _rival_max(fresh, distinguished)
    old_rival = _rival_max(old, distinguished)
    fresh_tilde = np.where(distinguished, fresh, -np.inf).max(axis=-1) - fresh_rival
    old_tilde = np.where(distinguished, old, -np.inf).max(axis=-1) - old_rival

    with np.errstate(invalid="ignore"):
        tilde = (1.0 - damping) * fresh_tilde + damping * old_tilde
        normalized = fresh - fresh_rival[..., None]
        normalized = np.where(distinguished, tilde[..., None], normalized)
    valid = valid[..., None] & np.isfinite(fresh)
    return np.where(valid, normalized, -np.inf)


def _update_rho(
    rho: np.ndarray,
    alpha: np.ndarray,
    sims: np.ndarray,
    ups: np.ndarray,
    owners: np.ndarray,
    cand: np.ndarray,
    damping: float,
) -> np.ndarray:
    if sims.size == 0:
        return rho.copy()
    size = sims.shape[0]
    contributions = np.zeros_like(sims)
    np.add.at(contributions, owners, ups)
    adjusted = sims + contributions
    # every validity factor's message at c except the one being answered
    others = np.einsum("kl,ilc->ikc", 1.0 - np.eye(size), alpha)
    fresh = adjusted[:, None, :] + others
    return _damp_distinguished(fresh, rho, _factor_diagonal(size), cand, damping)


def _reduce_factor_messages(messages: np.ndarray) -> np.ndarray:
    """Distinguished entry c = k minus the best other entry, per (i, k)"""
    size = messages.shape[-1]
    diagonal = _factor_diagonal(size)
    own = np.where(diagonal, messages, -np.inf).max(axis=-1)
    return own - _rival_max(messages, diagonal)


def _update_alpha(
    alpha: np.ndarray, rho: np.ndarray, cand: np.ndarray, damping: float
) -> np.ndarray:
    if cand.size == 0:
        return alpha.copy()
    size = cand.shape[0]
    nodes = np.arange(size)
    off_diagonal = cand & ~np.eye(size, dtype=bool)

    with np.errstate(invalid="ignore"):
        r = _reduce_factor_messages(rho)
    support = np.where(cand, np.maximum(r, 0.0), 0.0)
    support[nodes, nodes] = r[nodes, nodes]
    column_sums = np.zeros(size)
    for row in support:
        column_sums = column_sums + row

    a = np.where(off_diagonal, np.minimum(column_sums[None, :] - support, 0.0), 0.0)
    a[nodes, nodes] = column_sums - support[nodes, nodes]

    fresh = np.zeros_like(alpha)
    fresh[:, nodes, nodes] = a
    return (1.0 - damping) * fresh + damping * alpha


def _update_pi(
    pi: np.ndarray,
    rho: np.ndarray,
    alpha: np.ndarray,
    ups: np.ndarray,
    owners: np.ndarray,
    damping: float,
) -> np.ndarray:
    if owners.size == 0:
        return pi.copy()
    # belief of c_i seen from its own validity factor, without this edge's message
    fresh = rho[owners, owners, :] + alpha[owners, owners, :] - ups
    distinguished = np.arange(pi.shape[1])[None, :] == owners[:, None]
    valid = np.ones(owners.size, dtype=bool)
    return _damp_distinguished(fresh, pi, distinguished, valid, damping)


def _update_ups(
    ups: np.ndarray,
    owners: np.ndarray,
    opposite_pi: np.ndarray,
    opposite_owners: np.ndarray,
    p_own: np.ndarray,
    p_opposite: np.ndarray,
    q: np.ndarray,
    q_bar: np.ndarray,
    damping: float,
) -> np.ndarray:
    if owners.size == 0:
        return ups.copy()
    edges = np.arange(owners.size)
    opposite_self = opposite_pi[edges, opposite_owners]
    distinguished = np.arange(opposite_pi.shape[1])[None, :] == opposite_owners[:, None]
    opposite_other = _rival_max(opposite_pi, distinguished)

    when_self = np.maximum(q_bar + opposite_self, p_own + opposite_other)
    when_other = np.maximum(p_opposite + opposite_self, q + opposite_other)

    fresh = np.zeros_like(ups)
    fresh[edges, owners] = when_self - when_other
    return (1.0 - damping) * fresh + damping * ups


def vector_maxsum_iterate(
    vm: VectorMessages, g: HeteroGraph, pot: HetPotential, damping: float = 0.5
) -> VectorMessages:
    """One synchronous sweep: images then tags for the validity factors, then the
    messages to and from the coupling factors"""
    image_sims = g.image.dense()
    tag_sims = g.tag.dense()

    rho_image = _update_rho(
        vm.rho_image, vm.alpha_image, image_sims, vm.ups_image,
        g.assoc_images, vm.image_candidates, damping,
    )
    alpha_image = _update_alpha(vm.alpha_image, rho_image, vm.image_candidates, damping)
    rho_tag = _update_rho(
        vm.rho_tag, vm.alpha_tag, tag_sims, vm.ups_tag,
        g.assoc_tags, vm.tag_candidates, damping,
    )
    alpha_tag = _update_alpha(vm.alpha_tag, rho_tag, vm.tag_candidates, damping)

    pi_image = _update_pi(
        vm.pi_image, rho_image, alpha_image, vm.ups_image, g.assoc_images, damping
    )
    pi_tag = _update_pi(vm.pi_tag, rho_tag, alpha_tag, vm.ups_tag, g.assoc_tags, damping)

    ups_image = _update_ups(
        vm.ups_image, g.assoc_images, pi_tag, g.assoc_tags,
        pot.p_img, pot.p_tag, pot.q, pot.q_bar, damping,
    )
    ups_tag = _update_ups(
        vm.ups_tag, g.assoc_tags, pi_image, g.assoc_images,
        pot.p_tag, pot.p_img, pot.q, pot.q_bar, damping,
    )

    return replace(
        vm,
        rho_image=rho_image,
        alpha_image=alpha_image,
        rho_tag=rho_tag,
        alpha_tag=alpha_tag,
        pi_image=pi_image,
        ups_image=ups_image,
        pi_tag=pi_tag,
        ups_tag=ups_tag,
        iteration=vm.iteration + 1,
    )


@dataclass(frozen=True, eq=False)
class ScalarTables:
    """Reduced messages in the same layout as the scalar solver's state"""

    r_image: np.ndarray
    a_image: np.ndarray
    r_tag: np.ndarray
    a_tag: np.ndarray
    w_image_to_tag: np.ndarray
    v_tag_to_image: np.ndarray
    w_tag_to_image: np.ndarray
    v_image_to_tag: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return dict(self.__dict__)


def _off_value(messages: np.ndarray, distinguished: np.ndarray, cand: np.ndarray) -> np.ndarray:
    """The value a two-level message takes away from its distinguished entry"""
    return _rival_max(np.where(cand, messages, -np.inf), distinguished | ~cand)


def _reduce_side(rho, alpha, cand) -> Tuple[np.ndarray, np.ndarray]:
    if cand.size == 0:
        return np.zeros(0), np.zeros(0)
    size = cand.shape[0]
    diagonal = _factor_diagonal(size)
    row_cand = np.broadcast_to(cand[:, None, :], alpha.shape)
    with np.errstate(invalid="ignore"):
        r = _reduce_factor_messages(rho)
    own = np.where(diagonal, alpha, -np.inf).max(axis=-1)
    a = own - _off_value(alpha, diagonal, row_cand)
    return r[cand], a[cand]


def _reduce_edges(pi, ups, owners, cand) -> Tuple[np.ndarray, np.ndarray]:
    if owners.size == 0:
        return np.zeros(0), np.zeros(0)
    edges = np.arange(owners.size)
    distinguished = np.arange(pi.shape[1])[None, :] == owners[:, None]
    w = pi[edges, owners] - _rival_max(pi, distinguished)
    v = ups[edges, owners] - _off_value(ups, distinguished, cand[owners])
    return w, v


def reduce_to_scalar(vm: VectorMessages) -> ScalarTables:
    """Reduce every vector message to the scalar the hybrid solver keeps for it.

    Homogeneous tables come out in CSR order of each side's candidate pairs, the
    cross-domain ones in association edge order.
    """
    r_image, a_image = _reduce_side(vm.rho_image, vm.alpha_image, vm.image_candidates)
    r_tag, a_tag = _reduce_side(vm.rho_tag, vm.alpha_tag, vm.tag_candidates)
    w_image, v_image = _reduce_edges(
        vm.pi_image, vm.ups_image, vm.assoc_images, vm.image_candidates
    )
    w_tag, v_tag = _reduce_edges(vm.pi_tag, vm.ups_tag, vm.assoc_tags, vm.tag_candidates)
    return ScalarTables(
        r_image=r_image,
        a_image=a_image,
        r_tag=r_tag,
        a_tag=a_tag,
        w_image_to_tag=w_image,
        v_tag_to_image=v_image,
        w_tag_to_image=w_tag,
        v_image_to_tag=v_tag,
    )


def vector_assign(vm: VectorMessages, g: HeteroGraph) -> Labeling:
    """Exemplars from the summed incoming vector messages, repaired like the
    scalar solver's assignment"""

    def side_labels(side: SimilaritySide, rho, alpha, cand) -> np.ndarray:
        if side.size == 0:
            return np.zeros(0, dtype=np.int64)
        with np.errstate(invalid="ignore"):
            scores = _reduce_factor_messages(rho + alpha)
        t = scores[cand]
        labels, _ = repair_labels(side, argmax_labels(side, t), t)
        return labels

    c = side_labels(g.image, vm.rho_image, vm.alpha_image, vm.image_candidates)
    b = side_labels(g.tag, vm.rho_tag, vm.alpha_tag, vm.tag_candidates)
    return Labeling.of(c, b)


@dataclass(frozen=True)
class EquivalenceReport:
    """Largest gap between the scalar and the reduced vector messages over a run,
    and whether the assignments agreed at every iteration"""

    iterations: int
    max_deviation: float
    assignments_agree: bool
    first_disagreement: Optional[int] = None

    def holds(self, tolerance: float = 1e-9) -> bool:
        return self.assignments_agree and self.max_deviation <= tolerance


def table_deviation(tables: ScalarTables, state: MessageState) -> float:
    """Largest absolute gap between reduced tables and a scalar MessageState"""
    gaps = [0.0]
    for name, reduced in tables.as_dict().items():
        scalar = getattr(state, name)
        if scalar.size:
            gaps.append(float(np.max(np.abs(scalar - reduced))))
    return max(gaps)


def _scalar_assign(state: MessageState, g: HeteroGraph) -> Labeling:
    sides = []
    for name in ("image", "tag"):
        t = state.beliefs(name)
        labels, _ = repair_labels(g.side(name), argmax_labels(g.side(name), t), t)
        sides.append(labels)
    return Labeling.of(*sides)


def check_equivalence(
    g: HeteroGraph, pot: HetPotential, config: H2mpConfig, iterations: int = 50
) -> EquivalenceReport:
    """Run the hybrid solver and the vector engine side by side.

    Raises:
        OracleError: If the graph is too large for the vector engine.
    """
    solver = H2mpSolver(g, pot, config)
    vm = VectorMessages.zeros(g)
    deviation = 0.0
    first_disagreement = None
    for _ in range(iterations):
        solver.step()
        vm = vector_maxsum_iterate(vm, g, pot, config.damping)
        deviation = max(
            deviation, table_deviation(reduce_to_scalar(vm), solver.state)
        )
        if first_disagreement is None and vector_assign(vm, g) != _scalar_assign(
            solver.state, g
        ):
            first_disagreement = vm.iteration

    report = EquivalenceReport(
        iterations=iterations,
        max_deviation=deviation,
        assignments_agree=first_disagreement is None,
        first_disagreement=first_disagreement,
    )
    logger.info(
        f"Scalar and vector messages differ by at most {deviation:.3g} over "
        f"{iterations} iterations; assignments "
        f"{'agree' if report.assignments_agree else 'disagree'}"
    )
    return report
