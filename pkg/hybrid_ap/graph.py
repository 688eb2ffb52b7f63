import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from hybrid_ap.errors import GraphError

logger = logging.getLogger(__name__)

SimilarityEdge = Tuple[int, int, float]
AssocEdge = Tuple[int, int]


def _read_only(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def lower_median(values: np.ndarray) -> float:
    """Median of a multiset, taking the lower-middle element for even counts"""
    middle = (values.size - 1) // 2
    return float(np.partition(values, middle)[middle])


@dataclass(frozen=True, eq=False)
class SimilaritySide:
    """One homogeneous similarity graph (the images or the tags).

    Stored entries are kept in CSR order, sorted by (row, col). A pair that is not
    stored is never a candidate exemplar pair. `raw` holds the similarities as
    supplied (s'), `sims` the balanced ones (s = gamma * s') once the owning graph
    has been scaled, and a copy of `raw` before that.
    """

    name: str
    size: int
    rows: np.ndarray
    cols: np.ndarray
    raw: np.ndarray
    sims: np.ndarray
    gamma: float = 1.0

    @classmethod
    def from_edges(
        cls, name: str, size: int, edges: Iterable[SimilarityEdge]
    ) -> "SimilaritySide":
        """Validate, de-duplicate and sort a list of (i, k, s) edges.

        Raises:
            GraphError: An index is out of range, a similarity is not finite, or
                the same pair is given twice with different values.
        """
        edges = list(edges)
        rows = np.array([e[0] for e in edges], dtype=np.int64)
        cols = np.array([e[1] for e in edges], dtype=np.int64)
        values = np.array([e[2] for e in edges], dtype=np.float64)

        if edges:
            bad = (rows < 0) | (rows >= size) | (cols < 0) | (cols >= size)
            if bad.any():
                first = int(np.flatnonzero(bad)[0])
                raise GraphError(
                    f"{name} similarity ({rows[first]}, {cols[first]}) is out of "
                    f"range for {size} {name} nodes"
                )
            if np.isnan(values).any():
                first = int(np.flatnonzero(np.isnan(values))[0])
                raise GraphError(
                    f"{name} similarity ({rows[first]}, {cols[first]}) is NaN"
                )
            if np.isinf(values).any():
                first = int(np.flatnonzero(np.isinf(values))[0])
                raise GraphError(
                    f"{name} similarity ({rows[first]}, {cols[first]}) is infinite; "
                    "leave the pair out instead"
                )

        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]

        # Drop repeated pairs, refusing the ones that disagree
        repeated = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if repeated.any():
            conflict = repeated & (values[1:] != values[:-1])
            if conflict.any():
                first = int(np.flatnonzero(conflict)[0]) + 1
                raise GraphError(
                    f"{name} similarity ({rows[first]}, {cols[first]}) is given "
                    f"twice with different values"
                )
            keep = np.concatenate(([True], ~repeated))
            rows, cols, values = rows[keep], cols[keep], values[keep]

        return cls(
            name=name,
            size=size,
            rows=_read_only(rows),
            cols=_read_only(cols),
            raw=_read_only(values),
            sims=_read_only(values.copy()),
        )

    @property
    def n_entries(self) -> int:
        """Number of stored entries, diagonal included"""
        return int(self.rows.size)

    @cached_property
    def indptr(self) -> np.ndarray:
        return _read_only(np.searchsorted(self.rows, np.arange(self.size + 1)))

    @cached_property
    def keys(self) -> np.ndarray:
        return _read_only(self.rows * max(self.size, 1) + self.cols)

    @cached_property
    def diag(self) -> np.ndarray:
        """Position of every node's self-similarity entry, -1 where it is missing"""
        nodes = np.arange(self.size)
        return _read_only(self.lookup(nodes, nodes))

    @cached_property
    def off_diagonal(self) -> np.ndarray:
        return _read_only(self.rows != self.cols)

    def has_all_diagonals(self) -> bool:
        return bool((self.diag >= 0).all())

    def lookup(self, i, k) -> np.ndarray:
        """Positions of the stored pairs (i, k), -1 for pairs that are not stored"""
        wanted = np.asarray(i, dtype=np.int64) * max(self.size, 1) + np.asarray(
            k, dtype=np.int64
        )
        positions = np.searchsorted(self.keys, wanted)
        clipped = np.minimum(positions, max(self.keys.size - 1, 0))
        found = (positions < self.keys.size) & (
            self.keys[clipped] == wanted if self.keys.size else False
        )
        return np.where(found, positions, -1)

    def median_off_diagonal(self) -> Optional[float]:
        """Lower-middle median of the stored off-diagonal raw similarities"""
        values = self.raw[self.off_diagonal]
        if values.size == 0:
            return None
        return lower_median(values)

    def with_diagonal(self, preferences: np.ndarray) -> "SimilaritySide":
        """Return a copy whose raw diagonal is `preferences`, inserting missing
        entries. The copy is unscaled."""
        keep = self.off_diagonal
        nodes = np.arange(self.size, dtype=np.int64)
        rows = np.concatenate((self.rows[keep], nodes))
        cols = np.concatenate((self.cols[keep], nodes))
        values = np.concatenate((self.raw[keep], preferences.astype(np.float64)))
        order = np.lexsort((cols, rows))
        return SimilaritySide(
            name=self.name,
            size=self.size,
            rows=_read_only(rows[order]),
            cols=_read_only(cols[order]),
            raw=_read_only(values[order]),
            sims=_read_only(values[order].copy()),
        )

    def with_gamma(self, gamma: float) -> "SimilaritySide":
        return replace(self, sims=_read_only(self.raw * gamma), gamma=gamma)

    def dense(self, scaled: bool = True) -> np.ndarray:
        """Dense (size, size) matrix, -inf where no similarity is stored"""
        matrix = np.full((self.size, self.size), -np.inf)
        matrix[self.rows, self.cols] = self.sims if scaled else self.raw
        return matrix


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """Images and tags: two homogeneous similarity graphs bridged by association
    edges (image i, tag j). Association edges are sorted by (i, j).

    The graph never changes after construction; the preparation functions below
    return new graphs.
    """

    image: SimilaritySide
    tag: SimilaritySide
    assoc_images: np.ndarray
    assoc_tags: np.ndarray
    scaled: bool = False

    @property
    def n_images(self) -> int:
        return self.image.size

    @property
    def n_tags(self) -> int:
        return self.tag.size

    @property
    def n_assoc(self) -> int:
        return int(self.assoc_images.size)

    @property
    def gamma_image(self) -> float:
        return self.image.gamma

    @property
    def gamma_tag(self) -> float:
        return self.tag.gamma

    @property
    def assoc_edges(self) -> List[AssocEdge]:
        return list(zip(self.assoc_images.tolist(), self.assoc_tags.tolist()))

    def side(self, name: str) -> SimilaritySide:
        if name == "image":
            return self.image
        if name == "tag":
            return self.tag
        raise ValueError(f"Unknown side '{name}'")

    @cached_property
    def image_degrees(self) -> np.ndarray:
        """|E^R_i.| for every image"""
        return _read_only(np.bincount(self.assoc_images, minlength=self.n_images))

    @cached_property
    def tag_degrees(self) -> np.ndarray:
        """|E^R_.j| for every tag"""
        return _read_only(np.bincount(self.assoc_tags, minlength=self.n_tags))

    @cached_property
    def assoc_indptr(self) -> np.ndarray:
        return _read_only(
            np.searchsorted(self.assoc_images, np.arange(self.n_images + 1))
        )

    def tags_of_image(self, i: int) -> np.ndarray:
        return self.assoc_tags[self.assoc_indptr[i] : self.assoc_indptr[i + 1]]

    def image_only(self) -> "HeteroGraph":
        """The same images with no tags and no associations"""
        no_edges = _read_only(np.zeros(0, dtype=np.int64))
        return replace(
            self,
            tag=SimilaritySide.from_edges("tag", 0, []),
            assoc_images=no_edges,
            assoc_tags=no_edges,
        )

    def assoc_index(self, i: int, j: int) -> int:
        """Position of association edge (i, j), -1 when the pair is not associated"""
        lo, hi = self.assoc_indptr[i], self.assoc_indptr[i + 1]
        hits = np.flatnonzero(self.assoc_tags[lo:hi] == j)
        return int(lo + hits[0]) if hits.size else -1


@dataclass(frozen=True, eq=False)
class HetPotential:
    """The four-valued coupling e_ij on every association edge, aligned with the
    graph's association edge order."""

    assoc_images: np.ndarray
    assoc_tags: np.ndarray
    p_img: np.ndarray
    p_tag: np.ndarray
    q: np.ndarray
    q_bar: np.ndarray
    theta: float

    @property
    def n_edges(self) -> int:
        return int(self.assoc_images.size)


def build_graph(
    image_edges: Sequence[SimilarityEdge],
    tag_edges: Sequence[SimilarityEdge],
    assoc: Sequence[AssocEdge],
    n: int,
    m: int,
) -> HeteroGraph:
    """Build a heterogeneous graph from raw similarity and association edges.

    Similarities are stored as given; symmetry is not forced.

    Raises:
        GraphError: If an index is out of range, a similarity is not finite, or a
            pair is given twice with conflicting values.
    """
    if n < 0 or m < 0:
        raise GraphError("Node counts must be non-negative")

    image = SimilaritySide.from_edges("image", n, image_edges)
    tag = SimilaritySide.from_edges("tag", m, tag_edges)

    pairs = sorted(set((int(i), int(j)) for i, j in assoc))
    for i, j in pairs:
        if not (0 <= i < n and 0 <= j < m):
            raise GraphError(
                f"Association ({i}, {j}) is out of range for {n} images and {m} tags"
            )
    assoc_images = np.array([p[0] for p in pairs], dtype=np.int64)
    assoc_tags = np.array([p[1] for p in pairs], dtype=np.int64)

    logger.debug(
        f"Built graph with {n} images ({image.n_entries} similarities), "
        f"{m} tags ({tag.n_entries} similarities) and {len(pairs)} associations"
    )
    return HeteroGraph(
        image=image,
        tag=tag,
        assoc_images=_read_only(assoc_images),
        assoc_tags=_read_only(assoc_tags),
    )


def _preferences_for(side: SimilaritySide, scale: float) -> SimilaritySide:
    if side.size == 0:
        return side
    median = side.median_off_diagonal()
    if median is None:
        if side.size > 1:
            raise GraphError(
                f"Cannot set {side.name} preferences: there are {side.size} "
                f"{side.name} nodes but no off-diagonal similarities"
            )
        # A lone node has nothing to be compared with
        median = 0.0
    preference = scale * median
    logger.debug(f"Setting {side.name} preferences to {scale} x {median} = {preference}")
    return side.with_diagonal(np.full(side.size, preference))


def set_preferences(
    g: HeteroGraph, lambda_image: float, lambda_tag: float
) -> HeteroGraph:
    """Set every self-similarity to lambda times the median off-diagonal similarity
    of its side. Supplied diagonal entries are overwritten.

    Raises:
        GraphError: If the graph is already scaled or a side with several nodes
            has no off-diagonal similarities.
    """
    if g.scaled:
        raise GraphError("Preferences must be set before the similarities are scaled")
    return replace(
        g,
        image=_preferences_for(g.image, lambda_image),
        tag=_preferences_for(g.tag, lambda_tag),
    )


def _balance(side: SimilaritySide) -> SimilaritySide:
    if side.size == 0:
        return side
    if not side.has_all_diagonals():
        missing = int(np.flatnonzero(side.diag < 0)[0])
        raise GraphError(
            f"{side.name} node {missing} has no self-similarity; supply one or let "
            "the preferences be set"
        )
    median = side.median_off_diagonal()
    if median is None:
        return side.with_gamma(1.0)
    if median == 0.0:
        raise GraphError(
            f"Cannot balance {side.name} similarities: their median is zero"
        )
    return side.with_gamma(1.0 / abs(median))


def scale_similarities(g: HeteroGraph) -> HeteroGraph:
    """Apply s = gamma * s' on both sides with gamma = 1 / |Med(s')|.

    Raises:
        GraphError: If the graph is already scaled, a node lacks a self-similarity
            or a side's median is zero.
    """
    if g.scaled:
        raise GraphError("Similarities have already been scaled")
    image = _balance(g.image)
    tag = _balance(g.tag)
    logger.debug(f"Balance weights: gamma_I={image.gamma}, gamma_W={tag.gamma}")
    return replace(g, image=image, tag=tag, scaled=True)


def build_potentials(
    g: HeteroGraph, theta: float, q: float = 0.0, q_bar: float = 0.0
) -> HetPotential:
    """Spread theta over the association edges: p(i,j) = theta / |E^R_i.| and
    p(j,i) = theta / |E^R_.j|; q and q_bar are constant per edge (zero by default).

    Raises:
        GraphError: If theta is positive.
    """
    if theta > 0:
        raise GraphError(f"theta must be non-positive, got {theta}")

    p_img = theta / g.image_degrees[g.assoc_images]
    p_tag = theta / g.tag_degrees[g.assoc_tags]
    return HetPotential(
        assoc_images=g.assoc_images,
        assoc_tags=g.assoc_tags,
        p_img=_read_only(p_img.astype(np.float64)),
        p_tag=_read_only(p_tag.astype(np.float64)),
        q=_read_only(np.full(g.n_assoc, float(q))),
        q_bar=_read_only(np.full(g.n_assoc, float(q_bar))),
        theta=float(theta),
    )


def perturb_similarities(g: HeteroGraph, seed: int) -> HeteroGraph:
    """Add tiny seeded noise to the scaled similarities to break exact ties.

    Raises:
        GraphError: If the graph has not been scaled yet.
    """
    if not g.scaled:
        raise GraphError("Only scaled similarities can be perturbed")
    rng = np.random.default_rng(seed)
    eps = np.finfo(np.float64).eps
    tiny = np.finfo(np.float64).tiny

    def jitter(side: SimilaritySide) -> SimilaritySide:
        noise = (eps * np.abs(side.sims) + tiny * 100) * rng.standard_normal(
            side.n_entries
        )
        return replace(side, sims=_read_only(side.sims + noise))

    return replace(g, image=jitter(g.image), tag=jitter(g.tag))
