# Utility functions to make testing easier
import os
import tempfile
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hybrid_ap.graph import (
    HeteroGraph,
    HetPotential,
    build_graph,
    build_potentials,
    scale_similarities,
    set_preferences,
)


def dense_edges(matrix: np.ndarray, include_diagonal: bool = True) -> List[Tuple[int, int, float]]:
    """Every finite entry of a square matrix as an (i, k, s) edge"""
    edges = []
    size = matrix.shape[0]
    for i in range(size):
        for k in range(size):
            if (i != k or include_diagonal) and np.isfinite(matrix[i, k]):
                edges.append((i, k, float(matrix[i, k])))
    return edges


def prepared(
    image_edges,
    tag_edges,
    assoc,
    n: int,
    m: int,
    theta: float = -1.0,
    lambda_image: float = 1.0,
    lambda_tag: float = 1.0,
) -> Tuple[HeteroGraph, HetPotential]:
    """Build, set preferences, scale and attach potentials"""
    g = build_graph(image_edges, tag_edges, assoc, n, m)
    g = set_preferences(g, lambda_image, lambda_tag)
    g = scale_similarities(g)
    return g, build_potentials(g, theta)


def random_instance(
    n: int,
    m: int,
    seed: int,
    theta: float = -1.0,
    low: float = -5.0,
    high: float = 0.0,
) -> Tuple[HeteroGraph, HetPotential]:
    """Dense random similarities in [low, high) on both sides; every image gets
    between one and all of the tags"""
    rng = np.random.default_rng(seed)
    image = rng.uniform(low, high, size=(n, n))
    tag = rng.uniform(low, high, size=(m, m))
    assoc = []
    if m:
        for i in range(n):
            count = int(rng.integers(1, m + 1))
            assoc += [(i, int(j)) for j in rng.choice(m, size=count, replace=False)]
    return prepared(
        dense_edges(image, include_diagonal=False),
        dense_edges(tag, include_diagonal=False),
        assoc,
        n,
        m,
        theta=theta,
    )


def block_matrix(
    groups: Sequence[int], within: float, across: float, rng=None, jitter: float = 0.0
) -> np.ndarray:
    """Similarities between nodes labelled with `groups`, with optional
    nonpositive jitter"""
    groups = np.asarray(groups)
    same = groups[:, None] == groups[None, :]
    matrix = np.where(same, within, across).astype(float)
    if rng is not None and jitter:
        matrix = matrix - rng.uniform(0.0, jitter, size=matrix.shape)
    return matrix


def two_cluster_instance(
    seed: int, theta: float = -1.0, jitter: float = 0.0
) -> Tuple[HeteroGraph, HetPotential]:
    """Six images in two clusters of three and four tags in two pairs, each image
    associated with both tags of its cluster. Similarities are -0.1 within a
    cluster and -5 across.

    Without jitter the seed only shuffles which nodes belong to which cluster.
    With jitter the nodes keep their block order and the seed draws the
    nonpositive noise instead.
    """
    rng = np.random.default_rng(seed)
    image_groups = np.array([0, 0, 0, 1, 1, 1])
    tag_groups = np.array([0, 0, 1, 1])
    if jitter:
        image = block_matrix(image_groups, -0.1, -5.0, rng, jitter=jitter)
        tag = block_matrix(tag_groups, -0.1, -5.0, rng, jitter=jitter)
    else:
        image_groups = rng.permutation(image_groups)
        tag_groups = rng.permutation(tag_groups)
        image = block_matrix(image_groups, -0.1, -5.0)
        tag = block_matrix(tag_groups, -0.1, -5.0)
    assoc = [
        (i, j)
        for i, gi in enumerate(image_groups)
        for j, gj in enumerate(tag_groups)
        if gi == gj
    ]
    return prepared(
        dense_edges(image, include_diagonal=False),
        dense_edges(tag, include_diagonal=False),
        assoc,
        6,
        4,
        theta=theta,
    )


def ambiguous_images_instance(seed: int) -> Tuple[HeteroGraph, HetPotential]:
    """Twelve images whose similarities all lie close to -1, in two halves that
    each carry their own pair of well separated tags. Tags are given a positive
    preference."""
    rng = np.random.default_rng(seed)
    image = rng.uniform(-1.02, -0.98, size=(12, 12))
    tag = block_matrix([0, 0, 1, 1], -0.5, -5.0)
    assoc = [(i, j) for i in range(12) for j in range(4) if (i < 6) == (j < 2)]
    return prepared(
        dense_edges(image, include_diagonal=False),
        dense_edges(tag, include_diagonal=False),
        assoc,
        12,
        4,
        theta=-1.0,
        lambda_image=1.0,
        lambda_tag=-3.0,
    )


def sparse_instance(n: int, neighbours: int, seed: int) -> Tuple[HeteroGraph, HetPotential]:
    """n images with `neighbours` random similarities each, n // 4 tags with five
    each, and two tags per image"""
    rng = np.random.default_rng(seed)
    m = max(n // 4, 6)

    def random_edges(size: int, per_node: int):
        rows = np.repeat(np.arange(size), per_node)
        offsets = rng.integers(1, size, size=rows.size)
        cols = (rows + offsets) % size
        values = rng.uniform(-5.0, -0.1, size=rows.size)
        pairs = {}
        for i, k, s in zip(rows.tolist(), cols.tolist(), values.tolist()):
            pairs[(i, k)] = s
        return [(i, k, s) for (i, k), s in pairs.items()]

    assoc = set()
    for i in range(n):
        for j in rng.choice(m, size=2, replace=False):
            assoc.add((i, int(j)))
    return prepared(
        random_edges(n, neighbours), random_edges(m, 5), sorted(assoc), n, m
    )


def write_temp_file(content: str, suffix: str = ".tsv", directory: Optional[str] = None) -> str:
    """Write `content` to a new temporary file and return its path"""
    fd, path = tempfile.mkstemp(suffix=suffix, dir=directory)
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        f.write(content)
    return path
