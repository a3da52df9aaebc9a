"""Cluster-ensemble consensus: count-form NMI objective, CSPA and MCLA.

The consensus labeling is the candidate maximizing the summed normalized
mutual information against every input labeling.  Mutual information and
entropies are kept in raw count form (no 1/n): MI is then nonnegative,
entropies nonpositive, and their ratio equals the familiar sqrt-normalized
NMI.  Candidate labelings come from two consensus functions (CSPA on the
co-association matrix, MCLA on the cluster-hyperedge meta-graph) plus
any caller-supplied extras (the pipeline passes the best head's labeling).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .labeling import Labeling, canonicalize

__all__ = [
    "ContingencyTable",
    "CoAssociationMatrix",
    "contingency",
    "mutual_information",
    "entropy_count",
    "nmi",
    "anmi",
    "co_association",
    "cspa",
    "mcla",
    "supra_consensus",
]


@dataclass(frozen=True)
class ContingencyTable:
    """Co-occurrence counts between the clusters of two labelings."""

    counts: np.ndarray
    row_ids: np.ndarray
    col_ids: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-D matrix")
        if (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class CoAssociationMatrix:
    """n x n matrix of the fraction of labelings grouping each sample pair."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("co-association matrix must be square")
        if not np.allclose(np.diag(v), 1.0):
            raise ValueError("co-association diagonal must be 1")
        if not np.allclose(v, v.T):
            raise ValueError("co-association matrix must be symmetric")
        if v.min() < -1e-12 or v.max() > 1 + 1e-12:
            raise ValueError("co-association entries must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def contingency(a: Labeling, b: Labeling) -> ContingencyTable:
    """Exact cluster co-occurrence counts between two equal-length labelings."""
    if a.n != b.n:
        raise ValueError(f"labelings differ in length: {a.n} vs {b.n}")
    ua, ia = np.unique(a.labels, return_inverse=True)
    ub, ib = np.unique(b.labels, return_inverse=True)
    counts = np.bincount(ia * ub.size + ib, minlength=ua.size * ub.size)
    return ContingencyTable(counts.reshape(ua.size, ub.size), ua, ub)


def mutual_information(table: ContingencyTable) -> float:
    """Count-form mutual information: sum n_hl * log(n * n_hl / (n_h * n_l)).

    Terms are combined with an exactly rounded sum so the value is
    independent of cell order (hence exactly symmetric in the labelings).
    """
    counts = table.counts.astype(np.float64)
    n = float(table.n)
    outer = np.outer(table.row_sums, table.col_sums).astype(np.float64)
    mask = counts > 0
    return math.fsum(counts[mask] * np.log(n * counts[mask] / outer[mask]))


def entropy_count(labeling: Labeling) -> float:
    """Count-form entropy: sum n_h * log(n_h / n) (nonpositive)."""
    _, counts = np.unique(labeling.labels, return_counts=True)
    counts = counts.astype(np.float64)
    return math.fsum(counts * np.log(counts / labeling.n))


def nmi(a: Labeling, b: Labeling) -> float:
    """Normalized mutual information MI / sqrt(H(a) * H(b)), in [0, 1].

    Single-cluster labelings have zero entropy; any comparison involving one
    returns 0 by convention.
    """
    table = contingency(a, b)
    ha = entropy_count(a)
    hb = entropy_count(b)
    if ha == 0.0 or hb == 0.0:
        return 0.0
    value = mutual_information(table) / np.sqrt(ha * hb)
    return float(np.clip(value, 0.0, 1.0))


def nmi_pairwise(candidates: Sequence[Labeling], inputs: Sequence[Labeling], threads: int = 1):
    """NMI of every (candidate, input) pair; deterministic regardless of threads."""
    pairs = [(i, j) for i in range(len(candidates)) for j in range(len(inputs))]
    out = np.zeros((len(candidates), len(inputs)))
    if threads <= 1:
        for i, j in pairs:
            out[i, j] = nmi(candidates[i], inputs[j])
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda ij: nmi(candidates[ij[0]], inputs[ij[1]]), pairs))
        for (i, j), v in zip(pairs, values):
            out[i, j] = v
    return out


def anmi(candidate: Labeling, inputs: Sequence[Labeling]) -> float:
    """Summed NMI between a candidate and every input labeling."""
    if len(inputs) == 0:
        raise ValueError("need at least one input labeling")
    return math.fsum(nmi(candidate, lam) for lam in inputs)


def co_association(inputs: Sequence[Labeling], threads: int = 1) -> CoAssociationMatrix:
    """Fraction of input labelings placing each pair of samples together."""
    if len(inputs) == 0:
        raise ValueError("need at least one input labeling")
    n = inputs[0].n
    acc = np.zeros((n, n), dtype=np.float64)

    def add(lam: Labeling) -> np.ndarray:
        return (lam.labels[:, None] == lam.labels[None, :]).astype(np.float64)

    if threads <= 1 or len(inputs) < 2:
        for lam in inputs:
            if lam.n != n:
                raise ValueError("all labelings must cover the same samples")
            acc += add(lam)
    else:
        for lam in inputs:
            if lam.n != n:
                raise ValueError("all labelings must cover the same samples")
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for mat in pool.map(add, inputs):
                acc += mat
    acc /= len(inputs)
    np.fill_diagonal(acc, 1.0)
    return CoAssociationMatrix(acc)


def _average_linkage_cut(distance: np.ndarray, k: int) -> np.ndarray:
    """Average-linkage agglomeration on a precomputed distance matrix,
    cut into at most k flat clusters (1-based ids)."""
    m = distance.shape[0]
    if m == 1:
        return np.ones(1, dtype=np.int64)
    condensed = squareform(distance, checks=False)
    tree = linkage(condensed, method="average")
    return fcluster(tree, t=min(k, m), criterion="maxclust").astype(np.int64)


def cspa(inputs: Sequence[Labeling], k: int, threads: int = 1) -> Labeling:
    """Consensus by clustering the co-association matrix.

    Samples are grouped into k clusters by average-linkage agglomerative
    clustering on distance 1 - S.
    """
    if len(inputs) == 0:
        raise ValueError("need at least one input labeling")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = inputs[0].n
    if k > n:
        raise ValueError(f"k={k} exceeds sample count n={n}")
    s = co_association(inputs, threads=threads)
    flat = _average_linkage_cut(1.0 - s.values, k)
    return canonicalize(Labeling(flat))


def mcla(inputs: Sequence[Labeling], k: int) -> Labeling:
    """Consensus by grouping cluster hyperedges on Jaccard similarity.

    Every cluster of every input is a hyperedge over the samples.  Hyperedges
    are merged into k meta-clusters by average linkage on 1 - Jaccard, and
    each sample joins the meta-cluster where its average indicator membership
    is highest (ties going to the lowest meta-cluster index).  Meta-clusters
    that attract no samples are dropped, so the output may hold fewer than k
    clusters.
    """
    if len(inputs) == 0:
        raise ValueError("need at least one input labeling")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = inputs[0].n
    edges = []
    for lam in inputs:
        if lam.n != n:
            raise ValueError("all labelings must cover the same samples")
        for cid in np.unique(lam.labels):
            edges.append(lam.labels == cid)
    indicators = np.asarray(edges, dtype=np.float64)

    inter = indicators @ indicators.T
    sizes = indicators.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    jaccard = inter / union

    flat = _average_linkage_cut(1.0 - jaccard, k)
    # reindex meta-clusters by first appearance over the hyperedge order so
    # the argmax tie rule is well defined
    flat = canonicalize(Labeling(flat)).labels
    n_meta = int(flat.max())
    membership = np.zeros((n_meta, n))
    for meta in range(1, n_meta + 1):
        membership[meta - 1] = indicators[flat == meta].mean(axis=0)
    assigned = membership.argmax(axis=0) + 1
    return canonicalize(Labeling(assigned))


def supra_consensus(
    inputs: Sequence[Labeling],
    k: int,
    extra_candidates: Sequence[Labeling] = (),
    threads: int = 1,
) -> Labeling:
    """Pick the candidate labeling with the highest summed NMI to the inputs.

    Candidates are the CSPA and MCLA results plus any extras, considered in
    that order; ties keep the earliest candidate.
    """
    if len(inputs) == 0:
        raise ValueError("need at least one input labeling")
    candidates = [cspa(inputs, k, threads=threads), mcla(inputs, k)]
    candidates.extend(extra_candidates)
    best = None
    best_score = -np.inf
    for cand in candidates:
        score = anmi(cand, inputs)
        if score > best_score:
            best = cand
            best_score = score
    return best


def supra_consensus_table(
    inputs: Sequence[Labeling],
    k: int,
    extra_candidates: Sequence[Labeling] = (),
    extra_names: Sequence[str] = (),
    threads: int = 1,
):
    """Like :func:`supra_consensus` but also returns the per-candidate ANMI
    scores as (name, score, labeling) rows for reporting."""
    if len(inputs) == 0:
        raise ValueError("need at least one input labeling")
    names = ["cspa", "mcla"] + [
        extra_names[i] if i < len(extra_names) else f"extra_{i}"
        for i in range(len(extra_candidates))
    ]
    candidates = [cspa(inputs, k, threads=threads), mcla(inputs, k)]
    candidates.extend(extra_candidates)
    grid = nmi_pairwise(candidates, inputs, threads=threads)
    scores = [math.fsum(grid[i]) for i in range(len(candidates))]
    rows = [
        (name, score, cand) for name, score, cand in zip(names, scores, candidates)
    ]
    best_idx = 0
    for i, row in enumerate(rows):
        if row[1] > rows[best_idx][1]:
            best_idx = i
    return rows, best_idx
