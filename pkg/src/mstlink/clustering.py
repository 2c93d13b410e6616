"""Linkage-group discovery.

Markers are vertices of a complete graph weighted by pairwise distance;
edges above the Hoeffding threshold are dropped and the connected
components become candidate linkage groups.  The graph is never
materialized: pair distances stream block-wise into a union-find, which
keeps memory flat for large panels.
"""

from __future__ import annotations

import numpy as np

from . import gmath, model

_BLOCK = 512


class UnionFind:
    """Disjoint sets over 0..n-1 with path compression."""

    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return
        # smaller root wins so component ids follow the smallest member
        if rx < ry:
            self.parent[ry] = rx
        else:
            self.parent[rx] = ry

    def components(self):
        """Members per component, ordered by smallest member index."""
        groups: dict[int, list] = {}
        for i in range(len(self.parent)):
            groups.setdefault(self.find(i), []).append(i)
        return [tuple(groups[r]) for r in sorted(groups)]


def _onehot(avals: np.ndarray):
    ua = (avals == 1.0).astype(np.float64)
    ub = (avals == 0.0).astype(np.float64)
    uh = (avals == 0.5).astype(np.float64)
    return ua, ub, uh


def _pair_block(onehot_i, onehot_j):
    """Raw mismatch counts and shared-observation counts between two column
    blocks, via indicator matrix products."""
    ua_i, ub_i, uh_i = onehot_i
    ua_j, ub_j, uh_j = onehot_j
    raw = ua_i.T @ ub_j + ub_i.T @ ua_j
    if uh_i.any() or uh_j.any():
        raw += 0.5 * (uh_i.T @ (ua_j + ub_j) + (ua_i + ub_i).T @ uh_j)
    obs_i = ua_i + ub_i + uh_i
    obs_j = ua_j + ub_j + uh_j
    n_obs = obs_i.T @ obs_j
    return raw, n_obs


def linked_pair_stream(avals: np.ndarray, obs_threshold: float, union: UnionFind):
    """Feed every marker pair whose observed mismatch fraction is at or
    below ``obs_threshold`` into the union-find.  Pairs with no shared
    scored genotype never link."""
    t = avals.shape[1]
    blocks = [(s, min(s + _BLOCK, t)) for s in range(0, t, _BLOCK)]
    cached = [_onehot(avals[:, s:e]) for s, e in blocks]
    for bi, (si, ei) in enumerate(blocks):
        for bj in range(bi, len(blocks)):
            sj, ej = blocks[bj]
            raw, n_obs = _pair_block(cached[bi], cached[bj])
            with np.errstate(invalid="ignore", divide="ignore"):
                frac = raw / n_obs
            hit = (n_obs > 0) & (frac <= obs_threshold)
            if bi == bj:
                hit = np.triu(hit, k=1)
            for a, b in zip(*np.nonzero(hit)):
                union.union(si + int(a), sj + int(b))


def cluster_markers(
    matrix: model.MarkerMatrix,
    pop: model.PopulationType,
    epsilon: float,
    marker_subset=None,
    avals_override: np.ndarray | None = None,
):
    """Partition markers into linkage-group candidates.

    The Hoeffding threshold delta(n, epsilon) is expressed as a mismatch
    fraction; for RIL populations the comparison happens on the meiosis
    scale, which (by monotonicity of the forward selfing model) is the
    same as thresholding the observed fraction at the forward image of
    delta/n.  ``epsilon >= 1`` returns a single component.  Components are
    ordered by their smallest marker index; indices refer to the full
    matrix even when ``marker_subset`` restricts the clustering.
    """
    n = matrix.n
    if n < 2:
        raise model.DataError("clustering needs at least 2 genotypes")
    subset = list(range(matrix.t)) if marker_subset is None else [int(i) for i in marker_subset]
    if not subset:
        return []
    if epsilon >= 1.0:
        return [tuple(subset)]
    avals = model.avalues(matrix.calls[:, subset]) if avals_override is None else avals_override[:, subset]
    p_threshold = gmath.hoeffding_delta(n, epsilon) / n
    r = pop.meiosis_r
    obs_threshold = p_threshold if r is None else gmath.ril_expected_mismatch(p_threshold, r)
    union = UnionFind(len(subset))
    linked_pair_stream(avals, obs_threshold, union)
    return [tuple(subset[i] for i in comp) for comp in union.components()]
