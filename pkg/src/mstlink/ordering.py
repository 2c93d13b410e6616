"""Marker ordering within a linkage group.

Per group: collapse zero-distance markers into bins, order the bin
representatives along a minimum-weight path (MST backbone plus local
search) and, for populations that support it, iterate an EM loop that
imputes missing calls, re-estimates pairwise distances, re-orders and
optionally flags suspicious calls.  cM positions accumulate from the
adjacent recombination fractions of the final order.

``construct_map`` drives the whole build: missing-marker routing,
clustering (or per-group reconstruction), ordering and reassembly into a
new Cross.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import gmath, model
from .clustering import UnionFind, cluster_markers, linked_pair_stream
from .model import DataError, MISSING

_TOL = 1e-12
# adjacent fractions are clamped just under 0.5 so a forced single-group
# ordering of unlinked markers yields a finite (if huge) gap
_RF_CAP = 0.49995


@dataclass(frozen=True)
class MapParams:
    """Construction knobs; defaults follow the conventional tool surface."""

    map_fn: str = gmath.KOSAMBI
    objective: str = gmath.COUNT
    p_value: float = 1e-6
    no_map_dist: float = 15.0
    no_map_size: int = 0
    miss_thresh: float = 1.0
    mvest_bc: bool = False
    detect_bad_data: bool = False
    anchor: bool = False
    bychr: bool = False
    suffix: str = "numeric"
    em_max_iter: int = 30
    em_tol: float = 1e-4
    workers: int = 1


@dataclass(frozen=True)
class BinSet:
    """Zero-distance marker bins; one representative is ordered and the
    rest re-insert at its position."""

    bins: tuple          # tuple of tuples of matrix indices
    representatives: tuple


@dataclass(frozen=True)
class OrderResult:
    marker_order: tuple       # all group markers, co-located members included
    positions: tuple
    rep_order: tuple          # ordered bin representatives (matrix indices)
    rep_positions: tuple
    rep_for_marker: tuple     # representative backing each marker_order entry
    imputed: np.ndarray       # n x len(rep_order) A-certainty matrix
    flagged: tuple            # (genotype_row, matrix_marker_index) pairs
    iterations: int
    objective_trace: tuple


def bin_markers(matrix: model.MarkerMatrix, group_indices) -> BinSet:
    """Group markers with zero pairwise distance.

    Exact duplicate columns are found by hashing; when missing data could
    make distinct columns zero-distance, the remaining pattern
    representatives go through the blocked pair stream with a zero
    threshold.  Representative = fewest missing calls, ties to the lowest
    input index.
    """
    idx = [int(i) for i in group_indices]
    if not idx:
        raise DataError("cannot bin an empty marker group")
    calls = matrix.calls[:, idx]
    pattern_members: dict[bytes, list] = {}
    for local in range(calls.shape[1]):
        pattern_members.setdefault(calls[:, local].tobytes(), []).append(local)
    merged = [sorted(p) for p in pattern_members.values()]
    if (calls == MISSING).any() and len(merged) > 1:
        pattern_reps = [p[0] for p in merged]
        av = model.avalues(calls[:, pattern_reps])
        uf = UnionFind(len(merged))
        linked_pair_stream(av, 0.0, uf)
        merged = [sorted(m for c in comp for m in merged[c]) for comp in uf.components()]
    miss = (calls == MISSING).sum(axis=0)
    bins, reps = [], []
    for local_members in merged:
        k = int(np.argmin(miss[local_members]))  # first minimum = lowest index
        bins.append(tuple(idx[m] for m in local_members))
        reps.append(idx[local_members[k]])
    order = np.argsort([b[0] for b in bins])
    return BinSet(tuple(bins[i] for i in order), tuple(reps[i] for i in order))


# ---------------------------------------------------------------------------
# MST backbone

def mst_order(weights: np.ndarray):
    """Initial order from a minimum spanning tree (Prim, lowest-index ties).

    If the MST is already a path, that path is the order.  Otherwise the
    backbone is the tree diameter (maximum accumulated edge weight, found
    by a double sweep) and off-path vertices are returned as leftovers for
    cost-minimizing insertion.
    """
    w = np.asarray(weights, dtype=np.float64)
    m = w.shape[0]
    if m == 1:
        return [0], []
    in_tree = np.zeros(m, dtype=bool)
    in_tree[0] = True
    best_w = w[0].copy()
    best_w[0] = np.inf
    best_parent = np.zeros(m, dtype=np.int64)
    adj = [[] for _ in range(m)]
    for _ in range(m - 1):
        v = int(np.argmin(best_w))
        p = int(best_parent[v])
        adj[v].append(p)
        adj[p].append(v)
        in_tree[v] = True
        best_w[v] = np.inf
        closer = (w[v] < best_w) & ~in_tree
        best_parent[closer] = v
        best_w[closer] = w[v][closer]
    for nb in adj:
        nb.sort()
    if max(len(nb) for nb in adj) <= 2:
        ends = [v for v in range(m) if len(adj[v]) == 1]
        return _walk_path(adj, min(ends)), []
    far, _ = _farthest(adj, w, 0)
    far2, parents = _farthest(adj, w, far)
    path = [far2]
    while parents[path[-1]] >= 0:
        path.append(int(parents[path[-1]]))
    leftovers = sorted(set(range(m)) - set(path))
    return path, leftovers


def _walk_path(adj, start):
    order = [start]
    prev = -1
    while True:
        nxt = [u for u in adj[order[-1]] if u != prev]
        if not nxt:
            return order
        prev = order[-1]
        order.append(nxt[0])


def _farthest(adj, w, start):
    m = len(adj)
    dist = np.full(m, -1.0)
    dist[start] = 0.0
    parents = np.full(m, -1, dtype=np.int64)
    stack = [start]
    while stack:
        v = stack.pop()
        for u in adj[v]:
            if dist[u] < 0:
                dist[u] = dist[v] + w[v, u]
                parents[u] = v
                stack.append(u)
    return int(np.argmax(dist)), parents


# ---------------------------------------------------------------------------
# local search

@lru_cache(maxsize=8)
def _perms(k: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(k))), dtype=np.int64)


def path_cost(order, weights) -> float:
    o = np.asarray(order, dtype=np.int64)
    if o.size < 2:
        return 0.0
    return float(weights[o[:-1], o[1:]].sum())


def _best_insertion(order, weights, v):
    o = np.asarray(order, dtype=np.int64)
    pos, cost = 0, float(weights[v, o[0]])
    tail = float(weights[o[-1], v])
    if tail < cost:
        pos, cost = len(order), tail
    if len(order) > 1:
        deltas = weights[o[:-1], v] + weights[v, o[1:]] - weights[o[:-1], o[1:]]
        k = int(np.argmin(deltas))
        if deltas[k] < cost:
            pos, cost = k + 1, float(deltas[k])
    return pos, cost


def _node_relocation_pass(order, weights) -> bool:
    improved = False
    i = 0
    while i < len(order):
        if len(order) < 3:
            break
        v = order[i]
        left = weights[order[i - 1], v] if i > 0 else 0.0
        right = weights[v, order[i + 1]] if i < len(order) - 1 else 0.0
        bridge = weights[order[i - 1], order[i + 1]] if 0 < i < len(order) - 1 else 0.0
        removal = left + right - bridge
        rest = order[:i] + order[i + 1:]
        pos, cost = _best_insertion(rest, weights, v)
        if cost < removal - _TOL:
            rest.insert(pos, v)
            order[:] = rest
            improved = True
        else:
            i += 1
    return improved


def _window_pass(order, weights, k: int = 6) -> bool:
    m = len(order)
    if m < 3:
        return False
    k = min(k, m)
    perms = _perms(k)
    improved = False
    for s in range(m - k + 1):
        win = np.asarray(order[s:s + k], dtype=np.int64)
        sub = weights[np.ix_(win, win)]
        total = sub[perms[:, :-1], perms[:, 1:]].sum(axis=1)
        if s > 0:
            total = total + weights[order[s - 1], win[perms[:, 0]]]
        if s + k < m:
            total = total + weights[win[perms[:, -1]], order[s + k]]
        best = int(np.argmin(total))
        if total[best] < total[0] - _TOL:
            order[s:s + k] = [int(x) for x in win[perms[best]]]
            improved = True
    return improved


def _scan_block_reversals(order, weights, max_len):
    o = np.asarray(order, dtype=np.int64)
    m = len(order)
    best = (-_TOL, None)
    for length in range(2, min(max_len, m) + 1):
        i = np.arange(0, m - length + 1)
        first, last = o[i], o[i + length - 1]
        delta = np.zeros(i.size)
        has_left = i > 0
        if has_left.any():
            li = i[has_left]
            delta[has_left] += weights[o[li - 1], last[has_left]] - weights[o[li - 1], first[has_left]]
        has_right = i + length < m
        if has_right.any():
            ri = i[has_right]
            delta[has_right] += weights[first[has_right], o[ri + length]] - weights[last[has_right], o[ri + length]]
        k = int(np.argmin(delta))
        if delta[k] < best[0]:
            best = (float(delta[k]), ("rev", int(i[k]), length))
    return best


def _scan_block_moves(order, weights, max_len):
    """Best relocation of a contiguous block, forward or reversed."""
    o = np.asarray(order, dtype=np.int64)
    m = len(order)
    best = (-_TOL, None)
    for length in range(2, min(max_len, m - 1) + 1):
        starts = np.arange(0, m - length + 1)
        first, last = o[starts], o[starts + length - 1]
        removal = np.zeros(starts.size)
        has_left = starts > 0
        has_right = starts + length < m
        if has_left.any():
            removal[has_left] += weights[o[starts[has_left] - 1], first[has_left]]
        if has_right.any():
            removal[has_right] += weights[last[has_right], o[starts[has_right] + length]]
        both = has_left & has_right
        if both.any():
            removal[both] -= weights[o[starts[both] - 1], o[starts[both] + length]]
        # insertion costs against the original path; gaps touching the block
        # are masked (they reduce to no-move or to a pure reversal)
        ins_f = np.empty((m + 1, starts.size))
        ins_r = np.empty((m + 1, starts.size))
        g = np.arange(1, m)
        bridge = weights[o[g - 1], o[g]][:, None]
        ins_f[g] = weights[np.ix_(o[g - 1], first)] + weights[np.ix_(last, o[g])].transpose() - bridge
        ins_r[g] = weights[np.ix_(o[g - 1], last)] + weights[np.ix_(first, o[g])].transpose() - bridge
        ins_f[0] = weights[last, o[0]]
        ins_r[0] = weights[first, o[0]]
        ins_f[m] = weights[o[-1], first]
        ins_r[m] = weights[o[-1], last]
        gaps = np.arange(m + 1)[:, None]
        invalid = (gaps >= starts[None, :]) & (gaps <= starts[None, :] + length)
        ins_f[invalid] = np.inf
        ins_r[invalid] = np.inf
        ins = np.minimum(ins_f, ins_r)
        flat = (ins - removal[None, :]).ravel()
        k = int(np.argmin(flat))
        if flat[k] < best[0]:
            gap, s = divmod(k, starts.size)
            rev = bool(ins_r[gap, s] < ins_f[gap, s])
            best = (float(flat[k]), ("move", int(starts[s]), length, int(gap), rev))
    return best


def _apply_block(order, move):
    if move[0] == "rev":
        _, i, length = move
        order[i:i + length] = order[i:i + length][::-1]
        return
    _, start, length, gap, rev = move
    block = order[start:start + length]
    if rev:
        block = block[::-1]
    rest = order[:start] + order[start + length:]
    dest = gap if gap < start else gap - length
    order[:] = rest[:dest] + block + rest[dest:]


def _block_pass(order, weights, max_len: int = 20) -> bool:
    improved = False
    for _ in range(4 * len(order)):
        d_rev, mv_rev = _scan_block_reversals(order, weights, max_len)
        d_mov, mv_mov = _scan_block_moves(order, weights, max_len)
        move = mv_rev if d_rev <= d_mov else mv_mov
        if move is None:
            break
        _apply_block(order, move)
        improved = True
    return improved


def local_optimize(order, weights, leftovers=(), max_passes: int = 30):
    """Improve a path by leftover insertion, node relocation, exhaustive
    re-permutation of sliding 6-windows and block reversal/relocation
    (blocks up to 20 markers).

    Paths of up to 8 markers fit inside a single exhaustive window, so
    tiny groups come out exactly optimal.  Every accepted move strictly
    lowers the sum of adjacent weights, so the objective is non-increasing
    and the loop reaches a fixed point (or the pass cap).
    """
    order = [int(v) for v in order]
    for v in leftovers:
        pos, _ = _best_insertion(order, weights, int(v))
        order.insert(pos, int(v))
    window = len(order) if len(order) <= 8 else 6
    for _ in range(max_passes):
        changed = _node_relocation_pass(order, weights)
        changed |= _window_pass(order, weights, k=window)
        changed |= _block_pass(order, weights)
        if not changed:
            break
    return order


# ---------------------------------------------------------------------------
# EM imputation and error detection

def impute_missing(a_cur: np.ndarray, missing_mask: np.ndarray, order, adj_p) -> np.ndarray:
    """One E-step: refresh the posterior A-certainty of missing cells.

    The flanking markers' current A-values act as independent evidence
    through the adjacent recombination fractions; a terminal marker sees a
    single flank (the absent side contributes a neutral 0.5).  Observed
    cells pass through unchanged.
    """
    o = np.asarray(order, dtype=np.int64)
    a_ord = a_cur[:, o]
    n, m = a_ord.shape
    if m == 1:
        return a_cur.copy()
    p = np.clip(np.asarray(adj_p, dtype=np.float64), 1e-9, 0.5)
    el = np.full((n, m), 0.5)
    er = np.full((n, m), 0.5)
    el[:, 1:] = a_ord[:, :-1] * (1.0 - p) + (1.0 - a_ord[:, :-1]) * p
    er[:, :-1] = a_ord[:, 1:] * (1.0 - p) + (1.0 - a_ord[:, 1:]) * p
    num = el * er
    post = num / (num + (1.0 - el) * (1.0 - er))
    out = a_cur.copy()
    out[:, o] = np.where(missing_mask[:, o], post, a_ord)
    return out


def em_impute_step(a_cur: np.ndarray, missing_mask: np.ndarray, order):
    """One full EM sweep: impute missing cells from current adjacent
    distances, then re-estimate all pairwise distances from the refreshed
    probability matrix.  Returns (A, distances)."""
    n = a_cur.shape[0]
    filled = np.where(np.isnan(a_cur), 0.5, a_cur)
    d0 = gmath.soft_distance_matrix(filled)
    o = np.asarray(order, dtype=np.int64)
    adj_p = d0[o[:-1], o[1:]] / n
    a_new = impute_missing(filled, missing_mask, order, adj_p)
    return a_new, gmath.soft_distance_matrix(a_new)


def detect_bad_data(a: np.ndarray, observed_mask: np.ndarray, order, distances: np.ndarray,
                    window: int = 3, threshold: float = 0.75):
    """Flag observed calls far from the inverse-square-distance weighted
    average of up to ``window`` markers on each side.

    Only observed neighbour calls count as evidence (imputed cells are
    echoes of their own flanks, not measurements).  Distances are mismatch
    counts; zero-distance neighbours are floored at 0.5 mismatches so
    co-segregating neighbours cannot dominate with an infinite weight.
    Returns (genotype_row, local_column) pairs.
    """
    o = [int(v) for v in order]
    m = len(o)
    if m < 2:
        return []
    oa = np.asarray(o, dtype=np.int64)
    a_ord = a[:, oa]
    obs_ord = observed_mask[:, oa].astype(np.float64)
    n = a.shape[0]
    acc_l = np.zeros((n, m))
    wsum_l = np.zeros((n, m))
    acc_r = np.zeros((n, m))
    wsum_r = np.zeros((n, m))
    for off in range(1, min(window, m - 1) + 1):
        d = distances[oa[:-off], oa[off:]]
        wgt = 1.0 / np.maximum(d, 0.5) ** 2
        acc_r[:, :-off] += a_ord[:, off:] * obs_ord[:, off:] * wgt
        wsum_r[:, :-off] += obs_ord[:, off:] * wgt
        acc_l[:, off:] += a_ord[:, :-off] * obs_ord[:, :-off] * wgt
        wsum_l[:, off:] += obs_ord[:, :-off] * wgt
    with np.errstate(invalid="ignore", divide="ignore"):
        exp_l = acc_l / wsum_l
        exp_r = acc_r / wsum_r
        exp_all = (acc_l + acc_r) / (wsum_l + wsum_r)
    # a genotyping error contradicts the markers on both sides, whereas a
    # genuine crossover agrees with one side; requiring every available
    # side to contradict keeps recombinant boundaries off the flag list
    bad_l = (wsum_l == 0) | (np.abs(exp_l - a_ord) > threshold)
    bad_r = (wsum_r == 0) | (np.abs(exp_r - a_ord) > threshold)
    pooled = (wsum_l + wsum_r > 0) & (np.abs(exp_all - a_ord) > threshold)
    hit = observed_mask[:, oa].astype(bool) & pooled & bad_l & bad_r
    rows, cols = np.nonzero(hit)
    return [(int(r), int(oa[c])) for r, c in zip(rows, cols)]


# ---------------------------------------------------------------------------
# per-group driver

def _initial_distances(avals: np.ndarray, n: int) -> np.ndarray:
    d, _ = gmath.hamming_matrix(avals)
    # a pair with no shared scored genotype carries no linkage signal
    return np.where(np.isnan(d), n / 2.0, d)


def _weights_from_distances(d: np.ndarray, n: int, pop, objective: str) -> np.ndarray:
    rho = model.transform_rf(np.clip(d / n, 0.0, 0.5), pop)
    w = gmath.weight(rho, objective)
    np.fill_diagonal(w, 0.0)
    return w


def _canonical(order):
    return order[::-1] if order[0] > order[-1] else order


def order_linkage_group(matrix: model.MarkerMatrix, group_indices, pop: model.PopulationType,
                        params: MapParams = MapParams()) -> OrderResult:
    """Bin, order and position the markers of one linkage group.

    For BC/DH/ARIL the EM loop runs to a fixed point: imputation of
    missing calls, distance re-estimation, re-ordering and (optionally)
    suspicious-call detection, whose hits become missing for the next
    sweep.  Finite-r RIL populations order once from the transformed
    pairwise distances; imputation and error detection stay off for them.
    """
    if params.detect_bad_data and not pop.supports_em:
        raise DataError("error detection is not available for finite-r RIL populations")
    n = matrix.n
    bins = bin_markers(matrix, group_indices)
    reps = list(bins.representatives)
    m = len(reps)
    a_obs = model.avalues(matrix.calls[:, reps])
    if m == 1:
        return _assemble(bins, [0], np.zeros((1, 1)), a_obs, [], 0, (0.0,), matrix, params, pop, reps)

    d = _initial_distances(a_obs, n)
    weights = _weights_from_distances(d, n, pop, params.objective)
    order, leftovers = mst_order(weights)
    order = _canonical(local_optimize(order, weights, leftovers))
    trace = [_count_objective(order, d, n, pop)]
    flagged: list = []
    iterations = 0

    if pop.supports_em:
        observed = ~np.isnan(a_obs)
        missing = ~observed
        a_cur = np.where(missing, 0.5, a_obs)
        oa = np.asarray(order, dtype=np.int64)
        prev_order = list(order)
        prev_adj = d[oa[:-1], oa[1:]] / n
        for iterations in range(1, params.em_max_iter + 1):
            oa = np.asarray(order, dtype=np.int64)
            adj_p = np.clip(d[oa[:-1], oa[1:]] / n, 1e-9, 0.5)
            a_cur = impute_missing(a_cur, missing, order, adj_p)
            d = gmath.soft_distance_matrix(a_cur)
            weights = _weights_from_distances(d, n, pop, params.objective)
            new_order, lo = mst_order(weights)
            new_order = _canonical(local_optimize(new_order, weights, lo))
            trace.append(_count_objective(new_order, d, n, pop))
            new_flags = []
            if params.detect_bad_data:
                # weight the neighbourhood consensus by distances that only
                # count observed disagreements; post-imputation distances
                # collapse for marker pairs separated solely by removed
                # errors and would let a single twin marker dominate
                d_obs, _ = gmath.hamming_matrix(np.where(observed, a_cur, np.nan))
                d_obs = np.where(np.isnan(d_obs), n / 2.0, d_obs)
                known = set(flagged)
                new_flags = [fl for fl in detect_bad_data(a_cur, observed, new_order, d_obs)
                             if fl not in known]
                for row, col in new_flags:
                    observed[row, col] = False
                    missing[row, col] = True
                    a_cur[row, col] = 0.5
                flagged.extend(new_flags)
            oa_new = np.asarray(new_order, dtype=np.int64)
            adj_new = d[oa_new[:-1], oa_new[1:]] / n
            if new_order == prev_order and adj_new.shape == prev_adj.shape:
                stable = float(np.max(np.abs(adj_new - prev_adj))) < params.em_tol
            else:
                # tolerate objective-neutral reshuffles of near-tied markers
                stable = abs(float(adj_new.sum()) - float(prev_adj.sum())) < params.em_tol
            prev_order, prev_adj, order = list(new_order), adj_new, new_order
            if stable and not new_flags:
                break
        a_final = a_cur
    else:
        a_final = a_obs

    flagged = [(row, reps[col]) for row, col in flagged]
    return _assemble(bins, order, d, a_final, flagged, iterations, tuple(trace),
                     matrix, params, pop, reps)


def _count_objective(order, d, n, pop) -> float:
    o = np.asarray(order, dtype=np.int64)
    if o.size < 2:
        return 0.0
    adj = np.clip(d[o[:-1], o[1:]] / n, 0.0, 0.5)
    return float(model.transform_rf(adj, pop).sum())


def _assemble(bins, order, d, a_final, flagged, iterations, trace, matrix, params, pop, reps):
    n = matrix.n
    order = [int(v) for v in order]
    if len(order) > 1:
        if params.anchor:
            # orient so the final order runs with the input order
            seq = np.asarray([reps[v] for v in order], dtype=np.float64)
            slope = float(np.corrcoef(np.arange(seq.size), seq)[0, 1]) if seq.size > 2 else float(seq[1] - seq[0])
            if slope < 0:
                order = order[::-1]
        else:
            order = _canonical(order)
    rep_ids = [reps[v] for v in order]
    if len(order) > 1:
        oa = np.asarray(order, dtype=np.int64)
        adj_obs = np.clip(d[oa[:-1], oa[1:]] / n, 0.0, _RF_CAP)
        rho = np.clip(model.transform_rf(adj_obs, pop), 0.0, _RF_CAP)
        rep_pos = np.concatenate([[0.0], np.cumsum(gmath.map_forward(rho, params.map_fn))])
    else:
        rep_pos = np.zeros(1)
    members_of = dict(zip(bins.representatives, bins.bins))
    marker_order, positions, rep_for_marker = [], [], []
    for rep, pos in zip(rep_ids, rep_pos):
        for member in members_of[rep]:
            marker_order.append(member)
            positions.append(float(pos))
            rep_for_marker.append(rep)
    col_of = {r: j for j, r in enumerate(reps)}
    imputed = a_final[:, [col_of[r] for r in rep_ids]]
    return OrderResult(
        tuple(marker_order), tuple(positions), tuple(rep_ids),
        tuple(float(p) for p in rep_pos), tuple(rep_for_marker),
        imputed, tuple(flagged), iterations, tuple(trace),
    )


# ---------------------------------------------------------------------------
# whole-map construction

@dataclass(frozen=True)
class ConstructResult:
    cross: model.Cross
    imputed: dict      # group name -> (rep marker names, n x m A matrix)
    flagged: tuple     # (genotype name, marker name) pairs


def construct_map(cross: model.Cross, params: MapParams = MapParams()) -> ConstructResult:
    """Cluster (or keep) linkage groups and optimally order each one.

    ``bychr=False`` pools every in-map marker, clusters at ``p_value`` and
    orders each component; ``bychr=True`` reconstructs within each existing
    group, re-splitting only when ``p_value`` < 1.  Markers whose missing
    proportion exceeds ``miss_thresh`` move to the missing ledger before
    construction; terminal segments more than ``no_map_dist`` cM from the
    rest of an ordered group and no longer than ``no_map_size`` markers
    move to the "omitted" ledger.
    """
    if cross.n < 2:
        raise DataError("map construction needs at least 2 genotypes")
    if cross.n_map_markers == 0:
        raise DataError("map construction needs at least 1 marker")
    if params.detect_bad_data and not cross.pop.supports_em:
        raise DataError("error detection is not available for finite-r RIL populations")

    matrix, pop = cross.matrix, cross.pop
    ledgers = dict(cross.ledgers)

    markers_ok = np.ones(matrix.t, dtype=bool)
    miss_prop = model.missing_proportion(matrix.calls)
    too_missing = miss_prop > params.miss_thresh
    if too_missing.any():
        idx = np.flatnonzero(too_missing)
        ledgers[model.LEDGER_MISSING] = model.merge_ledgers(
            ledgers.get(model.LEDGER_MISSING),
            _ledger_from_columns(matrix, idx, model.LEDGER_MISSING, pop),
        )
        markers_ok[idx] = False
        if not markers_ok.any():
            raise DataError("every marker exceeded the missing threshold")

    avals_override = None
    if params.mvest_bc and pop.kind in ("BC", "DH"):
        avals_override = _mvest_avalues(matrix, cross.groups, markers_ok)

    components: list[tuple[str, tuple]] = []
    if params.bychr:
        for g in cross.groups:
            live = [i for i in g.markers if markers_ok[i]]
            if not live:
                continue
            if params.p_value < 1.0:
                parts = cluster_markers(matrix, pop, params.p_value, live, avals_override)
            else:
                parts = [tuple(live)]
            if len(parts) == 1:
                components.append((g.name, parts[0]))
            else:
                for k, part in enumerate(parts, start=1):
                    components.append((_suffix(g.name, k, params.suffix), part))
    else:
        live = [i for i in range(matrix.t) if markers_ok[i]]
        parts = cluster_markers(matrix, pop, params.p_value, live, avals_override)
        for k, part in enumerate(parts, start=1):
            components.append((_suffix("L", k, params.suffix), part))

    def build(component):
        name, part = component
        return name, order_linkage_group(matrix, part, pop, params)

    if params.workers > 1 and len(components) > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            ordered = list(pool.map(build, components))
    else:
        ordered = [build(c) for c in components]

    flagged_cells: list = []
    imputed: dict = {}
    group_specs: list = []
    omitted: list = []
    for name, result in ordered:
        keep, dropped = _route_no_map(result, params)
        omitted.extend(dropped)
        marker_order = [i for i, _ in keep]
        positions = [p for _, p in keep]
        positions = [p - positions[0] for p in positions]
        group_specs.append((name, marker_order, positions))
        rep_names = tuple(matrix.marker_names[i] for i in result.rep_order)
        imputed[name] = (rep_names, result.imputed)
        flagged_cells.extend(result.flagged)

    calls = matrix.calls.copy()
    for row, col in flagged_cells:
        calls[row, col] = MISSING

    if omitted:
        idx = sorted(i for i, _ in omitted)
        gaps = dict(omitted)
        led = model.MarkerLedger(
            tuple(matrix.marker_names[i] for i in idx),
            calls[:, idx],
            {"gap_cM": tuple(float(gaps[i]) for i in idx)},
        )
        ledgers[model.LEDGER_OMITTED] = model.merge_ledgers(ledgers.get(model.LEDGER_OMITTED), led)

    kept = [i for _, idx, _ in group_specs for i in idx]
    remap = {old: new for new, old in enumerate(kept)}
    new_matrix = model.MarkerMatrix(
        matrix.genotype_names, tuple(matrix.marker_names[i] for i in kept), calls[:, kept]
    )
    groups = [model.LinkageGroup(name, [remap[i] for i in idx], pos)
              for name, idx, pos in group_specs]
    new_cross = model.Cross(new_matrix, pop, groups, ledgers)
    flagged_names = tuple(
        (matrix.genotype_names[r], matrix.marker_names[c]) for r, c in flagged_cells
    )
    return ConstructResult(new_cross, imputed, flagged_names)


def _suffix(name: str, k: int, suffix: str) -> str:
    if suffix == "alpha":
        return f"{name}.{chr(ord('A') + k - 1)}"
    return f"{name}.{k}"


def _mvest_avalues(matrix, groups, markers_ok) -> np.ndarray:
    """One imputation sweep over the input order, used only to firm up
    clustering distances when requested (BC/DH)."""
    av = model.avalues(matrix.calls)
    out = av.copy()
    n = matrix.n
    for g in groups:
        idx = [i for i in g.markers if markers_ok[i]]
        if len(idx) < 2:
            continue
        sub = av[:, idx]
        missing = np.isnan(sub)
        filled = np.where(missing, 0.5, sub)
        d = _initial_distances(sub, n)
        order = list(range(len(idx)))
        oa = np.asarray(order, dtype=np.int64)
        adj_p = np.clip(d[oa[:-1], oa[1:]] / n, 1e-9, 0.5)
        out[:, idx] = impute_missing(filled, missing, order, adj_p)
    return out


def _route_no_map(result: OrderResult, params: MapParams):
    """Segment an ordered group at gaps wider than no_map_dist and shed
    terminal segments of at most no_map_size markers (never the whole
    group).  Returns kept (marker, position) pairs and (marker, gap) for
    the shed ones."""
    pairs = list(zip(result.marker_order, result.positions))
    if params.no_map_size <= 0 or len(result.rep_positions) < 2:
        return pairs, []
    pos = result.rep_positions
    segments = [[0]]
    for j in range(1, len(pos)):
        if pos[j] - pos[j - 1] > params.no_map_dist:
            segments.append([j])
        else:
            segments[-1].append(j)
    if len(segments) == 1:
        return pairs, []
    seg_of_rep = {result.rep_order[j]: s for s, seg in enumerate(segments) for j in seg}
    seg_count = [0] * len(segments)
    for rep in result.rep_for_marker:
        seg_count[seg_of_rep[rep]] += 1
    lo, hi = 0, len(segments) - 1
    while lo < hi and seg_count[lo] <= params.no_map_size:
        lo += 1
    while hi > lo and seg_count[hi] <= params.no_map_size:
        hi -= 1
    if lo == 0 and hi == len(segments) - 1:
        return pairs, []
    kept, dropped = [], []
    for (marker, p), rep in zip(pairs, result.rep_for_marker):
        s = seg_of_rep[rep]
        if lo <= s <= hi:
            kept.append((marker, p))
        else:
            edge = segments[lo][0] if s < lo else segments[hi][-1]
            inner = segments[s][-1] if s < lo else segments[s][0]
            dropped.append((marker, abs(pos[edge] - pos[inner])))
    return kept, dropped


def _ledger_from_columns(matrix, idx, key, pop):
    idx = [int(i) for i in idx]
    return model.MarkerLedger(
        tuple(matrix.marker_names[i] for i in idx),
        matrix.calls[:, idx],
        model.ledger_stat_values(key, matrix.calls[:, idx], pop),
    )
