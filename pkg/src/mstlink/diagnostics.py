"""Map diagnostics and construction workflow tooling.

Genotype/marker/interval statistics, segregation-distortion tests,
two-point LOD, heat-map matrices, clone detection and consensus, the
pull/push marker ledgers, and fast distance re-estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, poisson

from . import gmath, model, ordering
from .clustering import UnionFind
from .model import A, B, HET, MISSING, Cross, DataError, LinkageGroup, MarkerMatrix, MarkerLedger

PULL_TYPES = (model.LEDGER_CO_LOCATED, model.LEDGER_SEG_DISTORTION, model.LEDGER_MISSING)
PUSH_TYPES = PULL_TYPES + ("unlinked",)

MARKER_STAT_NAMES = ("seg.dist", "miss", "prop", "dxo")
INTERVAL_STAT_NAMES = ("erf", "lod", "dist", "mrf", "recomb")


@dataclass(frozen=True)
class PushParams:
    """Thresholds shared by pull_markers/push_markers."""

    seg_thresh: float | str = 0.05
    seg_ratio: str | None = None
    miss_thresh: float = 0.1
    max_rf: float = 0.25
    min_lod: float = 3.0


# ---------------------------------------------------------------------------
# genotype statistics

@dataclass(frozen=True)
class GenotypeStats:
    genotype_names: tuple
    xo: np.ndarray
    dxo: np.ndarray
    miss: np.ndarray
    xo_lambda: float | None
    flagged: np.ndarray  # bool; all False when xo_lambda is None


def profile_genotypes(cross: Cross, xo_lambda: float | None = None) -> GenotypeStats:
    """Per-genotype crossover, double-crossover and missing counts.

    xo counts changes between consecutive non-missing calls along each
    group; dxo counts calls that differ from both non-missing immediate
    neighbours.  With ``xo_lambda``, genotypes whose upper-tail Poisson
    p-value falls below 0.05/n are flagged as excessive recombiners.
    """
    n = cross.n
    xo = np.zeros(n, dtype=np.int64)
    dxo = np.zeros(n, dtype=np.int64)
    miss = (cross.matrix.calls == MISSING).sum(axis=1)
    for g in cross.groups:
        calls = cross.matrix.calls[:, list(g.markers)]
        for i in range(n):
            row = calls[i]
            seq = row[row != MISSING]
            if seq.size < 2:
                continue
            change = seq[1:] != seq[:-1]
            xo[i] += int(change.sum())
            if seq.size >= 3:
                dxo[i] += int((change[:-1] & change[1:]).sum())
    if xo_lambda is not None:
        pvals = poisson.sf(xo - 1, xo_lambda)  # P(X >= xo)
        flagged = pvals < 0.05 / n
    else:
        flagged = np.zeros(n, dtype=bool)
    return GenotypeStats(cross.matrix.genotype_names, xo, dxo, miss, xo_lambda, flagged)


# ---------------------------------------------------------------------------
# marker/interval statistics

def seg_distortion_test(column: np.ndarray, pop: model.PopulationType) -> float:
    """-log10 p of the segregation chi-square test for one marker column."""
    return model.seg_distortion_neglog10p(column, pop)


def two_point_lod(d: float, n_obs: int) -> float:
    """LOD for linkage of a marker pair from its mismatch count.

    With p = clamp(d / n_obs, [0, 0.5]): LOD = d log10(2p) +
    (n_obs - d) log10(2(1-p)); zero-count terms contribute 0, so LOD >= 0
    with equality exactly at p = 0.5.
    """
    if n_obs <= 0:
        raise DataError("two_point_lod needs at least one informative pair")
    p = min(max(d / n_obs, 0.0), 0.5)
    lod = 0.0
    if d > 0:
        lod += d * math.log10(2.0 * p)
    if n_obs - d > 0:
        lod += (n_obs - d) * math.log10(2.0 * (1.0 - p))
    return max(lod, 0.0)


def _lod_matrix(raw: np.ndarray, n_obs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.clip(raw / n_obs, 0.0, 0.5)
        term1 = np.where(raw > 0, raw * np.log10(2.0 * p), 0.0)
        term2 = np.where(n_obs - raw > 0, (n_obs - raw) * np.log10(2.0 * (1.0 - p)), 0.0)
    lod = np.where(n_obs > 0, term1 + term2, np.nan)
    return np.maximum(lod, 0.0)


@dataclass(frozen=True)
class MarkerStats:
    marker_names: tuple
    marker_group: tuple
    marker_pos: tuple
    neglog10P: np.ndarray
    miss: np.ndarray
    prop: dict                 # symbol -> per-marker allele proportion
    marker_dxo: np.ndarray
    interval_left: tuple
    interval_right: tuple
    interval_group: tuple
    erf: np.ndarray
    lod: np.ndarray
    dist: np.ndarray
    mrf: np.ndarray
    recomb: np.ndarray
    n_obs: np.ndarray
    marker_flagged: np.ndarray
    interval_weak: np.ndarray


def profile_markers(cross: Cross, stats=None, crit_val: str | None = None,
                    map_fn: str = gmath.KOSAMBI) -> MarkerStats:
    """Marker statistics (distortion, missingness, allele proportions,
    double crossovers) and interval statistics (estimated rf, LOD, map
    distance, map rf, recombination count) for a constructed map.

    ``stats`` optionally restricts which statistic families are requested
    (unknown names error); everything is computed regardless since the
    tables are cheap.  With ``crit_val="bonf"`` markers with segregation
    p below 0.05/m are flagged, and intervals whose rf=0.5 test cannot
    reject no-linkage at the same family level are annotated as weak
    (LOD converted through the chi-square(1) calibration).
    """
    for name in stats or ():
        if name not in MARKER_STAT_NAMES + INTERVAL_STAT_NAMES:
            raise DataError(f"unknown statistic {name!r}")
    calls = cross.matrix.calls
    names: list = []
    group_col: list = []
    pos_col: list = []
    cols: list = []
    iv_left, iv_right, iv_group = [], [], []
    iv_cols = []
    for g in cross.groups:
        for k, (i, p) in enumerate(zip(g.markers, g.positions)):
            names.append(cross.matrix.marker_names[i])
            group_col.append(g.name)
            pos_col.append(p)
            cols.append(i)
            if k > 0:
                iv_left.append(cross.matrix.marker_names[g.markers[k - 1]])
                iv_right.append(cross.matrix.marker_names[i])
                iv_group.append(g.name)
                iv_cols.append((g.markers[k - 1], i, g.positions[k] - g.positions[k - 1]))
    neglog = np.array([model.seg_distortion_neglog10p(calls[:, c], cross.pop) for c in cols])
    miss = model.missing_proportion(calls[:, cols])
    denom = np.maximum((calls[:, cols] != MISSING).sum(axis=0), 1)
    prop = {"A": (calls[:, cols] == A).sum(axis=0) / denom,
            "B": (calls[:, cols] == B).sum(axis=0) / denom}
    if cross.pop.allows_het:
        prop["X"] = (calls[:, cols] == HET).sum(axis=0) / denom
    marker_dxo = _per_marker_dxo(cross, cols)

    erf, lod, dist, mrf, recomb, n_obs = [], [], [], [], [], []
    av = model.avalues(calls)
    for left, right, d_cm in iv_cols:
        pd = gmath.hamming_distance(av[:, left], av[:, right])
        raw = pd.d * pd.n_obs / calls.shape[0] if pd.defined else math.nan
        n_obs.append(pd.n_obs)
        recomb.append(raw)
        erf.append(raw / pd.n_obs if pd.defined else math.nan)
        lod.append(two_point_lod(raw, pd.n_obs) if pd.defined else math.nan)
        dist.append(d_cm)
        mrf.append(gmath.map_inverse(d_cm, map_fn))
    erf = np.array(erf)
    lod = np.array(lod)
    dist = np.array(dist)
    mrf = np.array(mrf)
    recomb = np.array(recomb)
    n_obs = np.array(n_obs, dtype=np.int64)

    marker_flagged = np.zeros(len(names), dtype=bool)
    interval_weak = np.zeros(len(iv_left), dtype=bool)
    if crit_val == "bonf":
        m = max(len(names), 1)
        marker_flagged = neglog > -math.log10(0.05 / m)
        if len(iv_left):
            alpha = 0.05 / len(iv_left)
            stat = 2.0 * math.log(10.0) * np.where(np.isnan(lod), 0.0, lod)
            p_link = chi2.sf(stat, df=1)
            interval_weak = p_link > alpha
    elif crit_val is not None:
        raise DataError(f"unknown crit_val {crit_val!r}")

    return MarkerStats(
        tuple(names), tuple(group_col), tuple(pos_col), neglog, miss, prop, marker_dxo,
        tuple(iv_left), tuple(iv_right), tuple(iv_group),
        erf, lod, dist, mrf, recomb, n_obs, marker_flagged, interval_weak,
    )


def _per_marker_dxo(cross: Cross, cols) -> np.ndarray:
    out = {}
    for g in cross.groups:
        idx = list(g.markers)
        calls = cross.matrix.calls[:, idx]
        counts = np.zeros(len(idx), dtype=np.int64)
        for i in range(calls.shape[0]):
            row = calls[i]
            seen = np.flatnonzero(row != MISSING)
            if seen.size < 3:
                continue
            seq = row[seen]
            hit = (seq[1:-1] != seq[:-2]) & (seq[1:-1] != seq[2:])
            counts[seen[1:-1][hit]] += 1
        for local, col in enumerate(idx):
            out[col] = counts[local]
    return np.array([out[c] for c in cols], dtype=np.int64)


# ---------------------------------------------------------------------------
# heat map

@dataclass(frozen=True)
class HeatmapResult:
    marker_names: tuple
    groups: tuple
    rf: np.ndarray       # estimated rf, unclamped above 0.5
    lod: np.ndarray      # clamped to [0, lmax]
    rf_range: tuple
    lod_range: tuple


def heatmap_matrices(cross: Cross, chr_subset=None, lmax: float = 12.0,
                     rmin: float = 0.0) -> HeatmapResult:
    """Pairwise rf (upper-triangle convention) and LOD (lower) matrices.

    rf is deliberately left unclamped above 0.5 so markers out of phase
    with their neighbours stand out; LOD clamps to [0, lmax].
    """
    groups = list(cross.groups)
    if chr_subset is not None:
        wanted = set(chr_subset)
        unknown = wanted - {g.name for g in groups}
        if unknown:
            raise DataError(f"unknown groups {sorted(unknown)}")
        groups = [g for g in groups if g.name in wanted]
    cols = [i for g in groups for i in g.markers]
    names = tuple(cross.matrix.marker_names[i] for i in cols)
    gcol = tuple(g.name for g in groups for _ in g.markers)
    av = model.avalues(cross.matrix.calls[:, cols])
    raw, n_obs = gmath.hamming_matrix(av, rescale=False)
    with np.errstate(invalid="ignore", divide="ignore"):
        rf = np.where(n_obs > 0, raw / np.maximum(n_obs, 1), np.nan)
    rf = np.maximum(rf, rmin)
    np.fill_diagonal(rf, 0.0)
    lod = np.clip(_lod_matrix(raw, n_obs), 0.0, lmax)
    np.fill_diagonal(lod, lmax)
    finite_rf = rf[np.isfinite(rf)]
    finite_lod = lod[np.isfinite(lod)]
    return HeatmapResult(
        names, gcol, rf, lod,
        (float(finite_rf.min()), float(finite_rf.max())) if finite_rf.size else (0.0, 0.0),
        (float(finite_lod.min()), float(finite_lod.max())) if finite_lod.size else (0.0, 0.0),
    )


# ---------------------------------------------------------------------------
# clones

@dataclass(frozen=True)
class CloneRow:
    g1: str
    g2: str
    coef: float
    match: int
    diff: int
    na_both: int
    na_one: int
    group: int


@dataclass(frozen=True)
class CloneReport:
    rows: tuple

    def groups(self) -> dict:
        out: dict[int, list] = {}
        for r in self.rows:
            members = out.setdefault(r.group, [])
            for g in (r.g2, r.g1):
                if g not in members:
                    members.append(g)
        return out


def gen_clones(cross: Cross, tol: float = 0.9) -> CloneReport:
    """Report genotype pairs sharing a proportion of alleles >= tol.

    coef = match / (match + diff) over markers scored in both genotypes;
    clone group ids are the connected components of the >= tol relation,
    numbered by first appearance.
    """
    if cross.n < 2:
        raise DataError("clone detection needs at least 2 genotypes")
    calls = cross.matrix.calls
    n = cross.n
    obs = calls != MISSING
    match = np.zeros((n, n))
    for code in (A, B, HET):
        u = (calls == code).astype(np.float64)
        match += u @ u.T
    both = obs.astype(np.float64) @ obs.astype(np.float64).T
    na_both = (~obs).astype(np.float64) @ (~obs).astype(np.float64).T
    diff = both - match
    na_one = calls.shape[1] - both - na_both
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(both > 0, match / np.maximum(both, 1), 0.0)
    uf = UnionFind(n)
    hits = []
    for i in range(n):
        for j in range(i + 1, n):
            if both[i, j] > 0 and coef[i, j] >= tol:
                hits.append((i, j))
                uf.union(i, j)
    group_no: dict[int, int] = {}
    rows = []
    names = cross.matrix.genotype_names
    for i, j in hits:
        root = uf.find(i)
        if root not in group_no:
            group_no[root] = len(group_no) + 1
        rows.append(CloneRow(
            names[j], names[i], round(float(coef[i, j]), 4), int(match[i, j]),
            int(diff[i, j]), int(na_both[i, j]), int(na_one[i, j]), group_no[root],
        ))
    return CloneReport(tuple(rows))


def fix_clones(cross: Cross, report: CloneReport, consensus: bool = True) -> Cross:
    """Collapse each clone group to one genotype.

    With ``consensus`` the merged calls agree where the members agree, take
    the single scored value where only one member is scored, and become
    missing on conflicts; the merged id concatenates the member ids.
    Without it the least-missing member simply survives.  Ledger columns
    follow and their statistics are recomputed.
    """
    names = list(cross.matrix.genotype_names)
    index = {g: i for i, g in enumerate(names)}
    for row in report.rows:
        for g in (row.g1, row.g2):
            if g not in index:
                raise DataError(f"unknown genotype {g!r} in clone report")
    drop: set = set()
    replacements: dict[int, tuple] = {}
    for gid, members in sorted(report.groups().items()):
        rows = sorted(index[g] for g in members)
        first = rows[0]
        if consensus:
            new_id = "_".join(names[r] for r in rows)
            replacements[first] = (new_id, rows)
        else:
            miss_counts = [(cross.matrix.calls[r] == MISSING).sum() for r in rows]
            keep = rows[int(np.argmin(miss_counts))]
            new_id = names[keep]
            replacements[first] = (new_id, [keep])
        drop.update(r for r in rows if r != first)

    def merge_rows(calls: np.ndarray) -> np.ndarray:
        out_rows = []
        for i in range(len(names)):
            if i in drop:
                continue
            if i in replacements:
                _, rows = replacements[i]
                sub = calls[rows]
                merged = np.full(calls.shape[1], MISSING, dtype=np.int8)
                for r in range(sub.shape[0]):
                    row = sub[r]
                    fill = (merged == MISSING) & (row != MISSING)
                    merged[fill] = row[fill]
                    clash = (merged != MISSING) & (row != MISSING) & (merged != row)
                    merged[clash] = MISSING
                out_rows.append(merged)
            else:
                out_rows.append(calls[i])
        return np.array(out_rows, dtype=np.int8)

    new_names = [replacements[i][0] if i in replacements else names[i]
                 for i in range(len(names)) if i not in drop]
    matrix = MarkerMatrix(new_names, cross.matrix.marker_names, merge_rows(cross.matrix.calls))
    ledgers = {}
    for key, led in cross.ledgers.items():
        calls = merge_rows(led.calls)
        stats = model.ledger_stat_values(key, calls, cross.pop) or dict(led.stats)
        ledgers[key] = MarkerLedger(led.marker_names, calls, stats, anchors=led.anchors)
    return Cross(matrix, cross.pop, cross.groups, ledgers)


# ---------------------------------------------------------------------------
# pull / push

def _seg_threshold(value, total_markers: int) -> float:
    if value == "bonf":
        return 0.05 / max(total_markers, 1)
    return float(value)


def _ratio_boundary(ratio: str, pop: model.PopulationType):
    parts = [float(x) for x in ratio.split(":")]
    if len(parts) < 2 or any(p <= 0 for p in parts):
        raise DataError(f"bad segregation ratio {ratio!r}")
    target = np.array(parts) / sum(parts)
    if pop.allows_het:
        h = pop.het_fraction
        expected = np.array([(1 - h) / 2, (1 - h) / 2, h])
        if len(target) != 3:
            raise DataError("RIL segregation ratios need three components")
    else:
        expected = np.array([0.5, 0.5])
        if len(target) != 2:
            raise DataError("two-class populations need a:b segregation ratios")
    return float((((target - expected) ** 2) / expected).sum())


def _seg_chi2(column: np.ndarray, pop: model.PopulationType):
    """(chi-square statistic, n_obs) against the expected ratio."""
    obs_a = int((column == A).sum())
    obs_b = int((column == B).sum())
    obs_h = int((column == HET).sum())
    n_obs = obs_a + obs_b + obs_h
    if n_obs == 0:
        return 0.0, 0
    if pop.allows_het:
        h = pop.het_fraction
        expected = np.array([(1 - h) / 2, (1 - h) / 2, h]) * n_obs
        observed = np.array([obs_a, obs_b, obs_h], dtype=float)
    else:
        expected = np.array([0.5, 0.5]) * n_obs
        observed = np.array([obs_a, obs_b], dtype=float)
    stat = float((((observed - expected) ** 2) / np.maximum(expected, 1e-300)).sum())
    return stat, n_obs


def pull_markers(cross: Cross, kind: str, params: PushParams = PushParams()) -> Cross:
    """Move markers from the map into the ``kind`` ledger.

    co.located pulls every non-representative member of each zero-distance
    bin (the representative stays and is recorded as the anchor);
    seg.distortion pulls markers whose distortion p-value falls below
    seg_thresh ("bonf" uses 0.05/m); missing pulls markers whose missing
    proportion exceeds miss_thresh.
    """
    if kind not in PULL_TYPES:
        raise DataError(f"unknown pull type {kind!r}")
    matrix = cross.matrix
    if kind == model.LEDGER_CO_LOCATED:
        pulled, anchors = [], []
        for g in cross.groups:
            if not g.markers:
                continue
            bins = ordering.bin_markers(matrix, g.markers)
            for members, rep in zip(bins.bins, bins.representatives):
                for m in members:
                    if m != rep:
                        pulled.append(m)
                        anchors.append(matrix.marker_names[rep])
        if not pulled:
            return cross
        order = np.argsort(pulled)
        pulled = [pulled[i] for i in order]
        anchors = [anchors[i] for i in order]
        led = MarkerLedger(
            tuple(matrix.marker_names[i] for i in pulled),
            matrix.calls[:, pulled], {}, anchors=anchors,
        )
    else:
        if kind == model.LEDGER_SEG_DISTORTION:
            thresh = _seg_threshold(params.seg_thresh, cross.n_markers)
            neglog = np.array([model.seg_distortion_neglog10p(matrix.calls[:, j], cross.pop)
                               for j in range(matrix.t)])
            hit = neglog > -math.log10(thresh)
            stats = {"neglog10P": neglog}
        else:
            miss = model.missing_proportion(matrix.calls)
            hit = miss > params.miss_thresh
            stats = {"miss": miss}
        if not hit.any():
            return cross
        pulled = np.flatnonzero(hit).tolist()
        led = MarkerLedger(
            tuple(matrix.marker_names[i] for i in pulled),
            matrix.calls[:, pulled],
            {k: v[pulled] for k, v in stats.items()},
        )
    ledgers = dict(cross.ledgers)
    existing = ledgers.get(kind)
    ledgers[kind] = model.merge_ledgers(existing, led)
    return _drop_map_markers(cross, set(pulled), ledgers)


def _drop_map_markers(cross: Cross, dropped: set, ledgers: dict) -> Cross:
    matrix = cross.matrix
    kept = [i for i in range(matrix.t) if i not in dropped]
    remap = {old: new for new, old in enumerate(kept)}
    new_matrix = MarkerMatrix(
        matrix.genotype_names, tuple(matrix.marker_names[i] for i in kept),
        matrix.calls[:, kept],
    )
    groups = []
    for g in cross.groups:
        pairs = [(remap[i], p) for i, p in zip(g.markers, g.positions) if i in remap]
        pos = [p for _, p in pairs]
        pos = [p - pos[0] for p in pos] if pos else []
        groups.append(LinkageGroup(g.name, [i for i, _ in pairs], pos))
    return Cross(new_matrix, cross.pop, groups, ledgers)


def _linkage_assignment(cross: Cross, target_cols, cand_calls: np.ndarray, params: PushParams):
    """Best-linked target marker for each candidate column.

    Returns matrix column indices (drawn from ``target_cols``), or None for
    candidates where no target passes the max_rf/min_lod gate."""
    if cand_calls.shape[1] == 0 or not target_cols:
        return [None] * cand_calls.shape[1]
    av_map = model.avalues(cross.matrix.calls[:, target_cols])
    av_c = model.avalues(cand_calls)
    ua = (av_map == 1.0).astype(np.float64)
    ub = (av_map == 0.0).astype(np.float64)
    uh = (av_map == 0.5).astype(np.float64)
    ca = (av_c == 1.0).astype(np.float64)
    cb = (av_c == 0.0).astype(np.float64)
    ch = (av_c == 0.5).astype(np.float64)
    raw = ca.T @ ub + cb.T @ ua
    if uh.any() or ch.any():
        raw += 0.5 * (ch.T @ (ua + ub) + (ca + cb).T @ uh)
    n_obs = (ca + cb + ch).T @ (ua + ub + uh)
    with np.errstate(invalid="ignore", divide="ignore"):
        rf = np.where(n_obs > 0, raw / np.maximum(n_obs, 1), np.inf)
    out = []
    for c in range(rf.shape[0]):
        j = int(np.argmin(rf[c]))
        if not np.isfinite(rf[c, j]) or rf[c, j] > params.max_rf:
            out.append(None)
            continue
        lod = two_point_lod(float(raw[c, j]), int(n_obs[c, j]))
        out.append(int(target_cols[j]) if lod >= params.min_lod else None)
    return out


def push_markers(cross: Cross, kind: str, params: PushParams = PushParams(),
                 unlinked_group: str | None = None) -> Cross:
    """Return ledger (or unlinked-group) markers to the map.

    co.located markers rejoin immediately after their recorded anchor at
    the anchor's position.  Other kinds pass their threshold gate
    (missing proportion below miss_thresh; distortion either above the
    seg_thresh p-value or no more extreme than seg_ratio) and then join
    the group of their best-linked in-map marker, provided the pairwise
    rf <= max_rf with LOD >= min_lod.  Assignment is provisional: markers
    sit at their link target's position until the map is reconstructed.
    Unassignable markers stay where they were.
    """
    if kind not in PUSH_TYPES:
        raise DataError(f"unknown push type {kind!r}")
    if kind == "unlinked":
        if unlinked_group is None:
            raise DataError("push type 'unlinked' requires the unlinked group name")
        source = cross.group(unlinked_group)
        cand_idx = list(source.markers)
        cand_names = [cross.matrix.marker_names[i] for i in cand_idx]
        cand_calls = cross.matrix.calls[:, cand_idx]
        source_set = set(cand_idx)
        target_cols = [i for g in cross.groups if g.name != unlinked_group for i in g.markers]
        targets = _linkage_assignment(cross, target_cols, cand_calls, params)
        placed = {c: t for c, t in enumerate(targets) if t is not None}
    else:
        led = cross.ledgers.get(kind)
        if led is None or led.k == 0:
            return cross
        cand_names = list(led.marker_names)
        cand_calls = led.calls
        if kind == model.LEDGER_CO_LOCATED:
            if led.anchors is None:
                raise DataError("co.located ledger carries no anchor markers")
            name_to_col = {n: i for i, n in enumerate(cross.matrix.marker_names)}
            placed = {c: name_to_col[led.anchors[c]] for c in range(led.k)
                      if led.anchors[c] in name_to_col}
        else:
            if kind == model.LEDGER_MISSING:
                miss = model.missing_proportion(cand_calls)
                eligible = [c for c in range(led.k) if miss[c] < params.miss_thresh]
            elif params.seg_ratio is not None:
                boundary = _ratio_boundary(params.seg_ratio, cross.pop)
                eligible = []
                for c in range(led.k):
                    stat, n_obs = _seg_chi2(cand_calls[:, c], cross.pop)
                    if n_obs and stat <= boundary * n_obs:
                        eligible.append(c)
            else:
                thresh = _seg_threshold(params.seg_thresh, cross.n_markers)
                eligible = [c for c in range(led.k)
                            if model.seg_distortion_neglog10p(cand_calls[:, c], cross.pop)
                            <= -math.log10(thresh)]
            target_cols = list(range(cross.matrix.t))
            targets = _linkage_assignment(cross, target_cols, cand_calls[:, eligible], params)
            placed = {eligible[k]: t for k, t in enumerate(targets) if t is not None}

    if not placed:
        return cross

    inserts: dict[int, list] = {}
    for c, target_col in placed.items():
        inserts.setdefault(target_col, []).append(c)
    moved = {cand_idx[c] for c in placed} if kind == "unlinked" else set()

    geno = cross.matrix.genotype_names
    new_names: list = []
    new_cols: list = []
    groups = []
    for g in cross.groups:
        markers, positions = [], []
        for i, p in zip(g.markers, g.positions):
            if i in moved:
                continue
            markers.append(len(new_names))
            positions.append(p)
            new_names.append(cross.matrix.marker_names[i])
            new_cols.append(cross.matrix.calls[:, i])
            for c in inserts.get(i, ()):
                markers.append(len(new_names))
                positions.append(p)
                new_names.append(cand_names[c])
                new_cols.append(cand_calls[:, c])
        if markers:
            positions = [p - positions[0] for p in positions]
            groups.append(LinkageGroup(g.name, markers, positions))
    matrix = MarkerMatrix(geno, new_names, np.column_stack(new_cols))

    ledgers = dict(cross.ledgers)
    if kind != "unlinked":
        led = cross.ledgers[kind]
        left = [c for c in range(led.k) if c not in placed]
        if left:
            stats = {k: tuple(v[c] for c in left) for k, v in led.stats.items()}
            anchors = tuple(led.anchors[c] for c in left) if led.anchors is not None else None
            ledgers[kind] = MarkerLedger(
                tuple(led.marker_names[c] for c in left), led.calls[:, left], stats, anchors=anchors)
        else:
            del ledgers[kind]
    return Cross(matrix, cross.pop, groups, ledgers)


# ---------------------------------------------------------------------------
# quick distance re-estimation

def quick_est(cross: Cross, error_prob: float = 1e-4, map_fn: str = gmath.KOSAMBI) -> Cross:
    """Re-estimate map positions from reconstructed crossover counts.

    Adjacent two-point fractions seed a two-state hidden chain per
    genotype (emissions allow a small genotyping-error probability;
    missing calls emit uniformly); the most probable state path is decoded
    and positions accumulate from per-interval crossover counts.  Groups
    with fewer than 2 markers keep their positions.
    """
    if not 0.0 < error_prob < 0.5:
        raise DataError("error_prob must lie in (0, 0.5)")
    groups = []
    n = cross.n
    for g in cross.groups:
        if len(g.markers) < 2:
            groups.append(g)
            continue
        idx = list(g.markers)
        calls = cross.matrix.calls[:, idx]
        av = model.avalues(calls)
        trans = np.empty(len(idx) - 1)
        for j in range(len(idx) - 1):
            pd = gmath.hamming_distance(av[:, j], av[:, j + 1])
            trans[j] = min(max(pd.d / n, 1e-9), 0.49995) if pd.defined else 0.49995
        states = _two_state_paths(calls, trans, error_prob)
        xo = (states[:, 1:] != states[:, :-1]).sum(axis=0)
        rf = np.clip(xo / n, 0.0, 0.49995)
        rho = np.clip(model.transform_rf(rf, cross.pop), 0.0, 0.49995)
        pos = np.concatenate([[0.0], np.cumsum(gmath.map_forward(rho, map_fn))])
        groups.append(LinkageGroup(g.name, idx, pos.tolist()))
    return Cross(cross.matrix, cross.pop, groups, cross.ledgers)


def _two_state_paths(calls: np.ndarray, trans: np.ndarray, error_prob: float) -> np.ndarray:
    """Most probable hidden parental-state path per genotype (0 = A side,
    1 = B side), decoded with ties resolved toward staying."""
    n, m = calls.shape
    log_e = np.zeros((n, m, 2))
    le, lne = math.log(error_prob), math.log1p(-error_prob)
    obs_a = calls == A
    obs_b = calls == B
    obs_h = calls == HET
    log_e[obs_a, 0] = lne
    log_e[obs_a, 1] = le
    log_e[obs_b, 0] = le
    log_e[obs_b, 1] = lne
    log_e[obs_h] = math.log(0.5)
    dp = log_e[:, 0, :].copy()
    back = np.zeros((n, m, 2), dtype=np.int8)
    for j in range(1, m):
        r = min(max(float(trans[j - 1]), 1e-12), 0.5)
        lr, lstay = math.log(r), math.log1p(-r)
        stay = dp + lstay
        cross_in = dp[:, ::-1] + lr
        switch = cross_in > stay
        back[:, j, :] = switch
        dp = np.where(switch, cross_in, stay) + log_e[:, j, :]
    states = np.empty((n, m), dtype=np.int8)
    states[:, -1] = dp[:, 1] > dp[:, 0]
    for j in range(m - 1, 0, -1):
        flip = back[np.arange(n), j, states[:, j]].astype(bool)
        states[:, j - 1] = np.where(flip, 1 - states[:, j], states[:, j])
    return states
