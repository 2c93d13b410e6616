import itertools
import math

import numpy as np
import pytest
from scipy.stats import kendalltau

from mstlink import gmath, model, ordering, simulate
from mstlink.model import A, B, MISSING, DataError, MarkerMatrix, PopulationType
from mstlink.ordering import (
    MapParams, bin_markers, construct_map, detect_bad_data, em_impute_step,
    impute_missing, local_optimize, mst_order, order_linkage_group, path_cost,
)
from conftest import make_cross


DH = PopulationType("DH")


def brute_force_path(weights):
    m = weights.shape[0]
    best, best_cost = None, math.inf
    for perm in itertools.permutations(range(m)):
        if perm[0] > perm[-1]:
            continue  # reversal-equivalent
        cost = float(weights[list(perm[:-1]), list(perm[1:])].sum())
        if cost < best_cost - 1e-12:
            best, best_cost = perm, cost
    return best, best_cost


class TestBinMarkers:
    def test_all_distinct_singletons(self):
        rng = np.random.default_rng(0)
        calls = rng.choice([A, B], size=(40, 6)).astype(np.int8)
        calls[:, 1] = np.where(calls[:, 0] == A, B, A)  # keep distinct
        matrix = make_cross(calls).matrix
        bins = bin_markers(matrix, range(6))
        assert all(len(b) == 1 for b in bins.bins)

    def test_duplicate_column_binned(self):
        rng = np.random.default_rng(1)
        col = rng.choice([A, B], size=30).astype(np.int8)
        other = np.where(col == A, B, A).astype(np.int8)
        calls = np.column_stack([col, col, other])
        matrix = make_cross(calls).matrix
        bins = bin_markers(matrix, range(3))
        assert (0, 1) in bins.bins
        assert bins.representatives[bins.bins.index((0, 1))] == 0

    def test_representative_fewest_missing(self):
        col = np.array([A, B, A, B, A, B], dtype=np.int8)
        col_miss = col.copy()
        col_miss[0] = MISSING
        calls = np.column_stack([col_miss, col])
        matrix = make_cross(calls).matrix
        bins = bin_markers(matrix, range(2))
        assert bins.bins == ((0, 1),)
        assert bins.representatives == (1,)

    def test_zero_distance_through_missing(self):
        # distinct missing patterns but no observed disagreement
        calls = np.array([
            [A, A],
            [B, B],
            [MISSING, A],
            [B, MISSING],
        ], dtype=np.int8)
        matrix = make_cross(calls).matrix
        bins = bin_markers(matrix, range(2))
        assert bins.bins == ((0, 1),)

    def test_dense_grid_collapses(self):
        # 0.025 cM grid: nearly all markers co-locate at n=150
        spec = simulate.SimSpec(DH, 150, ((1201, 30.0),), seed=30)
        cross, _ = simulate.simulate_population(spec)
        bins = bin_markers(cross.matrix, range(cross.matrix.t))
        assert len(bins.bins) / cross.matrix.t <= 0.07

    def test_empty_group_rejected(self):
        matrix = make_cross([[A], [B]]).matrix
        with pytest.raises(DataError):
            bin_markers(matrix, [])


class TestMstOrder:
    def test_three_collinear(self):
        w = np.array([
            [0.0, 0.10, 0.18],
            [0.10, 0.0, 0.10],
            [0.18, 0.10, 0.0],
        ])
        order, leftovers = mst_order(w)
        assert leftovers == []
        assert order in ([0, 1, 2], [2, 1, 0])

    def test_star_tie_lowest_index(self):
        # center 0 equidistant to all leaves: the diameter backbone runs
        # through the two lowest-index leaves, the rest become leftovers
        w = np.full((4, 4), 0.4)
        w[0, :] = w[:, 0] = 0.1
        np.fill_diagonal(w, 0.0)
        order, leftovers = mst_order(w)
        assert sorted(order) == [0, 1, 2]
        assert order[1] == 0  # center in the middle
        assert leftovers == [3]
        again, lo2 = mst_order(w)
        assert again == order and lo2 == leftovers

    def test_single_vertex(self):
        assert mst_order(np.zeros((1, 1))) == ([0], [])

    def test_small_instances_match_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            m = int(rng.integers(4, 9))
            tri = rng.uniform(0.0, 0.5, size=(m, m))
            w = np.triu(tri, 1)
            w = w + w.T
            order, leftovers = mst_order(w)
            order = local_optimize(order, w, leftovers)
            _, best_cost = brute_force_path(w)
            assert path_cost(order, w) == pytest.approx(best_cost, abs=1e-9)


class TestLocalOptimize:
    def test_fixed_point_unchanged(self):
        # clean collinear weights: the true order is already optimal
        m = 12
        pos = np.arange(m) * 0.02
        w = np.abs(pos[:, None] - pos[None, :])
        order = local_optimize(list(range(m)), w)
        assert order in (list(range(m)), list(range(m))[::-1])

    def test_repairs_adjacent_transposition(self):
        m = 20
        pos = np.arange(m) * 0.02
        w = np.abs(pos[:, None] - pos[None, :])
        broken = list(range(m))
        broken[7], broken[8] = broken[8], broken[7]
        order = local_optimize(broken, w)
        assert order in (list(range(m)), list(range(m))[::-1])

    def test_objective_never_increases(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            m = int(rng.integers(8, 25))
            tri = rng.uniform(0.0, 0.5, size=(m, m))
            w = np.triu(tri, 1)
            w = w + w.T
            start = list(rng.permutation(m))
            out = local_optimize(list(start), w)
            assert path_cost(out, w) <= path_cost(start, w) + 1e-12

    def test_leftover_insertion(self):
        m = 10
        pos = np.arange(m) * 0.02
        w = np.abs(pos[:, None] - pos[None, :])
        order = local_optimize([0, 1, 2, 4, 5, 6, 7, 8, 9], w, leftovers=[3])
        assert order in (list(range(m)), list(range(m))[::-1])


class TestImputation:
    def test_flank_posterior_values(self):
        # both flanks carry the A allele at rf 0.1 / 0.2
        a = np.array([[1.0, 0.5, 1.0]])
        missing = np.array([[False, True, False]])
        out = impute_missing(a, missing, [0, 1, 2], np.array([0.1, 0.2]))
        assert out[0, 1] == pytest.approx(0.72 / 0.74)

    def test_uninformative_flanks(self):
        a = np.array([[1.0, 0.5, 0.0]])
        missing = np.array([[False, True, False]])
        out = impute_missing(a, missing, [0, 1, 2], np.array([0.5, 0.5]))
        assert out[0, 1] == pytest.approx(0.5)

    def test_terminal_single_flank(self):
        a = np.array([[0.5, 1.0]])
        missing = np.array([[True, False]])
        out = impute_missing(a, missing, [0, 1], np.array([0.1]))
        assert out[0, 0] == pytest.approx(0.9)

    def test_disagreeing_flanks(self):
        a = np.array([[1.0, 0.5, 0.0]])
        missing = np.array([[False, True, False]])
        out = impute_missing(a, missing, [0, 1, 2], np.array([0.1, 0.2]))
        # P(A) = (1-p1) p2 / ((1-p1) p2 + p1 (1-p2))
        assert out[0, 1] == pytest.approx(0.9 * 0.2 / (0.9 * 0.2 + 0.1 * 0.8))

    def test_mstep_reduces_to_hamming_without_missing(self):
        rng = np.random.default_rng(7)
        calls = rng.choice([A, B], size=(50, 8)).astype(np.int8)
        a = model.avalues(calls)
        _, d = em_impute_step(a, np.zeros_like(a, dtype=bool), list(range(8)))
        expected, _ = gmath.hamming_matrix(a)
        assert np.allclose(d, expected)


class TestDetectBadData:
    def test_unanimous_contradiction_flagged(self):
        calls = np.full((8, 7), A, dtype=np.int8)
        calls[0, 3] = B
        a = model.avalues(calls)
        observed = np.ones_like(a, dtype=bool)
        d = np.full((7, 7), 2.0)
        flags = detect_bad_data(a, observed, list(range(7)), d)
        assert (0, 3) in flags
        assert all(r == 0 for r, _ in flags)

    def test_agreement_not_flagged(self):
        calls = np.full((8, 7), A, dtype=np.int8)
        a = model.avalues(calls)
        observed = np.ones_like(a, dtype=bool)
        d = np.full((7, 7), 2.0)
        assert detect_bad_data(a, observed, list(range(7)), d) == []

    def test_crossover_boundary_not_flagged(self):
        # one genotype switches phase mid-group: a legitimate recombinant
        calls = np.full((8, 8), A, dtype=np.int8)
        calls[0, 4:] = B
        a = model.avalues(calls)
        observed = np.ones_like(a, dtype=bool)
        d = np.full((8, 8), 2.0)
        assert detect_bad_data(a, observed, list(range(8)), d) == []


class TestOrderLinkageGroup:
    def test_single_marker_group(self):
        cross = make_cross([[A, A], [B, B]])
        res = order_linkage_group(cross.matrix, [0], DH)
        assert res.positions == (0.0,)
        assert res.iterations == 0

    def test_clean_chromosome_recovery(self, dh_clean_chromosome):
        cross, truth = dh_clean_chromosome
        res = order_linkage_group(cross.matrix, range(200), cross.pop)
        tau = kendalltau(np.arange(200), truth.positions[list(res.marker_order)]).statistic
        assert abs(tau) >= 0.98
        assert abs(res.rep_positions[-1] - 150.0) <= 15.0
        # complete, error-free data settles in one EM sweep
        assert res.iterations == 1

    def test_imputation_accuracy_10pct(self):
        spec = simulate.SimSpec(DH, 300, ((200, 150.0),), missing_rate=0.10, seed=33)
        cross, truth = simulate.simulate_population(spec)
        res = order_linkage_group(cross.matrix, range(200), cross.pop)
        rep_cols = list(res.rep_order)
        truth_a = model.avalues(truth.clean_calls[:, rep_cols])
        miss = truth.missing_mask[:, rep_cols]
        agree = ((res.imputed > 0.5) == (truth_a > 0.5)) & miss
        assert agree.sum() / miss.sum() >= 0.95

    def test_positions_invariant_under_genotype_permutation(self):
        spec = simulate.SimSpec(DH, 80, ((40, 60.0),), missing_rate=0.05, seed=34)
        cross, _ = simulate.simulate_population(spec)
        res = order_linkage_group(cross.matrix, range(40), cross.pop)
        rng = np.random.default_rng(0)
        perm = rng.permutation(cross.n)
        shuffled = MarkerMatrix(
            [cross.matrix.genotype_names[i] for i in perm],
            cross.matrix.marker_names,
            cross.matrix.calls[perm],
        )
        res2 = order_linkage_group(shuffled, range(40), cross.pop)
        assert res.marker_order == res2.marker_order
        assert np.allclose(res.positions, res2.positions)

    def test_em_objective_trace_non_increasing(self):
        spec = simulate.SimSpec(DH, 120, ((60, 80.0),), missing_rate=0.08, seed=35)
        cross, _ = simulate.simulate_population(spec)
        res = order_linkage_group(cross.matrix, range(60), cross.pop,
                                  MapParams(objective=gmath.COUNT))
        trace = np.array(res.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9)

    def test_detect_bad_data_rejected_for_riln(self):
        spec = simulate.SimSpec(PopulationType("RILn", 3), 40, ((20, 30.0),), seed=36)
        cross, _ = simulate.simulate_population(spec)
        with pytest.raises(DataError, match="finite-r RIL"):
            order_linkage_group(cross.matrix, range(20), cross.pop,
                                MapParams(detect_bad_data=True))

    def test_anchor_preserves_input_orientation(self, dh_clean_chromosome):
        cross, truth = dh_clean_chromosome
        res = order_linkage_group(cross.matrix, range(200), cross.pop,
                                  MapParams(anchor=True))
        rho = np.corrcoef(np.arange(len(res.marker_order)), res.marker_order)[0, 1]
        assert rho > 0.9

    def test_reversal_objective_invariance(self):
        rng = np.random.default_rng(8)
        w = rng.uniform(0, 0.5, size=(10, 10))
        w = np.triu(w, 1)
        w = w + w.T
        order = local_optimize(list(range(10)), w)
        assert path_cost(order, w) == pytest.approx(path_cost(order[::-1], w))

    def test_count_and_ml_same_mst_edges(self):
        spec = simulate.SimSpec(DH, 100, ((30, 40.0),), seed=37)
        cross, _ = simulate.simulate_population(spec)
        av = model.avalues(cross.matrix.calls)
        d, _ = gmath.hamming_matrix(av)
        p = np.clip(d / 100, 0, 0.5)
        for objective in (gmath.COUNT, gmath.ML):
            w = gmath.weight(p, objective)
            np.fill_diagonal(w, 0.0)
            order, lo = mst_order(w)
            if objective == gmath.COUNT:
                base = (order, lo)
        assert (order, lo) == base


class TestErrorDetectionIntegration:
    def test_flips_flagged_and_map_shortened(self):
        spec = simulate.SimSpec(DH, 300, ((200, 150.0),), error_rate=0.0042, seed=38)
        cross, truth = simulate.simulate_population(spec)
        on = order_linkage_group(cross.matrix, range(200), cross.pop,
                                 MapParams(detect_bad_data=True))
        off = order_linkage_group(cross.matrix, range(200), cross.pop, MapParams())
        flips = set(zip(*np.nonzero(truth.error_mask)))
        flagged = set(on.flagged)
        assert len(flips & flagged) / len(flips) >= 0.60
        clean_cells = cross.n * cross.matrix.t - len(flips)
        assert len(flagged - flips) / clean_cells <= 0.001
        assert on.rep_positions[-1] < off.rep_positions[-1]


class TestConstructMap:
    def test_pooled_five_groups(self, dh_five_chromosomes):
        cross, truth = dh_five_chromosomes
        result = construct_map(cross, MapParams(p_value=1e-12))
        assert len(result.cross.groups) == 5
        assert result.cross.n_markers == 1000
        for g in result.cross.groups:
            names = [result.cross.matrix.marker_names[i] for i in g.markers]
            original = [cross.matrix.marker_names.index(nm) for nm in names]
            assert len(set(truth.chrom[original])) == 1

    def test_bychr_never_split_keeps_groups(self, dh_five_chromosomes):
        cross, truth = dh_five_chromosomes
        grouped = simulate.true_cross(cross, truth)
        result = construct_map(grouped, MapParams(p_value=2.0, bychr=True))
        assert [g.name for g in result.cross.groups] == [g.name for g in grouped.groups]

    def test_bychr_resplit_when_epsilon_small(self):
        # one declared group containing two real chromosomes
        spec = simulate.SimSpec(DH, 200, ((50, 80.0), (50, 80.0)), seed=40)
        cross, _ = simulate.simulate_population(spec)
        result = construct_map(cross, MapParams(p_value=1e-9, bychr=True))
        assert len(result.cross.groups) == 2
        assert {g.name for g in result.cross.groups} == {"ALL.1", "ALL.2"}

    def test_reconstruct_idempotent(self, dh_five_chromosomes):
        cross, _ = dh_five_chromosomes
        first = construct_map(cross, MapParams(p_value=1e-12)).cross
        second = construct_map(first, MapParams(p_value=2.0, bychr=True)).cross
        assert [g.name for g in second.groups] == [g.name for g in first.groups]
        for g1, g2 in zip(first.groups, second.groups):
            assert g1.markers == g2.markers
            assert np.allclose(g1.positions, g2.positions, atol=1e-6)

    def test_miss_thresh_routes_to_ledger(self):
        spec = simulate.SimSpec(DH, 60, ((30, 40.0),), seed=41)
        cross, _ = simulate.simulate_population(spec)
        calls = cross.matrix.calls.copy()
        calls[: 45, 3] = MISSING  # 75% missing
        matrix = MarkerMatrix(cross.matrix.genotype_names, cross.matrix.marker_names, calls)
        dirty = model.Cross(matrix, cross.pop, cross.groups)
        result = construct_map(dirty, MapParams(p_value=1e-6, miss_thresh=0.5))
        led = result.cross.ledgers[model.LEDGER_MISSING]
        assert led.marker_names == (cross.matrix.marker_names[3],)
        assert led.stats["miss"][0] == pytest.approx(0.75)
        assert result.cross.n_markers == 30

    def test_no_map_routing(self):
        # detached pair of markers ~58 cM from a tight block
        rng = np.random.default_rng(42)
        n = 200
        block = np.empty((n, 8), dtype=np.int8)
        base = rng.choice([A, B], size=n).astype(np.int8)
        for j in range(8):
            flip = rng.random(n) < 0.01
            base = np.where(flip, np.where(base == A, B, A), base).astype(np.int8)
            block[:, j] = base
        far = base.copy()
        flip = rng.random(n) < 0.35
        far = np.where(flip, np.where(far == A, B, A), far).astype(np.int8)
        far2 = far.copy()
        flip = rng.random(n) < 0.01
        far2 = np.where(flip, np.where(far2 == A, B, A), far2).astype(np.int8)
        calls = np.column_stack([block, far, far2])
        cross = make_cross(calls)
        kept = construct_map(cross, MapParams(p_value=2.0, no_map_dist=15.0, no_map_size=2))
        assert kept.cross.n_map_markers == 8
        omitted = kept.cross.ledgers[model.LEDGER_OMITTED]
        assert omitted.k == 2
        assert min(omitted.stats["gap_cM"]) > 15.0
        # without the routing the pair stays
        kept2 = construct_map(cross, MapParams(p_value=2.0, no_map_size=0))
        assert kept2.cross.n_map_markers == 10

    def test_error_detection_never_lengthens(self):
        for seed in (50, 51):
            spec = simulate.SimSpec(DH, 200, ((100, 120.0),), error_rate=0.0042, seed=seed)
            cross, _ = simulate.simulate_population(spec)
            on = construct_map(cross, MapParams(p_value=1e-10, detect_bad_data=True)).cross
            off = construct_map(cross, MapParams(p_value=1e-10)).cross
            assert sum(g.length for g in on.groups) <= sum(g.length for g in off.groups)

    def test_dropping_noisy_genotypes_shrinks_map(self):
        # the cleanup workflow: genotypes with inflated crossover counts
        # carry most of the genotyping noise; removing them shortens the map
        from mstlink import diagnostics

        spec = simulate.SimSpec(DH, 150, ((100, 120.0),), error_rate=0.01, seed=54)
        cross, _ = simulate.simulate_population(spec)
        first = construct_map(cross, MapParams(p_value=1e-9)).cross
        gs = diagnostics.profile_genotypes(first)
        cutoff = np.quantile(gs.xo, 0.9)
        keep = [g for g, x in zip(gs.genotype_names, gs.xo) if x <= cutoff]
        sub = model.subset_cross(first, keep)
        second = construct_map(sub, MapParams(p_value=2.0, bychr=True)).cross
        assert sum(g.length for g in second.groups) < sum(g.length for g in first.groups)

    def test_mvest_bc_runs(self):
        spec = simulate.SimSpec(DH, 100, ((40, 50.0),), missing_rate=0.1, seed=52)
        cross, _ = simulate.simulate_population(spec)
        result = construct_map(cross, MapParams(p_value=1e-9, mvest_bc=True))
        assert len(result.cross.groups) >= 1
        assert result.cross.n_markers == 40

    def test_workers_do_not_change_output(self, dh_five_chromosomes):
        cross, _ = dh_five_chromosomes
        serial = construct_map(cross, MapParams(p_value=1e-12, workers=1)).cross
        parallel = construct_map(cross, MapParams(p_value=1e-12, workers=4)).cross
        assert model.crosses_equal(serial, parallel, pos_tol=0.0)

    def test_rejects_degenerate_inputs(self):
        cross = make_cross([[A, B]], genotype_names=["g1"])
        with pytest.raises(DataError):
            construct_map(cross)

    def test_flagged_cells_become_missing(self):
        spec = simulate.SimSpec(DH, 300, ((80, 60.0),), error_rate=0.01, seed=53)
        cross, _ = simulate.simulate_population(spec)
        result = construct_map(cross, MapParams(p_value=1e-12, detect_bad_data=True))
        assert result.flagged
        for geno, marker in result.flagged:
            i = result.cross.matrix.genotype_names.index(geno)
            j = result.cross.matrix.marker_names.index(marker)
            assert result.cross.matrix.calls[i, j] == MISSING
