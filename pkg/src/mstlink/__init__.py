"""Genetic linkage map construction for biparental populations.

Threshold clustering of markers into linkage groups, MST-seeded marker
ordering with integrated EM imputation and error detection, diagnostics
(profiles, clones, heat maps, pull/push ledgers, fast re-estimation) and a
ground-truth population simulator.
"""

from .clustering import cluster_markers
from .diagnostics import (
    PushParams,
    fix_clones,
    gen_clones,
    heatmap_matrices,
    profile_genotypes,
    profile_markers,
    pull_markers,
    push_markers,
    quick_est,
    seg_distortion_test,
    two_point_lod,
)
from .gmath import (
    HALDANE,
    KOSAMBI,
    hamming_distance,
    hoeffding_delta,
    map_forward,
    map_inverse,
    rf_estimate,
    ril_expected_mismatch,
    ril_invert,
    ril_transform_aril,
    threshold_profile,
    weight,
)
from .model import (
    Cross,
    DataError,
    LinkageGroup,
    MarkerLedger,
    MarkerMatrix,
    PopulationType,
    break_groups,
    combine_maps,
    crosses_equal,
    load_cross,
    merge_groups,
    subset_cross,
    write_cross,
)
from .ordering import (
    MapParams,
    OrderResult,
    bin_markers,
    construct_map,
    detect_bad_data,
    em_impute_step,
    local_optimize,
    mst_order,
    order_linkage_group,
)
from .simulate import SimSpec, SimTruth, benchmark, simulate_population, true_cross

__version__ = "0.1.0"
