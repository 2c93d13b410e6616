"""Closed-form genetics math shared across the pipeline.

Pairwise marker distances, recombination-fraction estimates, ordering
weights, map functions, the Hoeffding clustering threshold, and the
selfed-RIL two-locus forward model with its numerical inverse.

Marker calls are handled here as "A-values": the certainty that a call is
the AA parental type, so A -> 1.0, B -> 0.0, heterozygote -> 0.5 and
missing -> NaN.  The per-genotype mismatch between two calls is
``|a1 - a2|`` (0 for identical calls, 0.5 for het vs hom, 1 for opposite
homozygotes), which reduces to the plain allele mismatch count on
homozygous data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import xlogy

KOSAMBI = "kosambi"
HALDANE = "haldane"
MAP_FUNCTIONS = (KOSAMBI, HALDANE)

COUNT = "COUNT"
ML = "ML"
OBJECTIVES = (COUNT, ML)

# Selfing level used to stand in for an advanced (r -> infinity) RIL.
ADVANCED_RIL = math.inf


@dataclass(frozen=True)
class PairwiseDistance:
    """Mismatch count between two marker columns, rescaled to the full
    population size so unlinked pairs keep expectation n/2 under random
    missingness.

    ``d`` is NaN when no genotype has both markers scored (``n_obs == 0``).
    """

    d: float
    n_obs: int

    @property
    def defined(self) -> bool:
        return self.n_obs > 0


@dataclass(frozen=True)
class RecombinationFraction:
    """A recombination-fraction estimate.

    ``raw`` keeps the unclamped mismatch ratio (display code lets it run
    past 0.5 to expose out-of-phase markers); ``p`` clamps to [0, 0.5] for
    use in weights and map functions.
    """

    raw: float

    @property
    def p(self) -> float:
        if math.isnan(self.raw):
            return math.nan
        return min(max(self.raw, 0.0), 0.5)

    @property
    def defined(self) -> bool:
        return not math.isnan(self.raw)


def hamming_distance(a_j: np.ndarray, a_k: np.ndarray) -> PairwiseDistance:
    """Mismatch count between two A-value columns of equal length n.

    Counts |a_j - a_k| over genotypes where both calls are scored and
    rescales by n / n_obs so the result estimates the full-population
    hamming distance.
    """
    a_j = np.asarray(a_j, dtype=np.float64)
    a_k = np.asarray(a_k, dtype=np.float64)
    if a_j.shape != a_k.shape:
        raise ValueError("columns must have equal length")
    both = ~np.isnan(a_j) & ~np.isnan(a_k)
    n_obs = int(both.sum())
    if n_obs == 0:
        return PairwiseDistance(math.nan, 0)
    raw = float(np.abs(a_j[both] - a_k[both]).sum())
    return PairwiseDistance(raw * a_j.size / n_obs, n_obs)


def hamming_matrix(avals: np.ndarray, rescale: bool = True):
    """All-pairs mismatch counts for an n x t A-value matrix.

    Returns ``(d, n_obs)`` where both are t x t.  Pairs with no shared
    scored genotype get NaN.  The sums are expressed as matrix products of
    per-call indicator matrices so large panels stay in BLAS.
    """
    avals = np.asarray(avals, dtype=np.float64)
    n = avals.shape[0]
    ua = (avals == 1.0).astype(np.float64)
    ub = (avals == 0.0).astype(np.float64)
    uh = (avals == 0.5).astype(np.float64)
    uhom = ua + ub
    raw = ua.T @ ub
    raw += raw.T.copy()
    if uh.any():
        cross = uh.T @ uhom
        raw += 0.5 * (cross + cross.T)
    n_obs = (uhom + uh).T @ (uhom + uh)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(n_obs > 0, raw * (n / np.maximum(n_obs, 1)), np.nan)
    if not rescale:
        d = np.where(n_obs > 0, raw, np.nan)
    np.fill_diagonal(d, 0.0)
    return d, n_obs.astype(np.int64)


def soft_distance_matrix(a: np.ndarray) -> np.ndarray:
    """All-pairs expected mismatch for a fully observed probability matrix.

    d_jk = sum_i A(i,j)(1 - A(i,k)) + A(i,k)(1 - A(i,j)); equals the
    hamming count when every entry is 0 or 1.
    """
    a = np.asarray(a, dtype=np.float64)
    d = a.T @ (1.0 - a)
    d += d.T.copy()
    np.fill_diagonal(d, 0.0)
    return d


def rf_estimate(dist: PairwiseDistance, n: int) -> RecombinationFraction:
    """Recombination fraction d/n from a rescaled pairwise distance."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not dist.defined:
        return RecombinationFraction(math.nan)
    return RecombinationFraction(dist.d / n)


def weight(p, objective: str):
    """Ordering weight for a clamped recombination fraction.

    COUNT is the fraction itself; ML is its binary entropy (natural log,
    0 log 0 = 0).  Both are strictly increasing on [0, 0.5] so they rank
    marker pairs identically.
    """
    arr = np.clip(np.asarray(p, dtype=np.float64), 0.0, 0.5)
    if objective == COUNT:
        out = arr
    elif objective == ML:
        out = -(xlogy(arr, arr) + xlogy(1.0 - arr, 1.0 - arr))
    else:
        raise ValueError(f"unknown objective {objective!r}")
    if np.isscalar(p) or getattr(p, "ndim", 1) == 0:
        return float(out)
    return out


def map_forward(p, map_fn: str = KOSAMBI):
    """Recombination fraction -> cM.  p >= 0.5 maps to +inf."""
    arr = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        if map_fn == KOSAMBI:
            out = 25.0 * np.log((1.0 + 2.0 * arr) / (1.0 - 2.0 * arr))
        elif map_fn == HALDANE:
            out = -50.0 * np.log(1.0 - 2.0 * arr)
        else:
            raise ValueError(f"unknown map function {map_fn!r}")
    out = np.where(arr >= 0.5, np.inf, out)
    if np.isscalar(p) or arr.ndim == 0:
        return float(out)
    return out


def map_inverse(cm, map_fn: str = KOSAMBI):
    """cM -> recombination fraction; exact analytic inverse of map_forward."""
    arr = np.asarray(cm, dtype=np.float64)
    if map_fn == KOSAMBI:
        out = 0.5 * np.tanh(arr / 50.0)
    elif map_fn == HALDANE:
        out = 0.5 * (1.0 - np.exp(-arr / 50.0))
    else:
        raise ValueError(f"unknown map function {map_fn!r}")
    if np.isscalar(cm) or arr.ndim == 0:
        return float(out)
    return out


def hoeffding_delta(n: int, epsilon: float) -> float:
    """Hamming-distance threshold below which two markers are linked.

    Solves exp(-2 (n/2 - delta)^2 / n) = epsilon for delta < n/2.  epsilon
    >= 1 disables splitting and returns +inf (the "never split" sentinel
    used by the p.value >= 1 workflow convention).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if epsilon >= 1.0:
        return math.inf
    return max(0.0, n / 2.0 - math.sqrt(-n * math.log(epsilon) / 2.0))


def threshold_cm(n: int, epsilon: float, map_fn: str = KOSAMBI) -> float:
    """cM separation implied by the Hoeffding threshold at (n, epsilon)."""
    delta = hoeffding_delta(n, epsilon)
    if math.isinf(delta):
        return math.inf
    return map_forward(delta / n, map_fn)


def threshold_profile(n_values, cm_targets, map_fn: str = KOSAMBI):
    """-log10 epsilon required to place the linkage threshold at each cM.

    Returns a list of (n, cm_target, neg_log10_epsilon) rows, one per
    combination, in input order.  Inverts the Hoeffding relation: delta =
    n * map_inverse(cm), -log10 eps = 2 (n/2 - delta)^2 / (n ln 10).
    """
    rows = []
    for n in n_values:
        if n < 2:
            raise ValueError("population sizes must be at least 2")
        for cm in cm_targets:
            if cm < 0:
                raise ValueError("cM targets must be non-negative")
            delta = n * map_inverse(cm, map_fn)
            neg_log10 = 2.0 * (n / 2.0 - delta) ** 2 / (n * math.log(10.0))
            rows.append((int(n), float(cm), float(neg_log10)))
    return rows


# ---------------------------------------------------------------------------
# Selfed-RIL two-locus forward model.
#
# State space: unordered pairs of the four two-locus haplotypes
# (00, 01, 10, 11), giving the 10 distinguishable diplotypes.  Selfing
# draws two independent gametes from the same parent, where a gamete is
# parental with probability (1 - rho)/2 each and recombinant with
# probability rho/2 each.

_HAPLOTYPES = ((0, 0), (0, 1), (1, 0), (1, 1))
_PAIRS = [(i, j) for i in range(4) for j in range(i, 4)]
_PAIR_INDEX = {p: k for k, p in enumerate(_PAIRS)}
_F1_STATE = _PAIR_INDEX[(0, 3)]  # haplotypes 00 / 11


def _state_mismatch() -> np.ndarray:
    out = np.empty(len(_PAIRS))
    for k, (h1, h2) in enumerate(_PAIRS):
        x1, y1 = _HAPLOTYPES[h1]
        x2, y2 = _HAPLOTYPES[h2]
        a_locus1 = 1.0 - (x1 + x2) / 2.0
        a_locus2 = 1.0 - (y1 + y2) / 2.0
        out[k] = abs(a_locus1 - a_locus2)
    return out


_STATE_MISMATCH = _state_mismatch()


def _state_het_locus1() -> np.ndarray:
    out = np.empty(len(_PAIRS))
    for k, (h1, h2) in enumerate(_PAIRS):
        out[k] = 1.0 if _HAPLOTYPES[h1][0] != _HAPLOTYPES[h2][0] else 0.0
    return out


_STATE_HET = _state_het_locus1()


def _selfing_transition(rho: np.ndarray) -> np.ndarray:
    """(G, 10, 10) transition tensor of one selfing generation."""
    g = rho.shape[0]
    gam = np.zeros((g, len(_PAIRS), 4))
    half_par = (1.0 - rho) / 2.0
    half_rec = rho / 2.0
    for s, (h1, h2) in enumerate(_PAIRS):
        x1, y1 = _HAPLOTYPES[h1]
        x2, y2 = _HAPLOTYPES[h2]
        gam[:, s, h1] += half_par
        gam[:, s, h2] += half_par
        gam[:, s, 2 * x1 + y2] += half_rec
        gam[:, s, 2 * x2 + y1] += half_rec
    trans = np.zeros((g, len(_PAIRS), len(_PAIRS)))
    for g1 in range(4):
        for g2 in range(g1, 4):
            k = _PAIR_INDEX[(g1, g2)]
            prob = gam[:, :, g1] * gam[:, :, g2]
            if g1 != g2:
                prob = 2.0 * prob
            trans[:, :, k] += prob
    return trans


def _ril_state_distribution(rho: np.ndarray, r: int) -> np.ndarray:
    trans = _selfing_transition(rho)
    state = np.zeros((rho.shape[0], len(_PAIRS)))
    state[:, _F1_STATE] = 1.0
    for _ in range(r - 1):
        state = np.einsum("gs,gst->gt", state, trans)
    return state


def ril_expected_mismatch(rho, r):
    """Expected per-genotype call mismatch between two loci in a selfed RIL.

    ``rho`` is the per-meiosis recombination fraction; ``r`` the selfing
    generation (F1 selfed r - 1 times), or ``math.inf`` for an advanced
    RIL where the fixed-line result 2 rho / (1 + 2 rho) applies.  Uses the
    |a1 - a2| mismatch convention, so a double heterozygote matches itself.
    Strictly increasing in rho, with f(0) = 0; the r -> inf limit of
    f(0.5) is 0.5 while finite generations plateau at (1 - h^2)/2 for
    heterozygote fraction h = 2^-(r-1).
    """
    scalar = np.isscalar(rho) or getattr(rho, "ndim", 1) == 0
    arr = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    if np.any((arr < 0) | (arr > 0.5)):
        raise ValueError("rho must lie in [0, 0.5]")
    if r == ADVANCED_RIL:
        out = 2.0 * arr / (1.0 + 2.0 * arr)
    else:
        if r < 2:
            raise ValueError("selfing generation must be >= 2")
        out = _ril_state_distribution(arr, int(r)) @ _STATE_MISMATCH
    return float(out[0]) if scalar else out


def ril_heterozygote_fraction(r) -> float:
    """Expected heterozygote proportion after r - 1 selfing generations."""
    if r == ADVANCED_RIL:
        return 0.0
    arr = np.array([0.25])
    state = _ril_state_distribution(arr, int(r))
    return float(state[0] @ _STATE_HET)


def ril_transform_aril(p):
    """Advanced-RIL transform: observed mismatch fraction -> meiosis-scale
    recombination fraction, p* = (p/2) / (1 - p)."""
    arr = np.asarray(p, dtype=np.float64)
    out = (arr / 2.0) / (1.0 - arr)
    if np.isscalar(p) or arr.ndim == 0:
        return float(out)
    return out


@lru_cache(maxsize=16)
def _ril_inverse_grid(r: int):
    rho = np.linspace(0.0, 0.5, 4097)
    f = ril_expected_mismatch(rho, r)
    return f, rho


def ril_invert(observed: float, r) -> float:
    """Meiosis-scale recombination fraction whose expected observed
    mismatch equals ``observed``.

    Advanced RIL uses the closed form (p/2)/(1 - p); finite r bisects the
    monotone forward model to |f(rho) - observed| <= 1e-10.  Values
    outside the forward range clamp to the nearest endpoint.
    """
    if math.isnan(observed):
        return math.nan
    observed = min(max(observed, 0.0), 0.5)
    if r == ADVANCED_RIL:
        return ril_transform_aril(observed)
    if r < 2:
        raise ValueError("selfing generation must be >= 2")
    lo, hi = 0.0, 0.5
    f_hi = ril_expected_mismatch(hi, r)
    if observed <= 0.0:
        return 0.0
    if observed >= f_hi:
        return 0.5
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f_mid = ril_expected_mismatch(mid, r)
        if abs(f_mid - observed) <= 1e-10:
            return mid
        if f_mid < observed:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ril_invert_array(observed: np.ndarray, r) -> np.ndarray:
    """Vectorized ril_invert for bulk weight transforms.

    Finite r interpolates a dense cached grid of the forward model (error
    well below the 1e-4 distance-convergence tolerance); the scalar
    ril_invert remains the high-precision reference.
    """
    arr = np.clip(np.asarray(observed, dtype=np.float64), 0.0, 0.5)
    nan_mask = np.isnan(np.asarray(observed, dtype=np.float64))
    if r == ADVANCED_RIL:
        out = ril_transform_aril(arr)
    else:
        f, rho = _ril_inverse_grid(int(r))
        out = np.interp(arr, f, rho)
    out = np.asarray(out, dtype=np.float64)
    out[nan_mask] = np.nan
    return out
