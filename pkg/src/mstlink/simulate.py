"""Ground-truth population simulator and benchmark driver.

Gametes follow a two-state Markov chain along each chromosome with
per-interval recombination probability taken from the map function (no
crossover interference).  DH doubles one gamete, BC scores the F1 gamete
against the recurrent parent, RILn runs r - 1 generations of selfing with
independent meioses, and ARIL uses r = 50 (residual heterozygosity
2^-49 is negligible and coerced to missing).  Genotyping errors and
missing masks are injected last, on disjoint cells.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gmath, model, ordering
from .model import A, B, HET, MISSING, Cross, DataError, LinkageGroup, MarkerMatrix, PopulationType

_ARIL_SELFING = 50


@dataclass(frozen=True)
class SimSpec:
    pop: PopulationType
    n_genotypes: int
    chromosomes: tuple          # (marker count, length cM) pairs
    map_fn: str = gmath.KOSAMBI
    missing_rate: float = 0.0
    error_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "chromosomes", tuple((int(t), float(l)) for t, l in self.chromosomes))
        if self.n_genotypes <= 0:
            raise DataError("need at least one genotype")
        if not self.chromosomes or any(t <= 0 for t, _ in self.chromosomes):
            raise DataError("each chromosome needs at least one marker")
        for rate in (self.missing_rate, self.error_rate):
            if not 0.0 <= rate <= 1.0:
                raise DataError("rates must lie in [0, 1]")


@dataclass(frozen=True)
class SimTruth:
    chrom: np.ndarray           # true chromosome index per marker
    positions: np.ndarray       # true cM position per marker
    crossovers: np.ndarray      # clean-call transitions per genotype
    error_mask: np.ndarray      # n x t bool
    missing_mask: np.ndarray    # n x t bool
    clean_calls: np.ndarray     # n x t int8 before error/missing injection

    def group_name(self, c: int) -> str:
        return f"L.{c + 1}"


def _meiosis(hap0: np.ndarray, hap1: np.ndarray, rec: np.ndarray, rng) -> np.ndarray:
    """One gamete per row: start haplotype at random, switch between
    markers with the per-interval recombination probability."""
    n, t = hap0.shape
    side = np.empty((n, t), dtype=bool)
    side[:, 0] = rng.random(n) < 0.5
    if t > 1:
        switches = rng.random((n, t - 1)) < rec
        side[:, 1:] = np.logical_xor.accumulate(switches, axis=1)
        side[:, 1:] ^= side[:, [0]]
    return np.where(side, hap1, hap0)


def _simulate_chromosome(spec: SimSpec, t: int, length: float, rng):
    n = spec.n_genotypes
    if t == 1:
        positions = np.zeros(1)
        rec = np.zeros(0)
    else:
        positions = np.linspace(0.0, length, t)
        rec = np.full(t - 1, gmath.map_inverse(length / (t - 1), spec.map_fn))
    all_a = np.zeros((n, t), dtype=bool)
    all_b = np.ones((n, t), dtype=bool)
    kind = spec.pop.kind
    if kind in ("BC", "DH"):
        gamete = _meiosis(all_a, all_b, rec, rng)
        calls = np.where(gamete, B, A).astype(np.int8)
    else:
        r = spec.pop.selfing if kind == "RILn" else _ARIL_SELFING
        hap0, hap1 = all_a, all_b
        for _ in range(r - 1):
            g1 = _meiosis(hap0, hap1, rec, rng)
            g2 = _meiosis(hap0, hap1, rec, rng)
            hap0, hap1 = g1, g2
        calls = np.where(hap0 == hap1, np.where(hap0, B, A), HET).astype(np.int8)
        if kind == "ARIL":
            calls[calls == HET] = MISSING  # ~2^-49 per cell
    return calls, positions


def simulate_population(spec: SimSpec):
    """Simulate a population; returns (Cross, SimTruth).

    The cross holds one unconstructed group "ALL" with the markers in true
    order; SimTruth records the true grouping, positions, per-genotype
    clean crossover counts and the injected masks.  Identical seeds give
    identical output.
    """
    rng = np.random.default_rng(spec.seed)
    blocks, pos_list, chrom_list = [], [], []
    for c, (t, length) in enumerate(spec.chromosomes):
        calls, positions = _simulate_chromosome(spec, t, length, rng)
        blocks.append(calls)
        pos_list.append(positions)
        chrom_list.append(np.full(t, c, dtype=np.int64))
    clean = np.concatenate(blocks, axis=1)
    positions = np.concatenate(pos_list)
    chrom = np.concatenate(chrom_list)
    n, t_total = clean.shape

    crossovers = np.zeros(n, dtype=np.int64)
    for block in blocks:
        if block.shape[1] > 1:
            crossovers += (block[:, 1:] != block[:, :-1]).sum(axis=1)

    calls = clean.copy()
    missing_mask = np.zeros((n, t_total), dtype=bool)
    k_miss = round(spec.missing_rate * n * t_total)
    if k_miss:
        flat = rng.choice(n * t_total, size=k_miss, replace=False)
        missing_mask.flat[flat] = True
        calls[missing_mask] = MISSING

    error_mask = np.zeros((n, t_total), dtype=bool)
    scorable = np.flatnonzero(~missing_mask.ravel() & (clean.ravel() != MISSING))
    k_err = round(spec.error_rate * scorable.size)
    if k_err:
        flat = rng.choice(scorable, size=k_err, replace=False)
        error_mask.flat[flat] = True
        flip = calls.ravel().copy()
        sel = flip[flat]
        swapped = np.where(sel == A, B, np.where(sel == B, A, sel)).astype(np.int8)
        het = sel == HET
        if het.any():
            swapped[het] = np.where(rng.random(int(het.sum())) < 0.5, A, B)
        flip[flat] = swapped
        calls = flip.reshape(n, t_total)

    genotype_names = tuple(f"G{i + 1:04d}" for i in range(n))
    marker_names = tuple(f"C{c + 1}M{k + 1:05d}" for c, k in _marker_ids(spec.chromosomes))
    matrix = MarkerMatrix(genotype_names, marker_names, calls)
    cross = Cross(matrix, spec.pop, [LinkageGroup("ALL", range(t_total), range(t_total))])
    truth = SimTruth(chrom, positions, crossovers, error_mask, missing_mask, clean)
    return cross, truth


def _marker_ids(chromosomes):
    for c, (t, _) in enumerate(chromosomes):
        for k in range(t):
            yield c, k


def true_cross(cross: Cross, truth: SimTruth) -> Cross:
    """Rebuild the simulated cross with its true groups and positions."""
    groups = []
    for c in np.unique(truth.chrom):
        idx = np.flatnonzero(truth.chrom == c)
        pos = truth.positions[idx] - truth.positions[idx[0]]
        groups.append(LinkageGroup(truth.group_name(int(c)), idx.tolist(), pos.tolist()))
    return Cross(cross.matrix, cross.pop, groups, cross.ledgers)


def write_truth(truth: SimTruth, cross: Cross, path) -> None:
    """Truth sidecar: marker, group, position and injected mask counts."""
    names = cross.matrix.marker_names
    lines = ["marker\tgroup\tposition_cM\tn_errors\tn_missing"]
    for j, name in enumerate(names):
        lines.append(
            f"{name}\t{truth.group_name(int(truth.chrom[j]))}\t{truth.positions[j]:.3f}"
            f"\t{int(truth.error_mask[:, j].sum())}\t{int(truth.missing_mask[:, j].sum())}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# benchmarks

@dataclass(frozen=True)
class BenchmarkRow:
    pop: str
    n: int
    markers: int
    error_rate: float
    full_s: float
    order_only_s: float


def benchmark(cells, pop: PopulationType = PopulationType("DH"), error_rate: float = 0.0,
              p_value: float = 1e-6, seed: int = 0, n_chromosomes: int = 5,
              chrom_length: float = 150.0):
    """Time full construction (clustering + ordering) against ordering-only
    within the true groups, for a list of (total markers, genotypes) cells."""
    rows = []
    for t_total, n in cells:
        per = max(1, t_total // n_chromosomes)
        spec = SimSpec(
            pop, n, tuple((per, chrom_length) for _ in range(n_chromosomes)),
            error_rate=error_rate, seed=seed,
        )
        cross, truth = simulate_population(spec)
        params = ordering.MapParams(p_value=p_value, detect_bad_data=error_rate > 0)
        start = time.perf_counter()
        ordering.construct_map(cross, params)
        full_s = time.perf_counter() - start
        grouped = true_cross(cross, truth)
        params_order = ordering.MapParams(p_value=2.0, bychr=True,
                                          detect_bad_data=error_rate > 0)
        start = time.perf_counter()
        ordering.construct_map(grouped, params_order)
        order_s = time.perf_counter() - start
        rows.append(BenchmarkRow(str(pop), n, per * n_chromosomes, error_rate, full_s, order_s))
    return rows
