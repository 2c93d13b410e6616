"""Population data model and structural map operations.

A ``Cross`` holds an n-genotype x t-marker call matrix partitioned into
named linkage groups, plus "ledgers" of markers that have been pulled
aside (co-located duplicates, distorted or gappy markers).  Cross values
are immutable: every operation returns a new value, so they are safe to
share across threads.

On-disk format is tab-separated text; see load_cross/write_cross.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from . import gmath

# int8 call codes
A = 0
B = 1
HET = 2
MISSING = -1

_SYMBOL_TO_CODE = {"A": A, "B": B, "X": HET, "U": MISSING, "-": MISSING}
_CODE_TO_SYMBOL = {A: "A", B: "B", HET: "X", MISSING: "U"}

# A-value lookup indexed by code + 1
_AVALUE_LUT = np.array([np.nan, 1.0, 0.0, 0.5])

LEDGER_CO_LOCATED = "co.located"
LEDGER_SEG_DISTORTION = "seg.distortion"
LEDGER_MISSING = "missing"
LEDGER_OMITTED = "omitted"
LEDGER_KEYS = (LEDGER_CO_LOCATED, LEDGER_SEG_DISTORTION, LEDGER_MISSING, LEDGER_OMITTED)


class DataError(ValueError):
    """Invalid input data or an operation that would corrupt a cross."""


def avalues(calls: np.ndarray) -> np.ndarray:
    """Map int8 call codes to A-certainty floats (NaN for missing)."""
    return _AVALUE_LUT[np.asarray(calls, dtype=np.int64) + 1]


@dataclass(frozen=True)
class PopulationType:
    """Population kind and, for RILn, the selfing generation r >= 2."""

    kind: str
    selfing: int | None = None

    def __post_init__(self):
        if self.kind not in ("BC", "DH", "RILn", "ARIL"):
            raise DataError(f"unknown population kind {self.kind!r}")
        if self.kind == "RILn":
            if self.selfing is None or self.selfing < 2:
                raise DataError("RILn requires a selfing generation r >= 2")
        elif self.selfing is not None:
            raise DataError(f"{self.kind} does not take a selfing generation")

    @classmethod
    def parse(cls, text: str) -> "PopulationType":
        text = text.strip()
        if text in ("BC", "DH", "ARIL"):
            return cls(text)
        m = re.fullmatch(r"RIL(\d+)", text)
        if m:
            return cls("RILn", int(m.group(1)))
        raise DataError(f"unknown population type {text!r} (expected BC, DH, ARIL or RIL<r>)")

    def __str__(self) -> str:
        return f"RIL{self.selfing}" if self.kind == "RILn" else self.kind

    @property
    def allows_het(self) -> bool:
        return self.kind == "RILn"

    @property
    def het_fraction(self) -> float:
        """Expected heterozygote proportion: 2^-(r-1) for RILn, else 0."""
        if self.kind == "RILn":
            return 2.0 ** -(self.selfing - 1)
        return 0.0

    @property
    def meiosis_r(self):
        """Scale parameter for the RIL distance transform: None means the
        observed mismatch fraction already sits on the meiosis scale."""
        if self.kind == "RILn":
            return self.selfing
        if self.kind == "ARIL":
            return gmath.ADVANCED_RIL
        return None

    @property
    def supports_em(self) -> bool:
        """Imputation/error detection run for BC, DH and advanced RIL only."""
        return self.kind != "RILn"


def transform_rf(values, pop: PopulationType):
    """Observed mismatch fractions -> meiosis-scale recombination fractions."""
    r = pop.meiosis_r
    if r is None:
        return np.clip(np.asarray(values, dtype=np.float64), 0.0, 0.5)
    return gmath.ril_invert_array(values, r)


@dataclass(frozen=True, eq=False)
class MarkerMatrix:
    """Call matrix with genotype rows and marker columns."""

    genotype_names: tuple
    marker_names: tuple
    calls: np.ndarray  # (n, t) int8

    def __post_init__(self):
        calls = np.asarray(self.calls, dtype=np.int8)
        object.__setattr__(self, "calls", calls)
        object.__setattr__(self, "genotype_names", tuple(self.genotype_names))
        object.__setattr__(self, "marker_names", tuple(self.marker_names))
        if calls.ndim != 2 or calls.shape != (len(self.genotype_names), len(self.marker_names)):
            raise DataError("call grid does not match name list lengths")
        if len(set(self.genotype_names)) != len(self.genotype_names):
            raise DataError("duplicate genotype names")
        if len(set(self.marker_names)) != len(self.marker_names):
            raise DataError("duplicate marker names")
        calls.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.genotype_names)

    @property
    def t(self) -> int:
        return len(self.marker_names)


@dataclass(frozen=True)
class LinkageGroup:
    """Ordered marker indices (into the cross matrix) with cM positions."""

    name: str
    markers: tuple
    positions: tuple

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(int(i) for i in self.markers))
        object.__setattr__(self, "positions", tuple(float(p) for p in self.positions))
        if len(self.markers) != len(self.positions):
            raise DataError(f"group {self.name}: marker/position length mismatch")
        if self.positions:
            if abs(self.positions[0]) > 1e-9:
                raise DataError(f"group {self.name}: positions must start at 0")
            if any(b < a - 1e-9 for a, b in zip(self.positions, self.positions[1:])):
                raise DataError(f"group {self.name}: positions must be non-decreasing")

    @property
    def length(self) -> float:
        return self.positions[-1] if self.positions else 0.0


@dataclass(frozen=True, eq=False)
class MarkerLedger:
    """Markers pulled out of the map, with their call columns and the
    statistics that justified the pull.  Co-located entries also record the
    in-map marker they duplicate."""

    marker_names: tuple
    calls: np.ndarray  # (n, k) int8
    stats: dict = field(default_factory=dict)
    anchors: tuple | None = None

    def __post_init__(self):
        calls = np.asarray(self.calls, dtype=np.int8)
        object.__setattr__(self, "calls", calls)
        object.__setattr__(self, "marker_names", tuple(self.marker_names))
        object.__setattr__(self, "stats", {k: tuple(float(x) for x in v) for k, v in self.stats.items()})
        if self.anchors is not None:
            object.__setattr__(self, "anchors", tuple(self.anchors))
            if len(self.anchors) != len(self.marker_names):
                raise DataError("ledger anchors must align with markers")
        if calls.ndim != 2 or calls.shape[1] != len(self.marker_names):
            raise DataError("ledger call grid does not match marker names")
        for name, vals in self.stats.items():
            if len(vals) != len(self.marker_names):
                raise DataError(f"ledger stat {name!r} must align with markers")
        calls.flags.writeable = False

    @property
    def k(self) -> int:
        return len(self.marker_names)


@dataclass(frozen=True, eq=False)
class Cross:
    """A population: matrix, linkage groups and pulled-marker ledgers."""

    matrix: MarkerMatrix
    pop: PopulationType
    groups: tuple
    ledgers: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "ledgers", dict(self.ledgers))
        self._validate()

    def _validate(self):
        seen = np.zeros(self.matrix.t, dtype=bool)
        names = set()
        for g in self.groups:
            if g.name in names:
                raise DataError(f"duplicate group name {g.name!r}")
            names.add(g.name)
            for i in g.markers:
                if i < 0 or i >= self.matrix.t:
                    raise DataError(f"group {g.name}: marker index {i} out of range")
                if seen[i]:
                    raise DataError(f"marker {self.matrix.marker_names[i]!r} appears twice")
                seen[i] = True
        if not seen.all():
            missing = [self.matrix.marker_names[i] for i in np.flatnonzero(~seen)[:3]]
            raise DataError(f"markers outside any group: {missing}")
        ledger_names = set()
        for key, led in self.ledgers.items():
            if led.calls.shape[0] != self.matrix.n:
                raise DataError(f"ledger {key!r} genotype dimension mismatch")
            for name in led.marker_names:
                if name in ledger_names or name in self.matrix.marker_names:
                    raise DataError(f"marker {name!r} duplicated across map/ledgers")
                ledger_names.add(name)
        _check_alleles(self.matrix.calls, self.pop)
        for key, led in self.ledgers.items():
            _check_alleles(led.calls, self.pop)

    # -- convenience ------------------------------------------------------

    @property
    def n(self) -> int:
        return self.matrix.n

    @property
    def n_map_markers(self) -> int:
        return self.matrix.t

    @property
    def n_markers(self) -> int:
        return self.matrix.t + sum(l.k for l in self.ledgers.values())

    def group(self, name: str) -> LinkageGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise DataError(f"unknown group {name!r}")

    def group_of_marker(self, name: str) -> str:
        i = self.matrix.marker_names.index(name)
        for g in self.groups:
            if i in g.markers:
                return g.name
        raise DataError(f"marker {name!r} not in any group")

    def marker_census(self) -> set:
        census = set(self.matrix.marker_names)
        for led in self.ledgers.values():
            census.update(led.marker_names)
        return census

    def group_lengths(self) -> dict:
        return {g.name: g.length for g in self.groups}


def _check_alleles(calls: np.ndarray, pop: PopulationType):
    codes = np.unique(calls)
    allowed = {A, B, MISSING} | ({HET} if pop.allows_het else set())
    bad = [c for c in codes.tolist() if c not in allowed]
    if bad:
        if HET in bad and not pop.allows_het:
            raise DataError(f"heterozygote not allowed for population {pop}")
        raise DataError(f"illegal call codes {bad}")


def crosses_equal(a: Cross, b: Cross, pos_tol: float = 1e-3) -> bool:
    """Structural equality with a cM tolerance on positions."""
    if a.pop != b.pop:
        return False
    if a.matrix.genotype_names != b.matrix.genotype_names:
        return False
    if a.matrix.marker_names != b.matrix.marker_names:
        return False
    if not np.array_equal(a.matrix.calls, b.matrix.calls):
        return False
    if len(a.groups) != len(b.groups):
        return False
    for ga, gb in zip(a.groups, b.groups):
        if ga.name != gb.name or ga.markers != gb.markers:
            return False
        if any(abs(x - y) > pos_tol for x, y in zip(ga.positions, gb.positions)):
            return False
    if set(a.ledgers) != set(b.ledgers):
        return False
    for key in a.ledgers:
        la, lb = a.ledgers[key], b.ledgers[key]
        if la.marker_names != lb.marker_names or la.anchors != lb.anchors:
            return False
        if not np.array_equal(la.calls, lb.calls):
            return False
        if set(la.stats) != set(lb.stats):
            return False
        for s in la.stats:
            if any(abs(x - y) > 1e-6 for x, y in zip(la.stats[s], lb.stats[s])):
                return False
    return True


# ---------------------------------------------------------------------------
# ledger statistics (recomputed whenever the genotype set changes)

def missing_proportion(calls: np.ndarray) -> np.ndarray:
    calls = np.asarray(calls)
    return (calls == MISSING).mean(axis=0)


def seg_distortion_neglog10p(column: np.ndarray, pop: PopulationType) -> float:
    """-log10 p of a chi-square goodness-of-fit test against the expected
    segregation ratio (1:1 for BC/DH/ARIL; for RILn the heterozygote class
    carries mass 2^-(r-1) with the remainder split equally)."""
    column = np.asarray(column)
    obs_a = int((column == A).sum())
    obs_b = int((column == B).sum())
    obs_h = int((column == HET).sum())
    n_obs = obs_a + obs_b + obs_h
    if n_obs == 0:
        return 0.0
    if pop.allows_het:
        h = pop.het_fraction
        expected = np.array([(1 - h) / 2, (1 - h) / 2, h]) * n_obs
        observed = np.array([obs_a, obs_b, obs_h], dtype=float)
    else:
        expected = np.array([0.5, 0.5]) * n_obs
        observed = np.array([obs_a, obs_b], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0).sum()
    p = chi2.sf(stat, df=len(expected) - 1)
    if p <= 0:
        return 320.0  # smaller than any representable p
    return float(-math.log10(p))


def ledger_stat_values(key: str, calls: np.ndarray, pop: PopulationType) -> dict:
    if key == LEDGER_MISSING:
        return {"miss": tuple(missing_proportion(calls))}
    if key == LEDGER_SEG_DISTORTION:
        return {"neglog10P": tuple(seg_distortion_neglog10p(calls[:, j], pop) for j in range(calls.shape[1]))}
    return {}


def merge_ledgers(a: "MarkerLedger | None", b: "MarkerLedger") -> "MarkerLedger":
    """Concatenate two ledgers of the same kind (marker names must differ)."""
    if a is None:
        return b
    names = a.marker_names + b.marker_names
    calls = np.concatenate([a.calls, b.calls], axis=1)
    stats = {}
    for key in set(a.stats) | set(b.stats):
        va = a.stats.get(key, tuple(math.nan for _ in a.marker_names))
        vb = b.stats.get(key, tuple(math.nan for _ in b.marker_names))
        stats[key] = va + vb
    anchors = None
    if a.anchors is not None or b.anchors is not None:
        anchors = (a.anchors or ("",) * a.k) + (b.anchors or ("",) * b.k)
    return MarkerLedger(names, calls, stats, anchors=anchors)


# ---------------------------------------------------------------------------
# file I/O

def _sidecar_path(path: Path, key: str) -> Path:
    return path.with_suffix("").parent / (path.with_suffix("").name + f".{key}.tsv")


def load_cross(path, pop: PopulationType, load_ledgers: bool = True) -> Cross:
    """Load a cross from a tab-separated marker file.

    Unconstructed format: ``marker<TAB>geno1..genoN`` with one row per
    marker; all markers land in one group "ALL" with index positions.  A
    constructed map adds ``group`` and ``position_cM`` columns after the
    marker name.  Cells use A, B, X (heterozygote), U or - (missing).
    Ledger sidecar files (``<stem>.<key>.tsv``) are picked up automatically.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    lines = [ln.rstrip("\n") for ln in path.read_text().splitlines()]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split("\t")
    if not header or header[0] != "marker":
        raise DataError(f"{path}: header must start with 'marker'")
    has_group = len(header) > 1 and header[1] == "group"
    has_pos = has_group and len(header) > 2 and header[2] == "position_cM"
    first_geno = 1 + (1 if has_group else 0) + (1 if has_pos else 0)
    genotype_names = header[first_geno:]
    if not genotype_names:
        raise DataError(f"{path}: no genotype columns")

    marker_names, group_col, pos_col, rows = [], [], [], []
    for ln_no, ln in enumerate(lines[1:], start=2):
        cells = ln.split("\t")
        if len(cells) != len(header):
            raise DataError(f"{path}:{ln_no}: ragged row ({len(cells)} of {len(header)} columns)")
        marker_names.append(cells[0])
        if has_group:
            group_col.append(cells[1])
        if has_pos:
            try:
                pos_col.append(float(cells[2]))
            except ValueError:
                raise DataError(f"{path}:{ln_no}: bad position {cells[2]!r}") from None
        rows.append(_parse_calls(cells[first_geno:], pop, path, ln_no))

    calls = (
        np.array(rows, dtype=np.int8).T if rows else np.zeros((len(genotype_names), 0), np.int8)
    )
    matrix = MarkerMatrix(genotype_names, marker_names, calls)

    if has_group:
        groups = []
        order = []
        by_name = {}
        for i, gname in enumerate(group_col):
            if gname not in by_name:
                by_name[gname] = []
                order.append(gname)
            by_name[gname].append(i)
        for gname in order:
            idx = by_name[gname]
            if has_pos:
                pos = [pos_col[i] for i in idx]
                if any(b < a for a, b in zip(pos, pos[1:])):
                    raise DataError(f"{path}: group {gname}: positions not sorted")
                pos = [p - pos[0] for p in pos]
            else:
                pos = list(range(len(idx)))
            groups.append(LinkageGroup(gname, idx, pos))
    else:
        groups = [LinkageGroup("ALL", range(matrix.t), range(matrix.t))]

    ledgers = {}
    if load_ledgers:
        for key in LEDGER_KEYS:
            side = _sidecar_path(path, key)
            if side.exists():
                ledgers[key] = _load_ledger(side, genotype_names, pop)
    return Cross(matrix, pop, groups, ledgers)


def _parse_calls(cells, pop, path, ln_no):
    row = []
    for c in cells:
        code = _SYMBOL_TO_CODE.get(c.strip())
        if code is None:
            raise DataError(f"{path}:{ln_no}: illegal allele symbol {c!r}")
        if code == HET and not pop.allows_het:
            raise DataError(f"{path}:{ln_no}: heterozygote not allowed for population {pop}")
        row.append(code)
    return row


def _load_ledger(path: Path, genotype_names, pop) -> MarkerLedger:
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    header = lines[0].split("\t")
    if len(header) < 2 or header[0] != "marker":
        raise DataError(f"{path}: bad ledger header")
    stat_name = header[1]
    if header[2:] != list(genotype_names):
        raise DataError(f"{path}: ledger genotypes do not match the main file")
    names, stat_vals, rows = [], [], []
    for ln_no, ln in enumerate(lines[1:], start=2):
        cells = ln.split("\t")
        if len(cells) != len(header):
            raise DataError(f"{path}:{ln_no}: ragged row")
        names.append(cells[0])
        stat_vals.append(cells[1])
        rows.append(_parse_calls(cells[2:], pop, path, ln_no))
    calls = np.array(rows, dtype=np.int8).T if rows else np.zeros((len(genotype_names), 0), np.int8)
    if stat_name == "anchor":
        return MarkerLedger(names, calls, {}, anchors=stat_vals)
    return MarkerLedger(names, calls, {stat_name: [float(v) for v in stat_vals]})


def write_cross(cross: Cross, path) -> None:
    """Write a cross (and sidecar files for non-empty ledgers) to disk.

    Positions are serialized at 3 decimals, so load(write(c)) reproduces c
    up to 1e-3 cM.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = cross.matrix.marker_names
    out = ["\t".join(["marker", "group", "position_cM", *cross.matrix.genotype_names])]
    for g in cross.groups:
        for i, pos in zip(g.markers, g.positions):
            col = "\t".join(_CODE_TO_SYMBOL[c] for c in cross.matrix.calls[:, i].tolist())
            out.append(f"{names[i]}\t{g.name}\t{pos:.3f}\t{col}")
    path.write_text("\n".join(out) + "\n")
    for key in LEDGER_KEYS:
        side = _sidecar_path(path, key)
        led = cross.ledgers.get(key)
        if led is None or led.k == 0:
            if side.exists():
                side.unlink()
            continue
        _write_ledger(led, side, cross.matrix.genotype_names)


def _write_ledger(led: MarkerLedger, path: Path, genotype_names):
    if led.anchors is not None:
        stat_name, stat_vals = "anchor", list(led.anchors)
    elif led.stats:
        stat_name = next(iter(led.stats))
        stat_vals = [f"{v:.6g}" for v in led.stats[stat_name]]
    else:
        stat_name, stat_vals = "stat", ["0"] * led.k
    out = ["\t".join(["marker", stat_name, *genotype_names])]
    for j, name in enumerate(led.marker_names):
        col = "\t".join(_CODE_TO_SYMBOL[c] for c in led.calls[:, j].tolist())
        out.append(f"{name}\t{stat_vals[j]}\t{col}")
    path.write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# structural operations

def subset_cross(cross: Cross, keep) -> Cross:
    """Restrict a cross to a subset of genotypes.

    ``keep`` is a list of genotype names or a predicate on names.  Ledger
    call columns follow the subset and their statistics tables (missing
    proportion, seg-distortion p-value) are recomputed on the survivors.
    """
    names = cross.matrix.genotype_names
    if callable(keep):
        kept = [n for n in names if keep(n)]
    else:
        keep = list(keep)
        unknown = [k for k in keep if k not in names]
        if unknown:
            raise DataError(f"unknown genotype ids: {unknown[:3]}")
        kept_set = set(keep)
        kept = [n for n in names if n in kept_set]
    if len(kept) < 2:
        raise DataError("subset must retain at least 2 genotypes")
    rows = [names.index(n) for n in kept]
    matrix = MarkerMatrix(kept, cross.matrix.marker_names, cross.matrix.calls[rows])
    ledgers = {}
    for key, led in cross.ledgers.items():
        calls = led.calls[rows]
        stats = ledger_stat_values(key, calls, cross.pop) or {
            k: led.stats[k] for k in led.stats
        }
        ledgers[key] = MarkerLedger(led.marker_names, calls, stats, anchors=led.anchors)
    return Cross(matrix, cross.pop, cross.groups, ledgers)


def _suffixed(name: str, k: int, suffix: str, sep: str = ".") -> str:
    if suffix == "alpha":
        return f"{name}{sep}{chr(ord('A') + k - 1)}"
    return f"{name}{sep}{k}"


def break_groups(cross: Cross, split: dict, suffix: str = "numeric") -> Cross:
    """Split linkage groups after the named markers.

    ``split`` maps a group name to the markers after which to cut.  Each
    listed group is renamed with a suffix sequence even when no cut lands
    inside it; fragment positions restart at zero.
    """
    groups = []
    for g in cross.groups:
        if g.name not in split:
            groups.append(g)
            continue
        cut_names = split[g.name]
        local_names = [cross.matrix.marker_names[i] for i in g.markers]
        cuts = []
        for mk in cut_names:
            if mk not in local_names:
                raise DataError(f"marker {mk!r} is not in group {g.name}")
            cuts.append(local_names.index(mk))
        bounds = sorted(set(cuts))
        starts = [0] + [c + 1 for c in bounds if c + 1 < len(local_names)]
        ends = starts[1:] + [len(local_names)]
        for k, (s, e) in enumerate(zip(starts, ends), start=1):
            pos = [g.positions[i] - g.positions[s] for i in range(s, e)]
            groups.append(LinkageGroup(_suffixed(g.name, k, suffix), g.markers[s:e], pos))
    return Cross(cross.matrix, cross.pop, groups, cross.ledgers)


def merge_groups(cross: Cross, merge: dict, gap: float = 5.0) -> Cross:
    """Concatenate linkage groups, inserting an artificial ``gap`` cM
    between fragments.  ``merge`` maps the new group name to the ordered
    list of groups to join."""
    merged_members = {}
    for new_name, members in merge.items():
        for m in members:
            if m in merged_members:
                raise DataError(f"group {m!r} listed in more than one merge")
            merged_members[m] = new_name
    existing = {g.name for g in cross.groups}
    for members in merge.values():
        for m in members:
            if m not in existing:
                raise DataError(f"unknown group {m!r}")
    surviving = {g.name for g in cross.groups if g.name not in merged_members}
    for new_name in merge:
        if new_name in surviving:
            raise DataError(f"merged name {new_name!r} collides with surviving group")

    by_name = {g.name: g for g in cross.groups}
    placed = set()
    groups = []
    for g in cross.groups:
        if g.name not in merged_members:
            groups.append(g)
            continue
        new_name = merged_members[g.name]
        if new_name in placed:
            continue
        placed.add(new_name)
        markers, positions = [], []
        offset = 0.0
        for k, member in enumerate(merge[new_name]):
            mg = by_name[member]
            if k > 0:
                offset = (positions[-1] if positions else 0.0) + gap
            markers.extend(mg.markers)
            positions.extend(offset + p for p in mg.positions)
        groups.append(LinkageGroup(new_name, markers, positions))
    return Cross(cross.matrix, cross.pop, groups, cross.ledgers)


def combine_maps(maps, keep_all: bool = True) -> Cross:
    """Merge linkage maps from the same population.

    Genotypes are unioned (``keep_all``, absent cells become missing) or
    intersected; markers from identically named groups land in the same
    group ordered by their source positions.  A marker appearing in
    several maps must carry identical non-missing calls on the shared
    genotypes, otherwise the contradiction is reported as an error.
    """
    maps = list(maps)
    if not maps:
        raise DataError("no maps to combine")
    pop = maps[0].pop
    for m in maps[1:]:
        if m.pop != pop:
            raise DataError("combined maps must share a population type")

    if keep_all:
        genotypes = []
        for m in maps:
            for name in m.matrix.genotype_names:
                if name not in genotypes:
                    genotypes.append(name)
    else:
        shared = set(maps[0].matrix.genotype_names)
        for m in maps[1:]:
            shared &= set(m.matrix.genotype_names)
        genotypes = [n for n in maps[0].matrix.genotype_names if n in shared]
    if not genotypes:
        raise DataError("no genotypes survive the combination")
    geno_index = {name: i for i, name in enumerate(genotypes)}

    # marker name -> combined call column, merged with conflict detection
    columns: dict[str, np.ndarray] = {}

    def merge_column(name, src_calls, src_rows):
        col = columns.get(name)
        if col is None:
            col = np.full(len(genotypes), MISSING, dtype=np.int8)
            columns[name] = col
        for r_src, r_dst in src_rows:
            v = src_calls[r_src]
            if v == MISSING:
                continue
            if col[r_dst] != MISSING and col[r_dst] != v:
                raise DataError(f"conflicting calls for marker {name!r}")
            col[r_dst] = v

    group_order = []
    group_entries: dict[str, list] = {}
    ledger_entries: dict[str, dict] = {}
    for mi, m in enumerate(maps):
        src_rows = [
            (i, geno_index[name])
            for i, name in enumerate(m.matrix.genotype_names)
            if name in geno_index
        ]
        for g in m.groups:
            if g.name not in group_entries:
                group_entries[g.name] = []
                group_order.append(g.name)
            for idx, pos in zip(g.markers, g.positions):
                name = m.matrix.marker_names[idx]
                first_time = name not in columns
                merge_column(name, m.matrix.calls[:, idx], src_rows)
                if first_time:
                    group_entries[g.name].append((pos, mi, name))
        for key, led in m.ledgers.items():
            dst = ledger_entries.setdefault(key, {})
            for j, name in enumerate(led.marker_names):
                if name in columns:
                    merge_column(name, led.calls[:, j], src_rows)
                    continue
                if name in dst:
                    col = dst[name][0]
                    for r_src, r_dst in src_rows:
                        v = led.calls[r_src, j]
                        if v == MISSING:
                            continue
                        if col[r_dst] != MISSING and col[r_dst] != v:
                            raise DataError(f"conflicting calls for marker {name!r}")
                        col[r_dst] = v
                    continue
                col = np.full(len(genotypes), MISSING, dtype=np.int8)
                for r_src, r_dst in src_rows:
                    col[r_dst] = led.calls[r_src, j]
                anchor = led.anchors[j] if led.anchors is not None else None
                dst[name] = (col, anchor)

    marker_names, group_specs = [], []
    for gname in group_order:
        entries = sorted(group_entries[gname], key=lambda e: (e[0], e[1]))
        idx, pos = [], []
        for p, _, name in entries:
            idx.append(len(marker_names))
            marker_names.append(name)
            pos.append(p)
        pos = [p - pos[0] for p in pos] if pos else []
        group_specs.append((gname, idx, pos))
    calls = (
        np.column_stack([columns[n] for n in marker_names])
        if marker_names
        else np.zeros((len(genotypes), 0), np.int8)
    )
    matrix = MarkerMatrix(genotypes, marker_names, calls)
    groups = [LinkageGroup(n, i, p) for n, i, p in group_specs]

    ledgers = {}
    map_names = set(marker_names)
    for key, dst in ledger_entries.items():
        names = [n for n in dst if n not in map_names]
        if not names:
            continue
        lcalls = np.column_stack([dst[n][0] for n in names])
        anchors = [dst[n][1] for n in names]
        has_anchor = any(a is not None for a in anchors)
        stats = ledger_stat_values(key, lcalls, pop)
        ledgers[key] = MarkerLedger(
            names, lcalls, stats, anchors=tuple(a or "" for a in anchors) if has_anchor else None
        )
    return Cross(matrix, pop, groups, ledgers)
