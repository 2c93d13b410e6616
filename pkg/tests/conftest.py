import numpy as np
import pytest

from mstlink import model, simulate
from mstlink.model import A, B, HET, MISSING, Cross, LinkageGroup, MarkerMatrix, PopulationType


def make_cross(calls, pop="DH", genotype_names=None, marker_names=None, groups=None):
    """Small-cross builder for hand-constructed call grids."""
    calls = np.asarray(calls, dtype=np.int8)
    n, t = calls.shape
    genotype_names = genotype_names or [f"G{i+1}" for i in range(n)]
    marker_names = marker_names or [f"M{j+1}" for j in range(t)]
    matrix = MarkerMatrix(genotype_names, marker_names, calls)
    if groups is None:
        groups = [LinkageGroup("ALL", range(t), range(t))]
    pop = PopulationType.parse(pop) if isinstance(pop, str) else pop
    return Cross(matrix, pop, groups)


def sym(path):
    """Call codes from a compact string like 'AB-XU'."""
    table = {"A": A, "B": B, "X": HET, "U": MISSING, "-": MISSING}
    return [table[c] for c in path]


@pytest.fixture(scope="session")
def dh_clean_chromosome():
    """200 markers / 150 cM / 300 genotypes, complete and error-free."""
    spec = simulate.SimSpec(PopulationType("DH"), 300, ((200, 150.0),), seed=101)
    return simulate.simulate_population(spec)


@pytest.fixture(scope="session")
def dh_five_chromosomes():
    spec = simulate.SimSpec(PopulationType("DH"), 300, tuple((200, 150.0) for _ in range(5)), seed=7)
    return simulate.simulate_population(spec)
