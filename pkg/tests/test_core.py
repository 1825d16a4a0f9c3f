import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genopred.core import (
    GenotypeMatrix,
    ModelFit,
    NormalPrior,
    NotPSDError,
    Pedigree,
    RelationshipMatrix,
    ScaledInvChiSqPrior,
    SpikeSlabPrior,
    VarianceComponents,
    allele_frequencies,
    check_psd,
    effective_qtl_count,
    expected_genetic_variance,
    genetic_values,
    genomic_relationship,
    pedigree_numerator_matrix,
)
from genopred.simulate import simulate_effects, simulate_genotypes


# -- genotype container --------------------------------------------------


def test_genotype_matrix_rejects_bad_codes():
    with pytest.raises(ValueError, match="row 1, column 0"):
        GenotypeMatrix(np.array([[0, 1], [3, 2]]))
    with pytest.raises(ValueError):
        GenotypeMatrix(np.zeros((0, 3), dtype=int))


def test_missing_entries_may_hold_anything():
    codes = np.array([[0, 9], [2, 1]])
    W = GenotypeMatrix(codes, missing=np.array([[False, True], [False, False]]))
    assert W.codes[0, 1] == 0
    np.testing.assert_allclose(W.imputed(), [[0, 1], [2, 1]])


@pytest.mark.parametrize(
    "column, expected",
    [([0, 2], 0.5), ([2, 2, 2], 1.0), ([0, 1, 1, 2], 0.5)],
)
def test_allele_frequencies_examples(column, expected):
    W = np.array(column)[:, None]
    assert allele_frequencies(W)[0] == expected


def test_allele_frequencies_skip_missing():
    W = np.array([[0.0, np.nan], [2.0, 1.0], [np.nan, 1.0]])
    np.testing.assert_allclose(allele_frequencies(W), [0.5, 0.5])


def test_allele_frequencies_all_missing_column_named():
    W = GenotypeMatrix(
        np.zeros((2, 2), dtype=int),
        missing=np.array([[False, True], [False, True]]),
        marker_ids=("rs1", "rs2"),
    )
    with pytest.raises(ValueError, match="rs2"):
        allele_frequencies(W)


# -- genomic relationships -----------------------------------------------


def test_raw_relationship_examples():
    G = genomic_relationship(np.array([[0, 1, 2]]), centering=False)
    assert G.K.tolist() == [[5.0]]
    assert G.kind == "genomic-raw"
    Z = genomic_relationship(np.zeros((3, 4), dtype=int), centering=False)
    assert np.all(Z.K == 0)


def test_centered_relationship_matches_brute_force(rng):
    W = rng.integers(0, 3, size=(5, 3))
    while np.any(W.sum(axis=0) % 10 == 0):  # keep all columns polymorphic
        W = rng.integers(0, 3, size=(5, 3))
    p = W.mean(axis=0) / 2
    expected = np.zeros((5, 5))
    for i in range(5):
        for k in range(5):
            expected[i, k] = sum((W[i, j] - 2 * p[j]) * (W[k, j] - 2 * p[j]) for j in range(3))
    expected /= sum(2 * q * (1 - q) for q in p)
    np.testing.assert_allclose(genomic_relationship(W).K, expected, atol=1e-12)


def test_centered_relationship_needs_polymorphism():
    with pytest.raises(ValueError, match="polymorphic"):
        genomic_relationship(np.full((4, 3), 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_genomic_relationship_is_psd(n, p, seed):
    W = simulate_genotypes(n, p, seed=seed)
    for centering in (False, True):
        try:
            G = genomic_relationship(W, centering=centering)
        except ValueError:
            assert centering  # only the all-monomorphic case may fail
            continue
        np.testing.assert_array_equal(G.K, G.K.T)
        assert check_psd(G.K) <= 1e-8 * max(np.trace(G.K) / n, 1e-300)


def test_check_psd_rejects_indefinite_and_asymmetric():
    with pytest.raises(NotPSDError, match="semidefinite"):
        check_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NotPSDError, match="symmetric"):
        check_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_relationship_matrix_validates_kind_and_shape():
    with pytest.raises(ValueError):
        RelationshipMatrix(np.eye(2), "kinship")
    with pytest.raises(ValueError):
        RelationshipMatrix(np.ones((2, 3)), "genomic-raw")


# -- pedigree ------------------------------------------------------------


def test_unrelated_founders_identity():
    ped = Pedigree.from_records([("a", "0", "0"), ("b", "0", "0")])
    np.testing.assert_array_equal(pedigree_numerator_matrix(ped).K, np.eye(2))


def test_parent_offspring_and_half_sibs():
    ped = Pedigree.from_records(
        [("s", "0", "0"), ("d1", "0", "0"), ("d2", "0", "0"), ("o1", "s", "d1"), ("o2", "s", "d2")]
    )
    A = pedigree_numerator_matrix(ped).K
    assert A[3, 0] == 0.5 and A[3, 1] == 0.5
    assert A[3, 3] == 1.0
    assert A[3, 4] == 0.25


def test_inbred_offspring_diagonal():
    # full-sib mating: offspring of sibs has F = 1/4
    ped = Pedigree.from_records(
        [("s", "0", "0"), ("d", "0", "0"), ("x", "s", "d"), ("y", "s", "d"), ("z", "x", "y")]
    )
    assert pedigree_numerator_matrix(ped).K[4, 4] == 1.25


def test_pedigree_order_errors():
    with pytest.raises(ValueError, match="before that parent's own record"):
        Pedigree.from_records([("o", "s", "0"), ("s", "0", "0")])
    with pytest.raises(ValueError, match="no pedigree record"):
        Pedigree.from_records([("o", "ghost", "0")])
    with pytest.raises(ValueError, match="own parent"):
        Pedigree(("a",), np.array([0]), np.array([-1]))


def _ancestor_paths(ped, i):
    """All upward paths [i, parent, ..., ancestor]."""
    out = [[i]]
    for parent in (ped.sire[i], ped.dam[i]):
        if parent >= 0:
            out += [[i] + path for path in _ancestor_paths(ped, parent)]
    return out


def _path_relationship(ped, i, j):
    """Wright's path-counting coefficient, computed without any tabular recursion."""
    if i == j:
        s, d = ped.sire[i], ped.dam[i]
        inbreeding = 0.5 * _path_relationship(ped, s, d) if s >= 0 and d >= 0 else 0.0
        return 1.0 + inbreeding
    total = 0.0
    for pi in _ancestor_paths(ped, i):
        for pj in _ancestor_paths(ped, j):
            if pi[-1] != pj[-1] or set(pi) & set(pj) != {pi[-1]}:
                continue
            anc = pi[-1]
            s, d = ped.sire[anc], ped.dam[anc]
            f_anc = 0.5 * _path_relationship(ped, s, d) if s >= 0 and d >= 0 else 0.0
            total += 0.5 ** (len(pi) - 1 + len(pj) - 1) * (1.0 + f_anc)
    return total


@st.composite
def pedigrees(draw):
    n = draw(st.integers(1, 8))
    sire, dam = [], []
    for i in range(n):
        sire.append(draw(st.integers(-1, i - 1)))
        d = draw(st.integers(-1, i - 1))
        dam.append(-1 if d == sire[-1] and d >= 0 else d)
    return Pedigree(tuple(f"i{k}" for k in range(n)), np.array(sire), np.array(dam))


@settings(max_examples=80, deadline=None)
@given(pedigrees())
def test_tabular_matches_path_counting(ped):
    A = pedigree_numerator_matrix(ped).K
    n = len(ped)
    oracle = np.array([[_path_relationship(ped, i, j) for j in range(n)] for i in range(n)])
    np.testing.assert_allclose(A, oracle, atol=1e-12)
    assert np.all(np.diag(A) >= 1.0)


# -- formulas ------------------------------------------------------------


def test_expected_genetic_variance_examples():
    assert expected_genetic_variance(np.full(7, 0.5), 1.0) == pytest.approx(3.5)
    assert expected_genetic_variance([0.2, 0.9], 0.0) == 0.0
    assert expected_genetic_variance([0.1, 0.3], 2.0) == pytest.approx(1.2)
    with pytest.raises(ValueError):
        expected_genetic_variance([1.2], 1.0)


def test_effective_qtl_count_examples():
    assert effective_qtl_count(100, 30) == 12_000
    assert effective_qtl_count(1, 1) == 4
    assert effective_qtl_count(3000, 35) == 420_000
    with pytest.raises(ValueError):
        effective_qtl_count(0, 1)


def test_genetic_variance_formula_on_simulated_data():
    n, p, sigma_b2 = 10_000, 1000, 0.001
    W = simulate_genotypes(n, p, seed=11)
    b = simulate_effects(p, NormalPrior(sigma_b2), seed=11)
    g = genetic_values(W, b)
    # conditional on b the target is sum b_j^2 2p_j(1-p_j); compare to the realized-frequency formula
    freqs = allele_frequencies(W)
    target = expected_genetic_variance(freqs, sigma_b2)
    assert abs(g.var() / target - 1) < 0.05


def test_genetic_values_blocks_agree(rng):
    W = rng.integers(0, 3, size=(20, 37))
    b = rng.normal(size=37)
    np.testing.assert_allclose(genetic_values(W, b, block=5), W @ b, atol=1e-12)


# -- small types ---------------------------------------------------------


def test_variance_components_lambda():
    vc = VarianceComponents(sigma_e2=2.0, sigma_u2=0.5)
    assert vc.lambda_ == 4.0
    assert VarianceComponents.from_lambda(4.0, 2.0).sigma_u2 == 0.5
    with pytest.raises(ValueError):
        VarianceComponents(0.0, 1.0)


def test_prior_validation_and_means():
    assert ScaledInvChiSqPrior(4.0, 1.0).mean_variance == pytest.approx(2.0)
    with pytest.raises(ValueError):
        SpikeSlabPrior(1.5, 4.0, 1.0)
    with pytest.raises(ValueError):
        ScaledInvChiSqPrior(0.0, 1.0)


def test_model_fit_shape_checks():
    with pytest.raises(ValueError):
        ModelFit("x", [], [1.0, 2.0], [0.1])
    with pytest.raises(ValueError):
        ModelFit("x", [], [1.0], [0.1], level_ids=("a", "b"))
