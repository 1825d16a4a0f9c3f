"""Seeded generators for genotypes, SNP effects, phenotypes and sire families.

Loci are independent and in Hardy-Weinberg equilibrium. All output is a
deterministic function of the arguments; see :mod:`genopred.streams` for
how each component's random stream is derived from the seed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import streams
from .core import (
    EffectPrior,
    GenotypeMatrix,
    NormalPrior,
    PhenotypeVector,
    ScaledInvChiSqPrior,
    SpikeSlabPrior,
    VarianceComponents,
    allele_frequencies,
    as_genotypes,
    expected_genetic_variance,
    genetic_values,
)


@dataclass(frozen=True)
class SimulatedDataset:
    """y = X c + W b_true + e, with g_true = W b_true."""

    W: GenotypeMatrix
    b_true: np.ndarray
    y: PhenotypeVector
    g_true: np.ndarray
    e: np.ndarray
    X: np.ndarray
    c: np.ndarray

    @property
    def n(self) -> int:
        return self.W.n

    @property
    def p(self) -> int:
        return self.W.p


@dataclass(frozen=True)
class SireFamilyData:
    y: np.ndarray
    family: np.ndarray
    s_true: np.ndarray
    sizes: np.ndarray

    def family_records(self, i: int) -> np.ndarray:
        return self.y[self.family == i]

    def grouped(self) -> list:
        order = np.argsort(self.family, kind="stable")
        bounds = np.cumsum(self.sizes)[:-1]
        return np.split(self.y[order], bounds)


@dataclass(frozen=True)
class SimulationRecipe:
    n: int
    p: int
    prior: EffectPrior
    sigma_e2: float
    maf_range: Tuple[float, float] = (0.05, 0.5)
    fixed_effects: Optional[Tuple[float, ...]] = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be >= 1")
        _check_maf(self.maf_range)
        if self.sigma_e2 < 0:
            raise ValueError("sigma_e2 must be >= 0")
        streams.check_seed(self.seed)

    def echo(self) -> dict:
        out = asdict(self)
        out["prior"] = {"family": type(self.prior).__name__, **asdict(self.prior)}
        return out


def _check_maf(maf_range):
    low, high = maf_range
    if not (0.0 < low <= high <= 0.5):
        raise ValueError(f"maf_range must satisfy 0 < low <= high <= 0.5, got {maf_range}")


def simulate_genotypes(
    n: int, p: int, maf_range=(0.05, 0.5), seed: int = 0, threads: int = 1
) -> GenotypeMatrix:
    """Independent Binomial(2, p_i) genotypes with p_i ~ Uniform(maf_range).

    Column i is drawn from its own stream, so the result does not depend on
    ``threads``.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    _check_maf(maf_range)
    freqs = streams.stream(seed, streams.GENOTYPE_FREQUENCIES).uniform(*maf_range, size=p)
    codes = np.empty((n, p), dtype=np.int8)

    def fill(cols):
        for j in cols:
            rng = streams.stream(seed, streams.GENOTYPE_COLUMN, j)
            codes[:, j] = rng.binomial(2, freqs[j], size=n)

    chunks = np.array_split(np.arange(p), max(1, min(threads, p)))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, chunks))
    else:
        fill(range(p))
    return GenotypeMatrix(
        codes,
        individual_ids=tuple(f"ind{i + 1}" for i in range(n)),
        marker_ids=tuple(f"snp{j + 1}" for j in range(p)),
    )


def simulate_effects(p: int, prior: EffectPrior, seed: int = 0) -> np.ndarray:
    """Draw p SNP effects from ``prior``.

    Scaled inverse chi-square variances are ``scale * df / chi2(df)``.
    """
    rng = streams.stream(seed, streams.EFFECTS)
    if isinstance(prior, NormalPrior):
        return rng.normal(0.0, np.sqrt(prior.sigma_b2), size=p)
    if isinstance(prior, ScaledInvChiSqPrior):
        variances = prior.scale * prior.df / rng.chisquare(prior.df, size=p)
        return rng.normal(0.0, 1.0, size=p) * np.sqrt(variances)
    if isinstance(prior, SpikeSlabPrior):
        included = rng.random(p) < prior.q
        variances = prior.scale * prior.df / rng.chisquare(prior.df, size=p)
        effects = rng.normal(0.0, 1.0, size=p) * np.sqrt(variances)
        return np.where(included, effects, 0.0)
    raise TypeError(f"unsupported prior {prior!r}")


def simulate_phenotypes(
    W, b_true, X=None, c=None, sigma_e2: float = 1.0, seed: int = 0
) -> SimulatedDataset:
    W = as_genotypes(W)
    b_true = np.asarray(b_true, dtype=np.float64).ravel()
    if b_true.size != W.p:
        raise ValueError(f"b_true has {b_true.size} entries but W has {W.p} markers")
    if sigma_e2 < 0:
        raise ValueError("sigma_e2 must be >= 0")
    if X is None:
        X = np.zeros((W.n, 0))
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    c = np.zeros(X.shape[1]) if c is None else np.atleast_1d(np.asarray(c, dtype=np.float64))
    if X.shape[0] != W.n:
        raise ValueError(f"X has {X.shape[0]} rows but W has {W.n}")
    if c.size != X.shape[1]:
        raise ValueError(f"c has {c.size} entries but X has {X.shape[1]} columns")
    g = genetic_values(W, b_true)
    e = streams.stream(seed, streams.RESIDUALS).normal(0.0, np.sqrt(sigma_e2), size=W.n)
    y = X @ c + g + e
    return SimulatedDataset(W, b_true, PhenotypeVector(y, W.individual_ids), g, e, X, c)


def simulate_sire_families(
    f: int,
    family_sizes: Union[int, Sequence[int]],
    sigma_s2: float,
    sigma_e2: float,
    seed: int = 0,
) -> SireFamilyData:
    """Half-sib records y = s_family + e, with families stored consecutively."""
    if f < 1:
        raise ValueError("need at least one family")
    sizes = np.broadcast_to(np.asarray(family_sizes, dtype=np.int64), (f,)).copy()
    if np.any(sizes < 0):
        raise ValueError("family sizes must be >= 0")
    if sigma_s2 < 0 or sigma_e2 < 0:
        raise ValueError("variances must be >= 0")
    s = streams.stream(seed, streams.SIRE_EFFECTS).normal(0.0, np.sqrt(sigma_s2), size=f)
    family = np.repeat(np.arange(f), sizes)
    e = streams.stream(seed, streams.SIRE_RESIDUALS).normal(0.0, np.sqrt(sigma_e2), size=family.size)
    return SireFamilyData(s[family] + e, family, s, sizes)


def simulate_marker_scan(
    n_markers: int, sigma_b2: float, sigma_err2: float, seed: int = 0, replicate: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """True effects b ~ N(0, sigma_b2) and scan estimates b + N(0, sigma_err2)."""
    if n_markers < 1:
        raise ValueError("n_markers must be >= 1")
    if sigma_b2 < 0 or sigma_err2 < 0:
        raise ValueError("variances must be >= 0")
    rng = streams.stream(seed, streams.MARKER_SCAN, replicate)
    b = rng.normal(0.0, np.sqrt(sigma_b2), size=n_markers)
    noise = rng.normal(0.0, np.sqrt(sigma_err2), size=n_markers)
    return b, b + noise


def simulate_dataset(recipe: SimulationRecipe, threads: int = 1) -> SimulatedDataset:
    """Genotypes, effects and phenotypes for a full recipe.

    With ``fixed_effects`` of length k the design is an intercept plus k - 1
    standard-normal covariates.
    """
    seed = recipe.seed
    W = simulate_genotypes(
        recipe.n, recipe.p, recipe.maf_range, streams.derive_seed(seed, streams.RECIPE, 0), threads
    )
    b = simulate_effects(recipe.p, recipe.prior, streams.derive_seed(seed, streams.RECIPE, 1))
    X = c = None
    if recipe.fixed_effects:
        c = np.asarray(recipe.fixed_effects, dtype=np.float64)
        cov = streams.stream(seed, streams.RECIPE, 2).normal(size=(recipe.n, c.size - 1))
        X = np.column_stack([np.ones(recipe.n), cov])
    return simulate_phenotypes(
        W, b, X, c, recipe.sigma_e2, streams.derive_seed(seed, streams.RECIPE, 3)
    )


def matched_simulation(
    n: int,
    p: int,
    h2: float,
    seed: int = 0,
    maf_range=(0.05, 0.5),
    phenotypic_variance: float = 1.0,
    intercept: float = 0.0,
) -> Tuple[SimulatedDataset, VarianceComponents]:
    """Normal-prior dataset whose heritability is ``h2`` by construction.

    sigma_b2 is set from the realized allele frequencies so that
    sigma_b2 * sum(2 p (1 - p)) = h2 * phenotypic_variance. Returns the data
    and the true variance components (sigma_u2 = sigma_b2), with an
    intercept column in X.
    """
    if not 0.0 < h2 < 1.0:
        raise ValueError("h2 must lie in (0, 1)")
    W = simulate_genotypes(n, p, maf_range, streams.derive_seed(seed, streams.RECIPE, 0))
    het = expected_genetic_variance(allele_frequencies(W), 1.0)
    sigma_b2 = h2 * phenotypic_variance / het
    sigma_e2 = (1.0 - h2) * phenotypic_variance
    b = simulate_effects(p, NormalPrior(sigma_b2), streams.derive_seed(seed, streams.RECIPE, 1))
    data = simulate_phenotypes(
        W, b, np.ones((n, 1)), [intercept], sigma_e2, streams.derive_seed(seed, streams.RECIPE, 3)
    )
    return data, VarianceComponents(sigma_e2=sigma_e2, sigma_u2=sigma_b2)
