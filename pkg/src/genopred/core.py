"""Domain types, relationship matrices and small genetic-architecture formulas.

Everything here is a pure function of its inputs. Genotypes are coded as
the number of copies (0, 1 or 2) of a reference allele.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg

GENOMIC_RAW = "genomic-raw"
GENOMIC_CENTERED = "genomic-centered"
PEDIGREE_A = "pedigree-A"

_KINDS = (PEDIGREE_A, GENOMIC_RAW, GENOMIC_CENTERED)


class NotPSDError(ValueError):
    """Raised when a relationship matrix fails the symmetric-PSD check."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenotypeMatrix:
    """n x p marker codes in {0, 1, 2} with an optional missing mask.

    Missing entries may hold any value in ``codes``; they are ignored by
    every computation and replaced by ``2 * p_i`` when a dense matrix is
    requested through :meth:`imputed`.
    """

    codes: np.ndarray
    missing: Optional[np.ndarray] = None
    individual_ids: Optional[tuple] = None
    marker_ids: Optional[tuple] = None

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise ValueError(f"genotype codes must be 2-D, got shape {codes.shape}")
        n, p = codes.shape
        if n < 1 or p < 1:
            raise ValueError(f"genotype matrix needs n >= 1 and p >= 1, got {n} x {p}")
        missing = None
        if self.missing is not None:
            missing = np.asarray(self.missing, dtype=bool)
            if missing.shape != codes.shape:
                raise ValueError("missing mask shape does not match codes")
            if not missing.any():
                missing = None
        invalid = ~np.isin(codes, (0, 1, 2))
        if missing is not None:
            invalid &= ~missing
        if invalid.any():
            bad = np.argwhere(invalid)[0]
            raise ValueError(
                f"genotype code {codes[tuple(bad)]!r} at row {bad[0]}, column {bad[1]} is not 0, 1 or 2"
            )
        codes = codes.astype(np.int8)
        if missing is not None:
            codes = np.where(missing, 0, codes).astype(np.int8)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "missing", missing)
        if self.individual_ids is not None:
            ids = tuple(str(i) for i in self.individual_ids)
            if len(ids) != n:
                raise ValueError(f"{len(ids)} individual ids for {n} rows")
            object.__setattr__(self, "individual_ids", ids)
        if self.marker_ids is not None:
            ids = tuple(str(i) for i in self.marker_ids)
            if len(ids) != p:
                raise ValueError(f"{len(ids)} marker ids for {p} columns")
            object.__setattr__(self, "marker_ids", ids)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def p(self) -> int:
        return self.codes.shape[1]

    @property
    def frequencies(self) -> np.ndarray:
        return allele_frequencies(self)

    def imputed(self) -> np.ndarray:
        """Dense float64 copy with missing entries set to the column mean 2p."""
        dense = self.codes.astype(np.float64)
        if self.missing is not None:
            fill = 2.0 * allele_frequencies(self)
            rows, cols = np.nonzero(self.missing)
            dense[rows, cols] = fill[cols]
        return dense

    def take_rows(self, index) -> "GenotypeMatrix":
        index = np.asarray(index)
        return GenotypeMatrix(
            self.codes[index],
            None if self.missing is None else self.missing[index],
            None if self.individual_ids is None else tuple(np.asarray(self.individual_ids)[index]),
            self.marker_ids,
        )

    def take_columns(self, index) -> "GenotypeMatrix":
        index = np.asarray(index)
        return GenotypeMatrix(
            self.codes[:, index],
            None if self.missing is None else self.missing[:, index],
            self.individual_ids,
            None if self.marker_ids is None else tuple(np.asarray(self.marker_ids)[index]),
        )


@dataclass(frozen=True)
class PhenotypeVector:
    y: np.ndarray
    ids: Optional[tuple] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if not np.isfinite(y).all():
            raise ValueError("phenotype values must be finite")
        object.__setattr__(self, "y", y)
        if self.ids is not None:
            ids = tuple(str(i) for i in self.ids)
            if len(ids) != y.size:
                raise ValueError(f"{len(ids)} ids for {y.size} phenotype values")
            object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.y.size


@dataclass(frozen=True)
class VarianceComponents:
    """Residual variance plus one random-effect variance.

    ``sigma_u2`` is read as the sire, additive-genetic or per-SNP variance
    depending on the model it is passed to.
    """

    sigma_e2: float
    sigma_u2: float

    def __post_init__(self):
        if not self.sigma_e2 > 0:
            raise ValueError(f"sigma_e2 must be > 0, got {self.sigma_e2}")
        if not self.sigma_u2 >= 0:
            raise ValueError(f"sigma_u2 must be >= 0, got {self.sigma_u2}")

    @property
    def lambda_(self) -> float:
        """sigma_e2 / sigma_u2; infinite when sigma_u2 is zero."""
        if self.sigma_u2 == 0:
            return float("inf")
        return self.sigma_e2 / self.sigma_u2

    @classmethod
    def from_lambda(cls, lam: float, sigma_e2: float = 1.0) -> "VarianceComponents":
        return cls(sigma_e2=sigma_e2, sigma_u2=sigma_e2 / lam)


@dataclass(frozen=True)
class RelationshipMatrix:
    K: np.ndarray
    kind: str
    ids: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown relationship kind {self.kind!r}; expected one of {_KINDS}")
        K = np.asarray(self.K, dtype=np.float64)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"relationship matrix must be square, got shape {K.shape}")
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return self.K.shape[0]


@dataclass(frozen=True)
class Pedigree:
    """Topologically ordered (individual, sire, dam) records.

    Parents are stored as integer positions into ``ids``; -1 means unknown.
    """

    ids: tuple
    sire: np.ndarray
    dam: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        sire = np.asarray(self.sire, dtype=np.int64)
        dam = np.asarray(self.dam, dtype=np.int64)
        if not (len(ids) == sire.size == dam.size):
            raise ValueError("pedigree columns have different lengths")
        if len(set(ids)) != len(ids):
            raise ValueError("pedigree contains duplicated individual ids")
        for i in range(len(ids)):
            for parent, role in ((sire[i], "sire"), (dam[i], "dam")):
                if parent >= i:
                    what = "is its own parent" if parent == i else "references a later record"
                    raise ValueError(
                        f"individual {ids[i]!r} {what} as {role} ({ids[parent]!r}); "
                        "pedigree must be topologically ordered and acyclic"
                    )
                if parent < -1:
                    raise ValueError(f"invalid parent index {parent} for {ids[i]!r}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "sire", sire)
        object.__setattr__(self, "dam", dam)

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_records(cls, records: Sequence[tuple], unknown=("0", "", ".", "NA")) -> "Pedigree":
        """Build from ``(id, sire, dam)`` tuples that use ids for parents.

        A parent id that is not a record of its own and is not an unknown
        marker is an error, as is a parent listed after its offspring.
        """
        ids = [str(r[0]) for r in records]
        position = {}
        sire, dam = [], []
        for i, (ind, s, d) in enumerate(records):
            for value, out in ((s, sire), (d, dam)):
                value = str(value)
                if value in unknown:
                    out.append(-1)
                elif value in position:
                    out.append(position[value])
                elif value in ids:
                    raise ValueError(
                        f"individual {ind!r} lists parent {value!r} before that parent's own record; "
                        "pedigree must be topologically ordered and acyclic"
                    )
                else:
                    raise ValueError(f"individual {ind!r} has parent {value!r} with no pedigree record")
            position[str(ind)] = i
        return cls(tuple(ids), np.array(sire), np.array(dam))


@dataclass(frozen=True)
class NormalPrior:
    """Every SNP effect drawn from N(0, sigma_b2)."""

    sigma_b2: float

    def __post_init__(self):
        if not self.sigma_b2 >= 0:
            raise ValueError(f"sigma_b2 must be >= 0, got {self.sigma_b2}")


@dataclass(frozen=True)
class ScaledInvChiSqPrior:
    """Per-locus variance ``scale * df / X`` with X ~ chi2(df), then N(0, variance).

    Prior mean of the per-locus variance is ``scale * df / (df - 2)`` for df > 2.
    """

    df: float
    scale: float

    def __post_init__(self):
        if not self.df > 0:
            raise ValueError(f"df must be > 0, got {self.df}")
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    @property
    def mean_variance(self) -> float:
        return self.scale * self.df / (self.df - 2) if self.df > 2 else float("inf")


@dataclass(frozen=True)
class SpikeSlabPrior:
    """Zero effect with probability 1 - q, otherwise as :class:`ScaledInvChiSqPrior`."""

    q: float
    df: float
    scale: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")
        ScaledInvChiSqPrior(self.df, self.scale)

    @property
    def slab(self) -> ScaledInvChiSqPrior:
        return ScaledInvChiSqPrior(self.df, self.scale)

    @property
    def mean_variance(self) -> float:
        """Prior mean of a nonzero locus variance."""
        return self.slab.mean_variance


EffectPrior = Union[NormalPrior, ScaledInvChiSqPrior, SpikeSlabPrior]


@dataclass
class ModelFit:
    """Estimates returned by every fitting routine.

    ``random_estimates`` are BLUPs or posterior means depending on ``method``;
    ``random_sd`` is the prediction-error or posterior standard deviation
    (NaN where not computed).
    """

    method: str
    fixed_estimates: np.ndarray
    random_estimates: np.ndarray
    random_sd: np.ndarray
    variance_components: Optional[VarianceComponents] = None
    level_ids: Optional[tuple] = None
    genetic_values: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fixed_estimates = np.atleast_1d(np.asarray(self.fixed_estimates, dtype=np.float64))
        self.random_estimates = np.atleast_1d(np.asarray(self.random_estimates, dtype=np.float64))
        self.random_sd = np.atleast_1d(np.asarray(self.random_sd, dtype=np.float64))
        if self.random_sd.shape != self.random_estimates.shape:
            raise ValueError("random_sd and random_estimates differ in shape")
        if self.level_ids is not None:
            self.level_ids = tuple(str(i) for i in self.level_ids)
            if len(self.level_ids) != self.random_estimates.size:
                raise ValueError("level_ids length does not match random_estimates")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def as_genotypes(W) -> GenotypeMatrix:
    if isinstance(W, GenotypeMatrix):
        return W
    W = np.asarray(W)
    if W.dtype.kind == "f" and np.isnan(W).any():
        missing = np.isnan(W)
        return GenotypeMatrix(np.where(missing, 0, W).astype(np.int8), missing)
    return GenotypeMatrix(W)


def allele_frequencies(W) -> np.ndarray:
    """Per-marker frequency of the counted allele, ignoring missing calls."""
    W = as_genotypes(W)
    codes = W.codes.astype(np.int64)
    if W.missing is None:
        return codes.sum(axis=0) / (2.0 * W.n)
    observed = (~W.missing).sum(axis=0)
    empty = np.flatnonzero(observed == 0)
    if empty.size:
        name = W.marker_ids[empty[0]] if W.marker_ids else f"index {empty[0]}"
        raise ValueError(f"marker {name} has no non-missing genotypes")
    return np.where(W.missing, 0, codes).sum(axis=0) / (2.0 * observed)


def check_psd(K: np.ndarray, rel_jitter: float = 1e-8) -> float:
    """Verify K is symmetric positive semidefinite.

    Cholesky is attempted with additive diagonal jitter stepped up to
    ``rel_jitter * trace(K) / n``. Returns the jitter that succeeded.
    """
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    scale = max(abs(np.trace(K)) / n, np.finfo(float).tiny)
    if not np.allclose(K, K.T, rtol=1e-10, atol=1e-12 * scale):
        raise NotPSDError("matrix is not symmetric")
    for jitter in (0.0, *(rel_jitter * scale * 10.0**k for k in range(-6, 1))):
        try:
            np.linalg.cholesky(K + jitter * np.eye(n))
            return jitter
        except np.linalg.LinAlgError:
            continue
    raise NotPSDError(f"matrix is not positive semidefinite (jitter up to {rel_jitter:g} * trace/n failed)")


def genomic_relationship(W, centering: bool = True) -> RelationshipMatrix:
    """Genomic relationship matrix from marker codes.

    Raw mode returns W W'. Centered mode subtracts 2 p_i from column i and
    divides the cross-product by sum(2 p_i (1 - p_i)). Missing calls are
    imputed to the column mean beforehand, which puts them at zero after
    centering.
    """
    W = as_genotypes(W)
    dense = W.imputed()
    if not centering:
        K = dense @ dense.T
        kind = GENOMIC_RAW
    else:
        freqs = allele_frequencies(W)
        denom = float(np.sum(2.0 * freqs * (1.0 - freqs)))
        if denom <= 0:
            raise ValueError("centered genomic relationship needs at least one polymorphic marker")
        Wc = dense - 2.0 * freqs
        K = Wc @ Wc.T / denom
        kind = GENOMIC_CENTERED
    K = 0.5 * (K + K.T)
    check_psd(K)
    return RelationshipMatrix(K, kind, W.individual_ids)


def pedigree_numerator_matrix(ped: Pedigree) -> RelationshipMatrix:
    """Numerator relationship matrix by the tabular method.

    a_ij = (a_i,sire(j) + a_i,dam(j)) / 2 for i < j, and
    a_jj = 1 + a_sire(j),dam(j) / 2, with unknown parents contributing zero.
    """
    n = len(ped)
    A = np.zeros((n, n))
    for j in range(n):
        s, d = ped.sire[j], ped.dam[j]
        col = np.zeros(j)
        if s >= 0:
            col += 0.5 * A[:j, s]
        if d >= 0:
            col += 0.5 * A[:j, d]
        A[:j, j] = col
        A[j, :j] = col
        A[j, j] = 1.0 + (0.5 * A[s, d] if s >= 0 and d >= 0 else 0.0)
    return RelationshipMatrix(A, PEDIGREE_A, ped.ids)


def expected_genetic_variance(freqs, sigma_b2: float) -> float:
    """Additive variance explained by markers: sigma_b2 * sum(2 p (1 - p))."""
    freqs = np.asarray(freqs, dtype=np.float64)
    if np.any((freqs < 0) | (freqs > 1)):
        raise ValueError("allele frequencies must lie in [0, 1]")
    if sigma_b2 < 0:
        raise ValueError(f"sigma_b2 must be >= 0, got {sigma_b2}")
    return float(sigma_b2 * np.sum(2.0 * freqs * (1.0 - freqs)))


def effective_qtl_count(ne: float, length_morgans: float) -> float:
    """Approximate number of independent chromosome segments, 4 * Ne * L."""
    if not ne > 0 or not length_morgans > 0:
        raise ValueError("Ne and genome length must both be > 0")
    return 4.0 * ne * length_morgans


def inverse_relationship(K: RelationshipMatrix) -> np.ndarray:
    """Dense inverse of a (positive definite) relationship matrix."""
    c, low = linalg.cho_factor(K.K)
    return linalg.cho_solve((c, low), np.eye(K.n))


def genetic_values(W, b, block: int = 4096) -> np.ndarray:
    """W @ b computed in column blocks, with missing calls imputed to 2p."""
    W = as_genotypes(W)
    b = np.asarray(b, dtype=np.float64).ravel()
    if b.size != W.p:
        raise ValueError(f"effect vector has {b.size} entries for {W.p} markers")
    fill = 2.0 * allele_frequencies(W) if W.missing is not None else None
    g = np.zeros(W.n)
    for start in range(0, W.p, block):
        cols = slice(start, start + block)
        dense = W.codes[:, cols].astype(np.float64)
        if fill is not None:
            dense = np.where(W.missing[:, cols], fill[cols], dense)
        g += dense @ b[cols]
    return g
