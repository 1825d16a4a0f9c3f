"""Closed-form and linear-system estimators of random effects.

Covers half-sib family prediction, Henderson's mixed-model equations,
SNP-BLUP (ridge regression on all markers jointly), GBLUP, single-marker
least-squares scans and scalar shrinkage of scan estimates.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, sparse, stats
from scipy.sparse import linalg as splinalg

from .core import (
    GenotypeMatrix,
    ModelFit,
    PhenotypeVector,
    RelationshipMatrix,
    VarianceComponents,
    as_genotypes,
    check_psd,
)

DIRECT_SOLVE_LIMIT = 5000
CG_RTOL = 1e-10


class RankDeficientError(ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            f"fixed-effect design is rank deficient; linearly dependent column(s): {self.columns}"
        )


@dataclass(frozen=True)
class FamilySummary:
    counts: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        means = np.asarray(self.means, dtype=np.float64)
        if counts.shape != means.shape:
            raise ValueError("counts and means differ in length")
        if np.any(counts < 0):
            raise ValueError("family counts must be >= 0")
        means = np.where(counts > 0, means, np.nan)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "means", means)

    @classmethod
    def from_records(cls, y, family, n_families: Optional[int] = None) -> "FamilySummary":
        y = np.asarray(y, dtype=np.float64)
        family = np.asarray(family, dtype=np.int64)
        f = int(family.max()) + 1 if n_families is None else n_families
        counts = np.bincount(family, minlength=f)
        sums = np.bincount(family, weights=y, minlength=f)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = sums / counts
        return cls(counts, means)


@dataclass(frozen=True)
class ScanResult:
    """Per-marker least-squares estimates; ``valid`` is False for monomorphic markers."""

    estimate: np.ndarray
    se: np.ndarray
    statistic: np.ndarray
    p_value: np.ndarray
    valid: np.ndarray
    df: int
    marker_ids: Optional[tuple] = None


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _design(X, n: int) -> np.ndarray:
    if X is None:
        return np.zeros((n, 0))
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise ValueError(f"fixed-effect design has {X.shape[0]} rows, expected {n}")
    return X


def dependent_columns(X: np.ndarray, rtol: float = 1e-10) -> list:
    """Column indices of X that are linear combinations of earlier-pivoted ones."""
    if X.shape[1] == 0:
        return []
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * max(diag[0], 1e-300))) if diag.size else 0
    if X.shape[0] < X.shape[1]:
        rank = min(rank, X.shape[0])
    return sorted(int(j) for j in piv[rank:])


def _check_full_rank(X: np.ndarray):
    bad = dependent_columns(X)
    if bad:
        raise RankDeficientError(bad)


def _orthonormal_basis(X: np.ndarray) -> np.ndarray:
    if X.shape[1] == 0:
        return X
    Q, _ = linalg.qr(X, mode="economic")
    return Q


def _project_out(Q: np.ndarray, A: np.ndarray) -> np.ndarray:
    """(I - Q Q') A for orthonormal Q."""
    if Q.shape[1] == 0:
        return A
    return A - Q @ (Q.T @ A)


def _spd_solve(A, b, diag=None):
    """Solve a symmetric positive (semi)definite system.

    Dense Cholesky up to ``DIRECT_SOLVE_LIMIT`` unknowns; Jacobi-preconditioned
    conjugate gradient to relative residual ``CG_RTOL`` above that.
    """
    dim = A.shape[0]
    if dim <= DIRECT_SOLVE_LIMIT:
        A = A.toarray() if sparse.issparse(A) else np.asarray(A)
        try:
            return linalg.cho_solve(linalg.cho_factor(A), b)
        except linalg.LinAlgError:
            return linalg.solve(A, b, assume_a="sym")
    if diag is None:
        diag = A.diagonal()
    precond = splinalg.LinearOperator((dim, dim), matvec=lambda v: v / diag)
    x, info = splinalg.cg(A, b, rtol=CG_RTOL, atol=0.0, M=precond, maxiter=10 * dim)
    if info != 0:
        raise RuntimeError(f"conjugate gradient did not converge (info={info})")
    return x


def _fixed_from_residual(X: np.ndarray, r: np.ndarray) -> np.ndarray:
    if X.shape[1] == 0:
        return np.zeros(0)
    return linalg.lstsq(X, r)[0]


# ---------------------------------------------------------------------------
# Family / sire model
# ---------------------------------------------------------------------------


def sire_blup_closed_form(fams: FamilySummary, lam: float) -> np.ndarray:
    """Shrunk family means ybar_i n_i / (n_i + lambda); zero for empty families."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    counts = fams.counts.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(fams.counts > 0, np.nan_to_num(fams.means) * counts / (counts + lam), 0.0)
    return s


def best_predict_family_future(y_existing, sigma_s2: float, sigma_e2: float) -> float:
    """Expected record of a new family member given the family's existing records.

    Computes v' V^-1 y with V = I sigma_e2 + J sigma_s2 and v = sigma_s2 * 1
    by a direct solve.
    """
    if sigma_s2 < 0 or sigma_e2 < 0:
        raise ValueError("variances must be >= 0")
    y = np.asarray(y_existing, dtype=np.float64).ravel()
    if y.size == 0:
        return 0.0
    if sigma_e2 == 0 and (sigma_s2 == 0 or y.size > 1):
        raise np.linalg.LinAlgError("covariance of existing records is singular")
    V = np.eye(y.size) * sigma_e2 + np.full((y.size, y.size), sigma_s2)
    v = np.full(y.size, sigma_s2)
    return float(v @ np.linalg.solve(V, y))


def incidence_matrix(labels, n_levels: Optional[int] = None) -> sparse.csr_matrix:
    """Sparse 0/1 matrix allocating each record to its integer level."""
    labels = np.asarray(labels, dtype=np.int64)
    f = int(labels.max()) + 1 if n_levels is None else n_levels
    if labels.size and (labels.min() < 0 or labels.max() >= f):
        raise ValueError("level labels out of range")
    data = np.ones(labels.size)
    return sparse.csr_matrix((data, (np.arange(labels.size), labels)), shape=(labels.size, f))


# ---------------------------------------------------------------------------
# Mixed-model equations
# ---------------------------------------------------------------------------


def solve_mme(X, Z, y, Kinv, lam: float, sigma_e2: float = 1.0) -> ModelFit:
    """Solve Henderson's equations

        [X'X  X'Z            ] [c]   [X'y]
        [Z'X  Z'Z + Kinv lam ] [u] = [Z'y]

    ``c`` is the BLUE of the fixed effects and ``u`` the BLUP of the random
    effects. ``random_sd`` holds prediction-error standard deviations
    (scaled by ``sigma_e2``) when the system is solved directly.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    X = _design(X, n)
    Z = sparse.csr_matrix(Z) if sparse.issparse(Z) else np.asarray(Z, dtype=np.float64)
    if Z.shape[0] != n:
        raise ValueError(f"Z has {Z.shape[0]} rows for {n} records")
    q = Z.shape[1]
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    Kdense = Kinv.toarray() if sparse.issparse(Kinv) else np.asarray(Kinv, dtype=np.float64)
    if Kdense.shape != (q, q):
        raise ValueError(f"Kinv has shape {Kdense.shape}, expected {(q, q)}")
    if not np.allclose(Kdense, Kdense.T, rtol=1e-10, atol=1e-12):
        raise ValueError("Kinv is not symmetric")
    _check_full_rank(X)
    c = X.shape[1]
    dim = c + q
    ZtX = np.asarray(Z.T @ X)
    if dim <= DIRECT_SOLVE_LIMIT:
        ZtZ = Z.T @ Z
        ZtZ = ZtZ.toarray() if sparse.issparse(ZtZ) else ZtZ
        lhs = np.block([[X.T @ X, ZtX.T], [ZtX, ZtZ + lam * Kdense]])
    else:
        Zs = sparse.csr_matrix(Z)
        lower = Zs.T @ Zs + lam * sparse.csr_matrix(Kinv)
        lhs = sparse.bmat(
            [[sparse.csr_matrix(X.T @ X), sparse.csr_matrix(ZtX.T)], [sparse.csr_matrix(ZtX), lower]]
        ).tocsr()
    rhs = np.concatenate([X.T @ y, np.asarray(Z.T @ y).ravel()])
    sol = _spd_solve(lhs, rhs)
    if dim <= DIRECT_SOLVE_LIMIT:
        cinv = linalg.pinvh(lhs)
        pev = np.clip(np.diag(cinv)[c:], 0.0, None) * sigma_e2
    else:
        pev = np.full(q, np.nan)
    return ModelFit(
        method="mme",
        fixed_estimates=sol[:c],
        random_estimates=sol[c:],
        random_sd=np.sqrt(pev),
        metadata={"lambda": lam, "solver": "direct" if dim <= DIRECT_SOLVE_LIMIT else "pcg"},
    )


def sire_blup(y, family, lam: float, X=None, n_families: Optional[int] = None) -> ModelFit:
    """Sire model with unrelated sires: mixed-model solve with Kinv = I."""
    Z = incidence_matrix(family, n_families)
    fit = solve_mme(X, Z, y, sparse.identity(Z.shape[1], format="csr"), lam)
    fit.method = "sire-blup"
    return fit


# ---------------------------------------------------------------------------
# Marker models
# ---------------------------------------------------------------------------


def _monomorphic(codes: np.ndarray) -> np.ndarray:
    return np.all(codes == codes[:1], axis=0)


def snp_blup(W, X, y, vc: VarianceComponents) -> ModelFit:
    """BLUP of SNP effects from the ridge system (W'MW + lambda I) b = W'My.

    M projects out the fixed effects and lambda = sigma_e2 / sigma_b2 with
    ``vc.sigma_u2`` read as sigma_b2. Monomorphic markers are dropped and
    get a zero estimate. The smaller of the p-dimensional (primal) and
    n-dimensional (dual) systems is solved.
    """
    if vc.sigma_u2 <= 0:
        raise ValueError("snp_blup needs sigma_b2 > 0 (lambda undefined)")
    G = as_genotypes(W)
    y = np.asarray(getattr(y, "y", y), dtype=np.float64).ravel()
    n, p = G.n, G.p
    if y.size != n:
        raise ValueError(f"y has {y.size} values for {n} genotyped individuals")
    X = _design(X, n)
    _check_full_rank(X)
    lam = vc.lambda_
    dense = G.imputed()
    keep = ~_monomorphic(dense)
    Wk = dense[:, keep]
    Q = _orthonormal_basis(X)
    MW = _project_out(Q, Wk)
    My = _project_out(Q, y)
    pk = Wk.shape[1]
    b_keep = np.zeros(pk)
    sd_keep = np.full(pk, np.nan)
    solver = "direct"
    if pk == 0:
        pass
    elif pk <= DIRECT_SOLVE_LIMIT and (pk <= n or n > DIRECT_SOLVE_LIMIT):
        A = MW.T @ MW
        A[np.diag_indices_from(A)] += lam
        cf = linalg.cho_factor(A)
        b_keep = linalg.cho_solve(cf, MW.T @ My)
        sd_keep = np.sqrt(vc.sigma_e2 * np.diag(linalg.cho_solve(cf, np.eye(pk))))
    elif n <= DIRECT_SOLVE_LIMIT:
        S = MW @ MW.T
        S[np.diag_indices_from(S)] += lam
        cf = linalg.cho_factor(S)
        b_keep = MW.T @ linalg.cho_solve(cf, My)
        shrink = np.einsum("ij,ij->j", MW, linalg.cho_solve(cf, MW))
        sd_keep = np.sqrt(np.clip(vc.sigma_u2 * (1.0 - shrink), 0.0, None))
    else:
        solver = "pcg"
        op = splinalg.LinearOperator((pk, pk), matvec=lambda v: MW.T @ (MW @ v) + lam * v)
        b_keep = _spd_solve(op, MW.T @ My, diag=np.einsum("ij,ij->j", MW, MW) + lam)
    b = np.zeros(p)
    sd = np.full(p, np.sqrt(vc.sigma_u2))
    b[keep] = b_keep
    sd[keep] = sd_keep
    g = dense @ b
    return ModelFit(
        method="snp-blup",
        fixed_estimates=_fixed_from_residual(X, y - g),
        random_estimates=b,
        random_sd=sd,
        variance_components=vc,
        level_ids=G.marker_ids,
        genetic_values=g,
        metadata={
            "lambda": lam,
            "solver": solver,
            "n": n,
            "p": p,
            "monomorphic": int((~keep).sum()),
            "individual_ids": G.individual_ids,
        },
    )


def gblup(G, X, y, vc: VarianceComponents, observed=None) -> ModelFit:
    """Genetic values a = E(a | y) when V(a) = G sigma_u2.

    Works in the covariance form: with V = G_oo sigma_u2 + I sigma_e2 over the
    phenotyped individuals ``observed`` (all by default), c is the GLS
    estimate and a_hat = sigma_u2 G[:, observed] V^-1 (y - X c). This is
    the solution of the animal-model equations without inverting G, which
    may be singular. For raw G = W W' pass sigma_u2 = sigma_b2.
    """
    K = G.K if isinstance(G, RelationshipMatrix) else np.asarray(G, dtype=np.float64)
    ids = G.ids if isinstance(G, RelationshipMatrix) else None
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"G must be square, got shape {K.shape}")
    check_psd(K)
    N = K.shape[0]
    obs = np.arange(N) if observed is None else np.asarray(observed, dtype=np.int64)
    y = np.asarray(getattr(y, "y", y), dtype=np.float64).ravel()
    if y.size != obs.size:
        raise ValueError(f"y has {y.size} values for {obs.size} phenotyped individuals")
    X = _design(X, y.size)
    _check_full_rank(X)
    Koo = K[np.ix_(obs, obs)]
    V = vc.sigma_u2 * Koo
    V[np.diag_indices_from(V)] += vc.sigma_e2
    cf = linalg.cho_factor(V)
    Vinv_X = linalg.cho_solve(cf, X)
    Vinv_y = linalg.cho_solve(cf, y)
    if X.shape[1]:
        XtVX = X.T @ Vinv_X
        c = linalg.solve(XtVX, X.T @ Vinv_y, assume_a="pos")
    else:
        XtVX = np.zeros((0, 0))
        c = np.zeros(0)
    H = vc.sigma_u2 * K[obs, :]  # cov(y_obs, a_all)
    a = H.T @ linalg.cho_solve(cf, y - X @ c)
    # PEV = sigma_u2 diag(K) - diag(H' P H), P = V^-1 - V^-1 X (X'V^-1 X)^-1 X' V^-1
    VinvH = linalg.cho_solve(cf, H)
    quad = np.einsum("ij,ij->j", H, VinvH)
    if X.shape[1]:
        XtVinvH = Vinv_X.T @ H
        quad -= np.einsum("ij,ij->j", XtVinvH, linalg.solve(XtVX, XtVinvH, assume_a="pos"))
    pev = np.clip(vc.sigma_u2 * np.diag(K) - quad, 0.0, None)
    return ModelFit(
        method="gblup",
        fixed_estimates=c,
        random_estimates=a,
        random_sd=np.sqrt(pev),
        variance_components=vc,
        level_ids=ids,
        genetic_values=a,
        metadata={"lambda": vc.lambda_, "n": N, "observed": int(obs.size), "individual_ids": ids},
    )


def ls_scan(W, X, y, threads: int = 1, block: int = 2048) -> ScanResult:
    """Fit y = X c + w_j b_j + e one marker at a time by ordinary least squares.

    ``X=None`` means no fixed effects (regression through the origin).
    Monomorphic markers are flagged invalid and get NaN results. Markers
    are processed in fixed column blocks, so output does not depend on
    ``threads``.
    """
    G = as_genotypes(W)
    y = np.asarray(getattr(y, "y", y), dtype=np.float64).ravel()
    n, p = G.n, G.p
    if y.size != n:
        raise ValueError(f"y has {y.size} values for {n} genotyped individuals")
    X = _design(X, n)
    _check_full_rank(X)
    df = n - X.shape[1] - 1
    if df < 1:
        raise ValueError(f"need n > c + 1 for a marker scan, got n={n}, c={X.shape[1]}")
    Q = _orthonormal_basis(X)
    My = _project_out(Q, y)
    yy = My @ My
    est = np.full(p, np.nan)
    se = np.full(p, np.nan)
    valid = np.zeros(p, dtype=bool)
    fill = 2.0 * G.frequencies if G.missing is not None else None

    def run(start):
        cols = slice(start, min(start + block, p))
        dense = G.codes[:, cols].astype(np.float64)
        if fill is not None:
            dense = np.where(G.missing[:, cols], fill[cols], dense)
        ok = ~_monomorphic(dense)
        Mw = _project_out(Q, dense)
        ww = np.einsum("ij,ij->j", Mw, Mw)
        ok &= ww > 1e-12 * n
        wy = Mw.T @ My
        with np.errstate(invalid="ignore", divide="ignore"):
            b = np.where(ok, wy / ww, np.nan)
            rss = np.clip(yy - b * wy, 0.0, None)
            s = np.sqrt(rss / df / ww)
        est[cols] = b
        se[cols] = np.where(ok, s, np.nan)
        valid[cols] = ok

    starts = range(0, p, block)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, starts))
    else:
        for start in starts:
            run(start)
    with np.errstate(invalid="ignore", divide="ignore"):
        stat = est / se
    pval = 2.0 * stats.t.sf(np.abs(stat), df)
    return ScanResult(est, se, stat, pval, valid, df, G.marker_ids)


def shrink_ls(b_tilde, lam) -> np.ndarray:
    """Scale least-squares estimates by 1 / (1 + lambda).

    ``lam`` may be a scalar or one value per estimate; infinite lambda gives 0.
    """
    b_tilde = np.asarray(b_tilde, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError(f"lambda must be >= 0, got {lam}")
    with np.errstate(invalid="ignore"):
        out = b_tilde / (1.0 + lam)
    return np.where(np.isinf(lam), 0.0, out)


def predict(fit: ModelFit, design, X_new=None) -> PhenotypeVector:
    """X_new c_hat + design @ random_estimates.

    A :class:`GenotypeMatrix` carrying marker ids is aligned to the fit's
    level ids by name. Fixed effects are added only when ``X_new`` is given.
    """
    ids = None
    if isinstance(design, GenotypeMatrix):
        ids = design.individual_ids
        if design.marker_ids is not None and fit.level_ids is not None:
            known = {m: j for j, m in enumerate(fit.level_ids)}
            unknown = [m for m in design.marker_ids if m not in known]
            if unknown:
                raise KeyError(f"markers not in the fitted model: {unknown[:10]}")
            absent = set(fit.level_ids) - set(design.marker_ids)
            if absent:
                raise KeyError(f"fitted markers missing from design: {sorted(absent)[:10]}")
            effects = fit.random_estimates[[known[m] for m in design.marker_ids]]
        else:
            effects = fit.random_estimates
        D = design.imputed()
    else:
        D = design if sparse.issparse(design) else np.atleast_2d(np.asarray(design, dtype=np.float64))
        effects = fit.random_estimates
    if D.shape[1] != effects.size:
        raise ValueError(f"design has {D.shape[1]} columns but the fit has {effects.size} effects")
    yhat = np.asarray(D @ effects).ravel()
    if X_new is not None:
        Xn = _design(X_new, yhat.size)
        if Xn.shape[1] != fit.fixed_estimates.size:
            raise ValueError(
                f"X_new has {Xn.shape[1]} columns but the fit has {fit.fixed_estimates.size} fixed effects"
            )
        yhat = yhat + Xn @ fit.fixed_estimates
    return PhenotypeVector(yhat, ids)
