"""Posterior-mean SNP effects under Student-t (Bayes A) and spike-and-slab (Bayes B) priors.

Both samplers share one single-site sweep over loci. Fixed effects are
integrated out by projecting y and W onto the orthogonal complement of X,
so the chain runs on b, the per-locus variances and sigma_e2 only; the
posterior mean of the fixed effects follows from E(b | y) because it is
linear in b.

Random streams are keyed by locus, not by column position: locus j draws
from ``streams.stream(seed, CHAIN_LOCUS, chain, locus_keys[j])`` and the
sweep visits loci in increasing key order. Permuting columns together with
their keys therefore permutes every output identically.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import streams
from .core import (
    ModelFit,
    ScaledInvChiSqPrior,
    SpikeSlabPrior,
    as_genotypes,
    expected_genetic_variance,
)

DEFAULT_DF = 4.012
RESIDUAL_DF = 4.0
_BLOCK = 256


class ChainDivergenceError(RuntimeError):
    def __init__(self, iteration: int, chain: int = 0):
        self.iteration = iteration
        self.chain = chain
        super().__init__(f"chain {chain} produced a non-finite state at iteration {iteration}")


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 10_000
    burn_in: int = 1_000
    thinning: int = 10
    seed: int = 0
    chain_count: int = 1

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValueError(f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.chain_count < 1:
            raise ValueError("chain_count must be >= 1")
        streams.check_seed(self.seed)

    @property
    def retained(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thinning))


@dataclass(frozen=True)
class ChainDiagnostics:
    mean: np.ndarray
    sd: np.ndarray
    mcse: np.ndarray
    ess: np.ndarray
    rhat: np.ndarray


@dataclass
class PosteriorSummary:
    method: str
    mean: np.ndarray
    sd: np.ndarray
    mcse: np.ndarray
    rhat: np.ndarray
    inclusion_prob: Optional[np.ndarray]
    variance_mean: np.ndarray
    fixed_mean: np.ndarray
    sigma_e2_mean: float
    traces: np.ndarray
    sigma_e2_trace: np.ndarray
    config: ChainConfig
    marker_ids: Optional[tuple] = None
    metadata: dict = field(default_factory=dict)

    def as_fit(self) -> ModelFit:
        return ModelFit(
            method=self.method,
            fixed_estimates=self.fixed_mean,
            random_estimates=self.mean,
            random_sd=self.sd,
            level_ids=self.marker_ids,
            metadata={
                "iterations": self.config.iterations,
                "burn_in": self.config.burn_in,
                "thinning": self.config.thinning,
                "chains": self.config.chain_count,
                "seed": self.config.seed,
                "sigma_e2_mean": self.sigma_e2_mean,
                **self.metadata,
            },
        )


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance along axis 1 of (chains, draws, k)."""
    n = x.shape[1]
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n


def _ess(x: np.ndarray) -> np.ndarray:
    m, n, k = x.shape
    acov = _autocovariance(x)
    chain_var = acov[:, 0, :] * n / (n - 1)
    within = chain_var.mean(axis=0)
    between_n = x.mean(axis=1).var(axis=0, ddof=1) if m > 1 else np.zeros(k)
    var_plus = within * (n - 1) / n + between_n
    ess = np.full(k, float(m * n))
    for i in range(k):
        if var_plus[i] <= 0:
            continue
        rho = 1.0 - (within[i] - acov[:, :, i].mean(axis=0)) / var_plus[i]
        rho[0] = 1.0
        tau = -1.0
        prev = np.inf
        for t in range(0, n - 1, 2):
            pair = rho[t] + rho[t + 1]
            if pair <= 0:
                break
            pair = min(pair, prev)  # initial monotone sequence
            tau += 2.0 * pair
            prev = pair
        ess[i] = m * n / max(tau, 1.0 / np.log10(max(m * n, 10)))
    return ess


def _split_rhat(x: np.ndarray) -> np.ndarray:
    m, n, k = x.shape
    half = n // 2
    parts = np.concatenate([x[:, :half], x[:, n - half :]], axis=0)
    within = parts.var(axis=1, ddof=1).mean(axis=0)
    between = half * parts.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (half - 1) / half * within + between / half
    with np.errstate(invalid="ignore", divide="ignore"):
        rhat = np.sqrt(var_plus / within)
    return np.where(within > 0, rhat, np.where(between > 0, np.inf, 1.0))


def chain_summary(traces) -> ChainDiagnostics:
    """Means, SDs, Monte-Carlo standard errors, ESS and split R-hat.

    ``traces`` is (draws,), (chains, draws) or (chains, draws, k). The MC
    standard error is sd / sqrt(ESS), with ESS from the multi-chain
    autocorrelation estimate truncated by Geyer's initial monotone sequence.
    """
    x = np.asarray(traces, dtype=np.float64)
    scalar = x.ndim < 3
    if x.ndim == 1:
        x = x[None, :, None]
    elif x.ndim == 2:
        x = x[:, :, None]
    elif x.ndim != 3:
        raise ValueError("traces must be 1-, 2- or 3-dimensional")
    if x.shape[0] < 1 or x.shape[1] < 10:
        raise ValueError(f"need at least one chain with >= 10 retained samples, got shape {x.shape[:2]}")
    pooled = x.reshape(-1, x.shape[2])
    mean = pooled.mean(axis=0)
    sd = pooled.std(axis=0, ddof=1)
    ess = _ess(x)
    mcse = np.where(sd > 0, sd / np.sqrt(ess), 0.0)
    rhat = _split_rhat(x)
    if scalar:
        mean, sd, mcse, ess, rhat = (a[0] for a in (mean, sd, mcse, ess, rhat))
    return ChainDiagnostics(mean, sd, mcse, ess, rhat)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------


def default_slab_prior(genetic_variance: float, freqs, q: float = 1.0, df: float = DEFAULT_DF):
    """Prior whose mean per-locus variance is V_g / (q * sum 2p(1-p)).

    Returns a :class:`ScaledInvChiSqPrior` for q == 1, else a
    :class:`SpikeSlabPrior`.
    """
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1] for a default prior")
    het = expected_genetic_variance(freqs, 1.0)
    mean_var = genetic_variance / (q * het)
    scale = mean_var * (df - 2.0) / df
    if q == 1.0:
        return ScaledInvChiSqPrior(df, scale)
    return SpikeSlabPrior(q, df, scale)


# ---------------------------------------------------------------------------
# Sampler
# ---------------------------------------------------------------------------


@dataclass
class _Problem:
    MWt: np.ndarray  # p x n, rows are projected marker columns
    My: np.ndarray
    wtw: np.ndarray
    dof: int  # n - rank(X)
    order: np.ndarray
    keys: np.ndarray


def _prepare(W, X, y, locus_keys):
    G = as_genotypes(W)
    dense = G.imputed()
    y = np.asarray(getattr(y, "y", y), dtype=np.float64).ravel()
    if y.size != G.n:
        raise ValueError(f"y has {y.size} values for {G.n} genotyped individuals")
    if X is None:
        X = np.zeros((G.n, 0))
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != G.n:
        raise ValueError("X rows do not match genotypes")
    if X.shape[1]:
        Q, _ = linalg.qr(X, mode="economic")
        MW = dense - Q @ (Q.T @ dense)
        My = y - Q @ (Q.T @ y)
    else:
        MW, My = dense, y
    keys = np.arange(G.p) if locus_keys is None else np.asarray(locus_keys, dtype=np.int64)
    if keys.shape != (G.p,) or np.unique(keys).size != G.p:
        raise ValueError("locus_keys must be p distinct integers")
    prob = _Problem(
        MWt=np.ascontiguousarray(MW.T),
        My=My,
        wtw=np.einsum("ij,ij->j", MW, MW),
        dof=G.n - X.shape[1],
        order=np.argsort(keys, kind="stable"),
        keys=keys,
    )
    return prob, G, dense, X, y


def _run_chain(prob: _Problem, kind: str, prior, pin, sigma_e2, fix_e, cfg: ChainConfig, chain: int):
    p = prob.wtw.size
    df, scale = (prior.df, prior.scale) if prior is not None else (1.0, 1.0)
    q = prior.q if kind == "bayes-b" else 1.0
    dfs = df * scale
    resid_scale = sigma_e2 * (RESIDUAL_DF - 2.0) / RESIDUAL_DF
    rng_global = streams.stream(cfg.seed, streams.CHAIN, chain)
    locus_rngs = [streams.stream(cfg.seed, streams.CHAIN_LOCUS, chain, k) for k in prob.keys]

    b = np.zeros(p)
    if pin is not None:
        var = np.full(p, float(pin))
    elif q > 0:
        var = np.full(p, prior.mean_variance if df > 2 else scale)
    else:
        var = np.zeros(p)
    e = prob.My.copy()
    se2 = float(sigma_e2)

    n_keep = cfg.retained
    trace_b = np.empty((n_keep, p))
    trace_var = np.empty((n_keep, p))
    trace_e = np.empty(n_keep)
    kept = 0
    MWt, wtw, order = prob.MWt, prob.wtw.tolist(), prob.order.tolist()
    bl = b.tolist()
    vl = var.tolist()

    for start in range(0, cfg.iterations, _BLOCK):
        size = min(_BLOCK, cfg.iterations - start)
        draws = []
        for j in range(p):
            r = locus_rngs[j]
            normal = r.standard_normal(size).tolist()
            post_chi = r.chisquare(df + 1.0, size).tolist()
            if kind == "bayes-b":
                incl = r.random(size).tolist()
                prior_chi = r.chisquare(df, size).tolist()
                acc = r.random(size).tolist()
                draws.append((normal, post_chi, incl, prior_chi, acc))
            else:
                draws.append((normal, post_chi))
        resid_chi = rng_global.chisquare(RESIDUAL_DF + prob.dof, size)

        for t in range(size):
            it = start + t
            for j in order:
                w = MWt[j]
                old = bl[j]
                xtx = wtw[j]
                rhs = float(w @ e) + xtx * old
                d = draws[j]
                if kind == "bayes-b":
                    v_cur = vl[j]
                    v_new = dfs / d[3][t] if d[2][t] < q else 0.0
                    log_ratio = _log_marginal(v_new, rhs, xtx, se2) - _log_marginal(v_cur, rhs, xtx, se2)
                    if log_ratio >= 0 or d[4][t] < math.exp(log_ratio):
                        vl[j] = v_new
                v = vl[j]
                if v > 0:
                    c = xtx + se2 / v
                    new = rhs / c + math.sqrt(se2 / c) * d[0][t]
                    if pin is None:
                        vl[j] = (dfs + new * new) / d[1][t]
                else:
                    new = 0.0
                if new != old:
                    e -= w * (new - old)
                    bl[j] = new
            if not fix_e:
                se2 = (RESIDUAL_DF * resid_scale + float(e @ e)) / resid_chi[t]
            if not (math.isfinite(se2) and math.isfinite(e[0]) and math.isfinite(sum(bl))):
                raise ChainDivergenceError(it, chain)
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == 0:
                trace_b[kept] = bl
                trace_var[kept] = vl
                trace_e[kept] = se2
                kept += 1
    return trace_b, trace_var, trace_e


def _log_marginal(v: float, rhs: float, xtx: float, se2: float) -> float:
    """log p(residual | locus variance v) up to a constant, with b_j integrated out."""
    denom = se2 + v * xtx
    return -0.5 * math.log(denom) + 0.5 * v * rhs * rhs / (se2 * denom)


def _sample(W, X, y, kind, prior, pin, sigma_e2, fix_sigma_e2, cfg, locus_keys, threads):
    if not sigma_e2 > 0:
        raise ValueError("sigma_e2 must be > 0")
    prob, G, dense, X, y = _prepare(W, X, y, locus_keys)

    def one(chain):
        # overflow is caught by the divergence check instead
        with np.errstate(over="ignore", invalid="ignore"):
            return _run_chain(prob, kind, prior, pin, sigma_e2, fix_sigma_e2, cfg, chain)

    if threads > 1 and cfg.chain_count > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(cfg.chain_count)))
    else:
        results = [one(c) for c in range(cfg.chain_count)]
    tb = np.stack([r[0] for r in results])
    tv = np.stack([r[1] for r in results])
    te = np.stack([r[2] for r in results])
    diag = chain_summary(tb) if tb.shape[1] >= 10 else None
    mean = tb.reshape(-1, G.p).mean(axis=0)
    sd = tb.reshape(-1, G.p).std(axis=0, ddof=1) if tb.shape[1] * tb.shape[0] > 1 else np.zeros(G.p)
    fixed = np.zeros(0)
    if X.shape[1]:
        fixed = linalg.lstsq(X, y - dense @ mean)[0]
    inclusion = (tv > 0).reshape(-1, G.p).mean(axis=0) if kind == "bayes-b" else None
    return PosteriorSummary(
        method=kind,
        mean=mean,
        sd=sd,
        mcse=diag.mcse if diag is not None else np.full(G.p, np.nan),
        rhat=diag.rhat if diag is not None else np.full(G.p, np.nan),
        inclusion_prob=inclusion,
        variance_mean=tv.reshape(-1, G.p).mean(axis=0),
        fixed_mean=fixed,
        sigma_e2_mean=float(te.mean()),
        traces=tb,
        sigma_e2_trace=te,
        config=cfg,
        marker_ids=G.marker_ids,
        metadata={
            "fix_sigma_e2": bool(fix_sigma_e2),
            "pinned_variance": pin,
            "prior": None if prior is None else repr(prior),
        },
    )


def bayes_a(
    W,
    X,
    y,
    prior: Optional[ScaledInvChiSqPrior],
    sigma_e2: float,
    fix_sigma_e2: bool = False,
    cfg: ChainConfig = ChainConfig(),
    pin_variance: Optional[float] = None,
    locus_keys=None,
    threads: int = 1,
) -> PosteriorSummary:
    """Gibbs sampler for b_j ~ N(0, s2_j), s2_j ~ scale * df / chi2(df).

    Each sweep draws every b_j from its normal full conditional and then
    s2_j from scaled inverse chi-square with df + 1 degrees of freedom.
    sigma_e2 is either held at ``sigma_e2`` or sampled under a scaled
    inverse chi-square prior with 4 df and mean ``sigma_e2``.

    ``pin_variance`` fixes every s2_j (the df -> infinity limit); with
    ``fix_sigma_e2`` the posterior mean is then the SNP-BLUP solution.
    """
    if pin_variance is None:
        if not isinstance(prior, ScaledInvChiSqPrior):
            raise TypeError("bayes_a needs a ScaledInvChiSqPrior (or pin_variance)")
    elif not pin_variance > 0:
        raise ValueError("pin_variance must be > 0")
    return _sample(W, X, y, "bayes-a", prior, pin_variance, sigma_e2, fix_sigma_e2, cfg, locus_keys, threads)


def bayes_b(
    W,
    X,
    y,
    prior: SpikeSlabPrior,
    sigma_e2: float,
    fix_sigma_e2: bool = False,
    cfg: ChainConfig = ChainConfig(),
    locus_keys=None,
    threads: int = 1,
) -> PosteriorSummary:
    """Spike-and-slab sampler: s2_j = 0 with probability 1 - q, else as Bayes A.

    Per locus, a Metropolis-Hastings step proposes s2_j from the prior
    mixture and accepts with the ratio of marginal likelihoods in which b_j
    is integrated out; b_j is then drawn from its full conditional (or set
    to zero) and, if included, s2_j receives a Gibbs refresh given b_j.
    """
    if not isinstance(prior, SpikeSlabPrior):
        raise TypeError("bayes_b needs a SpikeSlabPrior")
    return _sample(W, X, y, "bayes-b", prior, None, sigma_e2, fix_sigma_e2, cfg, locus_keys, threads)
