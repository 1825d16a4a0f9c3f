"""Accuracy, calibration and selection-bias measures, plus the two figure experiments."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import streams
from .blup import gblup, predict, shrink_ls, snp_blup
from .core import ModelFit, VarianceComponents, genomic_relationship
from .simulate import SimulatedDataset, simulate_marker_scan


class CrossValidationError(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        self.fold = fold
        super().__init__(f"fold {fold} failed: {cause}")


@dataclass(frozen=True)
class AccuracyReport:
    """Agreement between truth and prediction.

    ``slope`` is the OLS regression coefficient of truth on prediction; it
    and ``correlation`` are NaN when the prediction is constant.
    """

    correlation: float
    slope: float
    slope_se: float
    intercept: float
    mse: float
    n: int

    @property
    def correlation_se(self) -> float:
        return (1.0 - self.correlation**2) / np.sqrt(self.n - 1)


@dataclass(frozen=True)
class SelectionBiasReport:
    threshold: float
    count: int
    mean_abs_estimate: float
    mean_abs_truth: float
    mean_abs_diff_se: float
    slope: float
    slope_se: float

    @property
    def mean_abs_gap(self) -> float:
        return self.mean_abs_truth - self.mean_abs_estimate


@dataclass(frozen=True)
class TruncationResult:
    mean: float
    analytic: float
    count: int
    replicates: int
    mc_se: float
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    bin_significant: np.ndarray


@dataclass(frozen=True)
class Fig2Result:
    ls: SelectionBiasReport
    shrunk: SelectionBiasReport
    replicates: int
    lam: float
    threshold: float
    b_true: np.ndarray  # selected markers only
    b_ls: np.ndarray
    b_shrunk: np.ndarray


@dataclass(frozen=True)
class CVResult:
    folds: list
    pooled: AccuracyReport
    assignment: np.ndarray
    predictions: np.ndarray


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_diff: float
    mean_abs_diff: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff < self.tolerance


# ---------------------------------------------------------------------------


def _regression(truth: np.ndarray, pred: np.ndarray):
    """Slope, its standard error and intercept of truth regressed on pred."""
    n = truth.size
    dx = pred - pred.mean()
    sxx = dx @ dx
    if n < 2 or sxx <= 0:
        return np.nan, np.nan, np.nan
    slope = (dx @ (truth - truth.mean())) / sxx
    intercept = truth.mean() - slope * pred.mean()
    if n > 2:
        resid = truth - intercept - slope * pred
        slope_se = np.sqrt((resid @ resid) / (n - 2) / sxx)
    else:
        slope_se = np.nan
    return float(slope), float(slope_se), float(intercept)


def accuracy_report(truth, prediction) -> AccuracyReport:
    truth = np.asarray(truth, dtype=np.float64).ravel()
    prediction = np.asarray(prediction, dtype=np.float64).ravel()
    if truth.size != prediction.size:
        raise ValueError(f"truth has {truth.size} values, prediction {prediction.size}")
    if truth.size < 2:
        raise ValueError("need at least two values")
    slope, slope_se, intercept = _regression(truth, prediction)
    if np.ptp(prediction) == 0 or np.ptp(truth) == 0:
        corr = np.nan
    else:
        corr = float(np.corrcoef(truth, prediction)[0, 1])
    mse = float(np.mean((truth - prediction) ** 2))
    return AccuracyReport(corr, slope, slope_se, intercept, mse, truth.size)


def truncated_normal_mean(b: float, se: float, threshold: float) -> float:
    """E(b_hat | b_hat > threshold) for b_hat ~ N(b, se^2)."""
    alpha = (threshold - b) / se
    return float(b + se * np.exp(stats.norm.logpdf(alpha) - stats.norm.logsf(alpha)))


def truncation_experiment(
    b_fixed: float = 1.0,
    se: float = 1.0,
    threshold: float = 2.0,
    replicates: int = 1_000_000,
    seed: int = 0,
    bins: int = 60,
    block: int = 1_000_000,
) -> TruncationResult:
    """Mean estimate among replicates declared significant (b_hat > threshold).

    Each replicate draws b_hat = b_fixed + N(0, se^2). The closed-form
    truncated-normal mean is returned alongside for comparison. With no
    replicate selected, ``mean`` is NaN and ``count`` is 0.
    """
    if not se > 0:
        raise ValueError("se must be > 0")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    lo, hi = b_fixed - 5 * se, b_fixed + 5 * se
    if np.isfinite(threshold):
        lo, hi = min(lo, threshold - se), max(hi, threshold + se)
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    total = 0.0
    total_sq = 0.0
    count = 0
    for k, start in enumerate(range(0, replicates, block)):
        size = min(block, replicates - start)
        est = b_fixed + se * streams.stream(seed, streams.TRUNCATION, k).standard_normal(size)
        sig = est[est > threshold]
        count += sig.size
        total += sig.sum()
        total_sq += (sig * sig).sum()
        counts += np.histogram(np.clip(est, lo, hi), edges)[0]
    mean = total / count if count else np.nan
    mc_se = np.sqrt(max(total_sq / count - mean**2, 0.0) / count) if count > 1 else np.nan
    centers = 0.5 * (edges[:-1] + edges[1:])
    return TruncationResult(
        mean=float(mean),
        analytic=truncated_normal_mean(b_fixed, se, threshold) if np.isfinite(threshold) else float(b_fixed),
        count=int(count),
        replicates=replicates,
        mc_se=float(mc_se),
        bin_edges=edges,
        bin_counts=counts,
        bin_significant=centers > threshold,
    )


def selection_bias_report(
    b_true, estimates, threshold: float, two_sided: bool = True, select_on=None
) -> SelectionBiasReport:
    """Compare estimates with truth among markers passing a threshold.

    Markers are selected on ``|select_on| > threshold`` (or ``select_on >
    threshold`` when one-sided); ``select_on`` defaults to ``estimates``.
    Means are NaN when nothing is selected.
    """
    b_true = np.asarray(b_true, dtype=np.float64).ravel()
    estimates = np.asarray(estimates, dtype=np.float64).ravel()
    stat = estimates if select_on is None else np.asarray(select_on, dtype=np.float64).ravel()
    if not (b_true.size == estimates.size == stat.size):
        raise ValueError("b_true, estimates and selection statistic must have equal lengths")
    if two_sided and threshold < 0:
        raise ValueError("two-sided threshold must be >= 0")
    chosen = (np.abs(stat) > threshold) if two_sided else (stat > threshold)
    k = int(chosen.sum())
    if k == 0:
        return SelectionBiasReport(threshold, 0, np.nan, np.nan, np.nan, np.nan, np.nan)
    t, est = b_true[chosen], estimates[chosen]
    gap = np.abs(t) - np.abs(est)
    gap_se = float(gap.std(ddof=1) / np.sqrt(k)) if k > 1 else np.nan
    slope, slope_se, _ = _regression(t, est)
    return SelectionBiasReport(
        threshold=threshold,
        count=k,
        mean_abs_estimate=float(np.abs(est).mean()),
        mean_abs_truth=float(np.abs(t).mean()),
        mean_abs_diff_se=gap_se,
        slope=slope,
        slope_se=slope_se,
    )


def fig2_experiment(
    n_markers: int = 100_000,
    sigma_b2: float = 0.5,
    sigma_err2: float = 0.5,
    threshold: float = 2.5,
    min_selected: int = 200,
    seed: int = 0,
    max_replicates: int = 10_000,
) -> Fig2Result:
    """Scan-model simulation of least-squares versus shrunk estimates under selection.

    Replicates of ``n_markers`` (true, LS) pairs are generated until at
    least ``min_selected`` markers have |LS| > threshold. The shrunk
    estimate is LS / (1 + lambda) with lambda = sigma_err2 / sigma_b2, and
    both estimators are evaluated on the same LS-selected markers.
    """
    lam = sigma_err2 / sigma_b2 if sigma_b2 > 0 else np.inf
    true_sel, ls_sel = [], []
    selected = 0
    reps = 0
    while selected < min_selected and reps < max_replicates:
        b, b_tilde = simulate_marker_scan(n_markers, sigma_b2, sigma_err2, seed, replicate=reps)
        keep = np.abs(b_tilde) > threshold
        true_sel.append(b[keep])
        ls_sel.append(b_tilde[keep])
        selected += int(keep.sum())
        reps += 1
    b_true = np.concatenate(true_sel)
    b_ls = np.concatenate(ls_sel)
    b_shrunk = shrink_ls(b_ls, lam)
    return Fig2Result(
        ls=selection_bias_report(b_true, b_ls, threshold, select_on=b_ls),
        shrunk=selection_bias_report(b_true, b_shrunk, threshold, select_on=b_ls),
        replicates=reps,
        lam=lam,
        threshold=threshold,
        b_true=b_true,
        b_ls=b_ls,
        b_shrunk=b_shrunk,
    )


def calibration_by_threshold(b_true, b_tilde, lam: float, thresholds: Sequence[float] = (0, 1, 2, 3)) -> list:
    """Selection-bias reports of shrunk estimates, selecting on |b_tilde| at each threshold."""
    shrunk = shrink_ls(b_tilde, lam)
    return [selection_bias_report(b_true, shrunk, t, select_on=b_tilde) for t in thresholds]


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


def fold_assignment(n: int, folds: int, seed: int = 0) -> np.ndarray:
    """Balanced random partition of n rows into ``folds`` groups."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"{n} rows cannot fill {folds} folds")
    perm = streams.stream(seed, streams.FOLDS).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % folds
    return out


def make_cv_method(name: str, dataset, vc: Optional[VarianceComponents] = None) -> Callable:
    """Fit-and-predict closure ``f(train_idx, test_idx) -> y_hat[test]`` for a named method."""
    W, y, X = _unpack(dataset)
    if name == "null":
        return lambda train, test: np.zeros(test.size)
    if vc is None:
        raise ValueError(f"method {name!r} needs variance components")
    if name == "snp-blup":

        def run(train, test):
            fit = snp_blup(W.take_rows(train), None if X is None else X[train], y[train], vc)
            return predict(fit, W.take_rows(test), None if X is None else X[test]).y

        return run
    if name == "gblup":
        K = genomic_relationship(W, centering=False).K

        def run(train, test):
            fit = gblup(K, None if X is None else X[train], y[train], vc, observed=train)
            out = fit.random_estimates[test]
            if X is not None:
                out = out + X[test] @ fit.fixed_estimates
            return out

        return run
    raise ValueError(f"unknown cross-validation method {name!r}")


def _unpack(dataset):
    if isinstance(dataset, SimulatedDataset):
        X = dataset.X if dataset.X.shape[1] else None
        return dataset.W, dataset.y.y, X
    W, y, *rest = dataset
    return W, np.asarray(getattr(y, "y", y), dtype=np.float64), (rest[0] if rest else None)


def cross_validate(
    dataset,
    method: Union[str, Callable],
    folds: int = 5,
    seed: int = 0,
    vc: Optional[VarianceComponents] = None,
    threads: int = 1,
) -> CVResult:
    """k-fold cross-validation with pooled and per-fold accuracy.

    ``method`` is a name understood by :func:`make_cv_method` or a callable
    ``f(train_idx, test_idx)`` returning predictions for the test rows.
    """
    _, y, _ = _unpack(dataset)
    assignment = fold_assignment(y.size, folds, seed)
    fn = make_cv_method(method, dataset, vc) if isinstance(method, str) else method
    predictions = np.empty(y.size)

    def run(k):
        test = np.flatnonzero(assignment == k)
        train = np.flatnonzero(assignment != k)
        try:
            out = np.asarray(fn(train, test), dtype=np.float64).ravel()
            if out.size != test.size:
                raise ValueError(f"method returned {out.size} predictions for {test.size} rows")
        except Exception as exc:
            raise CrossValidationError(k, exc) from exc
        return test, out

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(folds)))
    else:
        results = [run(k) for k in range(folds)]
    reports = []
    for test, out in results:
        predictions[test] = out
        reports.append(accuracy_report(y[test], out))
    return CVResult(reports, accuracy_report(y, predictions), assignment, predictions)


# ---------------------------------------------------------------------------


def _genetic(fit):
    if isinstance(fit, ModelFit):
        values = fit.genetic_values if fit.genetic_values is not None else fit.random_estimates
        return np.asarray(values, dtype=np.float64), fit.metadata.get("individual_ids")
    return np.asarray(fit, dtype=np.float64).ravel(), None


def estimator_equivalence(fit_a, fit_b, tolerance: float = 1e-8) -> EquivalenceReport:
    """Max and mean absolute difference between two fits' predicted genetic values."""
    a, ids_a = _genetic(fit_a)
    b, ids_b = _genetic(fit_b)
    if a.shape != b.shape:
        raise ValueError(f"fits cover different individual sets ({a.size} vs {b.size} values)")
    if ids_a is not None and ids_b is not None and tuple(ids_a) != tuple(ids_b):
        raise ValueError("fits cover different individual sets")
    diff = np.abs(a - b)
    return EquivalenceReport(float(diff.max()), float(diff.mean()), tolerance)
