"""Command-line front end.

    genopred simulate   --out DIR [--design markers|sire] ...
    genopred fit        --genotypes G.csv --phenotypes P.csv --method M --out DIR
    genopred predict    --effects DIR/effects.csv --genotypes G.csv --out DIR
    genopred evaluate   --truth T.csv --estimates E.csv --out DIR
    genopred experiment fig1|fig2|equivalence --out DIR

Settings resolve in order: built-in defaults, subcommand defaults,
``--config`` file (``key = value`` lines), then explicit flags. Every run
writes the resolved settings to ``DIR/config.txt``.
"""

from __future__ import annotations

import argparse
import logging
import sys
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .bayes import ChainConfig, bayes_a, bayes_b, default_slab_prior
from .blup import gblup, ls_scan, predict, shrink_ls, sire_blup, snp_blup
from .core import (
    GenotypeMatrix,
    ModelFit,
    NormalPrior,
    RelationshipMatrix,
    ScaledInvChiSqPrior,
    SpikeSlabPrior,
    VarianceComponents,
    genomic_relationship,
    pedigree_numerator_matrix,
)
from .evaluate import (
    accuracy_report,
    estimator_equivalence,
    fig2_experiment,
    selection_bias_report,
    truncation_experiment,
)
from .simulate import (
    SimulationRecipe,
    simulate_dataset,
    simulate_genotypes,
    simulate_effects,
    simulate_phenotypes,
    simulate_sire_families,
)

log = logging.getLogger("genopred")

SUBCOMMANDS = ("simulate", "fit", "predict", "evaluate", "experiment")
METHODS = ("ls-scan", "shrink", "snp-blup", "gblup", "sire-blup", "bayes-a", "bayes-b")
EXPERIMENTS = ("fig1", "fig2", "equivalence")
PRIORS = ("normal", "bayes-a", "bayes-b")
RELATIONSHIPS = ("genomic-centered", "genomic-raw", "pedigree")
DESIGNS = ("markers", "sire")


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str = ""
    experiment: str = ""
    seed: int = 0
    threads: int = 1
    out: str = "."
    # simulate
    design: str = "markers"
    n: int = 1000
    p: int = 1000
    maf_low: float = 0.05
    maf_high: float = 0.5
    prior: str = "normal"
    sigma_b2: float = 0.001
    sigma_e2: float = 1.0
    mean: float = 0.0
    families: int = 100
    family_size: int = 10
    sigma_s2: float = 0.1
    # fit / predict / evaluate inputs
    genotypes: str = ""
    phenotypes: str = ""
    pedigree: str = ""
    effects: str = ""
    meta: str = ""
    truth: str = ""
    estimates: str = ""
    select_on: str = ""
    # fit
    method: str = "snp-blup"
    sigma_u2: float = 0.001
    intercept: bool = True
    relationship: str = "genomic-centered"
    df: float = 4.012
    scale: Optional[float] = None
    q: float = 1.0
    fix_sigma_e2: bool = False
    pin_variance: Optional[float] = None
    iterations: int = 10_000
    burn_in: int = 1_000
    thinning: int = 10
    chains: int = 1
    traces: bool = False
    # evaluate / experiments
    threshold: float = 2.5
    two_sided: bool = True
    b: float = 1.0
    se: float = 1.0
    replicates: int = 1_000_000
    n_markers: int = 100_000
    sigma_err2: float = 0.5
    min_selected: int = 200

    def echo(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


SUBCOMMAND_DEFAULTS = {
    ("experiment", "fig1"): {"threshold": 2.0, "two_sided": False},
    ("experiment", "fig2"): {"threshold": 2.5, "sigma_b2": 0.5, "sigma_err2": 0.5},
    ("experiment", "equivalence"): {"n": 50, "p": 200, "sigma_b2": 0.01, "sigma_e2": 1.0},
}

_FIELD_TYPES = typing.get_type_hints(RunConfig)


def _base_type(name):
    tp = _FIELD_TYPES[name]
    args = typing.get_args(tp)
    if args:
        return next(a for a in args if a is not type(None)), True
    return tp, False


def _convert(name: str, raw, source: str):
    tp, optional = _base_type(name)
    if isinstance(raw, str):
        text = raw.strip()
        if optional and text in ("", "none", "None"):
            return None
        try:
            if tp is bool:
                low = text.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError
            if tp is int:
                return int(text)
            if tp is float:
                return float(text)
            return text
        except ValueError:
            raise ConfigError(f"{source}: {name} expects {tp.__name__}, got {raw!r}") from None
    return raw


def parse_config(path=None, overrides: Optional[dict] = None, subcommand: str = "", experiment: str = "") -> RunConfig:
    """Resolve a :class:`RunConfig` from defaults, an optional file and overrides.

    Unknown keys and values of the wrong type raise :class:`ConfigError`.
    """
    values = {}
    values.update(SUBCOMMAND_DEFAULTS.get((subcommand, experiment), {}))
    known = {f.name for f in fields(RunConfig)}
    if path:
        try:
            entries = io.read_kv(path)
        except FileNotFoundError:
            raise ConfigError(f"{path}: no such config file") from None
        except io.FileFormatError as exc:
            raise ConfigError(str(exc)) from None
        for line, key, raw in entries:
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"{path}:{line}: unknown config key {key!r}")
            if key in ("subcommand", "experiment"):
                # present in a config.txt echo; must agree with the command line
                expected = subcommand if key == "subcommand" else experiment
                if raw.strip() and expected and raw.strip() != expected:
                    raise ConfigError(f"{path}:{line}: file is for {key} {raw.strip()!r}, not {expected!r}")
                continue
            values[key] = _convert(key, raw, f"{path}:{line}")
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _convert(key, value, f"--{key.replace('_', '-')}")
    cfg = RunConfig(subcommand=subcommand, experiment=experiment, **values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.method in METHODS, f"method must be one of {METHODS}, got {cfg.method!r}")
    need(cfg.prior in PRIORS, f"prior must be one of {PRIORS}, got {cfg.prior!r}")
    need(cfg.relationship in RELATIONSHIPS, f"relationship must be one of {RELATIONSHIPS}")
    need(cfg.design in DESIGNS, f"design must be one of {DESIGNS}")
    need(0.0 <= cfg.q <= 1.0, f"q must lie in the range [0, 1], got {cfg.q}")
    need(cfg.df > 0, f"df must be > 0, got {cfg.df}")
    need(cfg.scale is None or cfg.scale > 0, f"scale must be > 0, got {cfg.scale}")
    need(cfg.sigma_e2 > 0, f"sigma_e2 must be > 0, got {cfg.sigma_e2}")
    need(cfg.sigma_u2 >= 0 and cfg.sigma_b2 >= 0 and cfg.sigma_s2 >= 0, "variances must be >= 0")
    need(cfg.iterations > cfg.burn_in >= 0, "need iterations > burn_in >= 0")
    need(cfg.thinning >= 1 and cfg.chains >= 1 and cfg.threads >= 1, "thinning, chains and threads must be >= 1")
    need(0 <= cfg.seed < 2**64, "seed must be an unsigned 64-bit integer")
    need(0 < cfg.maf_low <= cfg.maf_high <= 0.5, "need 0 < maf_low <= maf_high <= 0.5")
    need(cfg.se > 0, "se must be > 0")
    need(cfg.replicates >= 1 and cfg.n_markers >= 1, "replicates and n_markers must be >= 1")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_field_flags(parser, names):
    for name in names:
        tp, _ = _base_type(name)
        flag = "--" + name.replace("_", "-")
        if tp is bool:
            parser.add_argument(flag, dest=name, default=None, action=argparse.BooleanOptionalAction)
        else:
            parser.add_argument(flag, dest=name, default=None, metavar=tp.__name__.upper())


COMMON = ("seed", "threads", "out")
FLAGS = {
    "simulate": (
        "design", "n", "p", "maf_low", "maf_high", "prior", "sigma_b2", "sigma_e2", "mean",
        "families", "family_size", "sigma_s2", "df", "scale", "q",
    ),
    "fit": (
        "genotypes", "phenotypes", "pedigree", "method", "sigma_u2", "sigma_e2", "intercept",
        "relationship", "df", "scale", "q", "fix_sigma_e2", "pin_variance", "iterations",
        "burn_in", "thinning", "chains", "traces",
    ),
    "predict": ("effects", "genotypes", "meta", "phenotypes"),
    "evaluate": ("truth", "estimates", "select_on", "threshold", "two_sided"),
    "experiment": (
        "b", "se", "threshold", "replicates", "n_markers", "sigma_b2", "sigma_err2",
        "min_selected", "n", "p", "sigma_e2",
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genopred", description="Genomic prediction with random SNP effects.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name == "experiment":
            p.add_argument("experiment", choices=EXPERIMENTS)
        p.add_argument("--config", default=None)
        _add_field_flags(p, COMMON + FLAGS[name])
    return parser


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _effect_prior(cfg: RunConfig, sigma_b2: float):
    if cfg.prior == "normal":
        return NormalPrior(sigma_b2)
    scale = cfg.scale if cfg.scale is not None else sigma_b2 * (cfg.df - 2.0) / cfg.df
    if cfg.prior == "bayes-a":
        return ScaledInvChiSqPrior(cfg.df, scale)
    return SpikeSlabPrior(cfg.q, cfg.df, scale)


def cmd_simulate(cfg: RunConfig, out: Path):
    if cfg.design == "sire":
        data = simulate_sire_families(cfg.families, cfg.family_size, cfg.sigma_s2, cfg.sigma_e2, cfg.seed)
        ids = [f"rec{i + 1}" for i in range(data.y.size)]
        io.write_phenotypes(out / "phenotypes.csv", ids, data.y + cfg.mean, family=[f"fam{k + 1}" for k in data.family])
        io.write_columns(
            out / "truth_effects.csv", "level", [f"fam{k + 1}" for k in range(cfg.families)], [("effect", data.s_true)]
        )
        return
    recipe = SimulationRecipe(
        n=cfg.n,
        p=cfg.p,
        prior=_effect_prior(cfg, cfg.sigma_b2),
        sigma_e2=cfg.sigma_e2,
        maf_range=(cfg.maf_low, cfg.maf_high),
        fixed_effects=(cfg.mean,),
        seed=cfg.seed,
    )
    data = simulate_dataset(recipe, threads=cfg.threads)
    io.write_genotypes(out / "genotypes.csv", data.W)
    io.write_phenotypes(out / "phenotypes.csv", data.W.individual_ids, data.y.y)
    io.write_columns(out / "truth_effects.csv", "marker", data.W.marker_ids, [("effect", data.b_true)])
    io.write_columns(out / "truth_genetic.csv", "id", data.W.individual_ids, [("value", data.g_true)])


def _aligned_inputs(cfg: RunConfig):
    if not cfg.phenotypes:
        raise InputError("--phenotypes is required")
    pheno = io.read_phenotypes(cfg.phenotypes)
    W = None
    if cfg.genotypes:
        W = io.read_genotypes(cfg.genotypes)
        have = set(pheno.ids)
        for i in W.individual_ids:
            if i not in have:
                raise InputError(f"individual {i!r} in {cfg.genotypes} has no record in {cfg.phenotypes}")
        position = {i: k for k, i in enumerate(W.individual_ids)}
        for i in pheno.ids:
            if i not in position:
                raise InputError(f"individual {i!r} in {cfg.phenotypes} has no genotypes in {cfg.genotypes}")
        W = W.take_rows([position[i] for i in pheno.ids])
    cols = [np.ones(len(pheno.ids))] if cfg.intercept else []
    cols += [pheno.covariates[:, k] for k in range(pheno.covariates.shape[1])]
    names = (["intercept"] if cfg.intercept else []) + list(pheno.covariate_names)
    X = np.column_stack(cols) if cols else None
    return pheno, W, X, names


def cmd_fit(cfg: RunConfig, out: Path):
    pheno, W, X, fixed_names = _aligned_inputs(cfg)
    method = cfg.method
    meta = [("method", method)]
    if method != "sire-blup" and W is None:
        raise InputError(f"--genotypes is required for method {method}")
    if method == "ls-scan" or method == "shrink":
        scan = ls_scan(W, X, pheno.y, threads=cfg.threads)
        cols = [("estimate", scan.estimate), ("se", scan.se), ("statistic", scan.statistic), ("p_value", scan.p_value)]
        if method == "shrink":
            if not cfg.sigma_u2 > 0:
                raise ConfigError("shrink needs sigma_u2 > 0")
            lam = scan.se**2 / cfg.sigma_u2
            cols = [("estimate", shrink_ls(scan.estimate, np.nan_to_num(lam))), ("ls_estimate", scan.estimate), ("se", scan.se)]
        io.write_columns(out / "effects.csv", "marker", W.marker_ids, cols)
        meta += [("df", scan.df), ("invalid_markers", int((~scan.valid).sum()))]
    elif method in ("snp-blup", "gblup", "sire-blup"):
        vc = VarianceComponents(cfg.sigma_e2, cfg.sigma_u2)
        if method == "snp-blup":
            fit = snp_blup(W, X, pheno.y, vc)
            key = ("marker", W.marker_ids)
        elif method == "gblup":
            G = _relationship(cfg, W, pheno.ids)
            fit = gblup(G, X, pheno.y, vc)
            key = ("id", pheno.ids)
        else:
            if pheno.family is None:
                raise InputError(f"{cfg.phenotypes} needs a 'family' column for sire-blup")
            levels = sorted(set(pheno.family), key=lambda s: (len(s), s))
            index = {f: k for k, f in enumerate(levels)}
            fit = sire_blup(pheno.y, [index[f] for f in pheno.family], vc.lambda_, X, len(levels))
            key = ("level", levels)
        io.write_columns(out / "effects.csv", key[0], key[1], [("estimate", fit.random_estimates), ("se", fit.random_sd)])
        meta += [("lambda", float(vc.lambda_))]
        meta += [(f"fixed.{nm}", float(v)) for nm, v in zip(fixed_names, fit.fixed_estimates)]
    else:
        chain = ChainConfig(cfg.iterations, cfg.burn_in, cfg.thinning, cfg.seed, cfg.chains)
        freqs = W.frequencies
        genetic_guess = cfg.sigma_u2 * float(np.sum(2 * freqs * (1 - freqs)))
        if method == "bayes-a":
            prior = ScaledInvChiSqPrior(cfg.df, cfg.scale) if cfg.scale else default_slab_prior(genetic_guess, freqs, 1.0, cfg.df)
            post = bayes_a(W, X, pheno.y, prior, cfg.sigma_e2, cfg.fix_sigma_e2, chain, cfg.pin_variance, threads=cfg.threads)
        else:
            if cfg.scale:
                prior = SpikeSlabPrior(cfg.q, cfg.df, cfg.scale)
            elif cfg.q > 0:
                slab = default_slab_prior(genetic_guess, freqs, cfg.q, cfg.df)
                prior = SpikeSlabPrior(cfg.q, slab.df, slab.scale)
            else:
                prior = SpikeSlabPrior(0.0, cfg.df, 1.0)
            post = bayes_b(W, X, pheno.y, prior, cfg.sigma_e2, cfg.fix_sigma_e2, chain, threads=cfg.threads)
        cols = [("estimate", post.mean), ("sd", post.sd), ("mcse", post.mcse), ("rhat", post.rhat)]
        if post.inclusion_prob is not None:
            cols.append(("inclusion_prob", post.inclusion_prob))
        io.write_columns(out / "effects.csv", "marker", W.marker_ids, cols)
        meta += [("sigma_e2_mean", post.sigma_e2_mean), ("prior", repr(prior))]
        meta += [(f"fixed.{nm}", float(v)) for nm, v in zip(fixed_names, post.fixed_mean)]
        if cfg.traces:
            c, d, p = post.traces.shape
            keys = [f"{i}:{j}" for i in range(c) for j in range(d)]
            cols = [("sigma_e2", post.sigma_e2_trace.ravel())]
            cols += [(m, post.traces[:, :, k].ravel()) for k, m in enumerate(W.marker_ids)]
            io.write_columns(out / "traces.csv", "chain:draw", keys, cols)
    io.write_kv(out / "fit_meta.txt", meta)


def _relationship(cfg: RunConfig, W: GenotypeMatrix, ids) -> RelationshipMatrix:
    if cfg.relationship == "pedigree":
        if not cfg.pedigree:
            raise InputError("--pedigree is required for relationship = pedigree")
        A = pedigree_numerator_matrix(io.read_pedigree(cfg.pedigree))
        position = {i: k for k, i in enumerate(A.ids)}
        missing = [i for i in ids if i not in position]
        if missing:
            raise InputError(f"individual {missing[0]!r} is not in the pedigree")
        idx = [position[i] for i in ids]
        return RelationshipMatrix(A.K[np.ix_(idx, idx)], A.kind, tuple(ids))
    return genomic_relationship(W, centering=cfg.relationship == "genomic-centered")


def cmd_predict(cfg: RunConfig, out: Path):
    if not cfg.effects or not cfg.genotypes:
        raise InputError("predict needs --effects and --genotypes")
    header, markers, columns = io.read_columns(cfg.effects)
    if "estimate" not in columns:
        raise InputError(f"{cfg.effects} has no 'estimate' column")
    W = io.read_genotypes(cfg.genotypes)
    meta_path = Path(cfg.meta) if cfg.meta else Path(cfg.effects).with_name("fit_meta.txt")
    fixed = {}
    if meta_path.exists():
        for _, key, raw in io.read_kv(meta_path):
            if key.startswith("fixed."):
                fixed[key[6:]] = float(raw)
    fit = ModelFit("loaded", list(fixed.values()), np.nan_to_num(columns["estimate"]),
                   np.zeros(len(markers)), level_ids=markers)
    X_new = None
    if fixed:
        cols = []
        cov = None
        if cfg.phenotypes:
            pheno = io.read_phenotypes(cfg.phenotypes)
            pos = {i: k for k, i in enumerate(pheno.ids)}
            missing = [i for i in W.individual_ids if i not in pos]
            if missing:
                raise InputError(f"individual {missing[0]!r} has no covariate record in {cfg.phenotypes}")
            rows = [pos[i] for i in W.individual_ids]
            cov = {nm: pheno.covariates[rows, k] for k, nm in enumerate(pheno.covariate_names)}
        for name in fixed:
            if name == "intercept":
                cols.append(np.ones(W.n))
            elif cov is not None and name in cov:
                cols.append(cov[name])
            else:
                raise InputError(f"fixed effect {name!r} needs covariate values (pass --phenotypes)")
        X_new = np.column_stack(cols)
    try:
        yhat = predict(fit, W, X_new)
    except KeyError as exc:
        raise InputError(exc.args[0]) from None
    io.write_columns(out / "predictions.csv", "id", W.individual_ids, [("prediction", yhat.y)])


def cmd_evaluate(cfg: RunConfig, out: Path):
    if not cfg.truth or not cfg.estimates:
        raise InputError("evaluate needs --truth and --estimates")
    truth = io.read_keyed_values(cfg.truth)
    est = io.read_keyed_values(cfg.estimates)
    missing = [k for k in truth if k not in est]
    if missing:
        raise InputError(f"id {missing[0]!r} in {cfg.truth} is missing from {cfg.estimates}")
    keys = list(truth)
    t = np.array([truth[k] for k in keys])
    e = np.array([est[k] for k in keys])
    sel = None
    if cfg.select_on:
        s = io.read_keyed_values(cfg.select_on)
        missing = [k for k in keys if k not in s]
        if missing:
            raise InputError(f"id {missing[0]!r} is missing from {cfg.select_on}")
        sel = np.array([s[k] for k in keys])
    ok = np.isfinite(t) & np.isfinite(e) & (np.isfinite(sel) if sel is not None else True)
    acc = accuracy_report(t[ok], e[ok])
    bias = selection_bias_report(t[ok], e[ok], cfg.threshold, cfg.two_sided, None if sel is None else sel[ok])
    rows = [
        ("accuracy.n", acc.n),
        ("accuracy.correlation", acc.correlation),
        ("accuracy.slope", acc.slope),
        ("accuracy.slope_se", acc.slope_se),
        ("accuracy.mse", acc.mse),
        ("selection.threshold", bias.threshold),
        ("selection.two_sided", "true" if cfg.two_sided else "false"),
        ("selection.count", bias.count),
        ("selection.mean_abs_estimate", bias.mean_abs_estimate),
        ("selection.mean_abs_truth", bias.mean_abs_truth),
        ("selection.mean_abs_diff_se", bias.mean_abs_diff_se),
        ("selection.slope", bias.slope),
        ("selection.slope_se", bias.slope_se),
    ]
    _write_report(out / "report.csv", rows)


def _write_report(path, rows):
    io.write_columns(
        path,
        "metric",
        [r[0] for r in rows],
        [("value", [v if isinstance(v, str) else float(v) for _, v in rows])],
    )


def cmd_experiment(cfg: RunConfig, out: Path):
    if cfg.experiment == "fig1":
        r = truncation_experiment(cfg.b, cfg.se, cfg.threshold, cfg.replicates, cfg.seed)
        _write_report(
            out / "fig1_report.csv",
            [
                ("b", cfg.b),
                ("se", cfg.se),
                ("threshold", cfg.threshold),
                ("replicates", r.replicates),
                ("selected", r.count),
                ("mean_significant_estimate", r.mean),
                ("mc_se", r.mc_se),
                ("analytic_mean", r.analytic),
            ],
        )
        lo, hi = r.bin_edges[:-1], r.bin_edges[1:]
        io.write_columns(
            out / "fig1_histogram.csv",
            "bin",
            list(range(len(lo))),
            [("lower", lo), ("upper", hi), ("count", r.bin_counts.astype(float)),
             ("significant", ["true" if s else "false" for s in r.bin_significant])],
        )
        print(f"mean significant estimate = {r.mean:.4f} (closed form {r.analytic:.4f}, {r.count} of {r.replicates})")
    elif cfg.experiment == "fig2":
        r = fig2_experiment(cfg.n_markers, cfg.sigma_b2, cfg.sigma_err2, cfg.threshold, cfg.min_selected, cfg.seed)
        rows = [("replicates", r.replicates), ("lambda", r.lam), ("threshold", r.threshold)]
        for tag, rep in (("ls", r.ls), ("shrunk", r.shrunk)):
            rows += [
                (f"{tag}.count", rep.count),
                (f"{tag}.slope", rep.slope),
                (f"{tag}.slope_se", rep.slope_se),
                (f"{tag}.mean_abs_estimate", rep.mean_abs_estimate),
                (f"{tag}.mean_abs_truth", rep.mean_abs_truth),
                (f"{tag}.mean_abs_diff_se", rep.mean_abs_diff_se),
            ]
        _write_report(out / "fig2_report.csv", rows)
        io.write_columns(
            out / "fig2_scatter.csv",
            "index",
            list(range(r.b_true.size)),
            [("truth", r.b_true), ("ls", r.b_ls), ("shrunk", r.b_shrunk)],
        )
        print(f"slope LS {r.ls.slope:.3f}, slope shrunk {r.shrunk.slope:.3f} over {r.ls.count} selected markers")
    else:
        rep, oracle_diff = equivalence_check(cfg.n, cfg.p, cfg.sigma_b2, cfg.sigma_e2, cfg.seed)
        _write_report(
            out / "equivalence_report.csv",
            [
                ("n", cfg.n),
                ("p", cfg.p),
                ("max_abs_diff", rep.max_abs_diff),
                ("mean_abs_diff", rep.mean_abs_diff),
                ("max_abs_diff_vs_dense_oracle", oracle_diff),
                ("tolerance", rep.tolerance),
                ("passed", "true" if rep.passed and oracle_diff < rep.tolerance else "false"),
            ],
        )
        print(f"SNP-BLUP vs GBLUP max |diff| = {rep.max_abs_diff:.3e}")


def dense_oracle(W: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float):
    """Solve the full (c + p) mixed-model system by explicit inversion."""
    c = X.shape[1]
    p = W.shape[1]
    lhs = np.block([[X.T @ X, X.T @ W], [W.T @ X, W.T @ W + lam * np.eye(p)]])
    rhs = np.concatenate([X.T @ y, W.T @ y])
    sol = np.linalg.inv(lhs) @ rhs
    return sol[:c], sol[c:]


def equivalence_check(n: int, p: int, sigma_b2: float, sigma_e2: float, seed: int, tolerance: float = 1e-8):
    """SNP-BLUP versus GBLUP with G = W W' on simulated data, plus a dense-oracle difference."""
    W = simulate_genotypes(n, p, seed=seed)
    b = simulate_effects(p, NormalPrior(sigma_b2), seed=seed)
    X = np.ones((n, 1))
    data = simulate_phenotypes(W, b, X, [0.0], sigma_e2, seed=seed)
    vc = VarianceComponents(sigma_e2, sigma_b2)
    fit_snp = snp_blup(W, X, data.y, vc)
    fit_g = gblup(genomic_relationship(W, centering=False), X, data.y, vc)
    rep = estimator_equivalence(fit_snp, fit_g, tolerance)
    _, b_dense = dense_oracle(W.imputed(), X, data.y.y, vc.lambda_)
    g_dense = W.imputed() @ b_dense
    oracle_diff = max(
        float(np.abs(fit_snp.genetic_values - g_dense).max()),
        float(np.abs(fit_g.genetic_values - g_dense).max()),
    )
    return rep, oracle_diff


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    sub = args.subcommand
    overrides = {k: v for k, v in vars(args).items() if k not in ("subcommand", "experiment", "config", "verbose")}
    try:
        cfg = parse_config(args.config, overrides, sub, getattr(args, "experiment", ""))
    except ConfigError as exc:
        print(f"genopred: error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        io.write_kv(out / "config.txt", cfg.echo())
        log.info("running %s", sub)
        COMMANDS[sub](cfg, out)
    except (InputError, ConfigError, io.FileFormatError, FileNotFoundError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"genopred: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
