import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from genopred import io
from genopred.cli import ConfigError, RunConfig, parse_config, run


def _pipeline(workdir: Path, monkeypatch):
    monkeypatch.chdir(workdir)
    assert run(["simulate", "--out", "sim", "--n", "120", "--p", "60", "--sigma-b2", "0.01", "--seed", "5"]) == 0
    assert run([
        "fit", "--genotypes", "sim/genotypes.csv", "--phenotypes", "sim/phenotypes.csv",
        "--method", "snp-blup", "--sigma-u2", "0.01", "--out", "fit",
    ]) == 0
    assert run(["evaluate", "--truth", "sim/truth_effects.csv", "--estimates", "fit/effects.csv", "--out", "eval"]) == 0
    return {p.relative_to(workdir): p.read_bytes() for p in sorted(workdir.rglob("*")) if p.is_file()}


def test_pipeline_is_byte_identical(tmp_path, monkeypatch):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    first = _pipeline(tmp_path / "a", monkeypatch)
    second = _pipeline(tmp_path / "b", monkeypatch)
    assert first.keys() == second.keys()
    assert Path("eval/report.csv") in first
    for name in first:
        assert first[name] == second[name], name


def test_simulate_echoes_recipe(tmp_path):
    assert run(["simulate", "--out", str(tmp_path), "--n", "10", "--p", "5", "--seed", "3", "--prior", "bayes-b", "--q", "0.2"]) == 0
    echo = {k: v for _, k, v in io.read_kv(tmp_path / "config.txt")}
    assert echo["seed"] == "3" and echo["prior"] == "bayes-b" and echo["q"] == "0.20000000000000001"


def test_thread_count_does_not_change_outputs(tmp_path):
    for t in ("1", "3"):
        assert run(["simulate", "--out", str(tmp_path / t), "--n", "30", "--p", "40", "--threads", t]) == 0
    assert (tmp_path / "1/genotypes.csv").read_bytes() == (tmp_path / "3/genotypes.csv").read_bytes()


def test_fig1_report(tmp_path):
    assert run(["experiment", "fig1", "--out", str(tmp_path), "--replicates", "1000000"]) == 0
    _, keys, cols = io.read_columns(tmp_path / "fig1_report.csv")
    report = dict(zip(keys, cols["value"]))
    assert abs(report["mean_significant_estimate"] - 2.525) < 0.01
    assert report["threshold"] == 2.0
    _, _, hist = io.read_columns(tmp_path / "fig1_histogram.csv")
    assert hist["count"].sum() == 1_000_000
    assert set(hist["significant"]) == {0.0, 1.0}


def test_fig2_and_equivalence_reports(tmp_path):
    assert run(["experiment", "fig2", "--out", str(tmp_path / "f2"), "--seed", "1"]) == 0
    _, keys, cols = io.read_columns(tmp_path / "f2/fig2_report.csv")
    r = dict(zip(keys, cols["value"]))
    assert abs(r["ls.slope"] - 0.5) < 0.05 and abs(r["shrunk.slope"] - 1.0) < 0.1
    assert (tmp_path / "f2/fig2_scatter.csv").exists()
    assert run(["experiment", "equivalence", "--out", str(tmp_path / "eq")]) == 0
    _, keys, cols = io.read_columns(tmp_path / "eq/equivalence_report.csv")
    r = dict(zip(keys, cols["value"]))
    assert r["passed"] == 1.0 and r["max_abs_diff"] < 1e-8


def test_gblup_missing_id_is_named(tmp_path, capsys):
    assert run(["simulate", "--out", str(tmp_path / "s"), "--n", "20", "--p", "10"]) == 0
    pheno = (tmp_path / "s/phenotypes.csv").read_text().splitlines()
    dropped = pheno.pop(5).split(",")[0]
    (tmp_path / "short.csv").write_text("\n".join(pheno) + "\n")
    status = run([
        "fit", "--method", "gblup", "--genotypes", str(tmp_path / "s/genotypes.csv"),
        "--phenotypes", str(tmp_path / "short.csv"), "--out", str(tmp_path / "f"),
    ])
    assert status != 0
    assert repr(dropped) in capsys.readouterr().err


def test_malformed_input_reports_line_and_column(tmp_path, capsys):
    (tmp_path / "g.csv").write_text("id,m1\na,0\nb,5\n")
    (tmp_path / "p.csv").write_text("id,trait\na,1\nb,2\n")
    status = run(["fit", "--genotypes", str(tmp_path / "g.csv"), "--phenotypes", str(tmp_path / "p.csv"), "--out", str(tmp_path / "o")])
    assert status == 1
    assert "g.csv:3:2:" in capsys.readouterr().err


def test_all_fit_methods_write_effects(tmp_path):
    assert run(["simulate", "--out", str(tmp_path / "s"), "--n", "60", "--p", "15", "--sigma-b2", "0.05"]) == 0
    g, p = str(tmp_path / "s/genotypes.csv"), str(tmp_path / "s/phenotypes.csv")
    for method in ("ls-scan", "shrink", "snp-blup", "gblup", "bayes-a", "bayes-b"):
        out = tmp_path / method
        args = ["fit", "--method", method, "--genotypes", g, "--phenotypes", p, "--out", str(out), "--sigma-u2", "0.05",
                "--iterations", "300", "--burn-in", "50", "--thinning", "1", "--traces"]
        assert run(args) == 0, method
        header, keys, cols = io.read_columns(out / "effects.csv")
        assert "estimate" in cols and len(keys) in (15, 60)
    _, _, traces = io.read_columns(tmp_path / "bayes-b/traces.csv")
    assert traces["sigma_e2"].size == 250


def test_sire_blup_and_predict(tmp_path):
    assert run(["simulate", "--design", "sire", "--families", "20", "--family-size", "5", "--out", str(tmp_path / "s")]) == 0
    assert run(["fit", "--method", "sire-blup", "--phenotypes", str(tmp_path / "s/phenotypes.csv"),
                "--sigma-u2", "0.1", "--out", str(tmp_path / "f")]) == 0
    _, keys, cols = io.read_columns(tmp_path / "f/effects.csv")
    assert len(keys) == 20 and keys[0] == "fam1"


def test_predict_matches_manual_product(tmp_path):
    assert run(["simulate", "--out", str(tmp_path / "s"), "--n", "50", "--p", "20"]) == 0
    assert run(["fit", "--genotypes", str(tmp_path / "s/genotypes.csv"), "--phenotypes", str(tmp_path / "s/phenotypes.csv"),
                "--out", str(tmp_path / "f")]) == 0
    assert run(["predict", "--effects", str(tmp_path / "f/effects.csv"), "--genotypes", str(tmp_path / "s/genotypes.csv"),
                "--out", str(tmp_path / "p")]) == 0
    W = io.read_genotypes(tmp_path / "s/genotypes.csv")
    _, _, eff = io.read_columns(tmp_path / "f/effects.csv")
    meta = {k: float(v) for _, k, v in io.read_kv(tmp_path / "f/fit_meta.txt") if k.startswith("fixed.")}
    _, _, pred = io.read_columns(tmp_path / "p/predictions.csv")
    np.testing.assert_allclose(pred["prediction"], W.codes @ eff["estimate"] + meta["fixed.intercept"], atol=1e-12)


# -- configuration -------------------------------------------------------


def test_empty_config_gives_defaults(tmp_path):
    (tmp_path / "c.txt").write_text("")
    cfg = parse_config(tmp_path / "c.txt", subcommand="fit")
    defaults = RunConfig(subcommand="fit")
    assert cfg == defaults
    assert ("iterations", 10_000) in cfg.echo()


def test_flags_override_config(tmp_path):
    (tmp_path / "c.txt").write_text("seed = 7\nmethod = bayes-a\n")
    cfg = parse_config(tmp_path / "c.txt", {"seed": "9"}, "fit")
    assert cfg.seed == 9 and cfg.method == "bayes-a"
    assert run(["fit", "--config", str(tmp_path / "c.txt"), "--seed", "9", "--out", str(tmp_path / "o")]) == 1
    echo = {k: v for _, k, v in io.read_kv(tmp_path / "o/config.txt")}
    assert echo["seed"] == "9"


def test_config_echo_reproduces_run(tmp_path):
    assert run(["simulate", "--out", str(tmp_path / "a"), "--n", "20", "--p", "10", "--seed", "4", "--q", "0.3"]) == 0
    assert run(["simulate", "--config", str(tmp_path / "a/config.txt"), "--out", str(tmp_path / "b")]) == 0
    for name in ("genotypes.csv", "phenotypes.csv", "truth_effects.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run(["experiment", "fig1", "--replicates", "1000", "--out", str(tmp_path / "e")]) == 0
    assert run(["experiment", "fig1", "--config", str(tmp_path / "e/config.txt"), "--out", str(tmp_path / "f")]) == 0
    assert (tmp_path / "e/fig1_report.csv").read_bytes() == (tmp_path / "f/fig1_report.csv").read_bytes()
    with pytest.raises(ConfigError, match="file is for subcommand 'simulate'"):
        parse_config(tmp_path / "a/config.txt", subcommand="fit")


def test_unknown_key_and_type_mismatch(tmp_path):
    (tmp_path / "c.txt").write_text("seed = 1\nbogus = 2\n")
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(tmp_path / "c.txt")
    (tmp_path / "d.txt").write_text("iterations = many\n")
    with pytest.raises(ConfigError, match="expects int"):
        parse_config(tmp_path / "d.txt")


def test_q_out_of_range_rejected(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("method = bayes-b\nq = 1.5\n")
    with pytest.raises(ConfigError, match=r"q must lie in the range \[0, 1\]"):
        parse_config(tmp_path / "c.txt", subcommand="fit")
    assert run(["fit", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "o")]) == 2
    assert "q must lie" in capsys.readouterr().err


def test_unknown_flag_nonzero():
    assert run(["fit", "--no-such-flag"]) != 0


def test_console_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "genopred.cli", "experiment", "fig1", "--replicates", "10000", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert out.returncode == 0
    assert "closed form 2.5251" in out.stdout
