import json

import pytest

from reciprec.cli import main
from reciprec.config import parse_config
from reciprec.evaluation import EvaluationReport
from reciprec.pipeline import run_seed
from test_config_pipeline import TINY


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY)
    return path


def cli(config_file, work, *args):
    return main([*args, "--config", str(config_file), "--workdir", str(work)])


def test_missing_artifact_names_producer(config_file, tmp_path, capsys):
    assert cli(config_file, tmp_path, "split") == 1
    err = capsys.readouterr().err
    assert err.startswith("error: [split]") and "run `synth` first" in err
    assert cli(config_file, tmp_path, "report", "--no-figures") == 1


def test_policy_argument_required(config_file, tmp_path, capsys):
    for cmd in ("synth", "split", "train-directional"):
        assert cli(config_file, tmp_path, cmd) == 0
    with pytest.raises(SystemExit):
        cli(config_file, tmp_path, "build-pseudo")
    assert "--alpha" in capsys.readouterr().err
    assert cli(config_file, tmp_path, "evaluate", "--method", "bob-global-0.50") == 1
    assert "train-meta" in capsys.readouterr().err


@pytest.fixture(scope="module")
def chain(config_file, tmp_path_factory):
    work = tmp_path_factory.mktemp("chain")
    steps = [
        ["synth"], ["split"], ["train-directional"], ["train-dmp"],
        ["build-pseudo", "--alpha", "0.5"], ["train-meta", "--alpha", "0.5"],
        ["tune-alpha", "--mode", "global"], ["tune-alpha", "--mode", "per-segment"],
        ["build-pseudo", "--tuned", "per-segment"], ["train-meta", "--tuned", "per-segment"],
        ["evaluate", "--method", "oracle", "--method", "multiplication", "--method", "harmonic-mean"],
        ["evaluate", "--method", "bob-global-0.50", "--method", "bob-personalized"],
        ["report", "--no-figures"],
    ]
    for step in steps:
        assert cli(config_file, work, *step) == 0, step
    return work


def test_chain_artifacts(chain):
    for rel in ("events.csv", "truth.csv", "train.csv", "test.csv", "segments.csv", "models/scout.mf",
                "models/reply.mf", "models/dmp.mf", "pseudo/global-0.50.csv", "models/bob-global-0.50.gbdt",
                "tuning/alpha_policy_global.json", "report.csv"):
        assert (chain / rel).exists(), rel
    policy = json.loads((chain / "tuning/alpha_policy_per-segment.json").read_text())
    assert policy["mode"] == "per-segment"


def test_trace_row_count(chain):
    cfg = parse_config(TINY)
    lines = (chain / "tuning/trace_per-segment.csv").read_text().splitlines()
    assert len(lines) - 1 == cfg.eval.folds * len(cfg.eval.segment_alphas) * 3
    lines = (chain / "tuning/trace_global.csv").read_text().splitlines()
    assert len(lines) - 1 == cfg.eval.folds * len(cfg.eval.global_alphas)


def test_report_merges_fragments(chain):
    report = EvaluationReport.read_csv(chain / "report.csv")
    assert report.methods() == ["oracle", "multiplication", "harmonic-mean", "bob-global-0.50", "bob-personalized"]
    assert len(report.rows) == 5 * 4


def test_stepwise_matches_pipeline(chain, tmp_path):
    cfg = parse_config(TINY)
    seed_report = run_seed(cfg, cfg.eval.seeds[0], tmp_path).report
    stepwise = EvaluationReport.read_csv(chain / "report.csv")
    for method in ("oracle", "multiplication", "harmonic-mean", "bob-global-0.50"):
        assert [r for r in stepwise.rows if r[0] == method] == [r for r in seed_report.rows if r[0] == method]


def test_run_with_seed_override(config_file, tmp_path, capsys):
    assert cli(config_file, tmp_path, "run", "--seed-override", "5", "--no-figures") == 0
    assert (tmp_path / "seed-5" / "report.csv").exists()
    assert not (tmp_path / "seed-3").exists()
    assert "bob-personalized" in capsys.readouterr().out
