import os

import pytest

import reciprec.pipeline as pipeline
from reciprec.config import ExperimentConfig, load_config, parse_config
from reciprec.evaluation import EvaluationReport
from reciprec.pipeline import BASELINES, StageError, run_pipeline, run_seed

TINY = """
[synth]
num_companies = 60
num_seekers = 300
exposures_per_company = 60
[learner]
epochs = 10
[meta]
num_trees = 30
[eval]
folds = 2
global_alphas = 0.0, 0.5, 1.0
segment_alphas = 0.0, 0.5
seeds = 3
"""


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(cfg.to_ini()) == cfg
    tiny = parse_config(TINY)
    assert parse_config(tiny.to_ini()) == tiny
    assert tiny.synth.num_companies == 60 and tiny.eval.global_alphas == (0.0, 0.5, 1.0)


def test_shipped_configs_parse():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    default = load_config(os.path.join(root, "default.ini"))
    hetero = load_config(os.path.join(root, "heterogeneous.ini"))
    assert default.eval.seeds == (0, 1, 2, 3, 4)
    assert (default.synth.num_companies, default.synth.num_seekers) == (300, 2000)
    assert hetero.synth.low_segment_reply_factor == 0.1
    assert default.section_hash("synth") != hetero.section_hash("synth")


@pytest.mark.parametrize("text", ["[synth]\nbogus = 1\n", "[eval]\nbogus = 1\n", "[extra]\nx = 1\n",
                                  "[eval]\nk = 0\n", "[eval]\nglobal_alphas = 1.5\n"])
def test_rejects_bad_options(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_section_hash_scoping():
    cfg = parse_config(TINY)
    other_eval = parse_config(TINY.replace("folds = 2", "folds = 3"))
    assert cfg.section_hash("synth", "learner", "meta") == other_eval.section_hash("synth", "learner", "meta")
    assert cfg.section_hash("folds") != other_eval.section_hash("folds")
    other_seed = parse_config(TINY.replace("seeds = 3", "seeds = 4"))
    assert cfg.section_hash("synth", "learner") == other_seed.section_hash("synth", "learner")
    more_trees = parse_config(TINY.replace("num_trees = 30", "num_trees = 31"))
    assert cfg.section_hash("synth", "learner") == more_trees.section_hash("synth", "learner")
    assert cfg.section_hash("meta") != more_trees.section_hash("meta")


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    work = tmp_path_factory.mktemp("tiny")
    report, per_seed = run_pipeline(parse_config(TINY), work, figures=False)
    return work, report, per_seed


def test_pipeline_outputs(tiny_run):
    work, report, per_seed = tiny_run
    assert (work / "report.csv").exists() and (work / "report_by_seed.csv").exists()
    seed_dir = work / "seed-3"
    for name in ("report.csv", "tuning_trace_global.csv", "tuning_trace_per_segment.csv",
                 "alpha_policy_global.json", "alpha_policy_per_segment.json"):
        assert (seed_dir / name).exists()
    methods = report.methods()
    for m in ("oracle", *BASELINES, "dmp", "bob-global-0.00", "bob-global-0.50", "bob-global-1.00",
              "bob-tuned-global", "bob-personalized"):
        assert m in methods
    trace = (seed_dir / "tuning_trace_per_segment.csv").read_text().splitlines()
    assert len(trace) - 1 == 2 * 2 * 3
    assert EvaluationReport.read_csv(work / "report.csv").rows == report.rows


def test_pipeline_cached_rerun_identical(tiny_run):
    work, _, _ = tiny_run
    before = (work / "report.csv").read_bytes()
    models = sorted((work / "seed-3").glob("models-*/*.mf")) + sorted((work / "seed-3").glob("meta-*/*.gbdt"))
    stamps = [p.stat().st_mtime_ns for p in models]
    run_pipeline(parse_config(TINY), work, figures=False)
    assert [p.stat().st_mtime_ns for p in models] == stamps
    assert (work / "report.csv").read_bytes() == before


def test_pipeline_fresh_run_identical(tiny_run, tmp_path):
    work, _, _ = tiny_run
    run_pipeline(parse_config(TINY), tmp_path, figures=False)
    assert (tmp_path / "report.csv").read_bytes() == (work / "report.csv").read_bytes()
    assert (tmp_path / "report_by_seed.csv").read_bytes() == (work / "report_by_seed.csv").read_bytes()


def test_singleton_global_grid(tmp_path):
    cfg = parse_config(TINY.replace("global_alphas = 0.0, 0.5, 1.0", "global_alphas = 0.0"))
    result = run_seed(cfg, 3, tmp_path)
    bob_rows = [r for r in result.report.rows if r[0].startswith("bob-global-")]
    assert [(m, s) for m, s, _, _ in bob_rows] == [("bob-global-0.00", s) for s in ("overall", "High", "Middle", "Low")]
    assert result.global_policy.global_alpha == 0.0


def test_stage_errors_are_tagged(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(pipeline, "train_dmp_model", broken)
    with pytest.raises(StageError, match=r"^\[train-dmp\] boom$") as err:
        run_seed(parse_config(TINY), 3, tmp_path)
    assert err.value.stage == "train-dmp"
