"""End-to-end experiment: synthetic market -> baselines, DMP and BoB -> report.

Stage outputs live under ``<workdir>/seed-<s>/`` in directories named by a
hash of the config sections they depend on, so editing only ``[eval]``
reuses every trained model::

    data-<synth>/                 events, train/test split, segments, truth
    models-<synth+learner>/       scout.mf, reply.mf, dmp.mf
    meta-<synth+learner+meta>/    bob-*.gbdt, pseudo-*.csv
    cv-<...+folds>/fold-<i>/      fold models used for alpha tuning
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .aggregate import Aggregator, PtaScorer
from .bob import BobSettings, fit_bob, fit_directional
from .config import ExperimentConfig
from .domain import (
    Dataset,
    SegmentAssignment,
    TimeSplit,
    assign_segments,
    quantile_boundary,
    read_events,
    read_segments,
    split_by_time,
    write_events,
    write_segments,
)
from .evaluation import (
    OVERALL,
    REPORT_HEADER,
    EvaluationReport,
    MethodResult,
    build_candidates,
    cross_validate,
    evaluate_method,
    select_alpha,
)
from .learners import load_mf, train_dmp_model
from .meta import load_gbdt
from .pseudo import AlphaMode, AlphaPolicy
from .synth import MarketGroundTruth, generate_ground_truth, simulate_log, write_truth

_log = logging.getLogger(__name__)

BASELINES = tuple(a.value for a in Aggregator)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


def _atomic_write(path: Path, write: Callable[[Path], None]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    write(tmp)
    os.replace(tmp, path)


class FileStore:
    """Model cache: load ``<dir>/<name>.<kind>`` if present, else fit and save it."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def __call__(self, name: str, kind: str, fit: Callable):
        path = self.directory / f"{name}.{kind}"
        load = load_mf if kind == "mf" else load_gbdt
        if path.exists():
            return load(path)
        model = fit()
        _atomic_write(path, model.save)
        return model


def alpha_tag(alpha: float) -> str:
    return f"{alpha:.2f}"


def bob_global_name(alpha: float) -> str:
    return f"bob-global-{alpha_tag(alpha)}"


@dataclass
class SeedResult:
    seed: int
    report: EvaluationReport
    results: dict[str, MethodResult]
    global_policy: AlphaPolicy
    segment_policy: AlphaPolicy
    directory: Path


def prepare_data(cfg: ExperimentConfig, seed_dir: Path) -> tuple[MarketGroundTruth, Dataset, TimeSplit, SegmentAssignment]:
    truth = generate_ground_truth(cfg.synth)
    data_dir = seed_dir / f"data-{cfg.section_hash('synth')}"
    events_path = data_dir / "events.csv"
    if events_path.exists():
        dataset = read_events(events_path, cfg.synth.num_companies, cfg.synth.num_seekers)
    else:
        dataset = simulate_log(truth, cfg.synth)
        _atomic_write(events_path, lambda p: write_events(dataset, p))
    split = split_by_time(dataset, quantile_boundary(dataset, cfg.train_fraction))
    seg_path = data_dir / "segments.csv"
    if seg_path.exists():
        segments = read_segments(seg_path)
    else:
        segments = assign_segments(split.train)
        _atomic_write(seg_path, lambda p: write_segments(segments, p))
        _atomic_write(data_dir / "train.csv", lambda p: write_events(split.train, p))
        _atomic_write(data_dir / "test.csv", lambda p: write_events(split.test, p))
        test_pairs = np.column_stack([split.test.companies, split.test.seekers])
        _atomic_write(data_dir / "truth.csv", lambda p: write_truth(truth, p, test_pairs))
        _atomic_write(
            data_dir / "split.json",
            lambda p: p.write_text(
                json.dumps(
                    {
                        "boundary_timestamp": split.boundary_timestamp,
                        "num_train": len(split.train),
                        "num_test": len(split.test),
                        "num_companies": dataset.num_companies,
                        "num_seekers": dataset.num_seekers,
                    },
                    sort_keys=True,
                )
                + "\n"
            ),
        )
    return truth, dataset, split, segments


def run_seed(cfg: ExperimentConfig, seed: int, workdir: Path, threads: int = 1) -> SeedResult:
    cfg = cfg.for_seed(seed)
    seed_dir = Path(workdir) / f"seed-{seed}"
    k = cfg.eval.k
    settings = BobSettings(cfg.learner, cfg.meta, cfg.negatives_per_positive)

    stage = "synth"
    try:
        truth, _, split, segments = prepare_data(cfg, seed_dir)

        stage = "train-directional"
        models = FileStore(seed_dir / f"models-{cfg.section_hash('synth', 'learner')}")
        scout, reply = fit_directional(split.train, settings, models)
        stage = "train-dmp"
        dmp = models("dmp", "mf", lambda: train_dmp_model(split.train, cfg.learner))

        stage = "evaluate"
        candidates = build_candidates(split.test)
        results: dict[str, MethodResult] = {}

        def evaluate(name, scorer):
            results[name] = evaluate_method(name, scorer, candidates, segments, k, threads)

        evaluate("oracle", truth)
        for kind in Aggregator:
            evaluate(kind.value, PtaScorer(scout, reply, kind))
        evaluate("dmp", dmp)

        stage = "train-meta"
        meta_key = cfg.section_hash("synth", "learner", "meta")
        metas = FileStore(seed_dir / f"meta-{meta_key}")
        for a in cfg.eval.global_alphas:
            name = bob_global_name(a)
            pseudo_path = metas.directory / f"pseudo-global-{alpha_tag(a)}.csv"
            scorer = fit_bob(
                split.train, scout, reply, segments, AlphaPolicy.global_(a), settings,
                name=name, store=metas,
                on_labels=lambda labels, p=pseudo_path: _atomic_write(p, labels.write_csv),
            )
            evaluate(name, scorer)

        stage = "tune-alpha"
        grid = sorted(set(cfg.eval.global_alphas) | set(cfg.eval.segment_alphas))
        cv_dir = seed_dir / f"cv-{cfg.section_hash('synth', 'learner', 'meta', 'folds')}"
        trace = cross_validate(
            split.train, segments, grid, settings, cfg.eval.folds, k, threads,
            store_for=lambda i: FileStore(cv_dir / f"fold-{i}"),
        )
        global_policy = select_alpha(trace, AlphaMode.GLOBAL, cfg.eval.global_alphas)
        segment_policy = select_alpha(trace, AlphaMode.PER_SEGMENT, cfg.eval.segment_alphas)
        results["bob-tuned-global"] = MethodResult(
            "bob-tuned-global",
            results[bob_global_name(global_policy.global_alpha)].per_company,
            results[bob_global_name(global_policy.global_alpha)].segments,
        )

        stage = "train-meta"
        tag = "-".join(alpha_tag(a) for a in segment_policy.segment_vector())
        scorer = fit_bob(
            split.train, scout, reply, segments, segment_policy, settings,
            name=f"bob-personalized-{tag}", store=metas,
            on_labels=lambda labels: _atomic_write(
                metas.directory / f"pseudo-personalized-{tag}.csv", labels.write_csv
            ),
        )
        stage = "evaluate"
        evaluate("bob-personalized", scorer)

        stage = "report"
        report = EvaluationReport.from_results(results.values(), k)
        _atomic_write(seed_dir / "report.csv", report.write_csv)
        _atomic_write(
            seed_dir / "tuning_trace_global.csv",
            lambda p: trace.write_csv(p, AlphaMode.GLOBAL, sorted(set(cfg.eval.global_alphas))),
        )
        _atomic_write(
            seed_dir / "tuning_trace_per_segment.csv",
            lambda p: trace.write_csv(p, AlphaMode.PER_SEGMENT, sorted(set(cfg.eval.segment_alphas))),
        )
        for tag, pol in (("global", global_policy), ("per_segment", segment_policy)):
            _atomic_write(seed_dir / f"alpha_policy_{tag}.json", lambda p, pol=pol: p.write_text(pol.to_json() + "\n"))
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - tag and re-raise with the failing stage
        raise StageError(stage, exc) from exc
    return SeedResult(seed, report, results, global_policy, segment_policy, seed_dir)


def median_report(reports: list[EvaluationReport]) -> EvaluationReport:
    base = reports[0]
    rows = []
    for m, s, _, _ in base.rows:
        vals = [r.value(m, s) for r in reports]
        counts = [next(n for mm, ss, _, n in r.rows if mm == m and ss == s) for r in reports]
        rows.append((m, s, float(np.median(vals)), int(round(float(np.median(counts))))))
    return EvaluationReport(rows, base.k)


def write_seed_table(results: list[SeedResult], path: Path) -> None:
    def write(p: Path):
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write("seed," + ",".join(REPORT_HEADER) + "\n")
            for r in results:
                for m, s, v, n in r.report.rows:
                    fh.write(f"{r.seed},{m},{s},{float(v)!r},{n}\n")

    _atomic_write(path, write)


def run_pipeline(
    cfg: ExperimentConfig, workdir: str | Path | None = None, threads: int = 1, figures: bool = True
) -> tuple[EvaluationReport, list[SeedResult]]:
    """Run every seed, then write the median report (and figures) to ``workdir``."""
    workdir = Path(workdir or cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    per_seed = []
    for seed in cfg.eval.seeds:
        _log.info("seed %d", seed)
        per_seed.append(run_seed(cfg, seed, workdir, threads))
    report = median_report([r.report for r in per_seed])
    _atomic_write(workdir / "report.csv", report.write_csv)
    write_seed_table(per_seed, workdir / "report_by_seed.csv")
    if figures:
        from .plotting import render_figures

        try:
            render_figures(report, workdir / "figures")
        except Exception as exc:  # noqa: BLE001
            raise StageError("report", exc) from exc
    return report, per_seed


def best_of(report: EvaluationReport, methods, segment: str = OVERALL) -> tuple[str, float]:
    scores = {m: report.value(m, segment) for m in methods}
    best = max(scores, key=lambda m: (scores[m], m))
    return best, scores[best]
