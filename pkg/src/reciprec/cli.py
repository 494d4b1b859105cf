"""Command-line entry point.

``run`` executes the whole multi-seed experiment. The remaining subcommands
expose one stage each for a single seed, reading and writing files in a flat
layout under ``--workdir``::

    synth              events.csv, truth.csv
    split              train.csv, test.csv, segments.csv, split.json
    train-directional  models/scout.mf, models/reply.mf
    train-dmp          models/dmp.mf
    build-pseudo       pseudo/<policy>.csv
    train-meta         models/bob-<policy>.gbdt
    tune-alpha         tuning/trace_<mode>.csv, tuning/alpha_policy_<mode>.json
                       (<mode> is global or per-segment)
    evaluate           eval/<method>.csv
    report             report.csv, figures/*.png
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .aggregate import PtaScorer
from .bob import BobSettings
from .config import ExperimentConfig, load_config
from .domain import (
    assign_segments,
    quantile_boundary,
    read_events,
    read_segments,
    split_by_time,
    write_events,
    write_segments,
)
from .evaluation import (
    EvaluationReport,
    build_candidates,
    evaluate_method,
    tune_alpha,
)
from .learners import load_mf, train_dmp_model, train_reply_model, train_scout_model
from .meta import BobScorer, FeatureContext, load_gbdt, train_meta
from .pipeline import BASELINES, FileStore, StageError, _atomic_write, alpha_tag, run_pipeline
from .pseudo import AlphaMode, AlphaPolicy, PseudoLabelSet, build_pseudo_labels
from .synth import generate_ground_truth, simulate_log, write_truth

_log = logging.getLogger("reciprec")

_BOB_GLOBAL = re.compile(r"^bob-global-(\d+(?:\.\d+)?)$")


class MissingArtifact(RuntimeError):
    pass


class TruthTable:
    """Oracle scorer backed by ``truth.csv``: m = p_scout * p_reply."""

    def __init__(self, path: Path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        self.keys = {(int(c), int(s)): i for i, (c, s) in enumerate(data[:, :2])}
        self.match = data[:, 2] * data[:, 3]

    def score_pairs(self, companies, seekers) -> np.ndarray:
        try:
            idx = [self.keys[(int(c), int(s))] for c, s in zip(companies, seekers)]
        except KeyError as exc:
            raise MissingArtifact(f"truth.csv has no entry for pair {exc.args[0]}") from None
        return self.match[idx]


def policy_tag(policy: AlphaPolicy) -> str:
    if policy.mode is AlphaMode.GLOBAL:
        return f"global-{alpha_tag(policy.global_alpha)}"
    return "per-segment-" + "-".join(alpha_tag(a) for a in policy.segment_vector())


class Workspace:
    def __init__(self, root: Path, cfg: ExperimentConfig, seed: int, threads: int):
        self.root = root
        self.cfg = cfg.for_seed(seed)
        self.seed = seed
        self.threads = threads
        self.settings = BobSettings(self.cfg.learner, self.cfg.meta, self.cfg.negatives_per_positive)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def need(self, rel: str, producer: str) -> Path:
        p = self.path(rel)
        if not p.exists():
            raise MissingArtifact(f"missing {p}; run `{producer}` first")
        return p

    def write(self, rel: str, write) -> Path:
        p = self.path(rel)
        _atomic_write(p, write)
        _log.info("wrote %s", p)
        return p

    # loaders
    def dataset(self, name: str):
        nc, ns = self.cfg.synth.num_companies, self.cfg.synth.num_seekers
        producer = "synth" if name == "events" else "split"
        return read_events(self.need(f"{name}.csv", producer), nc, ns)

    def segments(self):
        return read_segments(self.need("segments.csv", "split"))

    def mf(self, name: str):
        producer = "train-dmp" if name == "dmp" else "train-directional"
        return load_mf(self.need(f"models/{name}.mf", producer))

    def context(self) -> FeatureContext:
        return FeatureContext(self.dataset("train"), self.mf("scout"), self.mf("reply"), self.segments())

    def tuned_policy(self, mode: AlphaMode) -> AlphaPolicy:
        path = self.need(f"tuning/alpha_policy_{mode.value}.json", f"tune-alpha --mode {mode.value}")
        return AlphaPolicy.from_json(path.read_text(encoding="utf-8"))


def _policy_from_args(ws: Workspace, args) -> AlphaPolicy:
    if args.policy:
        return AlphaPolicy.from_json(Path(args.policy).read_text(encoding="utf-8"))
    if args.tuned:
        return ws.tuned_policy(AlphaMode(args.tuned))
    if args.alpha is not None:
        return AlphaPolicy.global_(args.alpha)
    raise ValueError("one of --alpha, --policy or --tuned is required")


# ---------------------------------------------------------------- stages


def cmd_synth(ws: Workspace, args) -> None:
    truth = generate_ground_truth(ws.cfg.synth)
    dataset = simulate_log(truth, ws.cfg.synth)
    ws.write("events.csv", lambda p: write_events(dataset, p))
    if args.full_truth:
        pairs = None
    else:
        # only pairs that will be test candidates under the configured split
        test = split_by_time(dataset, quantile_boundary(dataset, ws.cfg.train_fraction)).test
        pairs = np.column_stack([test.companies, test.seekers])
    ws.write("truth.csv", lambda p: write_truth(truth, p, pairs))
    print(f"{len(dataset)} events, {int(dataset.matches.sum())} matches")


def cmd_split(ws: Workspace, args) -> None:
    dataset = ws.dataset("events")
    fraction = ws.cfg.train_fraction if args.train_fraction is None else args.train_fraction
    split = split_by_time(dataset, quantile_boundary(dataset, fraction))
    segments = assign_segments(split.train)
    ws.write("train.csv", lambda p: write_events(split.train, p))
    ws.write("test.csv", lambda p: write_events(split.test, p))
    ws.write("segments.csv", lambda p: write_segments(segments, p))
    info = {
        "boundary_timestamp": split.boundary_timestamp,
        "num_train": len(split.train),
        "num_test": len(split.test),
    }
    ws.write("split.json", lambda p: p.write_text(json.dumps(info, sort_keys=True) + "\n"))
    print(f"train {len(split.train)} events, test {len(split.test)} events")


def cmd_train_directional(ws: Workspace, args) -> None:
    train = ws.dataset("train")
    ws.write("models/scout.mf", train_scout_model(train, ws.cfg.learner).save)
    ws.write("models/reply.mf", train_reply_model(train, ws.cfg.learner).save)


def cmd_train_dmp(ws: Workspace, args) -> None:
    ws.write("models/dmp.mf", train_dmp_model(ws.dataset("train"), ws.cfg.learner).save)


def cmd_build_pseudo(ws: Workspace, args) -> None:
    policy = _policy_from_args(ws, args)
    labels = build_pseudo_labels(
        ws.dataset("train"), ws.mf("scout"), ws.mf("reply"), policy, ws.segments(),
        ws.cfg.negatives_per_positive, ws.cfg.learner.rng_seed,
    )
    ws.write(f"pseudo/{policy_tag(policy)}.csv", labels.write_csv)
    print(f"{len(labels)} pseudo-labelled pairs ({policy.label()})")


def cmd_train_meta(ws: Workspace, args) -> None:
    policy = _policy_from_args(ws, args)
    tag = policy_tag(policy)
    labels = PseudoLabelSet.read_csv(ws.need(f"pseudo/{tag}.csv", "build-pseudo"))
    model = train_meta(labels, ws.context(), ws.cfg.meta)
    ws.write(f"models/bob-{tag}.gbdt", model.save)


def cmd_tune_alpha(ws: Workspace, args) -> None:
    mode = AlphaMode(args.mode)
    grid = ws.cfg.eval.global_alphas if mode is AlphaMode.GLOBAL else ws.cfg.eval.segment_alphas
    policy, trace = tune_alpha(
        ws.dataset("train"), ws.cfg.eval.folds, mode, grid, ws.settings,
        segments=ws.segments(), k=ws.cfg.eval.k, threads=ws.threads,
        store_for=lambda i: FileStore(ws.path(f"tuning/cv/fold-{i}")),
    )
    if trace.folds:
        ws.write(f"tuning/trace_{mode.value}.csv", lambda p: trace.write_csv(p, mode, sorted(set(grid))))
    ws.write(f"tuning/alpha_policy_{mode.value}.json", lambda p: p.write_text(policy.to_json() + "\n"))
    print(policy.label())


def _scorer(ws: Workspace, method: str):
    if method == "oracle":
        return TruthTable(ws.need("truth.csv", "synth"))
    if method in BASELINES:
        return PtaScorer(ws.mf("scout"), ws.mf("reply"), method)
    if method == "dmp":
        return ws.mf("dmp")
    hit = _BOB_GLOBAL.match(method)
    if hit:
        policy = AlphaPolicy.global_(float(hit.group(1)))
    elif method == "bob-tuned-global":
        policy = ws.tuned_policy(AlphaMode.GLOBAL)
    elif method == "bob-personalized":
        policy = ws.tuned_policy(AlphaMode.PER_SEGMENT)
    else:
        raise ValueError(f"unknown method {method!r}")
    tag = policy_tag(policy)
    model = load_gbdt(ws.need(f"models/bob-{tag}.gbdt", f"train-meta ({tag})"))
    return BobScorer(model, ws.context())


def cmd_evaluate(ws: Workspace, args) -> None:
    scorers = {m: _scorer(ws, m) for m in args.method}
    candidates = build_candidates(ws.dataset("test"))
    segments = ws.segments()
    for method, scorer in scorers.items():
        result = evaluate_method(method, scorer, candidates, segments, ws.cfg.eval.k, ws.threads)
        report = EvaluationReport.from_results([result], ws.cfg.eval.k)
        ws.write(f"eval/{method}.csv", report.write_csv)
        print(f"{method}: NDCG@{ws.cfg.eval.k} = {result.mean()[0]:.4f}")


def method_order(method: str) -> tuple:
    fixed = ["oracle", *BASELINES, "dmp"]
    if method in fixed:
        return (fixed.index(method), 0.0, method)
    hit = _BOB_GLOBAL.match(method)
    if hit:
        return (len(fixed), float(hit.group(1)), method)
    return (len(fixed) + 1, 0.0, method)


def cmd_report(ws: Workspace, args) -> None:
    fragments = sorted(ws.path("eval").glob("*.csv")) if ws.path("eval").is_dir() else []
    if not fragments:
        raise MissingArtifact(f"no fragments in {ws.path('eval')}; run `evaluate` first")
    parts = {f.stem: EvaluationReport.read_csv(f, ws.cfg.eval.k) for f in fragments}
    rows = [row for m in sorted(parts, key=method_order) for row in parts[m].rows]
    report = EvaluationReport(rows, ws.cfg.eval.k)
    ws.write("report.csv", report.write_csv)
    print(report.table())
    if not args.no_figures:
        from .plotting import render_figures

        for p in render_figures(report, ws.path("figures")):
            _log.info("wrote %s", p)


def cmd_run(cfg: ExperimentConfig, workdir: Path, args) -> None:
    report, per_seed = run_pipeline(cfg, workdir, args.threads, figures=not args.no_figures)
    print(report.table())
    for r in per_seed:
        print(f"seed {r.seed}: {r.global_policy.label()}; {r.segment_policy.label()}")


STAGES = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train-directional": cmd_train_directional,
    "train-dmp": cmd_train_dmp,
    "build-pseudo": cmd_build_pseudo,
    "train-meta": cmd_train_meta,
    "tune-alpha": cmd_tune_alpha,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config (defaults when omitted)")
    common.add_argument("--workdir", help="output directory (default: [paths] workdir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (1 = strict determinism)")
    common.add_argument("--seed-override", type=int, help="run this single seed instead of [eval] seeds")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="reciprec", description="Reciprocal recommendation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    add("run", "full multi-seed experiment").add_argument("--no-figures", action="store_true")
    add("synth", "simulate an event log").add_argument(
        "--full-truth", action="store_true", help="write ground truth for every pair"
    )
    add("split", "time split and activity segments").add_argument("--train-fraction", type=float)
    add("train-directional", "fit scout and reply models")
    add("train-dmp", "fit a direct match model")
    for name, help_ in (("build-pseudo", "write pseudo-labels"), ("train-meta", "fit the meta-model")):
        p = add(name, help_)
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--alpha", type=float, help="global alpha")
        g.add_argument("--policy", help="alpha policy JSON file")
        g.add_argument("--tuned", choices=[m.value for m in AlphaMode], help="use the tuned policy")
    add("tune-alpha", "cross-validated alpha selection").add_argument(
        "--mode", choices=[m.value for m in AlphaMode], default=AlphaMode.GLOBAL.value
    )
    add("evaluate", "NDCG@k of one or more methods on the test window").add_argument(
        "--method", action="append", required=True,
        help="oracle, an aggregator, dmp, bob-global-<alpha>, bob-tuned-global or bob-personalized",
    )
    add("report", "merge evaluation fragments").add_argument("--no-figures", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(message)s",
        stream=sys.stderr,
    )
    stage = args.command
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.threads < 1:
            raise ValueError("--threads must be at least 1")
        workdir = Path(args.workdir or cfg.workdir)
        if stage == "run":
            if args.seed_override is not None:
                cfg = replace(cfg, eval=replace(cfg.eval, seeds=(args.seed_override,)))
            cmd_run(cfg, workdir, args)
        else:
            seed = cfg.eval.seeds[0] if args.seed_override is None else args.seed_override
            STAGES[stage](Workspace(workdir, cfg, seed, args.threads), args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report with the stage tag
        print(f"error: [{stage}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
