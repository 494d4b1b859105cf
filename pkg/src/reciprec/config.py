"""Experiment configuration: INI sections mapped onto the module configs.

Example::

    [synth]
    num_companies = 300
    train_fraction = 0.8

    [learner]
    epochs = 20

    [meta]
    num_trees = 300
    negatives_per_positive = 1

    [eval]
    k = 10
    folds = 5
    global_alphas = 0.0, 0.25, 0.5, 0.75, 1.0
    segment_alphas = 0.0, 0.25, 0.5, 0.75
    seeds = 0, 1, 2, 3, 4

    [paths]
    workdir = runs/default

Per-module ``rng_seed`` options are ignored; every seed in ``eval.seeds``
drives all stages of its run.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .evaluation import GLOBAL_GRID, SEGMENT_GRID
from .learners import TrainConfig
from .meta import GbdtConfig
from .synth import SynthConfig

SECTIONS = ("synth", "learner", "meta", "eval", "paths")


def _coerce(cls, values: dict, section: str):
    kinds = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in values.items():
        if key not in kinds:
            raise ValueError(f"[{section}] unknown option {key!r}")
        kind = kinds[key]
        if kind in ("int", int):
            out[key] = int(raw)
        elif kind in ("float", float):
            out[key] = float(raw)
        else:
            out[key] = str(raw)
    return cls(**out)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    folds: int = 5
    global_alphas: tuple[float, ...] = GLOBAL_GRID
    segment_alphas: tuple[float, ...] = SEGMENT_GRID
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.k < 1 or self.folds < 1:
            raise ValueError("[eval] k and folds must be positive")
        if not self.seeds:
            raise ValueError("[eval] seeds must be non-empty")
        if not self.global_alphas or not self.segment_alphas:
            raise ValueError("[eval] alpha grids must be non-empty")
        for a in self.global_alphas + self.segment_alphas:
            if not 0.0 <= a <= 1.0:
                raise ValueError("[eval] alpha values must lie in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train_fraction: float = 0.8
    learner: TrainConfig = field(default_factory=TrainConfig)
    meta: GbdtConfig = field(default_factory=GbdtConfig)
    negatives_per_positive: int = 1
    eval: EvalConfig = field(default_factory=EvalConfig)
    workdir: str = "runs/default"

    def section_hash(self, *sections: str) -> str:
        """Content key over the named sections (seeds excluded)."""
        payload = {}
        for name in sections:
            if name == "synth":
                payload[name] = {**asdict(replace(self.synth, rng_seed=0)), "train_fraction": self.train_fraction}
            elif name == "learner":
                payload[name] = asdict(replace(self.learner, rng_seed=0))
            elif name == "meta":
                payload[name] = {
                    **asdict(replace(self.meta, rng_seed=0)),
                    "negatives_per_positive": self.negatives_per_positive,
                }
            elif name == "folds":
                payload[name] = self.eval.folds
            else:
                raise ValueError(f"no hash for section {name!r}")
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def for_seed(self, seed: int) -> "ExperimentConfig":
        return replace(
            self,
            synth=replace(self.synth, rng_seed=seed),
            learner=replace(self.learner, rng_seed=seed),
            meta=replace(self.meta, rng_seed=seed),
        )

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["synth"] = {
            **{k: str(v) for k, v in asdict(self.synth).items() if k != "rng_seed"},
            "train_fraction": str(self.train_fraction),
        }
        cp["learner"] = {k: str(v) for k, v in asdict(self.learner).items() if k != "rng_seed"}
        cp["meta"] = {
            **{k: str(v) for k, v in asdict(self.meta).items() if k != "rng_seed"},
            "negatives_per_positive": str(self.negatives_per_positive),
        }
        cp["eval"] = {
            "k": str(self.eval.k),
            "folds": str(self.eval.folds),
            "global_alphas": ", ".join(str(a) for a in self.eval.global_alphas),
            "segment_alphas": ", ".join(str(a) for a in self.eval.segment_alphas),
            "seeds": ", ".join(str(s) for s in self.eval.seeds),
        }
        cp["paths"] = {"workdir": self.workdir}
        lines = []
        for name in cp.sections():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in cp[name].items())
            lines.append("")
        return "\n".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ValueError(f"unknown config section(s): {', '.join(sorted(unknown))}")

    def section(name: str) -> dict:
        return {k: v for k, v in cp[name].items() if k != "rng_seed"} if cp.has_section(name) else {}

    synth = section("synth")
    train_fraction = float(synth.pop("train_fraction", 0.8))
    meta = section("meta")
    negs = int(meta.pop("negatives_per_positive", 1))
    ev = section("eval")
    eval_cfg = EvalConfig(
        k=int(ev.pop("k", 10)),
        folds=int(ev.pop("folds", 5)),
        global_alphas=_floats(ev.pop("global_alphas", "0.0 0.25 0.5 0.75 1.0")),
        segment_alphas=_floats(ev.pop("segment_alphas", "0.0 0.25 0.5 0.75")),
        seeds=_ints(ev.pop("seeds", "0")),
    )
    if ev:
        raise ValueError(f"[eval] unknown option(s): {', '.join(sorted(ev))}")
    paths = section("paths")
    return ExperimentConfig(
        synth=_coerce(SynthConfig, synth, "synth"),
        train_fraction=train_fraction,
        learner=_coerce(TrainConfig, section("learner"), "learner"),
        meta=_coerce(GbdtConfig, meta, "meta"),
        negatives_per_positive=negs,
        eval=eval_cfg,
        workdir=paths.get("workdir", "runs/default"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
