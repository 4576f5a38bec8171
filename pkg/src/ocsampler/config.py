"""Run configuration: a YAML tree with defaults, dotted overrides and per-stage hashes.

Example (every key optional; missing keys take the defaults below)::

    seed: 0
    dataset: {num_videos: 400, n_train: 200, T: 10, C: 4, D: 8,
              salient_count_range: [2, 2], signal_strength: 5.0, noise_sigma: 0.1}
    extractor: {kind: identity, smooth_radius: 0}
    classifier: {kind: coverage_oracle, c_min: 0.1, gamma: 1.0}
    stage2: {N: 2, lr: 0.1, epochs: 100, batch: 20}
    budget: {epsilon: 0.5, alpha: 2.0}
    cost: {c_skim: 1.0, c_classifier: 10.0}
    eval: {strategies: [learned, uniform, random], N_list: [2, 3, 4, 6, 8]}
    sweep: {epsilons: [0.3, 0.5, 0.9], alphas: [1.5, 2.0, 4.0]}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .budget import BudgetConfig
from .classifier import CoverageOracle, Stage1Hyper
from .core import ConfigError, CostModel, DatasetSpec, derive_seed
from .evalbench import STRATEGY_KINDS, Strategy
from .reinforce import Stage2Config
from .skim import FeatureExtractorSpec

DEFAULTS: dict = {
    "seed": 0,
    "dataset": {
        "num_videos": 400,
        "n_train": 200,
        "T": 10,
        "C": 4,
        "D": 8,
        "salient_count_range": [2, 2],
        "signal_strength": 5.0,
        "noise_sigma": 0.1,
        "master_seed": None,
    },
    "extractor": {"kind": "identity", "smooth_radius": 0},
    "classifier": {
        "kind": "coverage_oracle",
        "c_min": 0.1,
        "gamma": 1.0,
        "lr": 0.1,
        "epochs": 30,
        "batch": 32,
        "N_train": 2,
    },
    "stage2": {
        "N": 2,
        "lr": 0.1,
        "epochs": 100,
        "batch": 20,
        "K": 16,
        "prob_mode": "exact",
        "M": 100,
        "reward_kind": "clip",
        "use_budgets": False,
    },
    "budget": {
        "epsilon": 0.5,
        "alpha": 2.0,
        "samples_per_m": 64,
        "exact_limit": 200,
        "lr": 0.1,
        "epochs": 200,
        "batch": 32,
        "hidden": 64,
    },
    "cost": {"c_skim": 1.0, "c_classifier": 10.0},
    "eval": {
        "strategies": ["learned", "uniform", "random", "frameexit_order", "fixed_length"],
        "N_list": [2, 3, 4, 6, 8],
    },
    "sweep": {"epsilons": [0.3, 0.5, 0.9], "alphas": [1.5, 2.0, 4.0]},
    "check": {"quick": True, "suites": None},
}

# Sections each artifact depends on; an artifact's hash covers exactly these.
STAGE_SECTIONS = {
    "dataset": ("seed", "dataset"),
    "classifier": ("seed", "dataset", "extractor", "classifier"),
    "budget": ("seed", "dataset", "extractor", "classifier", "budget"),
    "policy": ("seed", "dataset", "extractor", "classifier", "stage2", "budget"),
    "eval": ("seed", "dataset", "extractor", "classifier", "stage2", "budget", "cost", "eval"),
    "sweep": ("seed", "dataset", "extractor", "classifier", "stage2", "budget", "cost", "sweep"),
    "check": ("seed", "check"),
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        where = f"{path}.{k}" if path else k
        if k not in out:
            raise ConfigError(where, "unknown key")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, where)
        else:
            out[k] = v
    return out


def apply_override(tree: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(assignment, "--set expects key=value")
    parts = key.strip().split(".")
    node = tree
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(key, "unknown key")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(key, "unknown key")
    node[parts[-1]] = yaml.safe_load(raw)


@dataclass
class RunConfig:
    tree: dict

    @classmethod
    def load(cls, path=None, overrides=(), seed: int | None = None) -> "RunConfig":
        user = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError("config", f"file not found: {path}")
            user = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
            if not isinstance(user, dict):
                raise ConfigError("config", "top level must be a mapping")
        tree = _merge(DEFAULTS, user)
        for o in overrides:
            apply_override(tree, o)
        if seed is not None:
            tree["seed"] = seed
        cfg = cls(tree)
        cfg.validate()
        return cfg

    # -- typed views -------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)

    def dataset_spec(self) -> DatasetSpec:
        d = dict(self.tree["dataset"])
        d.pop("n_train")
        if d["master_seed"] is None:
            d["master_seed"] = self.seed
        return DatasetSpec(**d)

    @property
    def n_train(self) -> int:
        return int(self.tree["dataset"]["n_train"])

    def extractor(self) -> FeatureExtractorSpec:
        return FeatureExtractorSpec(**self.tree["extractor"])

    def classifier_kind(self) -> str:
        return self.tree["classifier"]["kind"]

    def oracle(self, gamma: float | None = None) -> CoverageOracle:
        c = self.tree["classifier"]
        return CoverageOracle(self.dataset_spec().C, c["c_min"], c["gamma"] if gamma is None else gamma)

    def stage1(self) -> Stage1Hyper:
        c = self.tree["classifier"]
        return Stage1Hyper(c["lr"], c["epochs"], c["batch"], c["N_train"], self.stage_seed("stage1"))

    def stage2(self) -> Stage2Config:
        s = dict(self.tree["stage2"])
        s.pop("use_budgets")
        return Stage2Config(**s, seed=self.stage_seed("stage2"))

    def budget(self) -> BudgetConfig:
        return BudgetConfig(**self.tree["budget"], seed=self.stage_seed("budget"))

    def cost(self) -> CostModel:
        return CostModel(**self.tree["cost"])

    def strategies(self) -> list[Strategy]:
        return [Strategy(kind, seed=self.stage_seed("eval")) for kind in self.tree["eval"]["strategies"]]

    # -- validation and hashing ---------------------------------------------
    def validate(self) -> None:
        t = self.tree
        if not isinstance(t["seed"], int) or not 0 <= t["seed"] < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        spec = self.dataset_spec()
        spec.validate()
        if not 1 <= self.n_train <= spec.num_videos:
            raise ConfigError("dataset.n_train", "must lie in [1, num_videos]")
        self.extractor().validate(spec.T)
        kind = self.classifier_kind()
        if kind not in ("coverage_oracle", "linear"):
            raise ConfigError("classifier.kind", "must be coverage_oracle or linear")
        self.oracle()
        s1 = self.stage1()
        if not 1 <= s1.N_train <= spec.T:
            raise ConfigError("classifier.N_train", "must lie in [1, T]")
        self.stage2().validate(spec.T)
        self.budget().validate()
        self.cost().validate()
        for kind in t["eval"]["strategies"]:
            if kind not in STRATEGY_KINDS:
                raise ConfigError("eval.strategies", f"unknown strategy {kind!r}")
        for n in t["eval"]["N_list"]:
            if not 1 <= int(n) <= spec.T:
                raise ConfigError("eval.N_list", f"N={n} outside [1, T]")
        for e in t["sweep"]["epsilons"]:
            if not 0 < e <= 1:
                raise ConfigError("sweep.epsilons", f"epsilon {e} outside (0, 1]")
        for a in t["sweep"]["alphas"]:
            if not a > 1:
                raise ConfigError("sweep.alphas", f"alpha {a} must be > 1")

    def stage_hash(self, stage: str) -> str:
        body = {k: self.tree[k] for k in STAGE_SECTIONS[stage]}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
