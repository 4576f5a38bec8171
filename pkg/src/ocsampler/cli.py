"""Command-line entry point: ``ocsampler <command> [--config PATH] [--out DIR] ...``.

Commands run the two-stage protocol one artifact at a time; each artifact in
``--out`` records the hash of the config sections it was built from, and
downstream commands refuse artifacts built from a different config unless
``--allow-mismatch`` is given.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checks
from .budget import compute_labels, dumps_budget, labels_csv, load_budget, train_budget
from .classifier import dumps_classifier, load_classifier, train_classifier
from .core import ConfigError, OCSError, atomic_write_text, dumps_dataset, generate_dataset, read_dataset
from .evalbench import Models, evaluate, selections_text, sweep_budget, sweep_csv
from .policy import dumps_policy, load_policy
from .reinforce import stage2_train
from .config import RunConfig

log = logging.getLogger("ocsampler")

DATASET_FILE = "dataset.tsv"
CLASSIFIER_FILE = "classifier.ckpt"
POLICY_FILE = "policy.ckpt"
BUDGET_FILE = "budget.ckpt"


class CLIError(OCSError):
    def __init__(self, code: str, field: str, message: str):
        self.code = code
        self.field = field
        super().__init__(message)


def _stamp(cfg: RunConfig, stage: str) -> str:
    return f"# config_hash={cfg.stage_hash(stage)} seed={cfg.seed}\n"


def _meta(cfg: RunConfig, stage: str, **extra) -> dict:
    return {"config_hash": cfg.stage_hash(stage), "seed": cfg.seed, **extra}


class Run:
    def __init__(self, cfg: RunConfig, out: Path, allow_mismatch: bool):
        self.cfg = cfg
        self.out = out
        self.allow_mismatch = allow_mismatch

    def _check_hash(self, meta: dict, stage: str, what: str) -> None:
        want = self.cfg.stage_hash(stage)
        got = meta.get("config_hash")
        if got != want and not self.allow_mismatch:
            raise CLIError("E_HASH_MISMATCH", what, f"artifact hash {got} != config hash {want}")

    def dataset(self):
        path = self.out / DATASET_FILE
        if not path.is_file():
            raise CLIError("E_MISSING_INPUT", "dataset", f"{path} not found; run gen-data first")
        df = read_dataset(path)
        self._check_hash(df.meta, "dataset", "dataset")
        n = self.cfg.n_train
        return df.videos[:n], df.videos[n:]

    def classifier(self):
        path = self.out / CLASSIFIER_FILE
        if not path.is_file():
            raise CLIError("E_MISSING_MODEL", "classifier", f"{path} not found; run train-stage1 first")
        model, meta = load_classifier(path)
        self._check_hash(meta, "classifier", "classifier")
        return model

    def policy(self, strategy: str = "learned"):
        path = self.out / POLICY_FILE
        if not path.is_file():
            raise CLIError("E_MISSING_MODEL", "policy", f"strategy {strategy} needs {path}; run train-policy first")
        params, meta = load_policy(path)
        self._check_hash(meta, "policy", "policy")
        return params

    def budget(self, strategy: str = "learned_adaptive"):
        path = self.out / BUDGET_FILE
        if not path.is_file():
            raise CLIError("E_MISSING_MODEL", "budget", f"strategy {strategy} needs {path}; run train-budget first")
        head, meta = load_budget(path)
        self._check_hash(meta, "budget", "budget")
        return head

    def write(self, files: dict[str, str]) -> None:
        # Everything is rendered before the first write so a failure leaves nothing behind.
        for name, text in files.items():
            atomic_write_text(self.out / name, text)
            log.info("wrote %s", self.out / name)


def cmd_gen_data(run: Run) -> int:
    cfg = run.cfg
    spec = cfg.dataset_spec()
    videos = generate_dataset(spec)
    run.write({DATASET_FILE: dumps_dataset(videos, spec, meta=_meta(cfg, "dataset"))})
    return 0


def cmd_train_stage1(run: Run) -> int:
    cfg = run.cfg
    train, _ = run.dataset()
    files = {}
    if cfg.classifier_kind() == "linear":
        res = train_classifier(train, cfg.extractor(), cfg.stage1(), C=cfg.dataset_spec().C)
        model = res.model
        files["stage1_log.csv"] = _stamp(cfg, "classifier") + "epoch,loss\n" + "".join(
            f"{i},{loss:.17g}\n" for i, loss in enumerate(res.losses)
        )
    else:
        model = cfg.oracle()
    files[CLASSIFIER_FILE] = dumps_classifier(model, _meta(cfg, "classifier"))
    run.write(files)
    return 0


def cmd_train_policy(run: Run) -> int:
    cfg = run.cfg
    train, _ = run.dataset()
    classifier = run.classifier()
    budgets = None
    if cfg.tree["stage2"]["use_budgets"]:
        head_labels = compute_labels(train, classifier, cfg.budget(), cfg.extractor())
        budgets = {v.id: lab.k for v, lab in zip(train, head_labels)}
    res = stage2_train(train, classifier, config=cfg.stage2(), extractor=cfg.extractor(), budgets=budgets)
    log_text = _stamp(cfg, "policy") + res.log_csv()
    run.write({POLICY_FILE: dumps_policy(res.params, _meta(cfg, "policy")), "policy_log.csv": log_text})
    return 0


def cmd_train_budget(run: Run) -> int:
    cfg = run.cfg
    train, _ = run.dataset()
    classifier = run.classifier()
    res = train_budget(train, classifier, cfg.budget(), cfg.extractor())
    text = _stamp(cfg, "budget") + labels_csv([v.id for v in train], res.labels)
    run.write({BUDGET_FILE: dumps_budget(res.head, _meta(cfg, "budget")), "budget_labels.csv": text})
    return 0


def _models(run: Run, kinds) -> Models:
    classifier = run.classifier()
    models = Models(classifier=classifier, extractor=run.cfg.extractor())
    if "learned" in kinds or "learned_adaptive" in kinds:
        models.policy = run.policy("learned" if "learned" in kinds else "learned_adaptive")
    if "learned_adaptive" in kinds:
        models.budget = run.budget()
    return models


def cmd_eval(run: Run) -> int:
    cfg = run.cfg
    _, test = run.dataset()
    kinds = cfg.tree["eval"]["strategies"]
    models = _models(run, kinds)
    report = evaluate(test, cfg.strategies(), [int(n) for n in cfg.tree["eval"]["N_list"]],
                      models.classifier, models, cfg.cost(), cfg.stage_seed("eval"))
    files = {
        "report.csv": _stamp(cfg, "eval") + report.to_csv(),
        "report.json": report.to_json({"config_hash": cfg.stage_hash("eval"), "seed": cfg.seed}),
    }
    for (name, N), sels in sorted(report.selections.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0)):
        tag = "adaptive" if N is None else f"N{N}"
        files[f"selections/{name}_{tag}.txt"] = _stamp(cfg, "eval") + selections_text(sels)
    run.write(files)
    return 0


def cmd_sweep(run: Run) -> int:
    cfg = run.cfg
    train, test = run.dataset()
    models = Models(run.classifier(), run.policy("learned_adaptive"), None, cfg.extractor())
    cells = sweep_budget(train, test, models, cfg.tree["sweep"]["epsilons"], cfg.tree["sweep"]["alphas"],
                         cfg.budget(), cfg.cost())
    run.write({"sweep.csv": _stamp(cfg, "sweep") + sweep_csv(cells)})
    return 0


def cmd_check(run: Run) -> int:
    cfg = run.cfg
    opts = cfg.tree["check"]
    results = checks.run_all(quick=bool(opts["quick"]), names=opts["suites"])
    lines = [r.line() for r in results]
    for line in lines:
        print(line)
    run.write({"check.txt": _stamp(cfg, "check") + "\n".join(lines) + "\n"})
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"ERROR E_CHECK_FAILED check {','.join(failed)}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-stage1": cmd_train_stage1,
    "train-policy": cmd_train_policy,
    "train-budget": cmd_train_budget,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--out", default="runs/default", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, help="global seed, overrides the config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config leaf, e.g. --set stage2.lr=0.05 (repeatable)")
    common.add_argument("--allow-mismatch", action="store_true",
                        help="accept upstream artifacts built from a different config")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ocsampler", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        cfg = RunConfig.load(args.config, args.overrides, args.seed)
        run = Run(cfg, Path(args.out), args.allow_mismatch)
        return COMMANDS[args.command](run)
    except OCSError as exc:
        field = getattr(exc, "field", "-")
        message = " ".join(getattr(exc, "message", str(exc)).split())
        print(f"ERROR {exc.code} {field} {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
