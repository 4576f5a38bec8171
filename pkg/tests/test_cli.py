import filecmp
import subprocess
import sys
from pathlib import Path

import pytest

from ocsampler import checks
from ocsampler.checks import CheckResult
from ocsampler.cli import main
from ocsampler.config import RunConfig
from ocsampler.core import ConfigError

SMALL = [
    "--set", "dataset.num_videos=40", "--set", "dataset.n_train=20",
    "--set", "stage2.epochs=3", "--set", "budget.epochs=5", "--set", "budget.hidden=8",
    "--set", "eval.strategies=[learned,learned_adaptive,uniform,random,frameexit_order,fixed_length]",
    "--set", "eval.N_list=[2,4]", "--set", "sweep.epsilons=[0.5]", "--set", "sweep.alphas=[2.0]",
]
PIPELINE = ["gen-data", "train-stage1", "train-policy", "train-budget", "eval", "sweep"]


def run(cmd, out, *extra):
    return main([cmd, "--out", str(out), *SMALL, *extra])


def _files(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_gen_data_is_byte_identical(tmp_path):
    assert run("gen-data", tmp_path / "a") == 0
    assert run("gen-data", tmp_path / "b") == 0
    assert (tmp_path / "a/dataset.tsv").read_bytes() == (tmp_path / "b/dataset.tsv").read_bytes()


def test_full_pipeline_reruns_identically(tmp_path):
    for d in ("a", "b"):
        for cmd in PIPELINE:
            assert run(cmd, tmp_path / d) == 0, cmd
    a, b = tmp_path / "a", tmp_path / "b"
    files = _files(a)
    assert files == _files(b)
    assert {"dataset.tsv", "classifier.ckpt", "policy.ckpt", "budget.ckpt", "report.csv", "sweep.csv"} <= {
        str(f) for f in files}
    _, mismatch, errors = filecmp.cmpfiles(a, b, [str(f) for f in files], shallow=False)
    assert mismatch == [] and errors == []


def test_linear_classifier_stage(tmp_path):
    extra = ["--set", "classifier.kind=linear", "--set", "classifier.epochs=2"]
    assert run("gen-data", tmp_path, *extra) == 0
    assert run("train-stage1", tmp_path, *extra) == 0
    assert (tmp_path / "stage1_log.csv").read_text().startswith("# config_hash=")


def test_eval_without_policy(tmp_path, capsys):
    assert run("gen-data", tmp_path) == 0
    assert run("train-stage1", tmp_path) == 0
    capsys.readouterr()
    assert run("eval", tmp_path) == 2
    err = capsys.readouterr().err
    assert err.startswith("ERROR E_MISSING_MODEL policy ")
    assert not (tmp_path / "report.csv").exists()


def test_missing_dataset(tmp_path, capsys):
    assert run("train-stage1", tmp_path) == 2
    assert capsys.readouterr().err.startswith("ERROR E_MISSING_INPUT dataset ")


def test_hash_mismatch(tmp_path, capsys):
    assert run("gen-data", tmp_path) == 0
    capsys.readouterr()
    assert run("train-stage1", tmp_path, "--set", "dataset.noise_sigma=0.2") == 2
    assert capsys.readouterr().err.startswith("ERROR E_HASH_MISMATCH dataset ")
    assert run("train-stage1", tmp_path, "--set", "dataset.noise_sigma=0.2", "--allow-mismatch") == 0


def test_downstream_stage_settings_do_not_invalidate_upstream(tmp_path):
    assert run("gen-data", tmp_path) == 0
    assert run("train-stage1", tmp_path, "--set", "stage2.lr=0.05") == 0


@pytest.mark.parametrize("override, field", [
    ("nosuch.key=1", "nosuch.key"),
    ("stage2.N=0", "N"),
    ("eval.strategies=[bogus]", "eval.strategies"),
    ("dataset.T=1", "T"),
])
def test_config_errors(tmp_path, capsys, override, field):
    assert main(["gen-data", "--out", str(tmp_path), "--set", override]) == 2
    err = capsys.readouterr().err
    assert err.startswith(f"ERROR E_CONFIG {field} ")


def test_config_file(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 3\ndataset:\n  num_videos: 10\n  n_train: 5\n")
    loaded = RunConfig.load(cfg)
    assert loaded.seed == 3 and loaded.dataset_spec().master_seed == 3
    assert loaded.dataset_spec().num_videos == 10
    assert RunConfig.load(cfg, seed=4).stage_hash("dataset") != loaded.stage_hash("dataset")
    cfg.write_text("dataset:\n  bogus: 1\n")
    with pytest.raises(ConfigError):
        RunConfig.load(cfg)


def test_check_passes(tmp_path, capsys):
    assert main(["check", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == len(checks.SUITES) and all(line.startswith("PASS") for line in out)


def test_check_failure_exit_code(tmp_path, capsys, monkeypatch):
    monkeypatch.setitem(checks.SUITES, "always_fails", lambda quick: CheckResult("always_fails", False, "x"))
    assert main(["check", "--out", str(tmp_path), "--set", "check.suites=[always_fails]"]) == 1
    captured = capsys.readouterr()
    assert "FAIL always_fails" in captured.out
    assert "ERROR E_CHECK_FAILED" in captured.err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ocsampler", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gen-data" in res.stdout
