import csv
import json
import shutil
import subprocess
import sys

import pytest

from sagelab.cli import main


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file() and p.name != "manifest.json"}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--out", str(out), "--steps", "3", "--batch", "8", "--seed", "1"]) == 0
    return out


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["bogus", "--out", str(tmp_path)]) == 2
    assert main(["reliability"]) == 2  # missing --out
    bad = tmp_path / "bad.txt"
    bad.write_text("eps=2.0\n")
    assert main(["reliability", "--config", str(bad), "--out", str(tmp_path / "r")]) == 2
    bad.write_text("this is not a pair\n")
    assert main(["gate-bench", "--config", str(bad), "--out", str(tmp_path / "g")]) == 2
    assert main(["train", "--corpus", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "t")]) == 2
    assert "sage" in capsys.readouterr().err


def test_train_writes_one_row_per_step(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--steps", "1", "--batch", "4"]) == 0
    rows = read_csv(tmp_path / "loss.csv")
    assert len(rows) == 1 and set(rows[0]) == {"step", "loss_fwd", "loss_inv"}
    assert (tmp_path / "model.ckpt").exists() and (tmp_path / "config.txt").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "train" and manifest["seed"] == 0 and manifest["version"].startswith("v")


def test_train_is_deterministic(tmp_path, trained):
    again = tmp_path / "again"
    assert main(["train", "--out", str(again), "--steps", "3", "--batch", "8", "--seed", "1"]) == 0
    assert files(again) == files(trained)


def test_train_from_corpus(tmp_path, trained):
    assert main(["train", "--corpus", str(trained / "corpus.jsonl"), "--out", str(tmp_path), "--steps", "2",
                 "--batch", "4"]) == 0
    assert len(read_csv(tmp_path / "loss.csv")) == 2


def test_rank_lambda_zero_picks_max_logp(tmp_path, trained):
    assert main(["rank", "--checkpoint", str(trained), "--out", str(tmp_path), "--k", "4", "--lambda", "0",
                 "--prompts", "4"]) == 0
    recs = [json.loads(l) for l in (tmp_path / "rank.jsonl").read_text().splitlines()]
    assert len(recs) == 4
    for r in recs:
        best = min(r["candidates"], key=lambda c: (-c["logp"], c["tokens"]))
        assert r["winner"] == best["tokens"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["k"] == 4 and summary["lambda"] == 0.0


def test_rank_single_candidate(tmp_path, trained):
    assert main(["rank", "--checkpoint", str(trained), "--out", str(tmp_path), "--k", "1", "--prompts", "3"]) == 0
    for line in (tmp_path / "rank.jsonl").read_text().splitlines():
        r = json.loads(line)
        assert len(r["candidates"]) == 1 and r["winner"] == r["candidates"][0]["tokens"]


def test_rank_usage(tmp_path, trained):
    assert main(["rank", "--checkpoint", str(trained), "--out", str(tmp_path), "--k", "0"]) == 2
    assert main(["rank", "--out", str(tmp_path)]) == 2
    assert main(["rank", "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert main(["rank", "--checkpoint", str(trained), "--out", str(tmp_path), "--lambda", "-1"]) == 2


def test_reliability_default_passes(tmp_path):
    assert main(["reliability", "--out", str(tmp_path), "--trials", "200000"]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert all(v.get("passed", True) for v in rep["checks"].values())
    assert rep["checks"]["cost_bound"]["ratio_at_mu_0.2"] == pytest.approx(1.2)
    assert rep["checks"]["entropy_identity"]["max_gap"] < 1e-12


def test_reliability_zero_error_flat_curves(tmp_path):
    scen = tmp_path / "s.txt"
    scen.write_text("eps=0\n")
    assert main(["reliability", "--config", str(scen), "--out", str(tmp_path / "o"), "--trials", "10000"]) == 0
    rows = read_csv(tmp_path / "o" / "survival.csv")
    assert all(float(r["standard"]) == 1.0 and float(r["hybrid"]) == 1.0 for r in rows)


def test_reliability_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["reliability", "--out", str(d), "--trials", "20000", "--seed", "3"]) == 0
    assert files(a) == files(b)


def test_gate_bench(tmp_path):
    assert main(["gate-bench", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["best_tradeoff"] is not None and summary["cost_bound_violations"] == 0
    assert summary["always_fast"]["tau"] == "inf"
    rows = read_csv(tmp_path / "pareto.csv")
    assert {"tau", "accuracy", "cost", "mu"} <= set(rows[0])
    steps = read_csv(tmp_path / "steps.csv")
    assert set(steps[0]) == {"task", "step", "entropy", "mode", "cost"}
    assert main(["gate-bench", "--out", str(tmp_path / "t"), "--tau", "100"]) == 0
    at = json.loads((tmp_path / "t" / "summary.json").read_text())["at_tau"]
    assert at["mu"] == 0.0


def test_distill_and_eval_tools_are_deterministic(tmp_path):
    cfg = tmp_path / "d.txt"
    cfg.write_text("train_tasks=120\neval_tasks=60\nepochs=2\nbatch_size=32\nrl_episodes=64\n")
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["distill", "--config", str(cfg), "--out", str(d)]) == 0
    assert files(a) == files(b)
    rates = json.loads((a / "hallucination.json").read_text())["rates"]
    assert rates["base"] >= rates["distilled"] >= rates["rl"]
    tcfg = tmp_path / "t.txt"
    tcfg.write_text("tasks=40\n")
    c, d = tmp_path / "c", tmp_path / "d"
    for o in (c, d):
        assert main(["eval-tools", "--config", str(tcfg), "--out", str(o)]) == 0
    assert files(c) == files(d)
    summary = json.loads((c / "summary.json").read_text())
    assert summary["mch_on"]["irr"] >= summary["mch_off"]["irr"]


@pytest.mark.skipif(shutil.which("sage") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["sage", "reliability", "--out", str(tmp_path), "--trials", "10000"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    proc = subprocess.run([sys.executable, "-m", "sagelab.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
