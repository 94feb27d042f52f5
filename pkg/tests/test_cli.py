"""Tests for the command line interface."""

from __future__ import annotations

from pathlib import Path

import pytest

from subgroup_unlearn.cli import main
from subgroup_unlearn.core.config import load_config
from subgroup_unlearn.evaluate.report import build_report
from subgroup_unlearn.model.checkpoint import load_checkpoint
from subgroup_unlearn.store.artifacts import RunStore, read_json, write_json


def test_scores_command(capsys, tmp_path):
    out = tmp_path / "scores.csv"
    assert main(["scores", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "MISMATCH" not in printed
    assert printed.count(" misprint") == 2
    lines = out.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0] == "table,backbone,method,printed,recomputed,matches,misprint"
    assert len(lines) == 64


def test_unknown_baseline_is_a_configuration_error(tiny_config_path, tmp_path):
    code = main(["baseline", "--config", str(tiny_config_path), "--out-dir", str(tmp_path), "--method", "NOPE"])
    assert code == 2


def test_unlearn_needs_a_pretrained_model(tiny_config_path, tmp_path):
    assert main(["unlearn", "--config", str(tiny_config_path), "--out-dir", str(tmp_path)]) == 2


def test_invalid_configuration(tmp_path, tiny_config_text):
    path = tmp_path / "broken.yaml"
    path.write_text(tiny_config_text.replace("embed_dim: 8", "embed_dim: eight"), encoding="utf-8")
    assert main(["pretrain", "--config", str(path), "--out-dir", str(tmp_path)]) == 2


def test_render_html_command(tmp_path, original, task):
    report = build_report(original, original.retag("restored"), task)
    src = write_json(tmp_path / "restored.json", report.to_dict(), schema="eval_report")
    out = tmp_path / "tabla.html"
    assert main(["render-html", "--in", str(src), "--out", str(out)]) == 0
    assert "75.0" in out.read_text(encoding="utf-8")


def _run_all(config: Path, out_dir: Path) -> RunStore:
    common = ["--config", str(config), "--out-dir", str(out_dir)]
    assert main(["pretrain", *common]) == 0
    assert main(["unlearn", *common]) == 0
    assert main(["baseline", *common, "--method", "GA"]) == 0
    assert main(["sweep", *common, "--axis", "alpha_merge"]) == 0
    cfg = load_config(config, out_dir=str(out_dir))
    return RunStore(out_dir, cfg.name, cfg.content_hash)


@pytest.mark.slow
def test_end_to_end(tiny_config_path, tmp_path):
    store = _run_all(tiny_config_path, tmp_path / "a")
    for rel in ("checkpoints/original.ckpt", "checkpoints/restored.ckpt", "checkpoints/baseline-GA.ckpt",
                "reports/restored.json", "reports/restored.csv", "reports/layer_scores.json",
                "reports/sweep-alpha_merge.csv", "logs/forget.json", "data/task/manifest.json"):
        assert (store.root / rel).exists(), rel
    assert store.manifest.verify(store.root) == []
    commands = [e["command"] for e in store.manifest.entries]
    assert commands == ["pretrain", "unlearn", "baseline:GA", "sweep:alpha_merge"]

    reports = tmp_path / "eval"
    code = main(["eval", "--original", str(store.path("checkpoints", "original.ckpt")),
                 "--candidate", str(store.path("checkpoints", "restored.ckpt")),
                 "--task", str(store.path("data", "task")), "--out", str(reports), "--html"])
    assert code == 0
    assert read_json(reports / "restored.json")["score"] == read_json(store.path("reports", "restored.json"))["score"]
    assert (reports / "restored.html").exists()

    code = main(["continuous", "--config", str(tiny_config_path), "--out-dir", str(tmp_path / "a"),
                 "--checkpoints", str(store.path("checkpoints", "reminded.ckpt")),
                 "--reference", str(store.path("checkpoints", "original.ckpt"))])
    assert code == 0
    assert store.path("reports", "continuous-table.csv").exists()
    assert load_checkpoint(store.path("checkpoints", "continuous.ckpt")).meta.extra["targets"] == [0]

    again = _run_all(tiny_config_path, tmp_path / "b")
    assert again.run_id == store.run_id
    first = load_checkpoint(store.path("checkpoints", "restored.ckpt"))
    second = load_checkpoint(again.path("checkpoints", "restored.ckpt"))
    assert first.checksum() == second.checksum()
