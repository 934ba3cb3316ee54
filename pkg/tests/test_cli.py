from __future__ import annotations

import json
import os

import pytest

from partwise.cli import (
    CONFIG_ENV,
    atomic_write,
    build_parser,
    build_run_config,
    main,
    read_config_file,
)
from partwise.errors import ConfigError
from partwise.scoring import read_scores
from partwise.voxel import read_mcv1


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One synthesized totem taken through hypothesize and oracle scoring."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = run("synth", "--out-dir", data, "--family", "totem",
             "--count", "1", "--seed", "2")
    assert rc == 0
    mesh = data / "totem_000.obj"
    manifest = data / "totem_000.json"
    hyps = root / "hyps.jsonl"
    rc = run("hypothesize", mesh, "--out", hyps, "--budget", "60", "--seed", "0")
    assert rc == 0
    scores = root / "scores.jsonl"
    rc = run("score", mesh, hyps, "--out", scores, "--backend", "oracle",
             "--manifest", manifest, "--eval-resolution", "100")
    assert rc == 0
    return {"root": root, "data": data, "mesh": mesh, "manifest": manifest,
            "hyps": hyps, "scores": scores}


# ------------------------------------------------------------
# Config handling
# ------------------------------------------------------------

def test_read_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\n"
                   "budget = 40\n"
                   "lambda = 0.3\n"
                   "top_k = 5\n"
                   "\n")
    values = read_config_file(cfg)
    assert values == {"budget": 40, "lambda": 0.3, "top_k": "5"}


@pytest.mark.parametrize("line", ["budget 40", "mystery = 1", "budget = soon"])
def test_config_file_rejects(tmp_path, line):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(line + "\n")
    with pytest.raises(ConfigError):
        read_config_file(cfg)


def test_flag_beats_file_beats_default(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("budget = 40\nlambda = 0.3\n")
    args = build_parser().parse_args(
        ["--config", str(cfg), "hypothesize", "mesh.obj",
         "--out", "h.jsonl", "--budget", "70"])
    rc = build_run_config(args)
    assert rc.budget == 70          # flag
    assert rc.lam == 0.3            # file
    assert rc.eta_fraction == 0.2   # default


def test_env_var_names_config(tmp_path, monkeypatch):
    cfg = tmp_path / "env.cfg"
    cfg.write_text("budget = 33\n")
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    args = build_parser().parse_args(["hypothesize", "m.obj", "--out", "h"])
    assert build_run_config(args).budget == 33

    other = tmp_path / "flag.cfg"
    other.write_text("budget = 44\n")
    args = build_parser().parse_args(
        ["--config", str(other), "hypothesize", "m.obj", "--out", "h"])
    assert build_run_config(args).budget == 44


def test_top_k_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("top_k = all\n")
    args = build_parser().parse_args(
        ["--config", str(cfg), "label", "m", "h", "s", "--out", "o"])
    assert build_run_config(args).top_k == "all"

    args = build_parser().parse_args(
        ["label", "m", "h", "s", "--out", "o", "--topk", "4"])
    assert build_run_config(args).top_k == 4

    args = build_parser().parse_args(
        ["label", "m", "h", "s", "--out", "o", "--topk", "zero"])
    with pytest.raises(ConfigError):
        build_run_config(args)


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mystery = 1\n")
    rc = run("--config", cfg, "hypothesize", "m.obj", "--out", "h.jsonl")
    assert rc == 2
    assert "unknown key" in capsys.readouterr().err


# ------------------------------------------------------------
# Atomic outputs
# ------------------------------------------------------------

def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "out.txt"

    def boom(tmp):
        with open(tmp, "w") as fh:
            fh.write("partial")
        raise RuntimeError("late failure")

    with pytest.raises(RuntimeError):
        atomic_write(target, boom)
    assert not target.exists()
    assert os.listdir(tmp_path) == []


def test_failed_label_leaves_no_output(workdir, tmp_path, capsys):
    truncated = tmp_path / "short.jsonl"
    lines = workdir["scores"].read_text().splitlines()
    truncated.write_text("\n".join(lines[:3]) + "\n")
    out = tmp_path / "labels.json"
    rc = run("label", workdir["mesh"], workdir["hyps"], truncated, "--out", out)
    assert rc == 2
    assert "scores missing" in capsys.readouterr().err
    assert not out.exists()
    assert not [n for n in os.listdir(tmp_path) if n.startswith(".partwise-")]


# ------------------------------------------------------------
# End-to-end flow
# ------------------------------------------------------------

def test_synth_writes_dataset(workdir):
    names = sorted(os.listdir(workdir["data"]))
    assert names == ["dataset.json", "totem_000.json", "totem_000.obj"]
    doc = json.loads((workdir["data"] / "dataset.json").read_text())
    assert doc["shapes"][0]["mesh"] == "totem_000.obj"


def test_label_and_eval(workdir, tmp_path):
    out = tmp_path / "labels.json"
    obj = tmp_path / "colored.obj"
    rc = run("label", workdir["mesh"], workdir["hyps"], workdir["scores"],
             "--out", out, "--obj", obj, "--manifest", workdir["manifest"])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["num_labels"] == 3
    assert doc["uncovered"] == []
    assert set(doc["label_names"]) == {"tier_a", "tier_b", "tier_c"}
    assert obj.exists()
    assert obj.with_suffix(".mtl").exists()

    report = tmp_path / "report.json"
    rc = run("eval", out, workdir["manifest"], "--out", report,
             "--eval-resolution", "100")
    assert rc == 0
    rep = json.loads(report.read_text())
    assert rep["avg_iou"] == pytest.approx(1.0)


def test_hypothesize_and_label_are_byte_deterministic(workdir, tmp_path):
    h1 = tmp_path / "h1.jsonl"
    h2 = tmp_path / "h2.jsonl"
    for out in (h1, h2):
        rc = run("hypothesize", workdir["mesh"], "--out", out,
                 "--budget", "60", "--seed", "0")
        assert rc == 0
    assert h1.read_bytes() == h2.read_bytes()
    assert h1.read_bytes() == workdir["hyps"].read_bytes()

    l1 = tmp_path / "l1.json"
    l2 = tmp_path / "l2.json"
    for out in (l1, l2):
        rc = run("label", workdir["mesh"], workdir["hyps"], workdir["scores"],
                 "--out", out)
        assert rc == 0
    assert l1.read_bytes() == l2.read_bytes()


def test_volumes_exports(workdir, tmp_path):
    vols = tmp_path / "hyps.mcv1"
    header = tmp_path / "header.json"
    truth = tmp_path / "truth.jsonl"
    rc = run("volumes", workdir["mesh"], workdir["hyps"],
             "--manifest", workdir["manifest"], "--out-volumes", vols,
             "--out-header", header, "--out-truth", truth,
             "--eval-resolution", "100", "--resolution", "24")
    assert rc == 0

    head = json.loads(header.read_text())
    assert head["K"] == 3
    resolution, volumes = read_mcv1(vols)
    assert resolution == 24
    assert len(volumes) == len(head["hyp_ids"])

    lines = [json.loads(t) for t in truth.read_text().splitlines()]
    assert [t["hyp_id"] for t in lines] == head["hyp_ids"]
    assert all(0 <= t["label"] <= 3 for t in lines)
    assert all(0.0 <= t["confidence"] <= 1.0 for t in lines)


def test_sweep_csv(workdir, tmp_path):
    out = tmp_path / "sweep.csv"
    rc = run("sweep", "--dataset", workdir["data"] / "dataset.json",
             "--budgets", "5,10", "--out", out, "--eval-resolution", "100")
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "budget,recall_at_0.5,avg_iou"
    assert len(lines) == 3
    assert lines[1].startswith("5,")
    assert lines[2].startswith("10,")


def test_correspond_two_shapes(tmp_path):
    data = tmp_path / "pair"
    rc = run("synth", "--out-dir", data, "--family", "table",
             "--count", "2", "--seed", "5")
    assert rc == 0
    out = tmp_path / "map.json"
    rc = run("correspond", data / "table_000.obj", data / "table_001.obj",
             "--manifest-a", data / "table_000.json",
             "--manifest-b", data / "table_001.json", "--out", out)
    assert rc == 0
    doc = json.loads(out.read_text())
    assert set(doc) == {"pairs", "unmatched_a", "unmatched_b",
                        "quarter_turns", "scale", "translation"}
    assert doc["pairs"]


def test_train_builtin_then_score(workdir, tmp_path):
    data = tmp_path / "train"
    rc = run("synth", "--out-dir", data, "--family", "totem",
             "--count", "2", "--seed", "9")
    assert rc == 0
    model = tmp_path / "model.json"
    rc = run("train-builtin", "--dataset", data / "dataset.json",
             "--out", model, "--split", "all", "--augment", "1",
             "--iterations", "80", "--eval-resolution", "100")
    assert rc == 0
    doc = json.loads(model.read_text())
    assert doc["kind"] == "partwise-builtin-scorer"

    out = tmp_path / "builtin.jsonl"
    rc = run("score", workdir["mesh"], workdir["hyps"], "--out", out,
             "--backend", "builtin", "--model", model)
    assert rc == 0
    records = read_scores(out)
    assert len(records) == len(workdir["hyps"].read_text().splitlines())


# ------------------------------------------------------------
# Exit codes
# ------------------------------------------------------------

def test_missing_file_exits_2(tmp_path, capsys):
    rc = run("hypothesize", tmp_path / "nope.obj", "--out", tmp_path / "h")
    assert rc == 2
    assert "error: missing file:" in capsys.readouterr().err


def test_validation_error_exits_2(workdir, tmp_path, capsys):
    rc = run("synth", "--out-dir", tmp_path / "d", "--family", "zeppelin")
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_transport_error_exits_3(workdir, tmp_path, capsys):
    out = tmp_path / "ext.jsonl"
    rc = run("score", workdir["mesh"], workdir["hyps"], "--out", out,
             "--backend", "external", "--manifest", workdir["manifest"],
             "--cmd", "false {volumes} {header} {out}", "--resolution", "16")
    assert rc == 3
    assert "error:" in capsys.readouterr().err
    assert not out.exists()


def test_internal_error_exits_4(tmp_path, capsys, monkeypatch):
    import partwise.cli as cli

    def explode(*args, **kwargs):
        raise RuntimeError("wires crossed")

    monkeypatch.setattr(cli, "synthesize_dataset", explode)
    rc = run("synth", "--out-dir", tmp_path / "d", "--family", "totem")
    assert rc == 4
    assert "wires crossed" in capsys.readouterr().err
