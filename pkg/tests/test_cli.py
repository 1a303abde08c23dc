import json

import jsonschema
import pytest

from s2srec2 import checkpoint
from s2srec2.cli import COMPLETION_SCHEMA, main
from s2srec2.data import generate_synthetic_corpus, load_corpus, write_corpus
from s2srec2.evaluation import EvalConfig, build_eval_tasks, evaluate_system, system_for
from s2srec2.cli import load_prepared

SMALL = {"model": {"d_model": 8, "num_heads": 2, "m_ind": 2}, "train": {"epochs": 2, "batch_size": 64, "lr": 0.003}}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_corpus(generate_synthetic_corpus(3, 40, 36, seed=0), root / "corpus.jsonl")
    assert main(["prepare", "--input", str(root / "corpus.jsonl"), "--output", str(root / "data"), "--seed", "1"]) == 0
    (root / "cfg.json").write_text(json.dumps(SMALL))
    rc = main(["train", "--data", str(root / "data"), "--config", str(root / "cfg.json"), "--out", str(root / "m.ckpt")])
    assert rc == 0
    return root


def test_prepare_outputs(workdir):
    data = workdir / "data"
    stats = json.loads((data / "stats.json").read_text())
    n = stats["recipes"]
    assert 0 < n <= stats["input_recipes"] == 120
    assert stats["min_ingredient_count"] > 20
    assert all(5 <= int(k) <= 15 for k in stats["recipe_size_histogram"])
    splits = json.loads((data / "splits.json").read_text())
    assert sorted(splits["train"] + splits["val"] + splits["test"]) == list(range(n))
    assert len(load_corpus(data / "corpus.jsonl")) == n


def test_prepare_same_seed_same_split(workdir, tmp_path):
    assert main(["prepare", "--input", str(workdir / "corpus.jsonl"), "--output", str(tmp_path), "--seed", "1"]) == 0
    assert (tmp_path / "splits.json").read_bytes() == (workdir / "data" / "splits.json").read_bytes()


def test_prepare_seed_from_environment(workdir, tmp_path, monkeypatch):
    monkeypatch.setenv("S2S_SEED", "1")
    assert main(["prepare", "--input", str(workdir / "corpus.jsonl"), "--output", str(tmp_path)]) == 0
    assert (tmp_path / "splits.json").read_bytes() == (workdir / "data" / "splits.json").read_bytes()


def test_prepare_malformed_corpus_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "1", "ingredients": ["a"]}\nnot json\n{"id": 2}\n')
    assert main(["prepare", "--input", str(bad), "--output", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "line 3" in err


def test_prepare_missing_input_exit_2(tmp_path):
    assert main(["prepare", "--input", str(tmp_path / "none.jsonl"), "--output", str(tmp_path / "o")]) == 2


def test_train_log_echoes_config(workdir):
    lines = (workdir / "m.ckpt.log.jsonl").read_text().splitlines()
    head = json.loads(lines[0])["config"]
    assert head["model"]["d_model"] == 8
    assert head["train_config"]["epochs"] == 2
    epochs = [json.loads(x) for x in lines[1:] if "epoch" in json.loads(x)]
    assert [e["epoch"] for e in epochs] == [1, 2]
    assert "final_val" in json.loads(lines[-1])


def test_default_config_echo(workdir, tmp_path):
    from s2srec2.cli import load_config

    _, train_cfg, _ = load_config(None, 10, seed=0)
    assert (train_cfg.lr, train_cfg.batch_size, train_cfg.epochs, train_cfg.alpha) == (1e-4, 500, 30, 0.6)


def test_unknown_config_key_rejected(workdir, tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"train": {"epochz": 3}}))
    rc = main(["train", "--data", str(workdir / "data"), "--config", str(cfg), "--out", str(tmp_path / "x")])
    assert rc == 2 and "epochz" in capsys.readouterr().err


def test_checkpoint_reload_gives_identical_metrics(workdir):
    model, vocab, doc = checkpoint.load(workdir / "m.ckpt")
    _, splits = load_prepared(workdir / "data")
    tasks = build_eval_tasks(splits["val"], seed=doc["train_config"]["seed"] + 1)
    metrics = evaluate_system(system_for(model), tasks, EvalConfig())
    final = json.loads((workdir / "m.ckpt.log.jsonl").read_text().splitlines()[-1])["final_val"]
    assert json.loads(json.dumps(metrics)) == final


def test_checkpoint_round_trip_is_byte_identical(workdir, tmp_path):
    model, vocab, doc = checkpoint.load(workdir / "m.ckpt")
    extra = {k: doc[k] for k in ("train_config", "inference_config")}
    checkpoint.save(tmp_path / "again.ckpt", model, vocab, extra)
    assert (tmp_path / "again.ckpt").read_bytes() == (workdir / "m.ckpt").read_bytes()


def test_checkpoint_version_mismatch(workdir, tmp_path):
    doc = json.loads((workdir / "m.ckpt").read_text())
    doc["format_version"] = 99
    with pytest.raises(checkpoint.CheckpointError, match="format_version"):
        checkpoint.loads(json.dumps(doc))
    bad = tmp_path / "v.ckpt"
    bad.write_text(json.dumps(doc))
    assert main(["complete", "--checkpoint", str(bad), "--ingredients", "ingredient_0001"]) == 2


def test_alpha_sweep_rows(workdir, tmp_path):
    cfg = dict(SMALL, train=dict(SMALL["train"], epochs=1, alpha_grid=[0.2, 0.8]))
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    out = tmp_path / "sweep.ckpt"
    rc = main(["train", "--data", str(workdir / "data"), "--config", str(tmp_path / "c.json"), "--out", str(out), "--alpha-sweep"])
    assert rc == 0
    sweep = json.loads((tmp_path / "sweep.ckpt.alpha_sweep.json").read_text())
    assert [r["alpha"] for r in sweep["rows"]] == [0.2, 0.8]
    _, _, doc = checkpoint.load(out)
    assert doc["model_config"]["alpha"] == sweep["best_alpha"]


def test_eval_oracle_and_k(workdir, tmp_path, capsys):
    out = tmp_path / "r.json"
    args = ["eval", "--data", str(workdir / "data"), "--checkpoint", str(workdir / "m.ckpt"), "--systems", "oracle,random", "--k", "3", "--out", str(out)]
    assert main(args) == 0
    report = json.loads(out.read_text())
    assert report["systems"]["oracle"]["3"]["f1"] == 1.0 and report["systems"]["oracle"]["3"]["mse"] == 0.0
    assert list(report["systems"]["random"]) == ["3"]
    assert "oracle" in capsys.readouterr().out
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_eval_unknown_system(workdir, capsys):
    rc = main(["eval", "--data", str(workdir / "data"), "--checkpoint", str(workdir / "m.ckpt"), "--systems", "s2srec2,magic"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "magic" in err and "set_encoder_stop" in err


def test_complete_schema_and_trace(workdir, capsys):
    rc = main(["complete", "--checkpoint", str(workdir / "m.ckpt"), "--ingredients", "ingredient_0001, ingredient_0002", "--trace"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    jsonschema.validate(out, COMPLETION_SCHEMA)
    assert len(out["trace"]) == len(out["round_probs"])
    assert all(len(r) == 5 for r in out["trace"])


def test_complete_max_rounds(workdir, capsys):
    assert main(["complete", "--checkpoint", str(workdir / "m.ckpt"), "--ingredients", "ingredient_0001", "--max-rounds", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    jsonschema.validate(out, COMPLETION_SCHEMA)
    assert len(out["predicted"]) <= 1


def test_complete_stops_immediately_when_p_high(workdir, tmp_path, capsys):
    model, vocab, doc = checkpoint.load(workdir / "m.ckpt")
    model.completeness_head.bias.data[...] = 40.0
    checkpoint.save(tmp_path / "stop.ckpt", model, vocab, {"inference_config": doc["inference_config"]})
    assert main(["complete", "--checkpoint", str(tmp_path / "stop.ckpt"), "--ingredients", "ingredient_0001"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["predicted"] == [] and out["stop_reason"] == "stop"


def test_complete_unknown_ingredient_suggests(workdir, capsys):
    rc = main(["complete", "--checkpoint", str(workdir / "m.ckpt"), "--ingredients", "ingredient_001x"])
    assert rc == 2
    assert "nearest matches: ingredient_00" in capsys.readouterr().err


def test_train_determinism(workdir, tmp_path):
    for name in ("a", "b"):
        rc = main(["train", "--data", str(workdir / "data"), "--config", str(workdir / "cfg.json"), "--out", str(tmp_path / name), "--seed", "5"])
        assert rc == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_bad_env_seed(workdir, tmp_path, monkeypatch):
    monkeypatch.setenv("S2S_SEED", "abc")
    assert main(["prepare", "--input", str(workdir / "corpus.jsonl"), "--output", str(tmp_path)]) == 2
