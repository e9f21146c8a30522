"""Command-line interface: happy paths, overrides, and exit-code mapping."""

import json

import pytest

from dialoglab.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main


@pytest.fixture()
def tiny_config(tmp_path):
    doc = {
        "variant": "dqn", "seed": 0, "episodes": 3, "eval_dialogs": 2,
        "warm_start_dialogs": 8, "warm_start_steps": 5, "wm_warm_steps": 5,
        "buffer_capacity": 300, "segment_capacity": 100,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_train_writes_outputs(tmp_path, tiny_config, capsys):
    out = tmp_path / "runs"
    rc = main(["train", "--config", str(tiny_config), "--out", str(out)])
    assert rc == EXIT_OK
    assert (out / "dqn_seed0.csv").exists()
    assert (out / "dqn_seed0.ckpt.json").exists()
    assert "final eval_sr" in capsys.readouterr().out


def test_train_variant_and_seed_overrides(tmp_path, tiny_config):
    out = tmp_path / "runs"
    rc = main(["train", "--config", str(tiny_config), "--variant", "lu",
               "--seed", "3", "--episodes", "2", "--out", str(out)])
    assert rc == EXIT_OK
    cfg = json.loads((out / "lu_seed3.config.json").read_text())
    assert cfg["variant"] == "lu" and cfg["seed"] == 3 and cfg["episodes"] == 2


def test_train_audit_flag_emits_jsonl(tmp_path, tiny_config):
    out = tmp_path / "runs"
    rc = main(["train", "--config", str(tiny_config), "--variant", "lh",
               "--episodes", "2", "--audit", "--out", str(out)])
    assert rc == EXIT_OK
    audit = out / "lh_seed0.audit.jsonl"
    kinds = {json.loads(l)["type"] for l in audit.read_text().splitlines()}
    assert "head" in kinds and "tail" in kinds


def test_train_rejects_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"variant\": \"nope\"}", encoding="utf-8")
    rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_train_rejects_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"variant\": \"dqn\", \"mystery\": 1}", encoding="utf-8")
    rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_train_requires_out_flag():
    with pytest.raises(SystemExit):
        main(["train", "--variant", "dqn"])


def test_evaluate_checkpoint_and_runtime_error(tmp_path, tiny_config, capsys):
    out = tmp_path / "runs"
    main(["train", "--config", str(tiny_config), "--out", str(out)])
    rc = main(["evaluate", "--checkpoint", str(out / "dqn_seed0.ckpt.json"),
               "--dialogs", "4"])
    assert rc == EXIT_OK
    doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert doc["dialogs"] == 4 and 0.0 <= doc["success_rate"] <= 1.0

    rc = main(["evaluate", "--checkpoint", str(tmp_path / "missing.json")])
    assert rc == EXIT_RUNTIME


def test_sweep_k_writes_table(tmp_path, tiny_config):
    out = tmp_path / "sweep"
    rc = main(["sweep-k", "--config", str(tiny_config), "--values", "1,2",
               "--out", str(out)])
    assert rc == EXIT_OK
    lines = (out / "sweep_k.csv").read_text().splitlines()
    assert lines[0] == "k,auc,final_eval_sr" and len(lines) == 3


def test_sweep_k_rejects_empty_values(tmp_path, tiny_config):
    rc = main(["sweep-k", "--config", str(tiny_config), "--values", ",",
               "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_aggregate_then_plot(tmp_path, tiny_config, capsys):
    out = tmp_path / "runs"
    for seed in ("0", "1"):
        main(["train", "--config", str(tiny_config), "--seed", seed,
              "--out", str(out)])
    rc = main(["aggregate", "--runs", str(out)])
    assert rc == EXIT_OK
    assert (out / "aggregate.csv").exists()
    assert "variant,episode," in capsys.readouterr().out

    rc = main(["plot", "--aggregate", str(out / "aggregate.csv"),
               "--out", str(tmp_path / "fig.svg")])
    assert rc == EXIT_OK
    assert (tmp_path / "fig.svg").stat().st_size > 0


def test_aggregate_empty_dir_is_runtime_error(tmp_path):
    rc = main(["aggregate", "--runs", str(tmp_path)])
    assert rc == EXIT_RUNTIME
