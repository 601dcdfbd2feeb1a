"""Run-config validation and command-line behaviour."""

from __future__ import annotations

import json

import pytest

from hanalab import cli, runconfig
from hanalab.runconfig import ConfigError, RunSettings, parse_run_config


# -- config validation -----------------------------------------------------------


def test_defaults_materialise():
    rc = parse_run_config({})
    assert rc.game.n_color == 5 and rc.game.hand_size == 5
    assert rc.belief.iterations == 100
    assert rc.train.optimizer == "rmsprop"
    assert rc.run.variant == "v2" and rc.run.seed == 0


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="gaem: unknown key"):
        parse_run_config({"gaem": {}})


def test_unknown_nested_key_with_suggestion():
    with pytest.raises(ConfigError, match=r"game\.n_colour: unknown key.*n_color"):
        parse_run_config({"game": {"n_colour": 2}})


def test_bad_value_reports_section():
    with pytest.raises(ConfigError, match="run: "):
        parse_run_config({"run": {"variant": "v9"}})
    with pytest.raises(ConfigError, match="train: "):
        parse_run_config({"train": {"optimizer": "sgd9"}})
    with pytest.raises(ConfigError, match="belief: "):
        parse_run_config({"belief": {"iterations": -1}})


def test_tuple_fields_coerced():
    rc = parse_run_config({"train": {"hidden_sizes": [32, 16],
                                     "pbt_perturb": [0.9, 1.1]}})
    assert rc.train.hidden_sizes == (32, 16)
    assert rc.train.pbt_perturb == (0.9, 1.1)
    with pytest.raises(ConfigError, match="hidden_sizes"):
        parse_run_config({"train": {"hidden_sizes": 32}})


def test_effective_dict_round_trips():
    rc = parse_run_config({"game": {"n_color": 2, "n_rank": 3, "hand_size": 2},
                           "train": {"hidden_sizes": [8]},
                           "run": {"seed": 9, "variant": "v1"}})
    eff = runconfig.effective_dict(rc)
    json.dumps(eff)  # JSON-ready
    assert parse_run_config(eff) == rc


def test_run_settings_validation():
    with pytest.raises(ValueError):
        RunSettings(games=0)
    with pytest.raises(ValueError):
        RunSettings(mode="chess")
    with pytest.raises(ValueError):
        RunSettings(sample_count=0)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        runconfig.load_run_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        runconfig.load_run_config(bad)


# -- CLI ---------------------------------------------------------------------------


def _banner_of(capsys):
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines()
                if l.startswith("effective-config: "))
    body = out.split(line, 1)[1]
    return json.loads(line[len("effective-config: "):]), body


MINI_DOC = {
    "game": {"n_color": 2, "n_rank": 3, "hand_size": 2},
    "belief": {"iterations": 40, "exhaustive_samples": True},
    "train": {"hidden_sizes": [8], "population_size": 1, "batch_size": 2},
    "run": {"updates": 2, "games": 3, "log_every": 1, "horizon": 20,
            "checkpoint_every": 1},
}


@pytest.fixture(scope="module")
def hanabi_run(tmp_path_factory):
    """One tiny train-hanabi run shared by the eval/report/dump tests."""
    root = tmp_path_factory.mktemp("hanabi_run")
    cfg = root / "mini.json"
    cfg.write_text(json.dumps(MINI_DOC))
    out = root / "train"
    code = cli.main(["train-hanabi", "--config", str(cfg),
                     "--out", str(out), "--seed", "5"])
    assert code == 0
    return {"config": cfg, "out": out, "ckpt": out / "hanabi_final.ckpt"}


def test_oracle_prints_fixture_solution(capsys):
    assert cli.main(["oracle"]) == 0
    banner, body = _banner_of(capsys)
    assert banner["command"] == "oracle"
    doc = json.loads(body)
    assert doc["optimal_value"] == 10.0
    assert doc["best_nonsignalling_value"] == 8.0


def test_train_matrix_writes_artifacts(tmp_path, capsys):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({
        "train": {"hidden_sizes": [8], "batch_size": 2},
        "run": {"updates": 2, "mode": "pg", "games": 4, "log_every": 1},
    }))
    out = tmp_path / "o1"
    assert cli.main(["train-matrix", "--config", str(cfg), "--out", str(out),
                     "--seed", "3"]) == 0
    banner, body = _banner_of(capsys)
    assert banner["train"]["cf_gradients"] is False
    assert (out / "matrix_final.ckpt").exists()
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header.split(",")[:3] == ["update", "env_steps", "mean_reward"]
    assert "mean_reward" in json.loads(body)


def test_banner_reproduces_run(tmp_path, capsys):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({
        "train": {"hidden_sizes": [8], "batch_size": 2},
        "run": {"updates": 2, "mode": "pg", "games": 2, "log_every": 1},
    }))
    out1 = tmp_path / "o1"
    assert cli.main(["train-matrix", "--config", str(cfg), "--out", str(out1),
                     "--seed", "3"]) == 0
    banner, _ = _banner_of(capsys)
    # rebuild a config purely from the banner and run it elsewhere
    cfg2 = tmp_path / "from_banner.json"
    cfg2.write_text(json.dumps({k: banner[k]
                                for k in ("game", "belief", "train", "run")}))
    out2 = tmp_path / "o2"
    assert cli.main(["train-matrix", "--config", str(cfg2),
                     "--out", str(out2)]) == 0
    capsys.readouterr()
    assert (out1 / "metrics.csv").read_bytes() == \
        (out2 / "metrics.csv").read_bytes()


def test_train_hanabi_snapshots_and_eval(hanabi_run, tmp_path, capsys):
    out = hanabi_run["out"]
    assert hanabi_run["ckpt"].exists()
    assert (out / "hanabi_u000001.ckpt").exists()
    assert (out / "hanabi_u000002.ckpt").exists()
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert "ce_v2" in header and "mean_score" in header

    eval_out = tmp_path / "eval"
    code = cli.main(["eval", "--config", str(hanabi_run["config"]),
                     "--checkpoint", str(hanabi_run["ckpt"]),
                     "--games", "3", "--seed", "2", "--out", str(eval_out),
                     "--workers", "1"])
    assert code == 0
    _, body = _banner_of(capsys)
    doc = json.loads(body)
    assert doc["n_games"] == 3
    assert sum(doc["histogram"]) == 3
    saved = json.loads((eval_out / "score_stats.json").read_text())
    assert saved == doc


def test_eval_workers_match_single_process(hanabi_run, tmp_path, capsys):
    argv = ["eval", "--config", str(hanabi_run["config"]),
            "--checkpoint", str(hanabi_run["ckpt"]),
            "--games", "4", "--seed", "8"]
    a, b = tmp_path / "w1", tmp_path / "w2"
    assert cli.main(argv + ["--out", str(a), "--workers", "1"]) == 0
    assert cli.main(argv + ["--out", str(b), "--workers", "2"]) == 0
    capsys.readouterr()
    assert (a / "score_stats.json").read_bytes() == \
        (b / "score_stats.json").read_bytes()


def test_belief_report_random(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(MINI_DOC))
    out = tmp_path / "rep"
    assert cli.main(["belief-report", "--config", str(cfg), "--random",
                     "--games", "2", "--out", str(out)]) == 0
    capsys.readouterr()
    lines = (out / "ce_curves.csv").read_text().splitlines()
    assert lines[0] == "t,ce_v0,ce_v1,ce_v2,n"
    assert len(lines) > 2


def test_dump_games_random_verifies(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(MINI_DOC))
    out = tmp_path / "dump"
    assert cli.main(["dump-games", "--config", str(cfg), "--random",
                     "--games", "2", "--out", str(out)]) == 0
    _, body = _banner_of(capsys)
    doc = json.loads(body)
    assert doc["verified_games"] == 2
    assert (out / "games.jsonl").exists()


def test_exit_codes(hanabi_run, tmp_path, capsys):
    cfg = str(hanabi_run["config"])
    # bad config document
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"game": {"n_colour": 2}}))
    assert cli.main(["train-hanabi", "--config", str(bad)]) == 2
    # missing checkpoint file
    assert cli.main(["eval", "--config", cfg,
                     "--checkpoint", str(tmp_path / "no.ckpt")]) == 3
    # config-hash mismatch: checkpoint trained for v2, asked to run as v0
    assert cli.main(["eval", "--config", cfg,
                     "--checkpoint", str(hanabi_run["ckpt"]),
                     "--belief", "v0", "--games", "1",
                     "--out", str(tmp_path / "x")]) == 3
    # checkpoint omitted where required
    assert cli.main(["belief-report", "--config", cfg]) == 2
    # unknown command (argparse usage error)
    assert cli.main(["no-such-command"]) == 2
    capsys.readouterr()


def test_strict_flag_changes_basis(hanabi_run, tmp_path, capsys):
    argv = ["eval", "--config", str(hanabi_run["config"]),
            "--checkpoint", str(hanabi_run["ckpt"]), "--games", "3",
            "--seed", "2", "--workers", "1"]
    assert cli.main(argv + ["--out", str(tmp_path / "a")]) == 0
    _, body = _banner_of(capsys)
    loose = json.loads(body)
    assert cli.main(argv + ["--strict", "--out", str(tmp_path / "b")]) == 0
    _, body = _banner_of(capsys)
    strict = json.loads(body)
    assert strict["mean"] == strict["strict_mean"] == loose["strict_mean"]
