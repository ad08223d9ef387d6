import json
import subprocess
import sys

import pytest

from nursesched.cli import main
from nursesched.domain import load_roster


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_data_is_reproducible(tmp_path, capsys):
    assert run(capsys, "gen-data", "--seed", "4", "--out-dir", str(tmp_path / "a"))[0] == 0
    assert run(capsys, "gen-data", "--seed", "4", "--out-dir", str(tmp_path / "b"))[0] == 0
    for name in ("nurses.json", "constraints.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(load_roster(tmp_path / "a" / "nurses.json")) == 40
    assert json.loads((tmp_path / "a" / "constraints.json").read_text())["d_max_km"] == 20.0


def test_seed_env_var_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NURSESCHED_SEED", "4")
    run(capsys, "gen-data", "--out-dir", str(tmp_path / "env"))
    run(capsys, "gen-data", "--seed", "4", "--out-dir", str(tmp_path / "flag"))
    assert (tmp_path / "env" / "nurses.json").read_bytes() == (tmp_path / "flag" / "nurses.json").read_bytes()
    monkeypatch.setenv("NURSESCHED_SEED", "x")
    assert run(capsys, "train", "--epochs", "1")[0] == 1


def test_train_smoke_run_and_config_echo(tmp_path, capsys):
    code, out, _ = run(capsys, "train", "--epochs", "2", "--out-dir", str(tmp_path / "run"), "--seed", "1")
    assert code == 0
    echoed = json.loads(out[: out.rindex("}") + 1])
    assert echoed["hidden_dim"] == 128 and echoed["n_heads"] == 4 and echoed["n_layers"] == 2
    assert echoed["lr"] == 3e-4 and echoed["gamma"] == 0.99 and echoed["clip_eps"] == 0.2
    assert echoed["max_nurses"] == 12 and echoed["max_patients"] == 8 and echoed["rollout_len"] == 32
    rows = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
    assert len(rows) == 3
    assert (tmp_path / "run" / "final.bin").exists()


def test_flags_override_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "hidden_dim": 16, "n_heads": 2}))
    code, out, _ = run(capsys, "train", "--config", str(cfg), "--epochs", "2", "--out-dir", str(tmp_path / "r"))
    assert code == 0
    echoed = json.loads(out[: out.rindex("}") + 1])
    assert echoed["epochs"] == 2 and echoed["hidden_dim"] == 16  # flag beats file, file beats default


def test_resume_continues_training(tmp_path, capsys):
    common = ["--hidden-dim", "16", "--n-heads", "2", "--seed", "3", "--out-dir", str(tmp_path / "r")]
    assert run(capsys, "train", "--epochs", "1", *common)[0] == 0
    assert run(capsys, "train", "--epochs", "2", "--resume", *common)[0] == 0
    full = ["--hidden-dim", "16", "--n-heads", "2", "--seed", "3", "--out-dir", str(tmp_path / "f")]
    assert run(capsys, "train", "--epochs", "2", *full)[0] == 0
    assert (tmp_path / "r" / "metrics.csv").read_bytes() == (tmp_path / "f" / "metrics.csv").read_bytes()


def test_config_errors_are_all_listed(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"epochs": -1, "clip_eps": 3, "bogus": 1}))
    code, _, err = run(capsys, "train", "--config", str(cfg))
    assert code == 1
    for needle in ("epochs", "clip_eps", "bogus"):
        assert needle in err


def test_unknown_flag_and_policy_are_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 1
    code, _, err = run(capsys, "eval", "--policy", "nope")
    assert code == 1
    for name in ("greedy_skill", "greedy_nearest", "random", "checkpoint:<path>"):
        assert name in err


def test_missing_checkpoint_is_file_error(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--policy", f"checkpoint:{tmp_path / 'none.bin'}")
    assert code == 1 and "none.bin" in err


def test_eval_is_reproducible_and_reports_documented_keys(tmp_path, capsys):
    args = ["eval", "--policy", "random", "--episodes", "10", "--seed", "1"]
    c1, out1, _ = run(capsys, *args, "--json", str(tmp_path / "m.json"), "--trace", str(tmp_path / "t.jsonl"))
    c2, out2, _ = run(capsys, *args)
    assert c1 == c2 == 0 and out1 == out2
    doc = json.loads((tmp_path / "m.json").read_text())
    assert set(doc) == {"policy", "episodes", "seed", "mean_reward", "skill_match_rate", "mean_travel_km", "expirations", "mean_fatigue"}
    assert len((tmp_path / "t.jsonl").read_text().splitlines()) == 32
    c3, out3, _ = run(capsys, *args, "--workers", "2")
    assert c3 == 0 and out3 == out1


def test_eval_checkpoint(tmp_path, capsys):
    run(capsys, "train", "--epochs", "1", "--hidden-dim", "16", "--n-heads", "2", "--out-dir", str(tmp_path / "r"))
    args = ["eval", "--policy", f"checkpoint:{tmp_path / 'r' / 'final.bin'}", "--episodes", "3", "--seed", "2"]
    code, out, _ = run(capsys, *args)
    assert code == 0
    doc = json.loads(out.strip().splitlines()[-1])
    assert set(doc) >= {"mean_reward", "skill_match_rate", "mean_travel_km", "expirations", "mean_fatigue"}
    assert run(capsys, *args)[1] == out


def _metrics(path, rewards):
    lines = ["epoch,episodic_reward,policy_loss,value_loss,entropy,mean_ratio,clip_fraction"]
    lines += [f"{i + 1},{r!r},0,0,0,1,0" for i, r in enumerate(rewards)]
    path.write_text("\n".join(lines) + "\n")


def test_export_curve(tmp_path, capsys):
    _metrics(tmp_path / "c.csv", [3.5] * 120)
    code, out, _ = run(capsys, "export-curve", str(tmp_path / "c.csv"))
    summary = json.loads(out)
    assert code == 0 and summary["slope"] == 0.0 and summary["points"] == 71
    body = (tmp_path / "c_curve.csv").read_text().splitlines()
    assert body[0] == "epoch,reward,moving_average" and body[-1] == "120,3.5,3.5"

    _metrics(tmp_path / "l.csv", [float(i + 1) for i in range(200)])
    summary = json.loads(run(capsys, "export-curve", str(tmp_path / "l.csv"), "--window", "10")[1])
    assert abs(summary["slope"] - 1.0) < 1e-9

    _metrics(tmp_path / "s.csv", [1.0, 2.0, 6.0])
    summary = json.loads(run(capsys, "export-curve", str(tmp_path / "s.csv"), "--out", str(tmp_path / "o.csv"))[1])
    assert summary["points"] == 1 and summary["slope"] == 0.0
    assert (tmp_path / "o.csv").read_text().splitlines()[-1] == "3,6.0,3.0"


def test_export_curve_reports_bad_line(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("epoch,episodic_reward\n1,2.0\n2,oops\n")
    code, _, err = run(capsys, "export-curve", str(p))
    assert code == 1 and "bad.csv:3" in err


def test_help_lists_flags():
    out = subprocess.run([sys.executable, "-m", "nursesched", "train", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for flag in ("--epochs", "--lr", "--clip-eps", "--hidden-dim", "--resume", "--config", "--seed"):
        assert flag in out.stdout
