import json
import os
import stat

import numpy as np
import pytest

from dispatchkd import cli
from dispatchkd.selection import SelectionCriterion
from dispatchkd.spectral import SignalSpec, save_wav, synthesize_mixture

FAST = ["--seed", "3", "--samples", "2", "--duration", "0.25", "--steps", "10", "--checkpoint-interval", "5"]


def run(tmp_path, name, *argv):
    out = tmp_path / name
    code = cli.main([argv[0], "--out", str(out), *argv[1:]])
    return code, out


def read_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.mark.parametrize("command", ["analyze", "distill", "ablate"])
def test_deterministic(tmp_path, command):
    c1, a = run(tmp_path, "a", command, *FAST)
    c2, b = run(tmp_path, "b", command, *FAST)
    assert c1 == c2 == 0
    assert read_bytes(a) == read_bytes(b)


def test_analyze_outputs(tmp_path):
    code, out = run(tmp_path, "o", "analyze", *FAST)
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == ["analyze.json", "histogram.csv", "trajectories.jsonl"]
    rows = cli.read_commented_csv(out / "histogram.csv")
    for sample in {r["sample"] for r in rows}:
        assert sum(float(r["fraction"]) for r in rows if r["sample"] == sample) == pytest.approx(1.0)
    first = json.loads((out / "trajectories.jsonl").read_text().splitlines()[0])
    assert set(first) == {"step", "sample", "patch", "error"}
    assert (out / "histogram.csv").read_text().startswith("# config: {")


def test_defaults_echoed(tmp_path):
    code, out = run(tmp_path, "o", "distill", *FAST)
    assert code == 0
    settings = json.loads((out / "report.json").read_text())["settings"]
    assert settings["patch_bins"] == 20
    assert settings["k_percent"] == 80
    assert settings["alpha"] == 0.5
    assert settings["mssp_low"] is None
    cfg = json.loads((out / "report.json").read_text())["config"]
    assert cfg["mssp"] is None


def test_mssp_flags(tmp_path):
    code, out = run(tmp_path, "o", "distill", *FAST, "--mssp-high", "30")
    assert code == 0
    cfg = json.loads((out / "report.json").read_text())["config"]
    assert cfg["mssp"] == [10, 30]


def test_ablation_table(tmp_path):
    code, out = run(tmp_path, "o", "ablate", *FAST)
    assert code == 0
    rows = cli.read_commented_csv(out / "ablation.csv")
    assert [r["criterion"] for r in rows] == [c.value for c in SelectionCriterion]
    assert len({r["initial_loss"] for r in rows}) == 1


def test_distill_checkpoint_and_kgs(tmp_path):
    code, out = run(tmp_path, "o", "distill", *FAST)
    assert code == 0
    gains = json.loads((out / "checkpoint.json").read_text())
    assert len(gains) == 257
    kgs = json.loads((out / "kgs_report.json").read_text())
    assert kgs["n_selected"] == sum(kgs["mask"])
    assert kgs["n_selected"] == -(-kgs["n_patches"] * 80 // 100)


def test_report(tmp_path, capsys):
    run(tmp_path, "o", "distill", *FAST)
    run(tmp_path, "o", "analyze", *FAST)
    capsys.readouterr()
    assert cli.main(["report", "--out", str(tmp_path / "o")]) == 0
    text = capsys.readouterr().out
    assert "distill: loss" in text and "patch categories" in text


def test_report_missing_directory(tmp_path, capsys):
    assert cli.main(["report", "--out", str(tmp_path / "nothing")]) == 1
    assert str(tmp_path / "nothing") in capsys.readouterr().err


def test_missing_input_named(tmp_path, capsys):
    missing = tmp_path / "missing.wav"
    code, _ = run(tmp_path, "o", "distill", "--seed", "1", "--clean", str(missing), "--noisy", str(missing))
    assert code == 1
    assert str(missing) in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("k", ["0", "-3", "101"])
def test_bad_k_percent(tmp_path, capsys, k):
    code, out = run(tmp_path, "o", "distill", *FAST, "--k-percent", k)
    assert code == 1
    assert "k_percent" in capsys.readouterr().err
    assert not out.exists()


def test_seed_required(tmp_path, capsys):
    code, _ = run(tmp_path, "o", "distill", "--steps", "1")
    assert code == 1
    assert "--seed" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# settings\nalpha = 0.25\nk-percent = 50\nseed = 3\n")
    code, out = run(tmp_path, "o", "distill", *FAST, "--config", str(conf), "--k-percent", "60")
    assert code == 0
    settings = json.loads((out / "report.json").read_text())["settings"]
    assert settings["alpha"] == 0.25  # from the file
    assert settings["k_percent"] == 60  # flag wins over file
    assert settings["patch_bins"] == 20  # default


def test_config_errors(tmp_path, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text("nonsense = 1\n")
    code, _ = run(tmp_path, "o", "distill", *FAST, "--config", str(conf))
    assert code == 1
    assert "unknown key" in capsys.readouterr().err
    code, _ = run(tmp_path, "o", "distill", *FAST, "--config", str(tmp_path / "none.conf"))
    assert code == 1


def test_wav_inputs(tmp_path):
    paths = []
    for i in range(2):
        clean, _, mix = synthesize_mixture(SignalSpec("speech", 0.25), SignalSpec("noise", 0.25), 5.0, seed=i)
        save_wav(clean, tmp_path / f"c{i}.wav")
        save_wav(mix, tmp_path / f"n{i}.wav")
        paths.append((tmp_path / f"c{i}.wav", tmp_path / f"n{i}.wav"))
    code, out = run(
        tmp_path, "o", "distill", "--seed", "0", "--steps", "5",
        "--clean", *[str(c) for c, _ in paths], "--noisy", *[str(n) for _, n in paths],
    )
    assert code == 0
    assert np.isfinite(json.loads((out / "report.json").read_text())["final_corrupted_error"])


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "d" / "x.txt"
    cli.atomic_write(target, "one\n")
    cli.atomic_write(target, "two\n")
    assert target.read_text() == "two\n"
    assert os.listdir(target.parent) == ["x.txt"]
    assert stat.S_IMODE(target.stat().st_mode) == 0o644


def test_failed_render_writes_nothing(tmp_path, monkeypatch):
    def boom(args, s):
        raise cli.CliError("render failed")

    monkeypatch.setitem(cli.COMMANDS, "distill", boom)
    code, out = run(tmp_path, "o", "distill", *FAST)
    assert code == 1
    assert not out.exists()
