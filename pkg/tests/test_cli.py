import json

import pytest

from tradeslab.cli import build_report, main
from tradeslab.telemetry import read_epochs_csv

SMALL = {
    "seed": 3,
    "dataset": {"classes": 3, "per_class": 20, "dim": 4, "spread": 0.3},
    "model": {"hidden_dims": [8]},
    "train": {"epochs": 2, "batch_size": 16, "val_steps": 3},
    "attack": {"epsilon": 0.05, "alpha": 0.0125, "steps": 3},
    "eval": {"pgd_steps": 3, "square_queries": 20},
}


def write_config(tmp_path, raw=SMALL, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_config(tmp)
    assert main(["train", "--config", cfg, "--out", str(tmp / "out")]) == 0
    return tmp, cfg


def test_train_writes_four_files(run_dir):
    tmp, _ = run_dir
    names = sorted(p.name for p in (tmp / "out").iterdir())
    assert names == ["batches.jsonl", "best.ckpt", "epochs.csv", "resolved-config.json"]
    assert len(read_epochs_csv(tmp / "out" / "epochs.csv")) == 2


def test_resolved_config_reproduces_run(run_dir, tmp_path):
    tmp, _ = run_dir
    resolved = str(tmp / "out" / "resolved-config.json")
    assert main(["train", "--config", resolved, "--out", str(tmp_path / "again")]) == 0
    for name in ("epochs.csv", "batches.jsonl", "best.ckpt", "resolved-config.json"):
        assert (tmp_path / "again" / name).read_bytes() == (tmp / "out" / name).read_bytes()


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {**SMALL, "train": {"betaa": 1.0}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "train.betaa" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_exit_3(tmp_path):
    cfg = write_config(tmp_path, {**SMALL, "train": {"epochs": 3, "lr0": 1e200, "batch_size": 16,
                                                     "val_steps": 3}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_eval_report(run_dir, tmp_path, capsys):
    tmp, cfg = run_dir
    out = tmp_path / "eval.json"
    assert main(["eval", "--ckpt", str(tmp / "out" / "best.ckpt"), "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    for key in ("clean_acc", "pgd_acc", "square_acc", "fgsm_acc", "masking_verdict", "whitebox_blackbox_gap"):
        assert key in rep
    assert rep["masking_verdict"] == (rep["pgd_acc"] - rep["square_acc"] >= 0.08)
    assert rep["pgd_acc"] <= rep["clean_acc"]


def test_eval_zero_epsilon(run_dir, tmp_path):
    tmp, _ = run_dir
    cfg = write_config(tmp_path, {**SMALL, "attack": {"epsilon": 0.0, "alpha": 0.01, "steps": 3}})
    out = tmp_path / "eval.json"
    assert main(["eval", "--ckpt", str(tmp / "out" / "best.ckpt"), "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["pgd_acc"] == rep["square_acc"] == rep["fgsm_acc"] == rep["clean_acc"]


def test_eval_corrupt_checkpoint(run_dir, tmp_path, capsys):
    _, cfg = run_dir
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"TLCKPT01garbage")
    assert main(["eval", "--ckpt", str(bad), "--config", cfg]) == 2
    assert "error" in capsys.readouterr().err


def test_eval_spec_mismatch(run_dir, tmp_path):
    tmp, _ = run_dir
    cfg = write_config(tmp_path, {**SMALL, "dataset": {**SMALL["dataset"], "dim": 5}})
    assert main(["eval", "--ckpt", str(tmp / "out" / "best.ckpt"), "--config", cfg]) == 2


def test_eval_unknown_attack(run_dir):
    tmp, cfg = run_dir
    assert main(["eval", "--ckpt", str(tmp / "out" / "best.ckpt"), "--config", cfg, "--attacks", "apgd"]) == 2


def test_landscape(run_dir, tmp_path):
    tmp, cfg = run_dir
    ckpt = str(tmp / "out" / "best.ckpt")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["landscape", "--ckpt", ckpt, "--config", cfg, "--index", "2", "--res", "5", "--out", str(a)]) == 0
    assert main(["landscape", "--ckpt", ckpt, "--config", cfg, "--index", "2", "--res", "5", "--out", str(b)]) == 0
    lines = a.read_text().splitlines()
    assert lines[0] == "a,b,z" and len(lines) == 26
    assert a.read_bytes() == b.read_bytes()
    ev = tmp_path / "eval.json"
    main(["eval", "--ckpt", ckpt, "--config", cfg, "--attacks", "clean", "--out", str(ev)])
    centre = [r for r in lines[1:] if r.startswith("0.0,0.0,")][0]
    assert float(centre.split(",")[2]) == json.loads(ev.read_text())["per_sample_clean_loss"][2]


def test_landscape_index_out_of_range(run_dir, tmp_path):
    tmp, cfg = run_dir
    assert main(["landscape", "--ckpt", str(tmp / "out" / "best.ckpt"), "--config", cfg,
                 "--index", "999", "--out", str(tmp_path / "x.csv")]) == 2


def test_report_on_run(run_dir, capsys):
    tmp, _ = run_dir
    assert main(["report", str(tmp / "out")]) == 0
    assert "verdict:" in capsys.readouterr().out


def test_report_missing_dir(tmp_path):
    assert main(["report", str(tmp_path / "nowhere")]) == 2


def _row(epoch, fosc=0.01, acc=0.6, norm=1.0, gap=0.1, guard=False, noised=0):
    return {"epoch": epoch, "fosc_mean": fosc, "clean_train_acc": acc, "w_grad_norm_mean": norm,
            "gap": gap, "guard_triggered": guard, "noise_batches_applied": noised}


def test_report_quiet_run():
    assert "no instability detected" in build_report([_row(e) for e in range(5)], 0.1)


def test_report_names_spike_epoch():
    rows = [_row(e) for e in range(100, 105)]
    rows[2] = _row(102, fosc=0.5, guard=True)
    text = build_report(rows, 0.1)
    assert "instability first occurs at epoch 102" in text


def test_report_self_healing():
    rows = [_row(140, fosc=0.3, acc=0.61, norm=6.0), _row(141, fosc=0.005, acc=0.58, norm=5.0),
            _row(142, fosc=0.004, acc=0.6, norm=3.2)]
    assert "self-healing signature at epochs: 141" in build_report(rows, 0.1)


def test_report_negative_gap():
    rows = [_row(0), _row(1, gap=-0.05)]
    assert "negative clean-adversarial gap at epochs: 1" in build_report(rows, 0.1)


def test_calibrate(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["calibrate-fosc", "--config", cfg, "--epochs", "1"]) == 0
    assert "suggested fosc_threshold" in capsys.readouterr().out


def test_thread_env(run_dir, monkeypatch):
    _, cfg = run_dir
    monkeypatch.setenv("LAB_THREADS", "zero")
    assert main(["calibrate-fosc", "--config", cfg, "--epochs", "1"]) == 2
    monkeypatch.setenv("LAB_THREADS", "1")
    assert main(["calibrate-fosc", "--config", cfg, "--epochs", "1"]) == 0
