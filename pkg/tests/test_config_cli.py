import csv
import json

import numpy as np
import pytest

from monoflow import cli
from monoflow.config import apply_override, config_hash, default_config, load_config, validate
from monoflow.errors import ConfigError
from monoflow.verify import Check


def write_config(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(argv):
    return cli.main([str(a) for a in argv])


# ---------------------------------------------------------------- config documents


def test_default_config_validates():
    doc = validate(default_config())
    assert doc["schema_version"] == 1


def test_schema_version_required(tmp_path):
    doc = default_config()
    del doc["schema_version"]
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, doc))


def test_unknown_key_rejected():
    doc = default_config()
    doc["flow"]["beta"] = 1.0
    with pytest.raises(ConfigError) as info:
        validate(doc)
    assert "beta" in str(info.value)


def test_unknown_variant_rejected():
    doc = default_config()
    doc["flow"]["h"] = "Wasserstein"
    with pytest.raises(ConfigError):
        validate(doc)


def test_override_forms():
    doc = default_config()
    apply_override(doc, "steps=10", "train")
    apply_override(doc, "flow.h=Vanilla", "train")
    apply_override(doc, "init.mean=[0, 0]", "train")
    assert doc["train"]["steps"] == 10
    assert doc["flow"]["h"] == "Vanilla"
    assert doc["init"]["mean"] == [0, 0]
    with pytest.raises(ConfigError):
        apply_override(doc, "no-equals-sign", "train")


def test_config_hash_is_stable_and_sensitive():
    a, b = default_config(), default_config()
    assert config_hash(a) == config_hash(b)
    b["seed"] = 1
    assert config_hash(a) != config_hash(b)


# ---------------------------------------------------------------- exit code 2


def test_missing_alpha_exits_2(tmp_path, capsys):
    doc = default_config()
    del doc["flow"]["alpha"]
    assert run(["flow", "--config", write_config(tmp_path, doc), "--out", tmp_path]) == 2
    assert "alpha" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    doc = default_config()
    doc["train"]["learning_rate"] = 0.1
    assert run(["train", "--config", write_config(tmp_path, doc), "--out", tmp_path]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_bad_loss_range_exits_2(tmp_path):
    assert run(["losses", "--override", "d_min=5", "--override", "d_max=1", "--out", tmp_path]) == 2


def test_bad_thread_count_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("MONOFLOW_THREADS", "zero")
    assert run(["table2", "--out", tmp_path]) == 2


def test_unreadable_config_exits_2(tmp_path):
    assert run(["flow", "--config", tmp_path / "missing.json", "--out", tmp_path]) == 2


def test_thread_count_reads_environment(monkeypatch):
    monkeypatch.setenv("MONOFLOW_THREADS", "3")
    assert cli.thread_count() == 3
    monkeypatch.delenv("MONOFLOW_THREADS")
    assert cli.thread_count() >= 1


# ---------------------------------------------------------------- flow


def test_flow_default_converges_with_metadata(tmp_path):
    assert run(["flow", "--out", tmp_path, "--override", "record_every=50"]) == 0
    rows = read_rows(tmp_path / "flow_trace.csv")
    assert rows[0] == ["time", "mean_0", "mean_1", "cov_00", "cov_01", "cov_11", "kl", "dissipation"]
    assert float(rows[-1][6]) < 0.02
    meta = json.loads((tmp_path / "flow_trace.csv.meta.json").read_text())
    for key in ("version", "config_hash", "seed", "rng", "duration_s"):
        assert key in meta


def test_flow_started_at_target(tmp_path):
    # a Gaussian fit to n draws has sampling KL near 5 / (2n); 4096 particles would
    # put the starting entry at the 1e-3 bound for some seeds
    argv = ["flow", "--out", tmp_path, "--override", "init.mean=[0.0, 0.0]",
            "--override", "init.scale=[[1.0, 0.8], [0.0, 0.5]]", "--override", "steps=500",
            "--override", "particles=16384", "--override", "record_every=10"]
    assert run(argv) == 0
    kl = [float(r[6]) for r in read_rows(tmp_path / "flow_trace.csv")[1:]]
    assert max(kl) < 1e-3


def test_flow_rerun_is_byte_identical(tmp_path):
    argv = ["--override", "steps=200", "--override", "particles=512", "--override", "h=Vanilla"]
    assert run(["flow", "--out", tmp_path / "a", *argv]) == 0
    assert run(["flow", "--out", tmp_path / "b", *argv]) == 0
    assert (tmp_path / "a" / "flow_trace.csv").read_bytes() == (tmp_path / "b" / "flow_trace.csv").read_bytes()


def test_flow_overflow_exits_3_and_names_step(tmp_path, capsys):
    argv = ["flow", "--out", tmp_path, "--override", "h=Exp15", "--override", "u_max=null",
            "--override", "alpha=5.0", "--override", "steps=50", "--override", "particles=256"]
    assert run(argv) == 3
    assert "step" in capsys.readouterr().err


# ---------------------------------------------------------------- train


def test_train_kl_full(tmp_path):
    assert run(["train", "--out", tmp_path, "--override", "divergence=KL", "--override", "ratio_model=Full"]) == 0
    result = json.loads((tmp_path / "train_result.json").read_text())
    assert result["converged"] is True
    assert read_rows(tmp_path / "train_trace.csv")[0] == ["step", "loss", "mu_dist", "cov_dist"]
    assert (tmp_path / "train_trace.csv.meta.json").exists()
    assert (tmp_path / "train_result.json.meta.json").exists()


def test_train_chi_square_detached_not_converged(tmp_path):
    argv = ["train", "--out", tmp_path, "--override", "divergence=ChiSquare", "--override", "ratio_model=Detached"]
    assert run(argv) == 0
    assert json.loads((tmp_path / "train_result.json").read_text())["converged"] is False


def test_train_exp_full_not_converged(tmp_path):
    assert run(["train", "--out", tmp_path, "--override", "divergence=Exp", "--override", "ratio_model=Full"]) in (0, 3)
    assert json.loads((tmp_path / "train_result.json").read_text())["converged"] is False


# ---------------------------------------------------------------- table2 mismatch


def test_table2_one_step_exits_4(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MONOFLOW_THREADS", "1")
    assert run(["table2", "--out", tmp_path, "--override", "steps=1"]) == 4
    err = capsys.readouterr().err
    assert "KL/Full: expected converged, got not converged" in err
    rows = read_rows(tmp_path / "table2.csv")
    assert len(rows) == 19
    assert (tmp_path / "table2.txt").exists() and (tmp_path / "table2.txt.meta.json").exists()


# ---------------------------------------------------------------- losses


def test_losses_csv(tmp_path):
    assert run(["losses", "--out", tmp_path]) == 0
    rows = read_rows(tmp_path / "losses.csv")
    header, body = rows[0], np.array(rows[1:], dtype=float)
    col = {name: body[:, i] for i, name in enumerate(header)}
    zero = np.argmin(np.abs(col["d"]))
    assert col["d"][zero] == 0.0
    assert col["h_Vanilla"][zero] == pytest.approx(np.log(2.0), abs=1e-15)
    for name in header:
        if name.startswith("dh_"):
            assert np.all(col[name] > 0)
    shifted = np.array([col[f"dh_ShiftedVanilla_C{c}"] for c in (0, 1, 3, 5)])
    assert np.all(np.diff(shifted, axis=0) > 0)
    assert (tmp_path / "losses.csv.meta.json").exists()


# ---------------------------------------------------------------- verify


def test_verify_lemma_passes(tmp_path):
    assert run(["verify", "--out", tmp_path, "--override", "suite=lemma"]) == 0
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert report["passed"] and report["checks"]


def test_verify_corollary_passes(tmp_path):
    assert run(["verify", "--out", tmp_path, "--override", "suite=corollary"]) == 0


def test_verify_failure_exits_5(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(cli, "run_suite", lambda name: [Check("fake/always-fails", False, 1.0, 0.0)])
    assert run(["verify", "--out", tmp_path, "--override", "suite=lemma"]) == 5
    assert "fake/always-fails" in capsys.readouterr().err
    assert json.loads((tmp_path / "verify_report.json").read_text())["failed"] == ["fake/always-fails"]
