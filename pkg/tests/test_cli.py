import os

import numpy as np
import pytest

from bayestomo import cli


TINY_EIT = """
[run]
problem = eit
seed = 3

[mesh]
refinement = 3

[prior]
ell = 0.4

[mcmc]
burn_in = 150
samples = 150
adapt_window = 50

[datagen]
count = 24

[train]
epochs = 4
minibatch = 8
channels = 4
holdout = 0.25
"""


def write_config(tmp_path, text=TINY_EIT):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return str(path)


def run(args):
    return cli.main(args)


def test_unknown_key_rejected(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[mcmc]\nstep_size = 0.5\n")
    rc = run(["invert", "--config", str(path)])
    assert rc == 1
    err = capsys.readouterr().err
    assert "[mcmc].step_size" in err


def test_unknown_section_rejected(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[sampler]\ndelta = 0.1\n")
    assert run(["invert", "--config", str(path)]) == 1
    assert "[sampler]" in capsys.readouterr().err


def test_mesh_subcommand(tmp_path):
    out = tmp_path / "out"
    assert run(["mesh", "--out", str(out)]) == 0
    assert (out / "mesh.txt").exists()
    manifest = (out / "manifest.txt").read_text()
    assert "mesh.txt" in manifest and "config_sha256" in manifest


def test_datagen_then_train_then_invert_net(tmp_path, capsys):
    out = tmp_path / "run"
    cfgp = write_config(tmp_path)
    assert run(["datagen", "--config", cfgp, "--out", str(out)]) == 0
    assert run(["train", "--config", cfgp, "--out", str(out)]) == 0
    assert (out / "artifacts" / "model.bin").exists()
    loss_lines = (out / "loss.csv").read_text().splitlines()
    assert loss_lines[0] == "epoch,loss,lr"
    assert len(loss_lines) == 1 + 4
    assert run(["invert", "--config", cfgp, "--out", str(out), "--backend", "net"]) == 0
    assert (out / "fields" / "recon_net.csv").exists()
    assert (out / "metrics.csv").read_text().startswith("backend,mae,mse,linf")


def test_invert_fem_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    cfgp = write_config(tmp_path)
    assert run(["invert", "--config", cfgp, "--out", str(out)]) == 0
    for rel in (
        "fields/recon_fem.csv",
        "fields/lower_fem.csv",
        "fields/upper_fem.csv",
        "fields/truth.csv",
        "chain_fem/trace.csv",
        "chain_fem/samples.bin",
        "measurement.csv",
        "metrics.csv",
        "manifest.txt",
    ):
        assert (out / rel).exists(), rel


def test_invert_idempotent_fields(tmp_path):
    cfgp = write_config(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run(["invert", "--config", cfgp, "--out", str(out1)]) == 0
    assert run(["invert", "--config", cfgp, "--out", str(out2)]) == 0
    for rel in ("fields/recon_fem.csv", "chain_fem/trace.csv", "measurement.csv"):
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel
    # manifests agree on everything (hashes cover only deterministic artifacts)
    assert (out1 / "manifest.txt").read_text() == (out2 / "manifest.txt").read_text()


def test_train_without_dataset_fails(tmp_path, capsys):
    cfgp = write_config(tmp_path)
    rc = run(["train", "--config", cfgp, "--out", str(tmp_path / "empty")])
    assert rc == 2
    assert "datagen" in capsys.readouterr().err


def test_invert_net_without_model_fails(tmp_path, capsys):
    cfgp = write_config(tmp_path)
    rc = run(["invert", "--config", cfgp, "--out", str(tmp_path / "none"), "--backend", "net"])
    assert rc == 1
    assert "train" in capsys.readouterr().err


def test_compare_emits_one_row_per_backend(tmp_path):
    out = tmp_path / "run"
    cfgp = write_config(tmp_path)
    assert run(["datagen", "--config", cfgp, "--out", str(out)]) == 0
    assert run(["train", "--config", cfgp, "--out", str(out)]) == 0
    assert run(["compare", "--config", cfgp, "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "backend,mae,mse,linf,inv_time_seconds"
    assert len(lines) == 3
    assert lines[1].startswith("fem,") and lines[2].startswith("net,")
    maes = [float(ln.split(",")[1]) for ln in lines[1:]]
    assert all(np.isfinite(maes))


def test_phantom_circles_config(tmp_path):
    cfgp = tmp_path / "run.ini"
    cfgp.write_text(TINY_EIT + "\n[phantom]\nkind = circles\ncircles = 0.2,0.1,0.3\n")
    out = tmp_path / "run"
    assert run(["invert", "--config", str(cfgp), "--out", str(out)]) == 0


def test_qpat_invert_smoke(tmp_path):
    cfgp = tmp_path / "q.ini"
    cfgp.write_text(
        """
[run]
problem = qpat
seed = 1

[mesh]
refinement = 2

[star]
truncation = 6

[mcmc]
burn_in = 60
samples = 60
adapt_window = 20
"""
    )
    out = tmp_path / "qrun"
    assert run(["invert", "--config", str(cfgp), "--out", str(out)]) == 0
    assert (out / "fields" / "recon_fem.csv").exists()


def test_seed_flag_overrides(tmp_path):
    cfgp = write_config(tmp_path)
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    assert run(["invert", "--config", cfgp, "--out", str(out1), "--seed", "11"]) == 0
    assert run(["invert", "--config", cfgp, "--out", str(out2), "--seed", "12"]) == 0
    a = (out1 / "chain_fem" / "trace.csv").read_bytes()
    b = (out2 / "chain_fem" / "trace.csv").read_bytes()
    assert a != b


def test_full_scale_flag_changes_counts():
    cfg = cli.load_config(None)
    cli.apply_full_scale(cfg)
    assert cfg.getint("datagen", "count") == 7200
    assert cfg.getint("train", "epochs") == 2000
    assert cfg.getint("mcmc", "burn_in") == 50000


def test_bench_and_hellinger_smoke(tmp_path):
    out = tmp_path / "run"
    cfgp = tmp_path / "b.ini"
    cfgp.write_text(TINY_EIT + "\n[bench]\nrefinements = 3,4,5\niterations = 2\n"
                    "[hellinger]\ndraws = 110\n")
    assert run(["datagen", "--config", str(cfgp), "--out", str(out)]) == 0
    assert run(["train", "--config", str(cfgp), "--out", str(out)]) == 0
    assert run(["bench", "--config", str(cfgp), "--out", str(out)]) == 0
    lines = (out / "scaling.csv").read_text().splitlines()
    assert lines[0] == "dim,fem_seconds,net_seconds"
    assert len(lines) == 4
    dims = [int(ln.split(",")[0]) for ln in lines[1:]]
    assert dims == sorted(dims)
    assert run(["hellinger", "--config", str(cfgp), "--out", str(out)]) == 0
    hl = (out / "hellinger.csv").read_text().splitlines()
    assert hl[0] == "draws,l2mu_error,hellinger"
    draws, l2mu, hell = hl[1].split(",")
    assert float(l2mu) > 0 and 0.0 <= float(hell) <= 1.0
