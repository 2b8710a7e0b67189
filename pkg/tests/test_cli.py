import csv
import json
from pathlib import Path

import numpy as np
import pytest

from baryforge import cli
from baryforge.checkpoint import load_checkpoint
from baryforge.config import ConfigError, load_config
from baryforge.datagen import load_csv, save_csv

MINI_CONFIG = """
[experiment]
name = mini
seed = 3

[problem]
kind = custom
k = 2
epsilon = 0.3
weights = 0.5, 0.5

[source.0]
kind = gaussian
mean = -1.0
cov_diag = 0.2

[source.1]
kind = gaussian
mean = 1.0
cov_diag = 0.2

[cost.0]
kind = sq_euclid
dim = 1

[cost.1]
kind = sq_euclid
dim = 1

[net]
hidden = 4
activation = softplus

[train]
iterations = 3
batch_size = 8
learning_rate = 0.01
ula_steps = 15
ula_sqrt_step = 0.1

[eval]
metrics = moments, dual_gap
n_x = 20
pooled_samples = 60
grid_lo = -4
grid_hi = 4
grid_m = 60

[io]
out_dir = {out}
"""


@pytest.fixture
def mini_config(tmp_path):
    path = tmp_path / "mini.ini"
    path.write_text(MINI_CONFIG.format(out=tmp_path / "run"))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_config_unknown_key_rejected(tmp_path, mini_config):
    bad = tmp_path / "bad.ini"
    bad.write_text(mini_config.read_text().replace("batch_size = 8", "batch_sized = 8"))
    with pytest.raises(ConfigError, match="batch_sized"):
        load_config(bad)
    rc = cli.main(["train", "--config", str(bad)])
    assert rc == 2


def test_config_unknown_section_rejected(tmp_path, mini_config):
    bad = tmp_path / "bad2.ini"
    bad.write_text(mini_config.read_text() + "\n[plotting]\nstyle = fancy\n")
    with pytest.raises(ConfigError, match="plotting"):
        load_config(bad)


def test_config_dimension_mismatch_rejected(tmp_path, mini_config):
    bad = tmp_path / "bad3.ini"
    bad.write_text(mini_config.read_text().replace("mean = -1.0", "mean = -1.0, 0.0"))
    with pytest.raises(ConfigError):
        load_config(bad)


def test_config_weights_must_match_k(tmp_path, mini_config):
    with pytest.raises(ConfigError, match="weights"):
        load_config(mini_config, ["problem.weights=0.2, 0.3, 0.5"])


def test_config_overrides(mini_config):
    cfg = load_config(mini_config, ["train.iterations=7", "experiment.seed=11"])
    assert cfg.train.iterations == 7
    assert cfg.seed == 11


def test_presets_parse():
    for name in ("twister", "twister_is", "gaussians", "sphere"):
        cfg = load_config(Path("presets") / f"{name}.ini")
        assert cfg.problem.k_count >= 3
        assert cfg.train.ula.epsilon == cfg.problem.epsilon


def test_cmd_train_writes_artifacts(tmp_path, mini_config):
    out = tmp_path / "run"
    rc = cli.main(["train", "--config", str(mini_config)])
    assert rc == 0
    assert (out / "checkpoint.eotb").exists()
    rows = read_rows(out / "loss_history.csv")
    assert rows[0] == ["iter", "L_hat", "wallclock_s"]
    assert len(rows) == 4
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["resolved"]["experiment"]["seed"] == 3
    assert "config_sha256" in manifest


def test_cmd_train_deterministic_loss_history(tmp_path, mini_config):
    rc = cli.main(["train", "--config", str(mini_config), "--out", str(tmp_path / "a")])
    assert rc == 0
    rc = cli.main(["train", "--config", str(mini_config), "--out", str(tmp_path / "b")])
    assert rc == 0
    rows_a = read_rows(tmp_path / "a" / "loss_history.csv")
    rows_b = read_rows(tmp_path / "b" / "loss_history.csv")
    # Deterministic up to the wallclock column, which measures real time.
    assert [r[:2] for r in rows_a] == [r[:2] for r in rows_b]


def test_loss_history_reparses_numeric(tmp_path, mini_config):
    cli.main(["train", "--config", str(mini_config), "--out", str(tmp_path / "r")])
    data = load_csv(tmp_path / "r" / "loss_history.csv")
    assert data.shape == (3, 3)


def test_cmd_sample_roundtrip(tmp_path, mini_config):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(mini_config)])
    out_csv = tmp_path / "samples.csv"
    rc = cli.main(
        [
            "sample",
            "--checkpoint",
            str(out / "checkpoint.eotb"),
            "--k",
            "0",
            "--n-points",
            "6",
            "--n-per-point",
            "2",
            "--out-csv",
            str(out_csv),
        ]
    )
    assert rc == 0
    data = load_csv(out_csv)
    assert data.shape == (12, 2)  # (x, y) columns for 6 points x 2 draws


def test_cmd_sample_header_only(tmp_path, mini_config):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(mini_config)])
    out_csv = tmp_path / "empty.csv"
    rc = cli.main(
        [
            "sample",
            "--checkpoint",
            str(out / "checkpoint.eotb"),
            "--k",
            "1",
            "--n-per-point",
            "0",
            "--out-csv",
            str(out_csv),
        ]
    )
    assert rc == 0
    rows = read_rows(out_csv)
    assert rows == [["x0", "y0"]]


def test_cmd_sample_from_csv_and_determinism(tmp_path, mini_config):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(mini_config)])
    xs = tmp_path / "xs.csv"
    save_csv(xs, np.array([[0.0], [0.5]]))
    args = [
        "sample",
        "--checkpoint",
        str(out / "checkpoint.eotb"),
        "--k",
        "0",
        "--x-csv",
        str(xs),
        "--n-per-point",
        "3",
        "--seed",
        "21",
    ]
    a_csv, b_csv = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out-csv", str(a_csv)]) == 0
    assert cli.main(args + ["--out-csv", str(b_csv)]) == 0
    assert a_csv.read_bytes() == b_csv.read_bytes()


def test_cmd_sample_k1_checkpoint_clusters_near_x(tmp_path):
    # K = 1 pins f = 0: the plan at x is N(x, eps I).
    config = tmp_path / "k1.ini"
    config.write_text(
        """
[experiment]
name = k1
seed = 0

[problem]
kind = custom
k = 1
epsilon = 0.2
weights = uniform

[source.0]
kind = gaussian
mean = 0.5
cov_diag = 0.1

[cost.0]
kind = sq_euclid
dim = 1

[net]
hidden = 3

[train]
iterations = 1
batch_size = 4
ula_steps = 400
ula_sqrt_step = 0.1

[io]
out_dir = {out}
""".format(out=tmp_path / "k1run")
    )
    cli.main(["train", "--config", str(config)])
    xs = tmp_path / "xs.csv"
    save_csv(xs, np.array([[0.0]]))
    out_csv = tmp_path / "plan.csv"
    rc = cli.main(
        [
            "sample",
            "--checkpoint",
            str(tmp_path / "k1run" / "checkpoint.eotb"),
            "--k",
            "0",
            "--x-csv",
            str(xs),
            "--n-per-point",
            "600",
            "--out-csv",
            str(out_csv),
        ]
    )
    assert rc == 0
    data = load_csv(out_csv)
    ys = data[:, 1]
    assert abs(ys.mean() - 0.0) < 3 * np.sqrt(0.2 / 600) + 0.01
    assert abs(ys.var(ddof=1) - 0.2) < 0.15 * 0.2


def test_cmd_eval_writes_metrics(tmp_path, mini_config):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(mini_config)])
    rc = cli.main(
        [
            "eval",
            "--checkpoint",
            str(out / "checkpoint.eotb"),
            "--config",
            str(mini_config),
            "--out",
            str(tmp_path / "metrics.csv"),
        ]
    )
    assert rc == 0
    rows = read_rows(tmp_path / "metrics.csv")
    names = [r[0] for r in rows[1:]]
    assert "pooled_mean_norm" in names
    assert "dual_gap" in names
    assert "kl_bound" in names


def test_cmd_oracle_grid(tmp_path, mini_config):
    rc = cli.main(["oracle", "--config", str(mini_config), "--out", str(tmp_path / "oracle")])
    assert rc == 0
    grid_rows = read_rows(tmp_path / "oracle" / "oracle_grid.csv")
    assert grid_rows[0] == ["y0", "f0", "f1", "q_star"]
    info = json.loads((tmp_path / "oracle" / "oracle_grid.json").read_text())
    assert info["grad_sup_norm"] < 1e-8
    # Barycenter weights on the grid are a probability vector.
    q = np.array([float(r[3]) for r in grid_rows[1:]])
    assert abs(q.sum() - 1.0) < 1e-9


def test_cmd_oracle_gaussians(tmp_path):
    config = tmp_path / "g.ini"
    config.write_text(
        "[problem]\nkind = gaussians\ndim = 2\nepsilon = 0.01\n"
        "[train]\niterations = 1\n"
        f"[io]\nout_dir = {tmp_path / 'g_out'}\n"
    )
    rc = cli.main(["oracle", "--config", str(config)])
    assert rc == 0
    mean = load_csv(tmp_path / "g_out" / "oracle_barycenter_mean.csv")
    cov = load_csv(tmp_path / "g_out" / "oracle_barycenter_cov.csv")
    assert mean.shape == (1, 2)
    assert cov.shape == (2, 2)
    assert np.allclose(cov, cov.T)


def test_cmd_selftest_passes():
    assert cli.main(["selftest"]) == 0


def test_cmd_selftest_catches_sign_error(monkeypatch, capsys):
    # Mutation sentinel: flip the sign of the assembled dual gradient and the
    # finite-difference property must fail.
    from baryforge import eotcore

    original = eotcore.loss_grad_grid

    def flipped(*args, **kwargs):
        return [-g for g in original(*args, **kwargs)]

    monkeypatch.setattr(eotcore, "loss_grad_grid", flipped)
    rc = cli.main(["selftest"])
    out = capsys.readouterr().out
    assert rc == 1
    assert "FAIL" in out and "dual_gradient_assembly" in out


def test_checkpoint_version_rejected(tmp_path, mini_config):
    out = tmp_path / "run"
    cli.main(["train", "--config", str(mini_config)])
    raw = bytearray((out / "checkpoint.eotb").read_bytes())
    raw[4:8] = (7).to_bytes(4, "little")
    newer = tmp_path / "newer.eotb"
    newer.write_bytes(bytes(raw))
    with pytest.raises(Exception, match="newer"):
        load_checkpoint(newer)


def test_cmd_eval_missing_oracle_is_an_error(tmp_path, mini_config):
    # l2_uvp needs Gaussian sources; a comet checkpoint must exit 2.
    out = tmp_path / "runx"
    cli.main(
        [
            "train",
            "--config",
            str(Path("presets/twister.ini")),
            "--out",
            str(out),
            "--override",
            "train.iterations=2",
            "--override",
            "train.ula_steps=10",
            "--override",
            "train.batch_size=8",
        ]
    )
    rc = cli.main(
        [
            "eval",
            "--checkpoint",
            str(out / "checkpoint.eotb"),
            "--config",
            str(Path("presets/twister.ini")),
            "--override",
            "eval.metrics=l2_uvp",
        ]
    )
    assert rc == 2


def test_manifest_hashes_csv_inputs(tmp_path):
    data = tmp_path / "pts.csv"
    save_csv(data, np.array([[0.0], [1.0], [2.0]]))
    config = tmp_path / "emp.ini"
    config.write_text(
        f"""
[problem]
kind = custom
k = 1
epsilon = 0.5
weights = uniform

[source.0]
kind = csv
path = {data}

[cost.0]
kind = sq_euclid
dim = 1

[net]
hidden = 3

[train]
iterations = 1
batch_size = 4
ula_steps = 5
ula_sqrt_step = 0.1

[io]
out_dir = {tmp_path / "emp_run"}
"""
    )
    rc = cli.main(["train", "--config", str(config)])
    assert rc == 0
    manifest = json.loads((tmp_path / "emp_run" / "run_manifest.json").read_text())
    assert str(data) in manifest["input_sha256"]


def test_sphere_preset_smoke(tmp_path):
    # Projected-ULA training on the sphere: runs, and plan samples stay on
    # the manifold.
    out = tmp_path / "sphere"
    rc = cli.main(
        [
            "train",
            "--config",
            "presets/sphere.ini",
            "--out",
            str(out),
            "--override",
            "train.iterations=2",
            "--override",
            "train.ula_steps=20",
            "--override",
            "train.batch_size=16",
        ]
    )
    assert rc == 0
    plan = tmp_path / "plan.csv"
    rc = cli.main(
        [
            "sample",
            "--checkpoint",
            str(out / "checkpoint.eotb"),
            "--k",
            "2",
            "--n-points",
            "32",
            "--n-per-point",
            "1",
            "--ula-steps",
            "20",
            "--out-csv",
            str(plan),
        ]
    )
    assert rc == 0
    data = load_csv(plan)
    ys = data[:, 3:]
    assert np.max(np.abs(np.linalg.norm(ys, axis=1) - 1.0)) < 1e-9
