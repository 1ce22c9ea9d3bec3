import csv
import json

import numpy as np
import pytest

from linearizer.checkpoint import load_checkpoint
from linearizer.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, OUT_DIR_ENV, main

SMALL = ["--blocks", "2", "--width", "16", "--n-points", "256", "--batch", "32"]


@pytest.fixture(autouse=True)
def _no_env_dir(monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def read_jsonl(path):
    return [json.loads(line) for line in open(path).read().splitlines()]


@pytest.fixture(scope="module")
def flow_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("flow")
    assert main(["train-flow", "--steps", "30", "--log-every", "10", *SMALL, "--out-dir", str(out)]) == EXIT_OK
    return out


def test_verify_passes(tmp_path, capsys):
    assert main(["verify", "--trials", "200", "--out-dir", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report["ok"] and len(report["checks"]) > 20
    assert "all checks passed" in capsys.readouterr().out
    assert len(read_jsonl(tmp_path / "verify.jsonl")) == len(report["checks"])


def test_verify_impossible_tolerance_is_numeric_failure(tmp_path):
    assert main(["verify", "--trials", "20", "--tolerance", "1e-300", "--out-dir", str(tmp_path)]) == EXIT_NUMERIC


def test_train_zero_steps_logs_once(tmp_path):
    assert main(["train-flow", "--steps", "0", *SMALL, "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = read_jsonl(tmp_path / "train-flow.jsonl")
    assert len(rows) == 1 and rows[0]["step"] == 0
    model = load_checkpoint(tmp_path / "flow.ckpt", "flow")
    assert model.dim == 2
    cfg = json.loads((tmp_path / "train-flow.config.json").read_text())
    assert cfg["train"]["steps"] == 0


def test_metrics_steps_increase(flow_dir):
    steps = [r["step"] for r in read_jsonl(flow_dir / "train-flow.jsonl")]
    assert steps == [0, 10, 20, 30]


def test_rk4_collapse_then_one_step_matches_iterative(flow_dir, tmp_path):
    ck = str(flow_dir / "flow.ckpt")
    assert main(["collapse", "--checkpoint", ck, "--steps", "100", "--scheme", "rk4",
                 "--out-dir", str(tmp_path / "c")]) == EXIT_OK
    op = str(tmp_path / "c" / "collapsed.op")
    assert main(["sample", "--checkpoint", ck, "--one-step", "--collapsed", op, "--count", "300",
                 "--out-dir", str(tmp_path / "one")]) == EXIT_OK
    assert main(["sample", "--checkpoint", ck, "--steps", "100", "--scheme", "rk4", "--count", "300",
                 "--out-dir", str(tmp_path / "it")]) == EXIT_OK
    h1, one = read_csv(tmp_path / "one" / "samples.csv")
    h2, it = read_csv(tmp_path / "it" / "samples.csv")
    assert h1 == h2 == ["sample_id", "step", "x0", "x1"]
    assert one.shape == it.shape == (300, 4)
    assert np.array_equal(one[:, :2], it[:, :2])
    assert np.abs(one[:, 2:] - it[:, 2:]).max() < 1e-6


def test_trajectory_csv(flow_dir, tmp_path):
    ck = str(flow_dir / "flow.ckpt")
    assert main(["sample", "--checkpoint", ck, "--steps", "5", "--count", "4", "--trajectory",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    _, rows = read_csv(tmp_path / "samples.csv")
    assert rows.shape == (4 * 6, 4)
    assert rows[:6, 1].tolist() == [0, 1, 2, 3, 4, 5]


def test_collapsed_operator_from_other_model_rejected(flow_dir, tmp_path):
    assert main(["train-flow", "--steps", "0", *SMALL, "--seed", "7", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert main(["collapse", "--checkpoint", str(tmp_path / "flow.ckpt"), "--steps", "3",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    code = main(["sample", "--checkpoint", str(flow_dir / "flow.ckpt"), "--one-step",
                 "--collapsed", str(tmp_path / "collapsed.op"), "--out-dir", str(tmp_path / "s")])
    assert code == EXIT_USAGE


def test_invert_roundtrip(flow_dir, tmp_path):
    assert main(["invert", "--checkpoint", str(flow_dir / "flow.ckpt"), "--count", "50",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    header, rows = read_csv(tmp_path / "inversion.csv")
    assert header[-1] == "residual" and rows.shape == (50, 8)
    assert rows[:, -1].max() < 1e-6


@pytest.mark.parametrize("combine", ["induced", "euclidean"])
def test_interp_endpoint(flow_dir, tmp_path, combine):
    from linearizer.data import dataset

    pts = dataset("two-moons", 2, 0)
    assert main(["interp", "--checkpoint", str(flow_dir / "flow.ckpt"), "--a", "0", "--combine", combine,
                 "--n-points", "2", "--out-dir", str(tmp_path)]) == EXIT_OK
    _, rows = read_csv(tmp_path / "interp.csv")
    assert np.abs(rows[0, 1:] - pts[0]).max() < 1e-6


def test_runs_are_byte_identical(tmp_path):
    args = ["train-flow", "--steps", "5", *SMALL]
    assert main([*args, "--out-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main([*args, "--out-dir", str(tmp_path / "b")]) == EXIT_OK
    for name in ("flow.ckpt", "train-flow.jsonl", "train-flow.config.json"):
        a, b = (tmp_path / d / name for d in "ab")
        if name.endswith("config.json"):
            # the resolved config records its own output directory
            ja, jb = json.loads(a.read_text()), json.loads(b.read_text())
            ja.pop("paths"), jb.pop("paths")
            assert ja == jb
        else:
            assert a.read_bytes() == b.read_bytes(), name


def test_usage_errors(tmp_path, capsys):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["verify", "--nonsense"]) == EXIT_USAGE
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"train": {"stpes": 1}}))
    assert main(["train-flow", "--config", str(f)]) == EXIT_USAGE
    assert "train.stpes" in capsys.readouterr().err


def test_io_errors(tmp_path, capsys):
    assert main(["sample", "--checkpoint", str(tmp_path / "nope.ckpt"), "--out-dir", str(tmp_path)]) == EXIT_IO
    bad = tmp_path / "pts.csv"
    bad.write_text("x0,x1\n1.0,2.0\n3.0,oops\n")
    code = main(["train-flow", "--steps", "1", *SMALL, "--input", str(bad), "--out-dir", str(tmp_path)])
    assert code == EXIT_IO
    assert "pts.csv:3:" in capsys.readouterr().err


def test_dimension_mismatch_is_io_error(tmp_path):
    pts = tmp_path / "pts.csv"
    pts.write_text("1,2,3\n4,5,6\n")
    assert main(["train-flow", "--steps", "1", *SMALL, "--input", str(pts), "--out-dir", str(tmp_path)]) == EXIT_IO


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(tmp_path, capsys):
    # an absurd learning rate overflows the coupling scales within a few steps
    code = main(["train-flow", "--steps", "50", *SMALL, "--lr", "1e6", "--loss-norm", "data",
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_NUMERIC
    assert "non-finite" in capsys.readouterr().err
    assert not (tmp_path / "flow.ckpt").exists()


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env"))
    assert main(["train-flow", "--steps", "0", *SMALL, "--out-dir", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "env" / "flow.ckpt").exists()
    assert not (tmp_path / "flag").exists()


def test_ign_train_and_project(tmp_path):
    assert main(["train-ign", "--steps", "20", "--dim", "4", "--blocks", "2", "--width", "16",
                 "--n-points", "128", "--batch", "32", "--probes", "50", "--log-every", "10",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = read_jsonl(tmp_path / "train-ign.jsonl")
    assert [r["step"] for r in rows] == [0, 10, 20]
    assert max(r["idempotency_residual"] for r in rows) < 1e-6
    pts = tmp_path / "in.csv"
    pts.write_text("a,b\n0.5,0.25\n-1.0,2.0\n3.0,-4.0\n")
    assert main(["project", "--input", str(pts), "--out-dir", str(tmp_path)]) == EXIT_OK
    header, proj = read_csv(tmp_path / "projection.csv")
    assert header == ["sample_id", "in0", "in1", "in2", "in3", "out0", "out1", "out2", "out3",
                      "distance", "idempotency_residual"]
    assert proj.shape == (3, 11)
    assert np.array_equal(proj[:, 3:5], np.zeros((3, 2)))
    assert proj[:, -1].max() < 1e-6


def test_project_requires_input(tmp_path):
    assert main(["train-ign", "--steps", "0", "--dim", "4", "--blocks", "1", "--width", "8",
                 "--n-points", "16", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert main(["project", "--out-dir", str(tmp_path)]) == EXIT_USAGE


def test_style_train_and_interp(tmp_path):
    assert main(["train-style", "--steps", "5", "--blocks", "2", "--width", "8", "--n-points", "64",
                 "--batch", "16", "--out-dir", str(tmp_path)]) == EXIT_OK
    a, b = str(tmp_path / "style_a.ckpt"), str(tmp_path / "style_b.ckpt")
    assert main(["style-interp", "--checkpoint", a, "--checkpoint-b", b, "--n-points", "10",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    _, rows = read_csv(tmp_path / "style_interp.csv")
    alphas = sorted(set(rows[:, 0].tolist()))
    assert alphas == [0.0, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 1.0]
    from linearizer.data import dataset

    x = dataset("two-moons", 10, 0)
    fa = load_checkpoint(a).linearizer()(x)
    fb = load_checkpoint(b).linearizer()(x)
    assert np.array_equal(rows[rows[:, 0] == 1.0][:, 2:], fa)
    assert np.array_equal(rows[rows[:, 0] == 0.0][:, 2:], fb)


def test_style_interp_basis_mismatch(tmp_path):
    for seed, d in ((0, "s0"), (1, "s1")):
        assert main(["train-style", "--steps", "0", "--blocks", "1", "--width", "8", "--n-points", "16",
                     "--seed", str(seed), "--out-dir", str(tmp_path / d)]) == EXIT_OK
    code = main(["style-interp", "--checkpoint", str(tmp_path / "s0" / "style_a.ckpt"),
                 "--checkpoint-b", str(tmp_path / "s1" / "style_b.ckpt"), "--out-dir", str(tmp_path)])
    assert code == EXIT_USAGE
