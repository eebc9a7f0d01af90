import csv
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from ttfuse import imageio
from ttfuse.cli import main
from ttfuse.optim import LrSchedule, cosine_lr


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate-phantoms", "--out", str(root / "data"), "--count", "10",
                 "--size", "64", "--seed", "5"]) == 0
    (root / "run.cfg").write_text("dataset.root = data\ntrain.epochs = 3\neval.test_count = 3\n"
                                  "eval.repeats = 2\nfusion.ttt_steps = 2\n")
    assert main(["train", "--config", str(root / "run.cfg"), "--out", str(root / "net.ttfz")]) == 0
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_generate_counts_and_rejects_empty(tmp_path, workspace):
    assert len(list((workspace / "data" / "a").iterdir())) == 10
    assert main(["generate-phantoms", "--out", str(tmp_path / "e"), "--count", "0"]) == 2


def test_generate_unwritable_target(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["generate-phantoms", "--out", str(blocker / "sub"), "--count", "1", "--size", "64"]) == 2
    assert "error" in capsys.readouterr().err


def test_train_outputs_and_log(workspace, capsys):
    rows = read_csv(workspace / "net.loss.csv")
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2]
    sched = LrSchedule(1e-4, 3e-7, 2)
    assert [float(r["lr"]) for r in rows] == [cosine_lr(sched, e) for e in range(3)]


def test_train_rerun_is_identical(workspace, tmp_path, capsys):
    assert main(["train", "--config", str(workspace / "run.cfg"), "--out", str(tmp_path / "again.ttfz")]) == 0
    assert (tmp_path / "again.ttfz").read_bytes() == (workspace / "net.ttfz").read_bytes()
    assert (tmp_path / "again.loss.csv").read_bytes() == (workspace / "net.loss.csv").read_bytes()
    err = capsys.readouterr().err
    assert "train.batch_size = 4  (default)" in err


def test_config_error_exit_code(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.epochs = 2\nmystery = 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x.ttfz")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_fuse_zero_steps_is_repeatable(workspace, tmp_path, capsys):
    a, b = workspace / "data" / "a" / "0000.png", workspace / "data" / "b" / "0000.png"
    outs = []
    for i in range(2):
        out = tmp_path / f"f{i}.png"
        assert main(["fuse", "--ckpt", str(workspace / "net.ttfz"), "--a", str(a), "--b", str(b),
                     "--out", str(out), "--ttt-steps", "0"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert "trace" not in capsys.readouterr().out


def test_fuse_prints_trace_and_keeps_color(workspace, tmp_path, capsys):
    a = workspace / "data" / "a" / "0001.png"
    gray = imageio.load(workspace / "data" / "b" / "0001.png").pixels
    tint = np.stack([gray, 0.6 * gray, 0.2 + 0.5 * gray], -1).clip(0, 1)
    color_b = tmp_path / "spect.png"
    Image.fromarray(np.rint(tint * 255).astype(np.uint8)).save(color_b)
    out = tmp_path / "fused.png"
    assert main(["fuse", "--ckpt", str(workspace / "net.ttfz"), "--a", str(a), "--b", str(color_b),
                 "--out", str(out), "--ttt-steps", "3"]) == 0
    line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("ttt loss trace")][0]
    assert len(line.split(":")[1].split()) == 4
    fused = imageio.load(out)
    assert isinstance(fused, imageio.ColorImage)
    assert not np.allclose(fused.pixels[..., 0], fused.pixels[..., 1])


def test_fuse_error_messages(workspace, tmp_path, capsys):
    big = tmp_path / "big.png"
    imageio.save(big, np.zeros((80, 80)))
    a = str(workspace / "data" / "a" / "0000.png")
    assert main(["fuse", "--ckpt", str(workspace / "net.ttfz"), "--a", a, "--b", str(big),
                 "--out", str(tmp_path / "o.png")]) == 2
    dims = capsys.readouterr().err
    junk = tmp_path / "junk.ttfz"
    junk.write_bytes(b"not a checkpoint")
    assert main(["fuse", "--ckpt", str(junk), "--a", a, "--b", a, "--out", str(tmp_path / "o.png")]) == 2
    ckpt = capsys.readouterr().err
    assert "dimensions differ" in dims and "magic" in ckpt


def test_eval_tables(workspace, tmp_path):
    out = tmp_path / "eval.csv"
    assert main(["eval", "--ckpt", str(workspace / "net.ttfz"), "--config", str(workspace / "run.cfg"),
                 "--out", str(out), "--threads", "2"]) == 0
    rows = read_csv(out)
    assert {r["method"] for r in rows} == {"tttfusion", "sfnn_mean", "sfnn_max", "sfnn_sum"}
    one = tmp_path / "one.cfg"
    one.write_text((workspace / "run.cfg").read_text().replace("eval.repeats = 2", "eval.repeats = 1")
                   .replace("dataset.root = data", f"dataset.root = {workspace / 'data'}"))
    only = tmp_path / "only.csv"
    assert main(["eval", "--ckpt", str(workspace / "net.ttfz"), "--config", str(one), "--out", str(only),
                 "--no-baselines"]) == 0
    rows = read_csv(only)
    assert [r["method"] for r in rows] == ["tttfusion"]
    assert all(float(v) == 0.0 for k, v in rows[0].items() if k.endswith("_std"))


def test_bench_timing(workspace, tmp_path):
    out, runs = tmp_path / "bench.csv", tmp_path / "runs.csv"
    assert main(["bench", "--ckpt", str(workspace / "net.ttfz"), "--config", str(workspace / "run.cfg"),
                 "--out", str(out), "--runs-out", str(runs)]) == 0
    rows = read_csv(out)
    assert len(rows) == 4
    assert all(0 < float(r["sec_per_pair"]) < 60 for r in rows)
    assert len(read_csv(runs)) == 8


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["fuse", "--ckpt", "x"]) == 1
    assert main(["train", "--config", "c", "--out", "o", "--bogus"]) == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ttfuse", "generate-phantoms", "--out", str(tmp_path / "d"),
                          "--count", "1", "--size", "64"], capture_output=True, text=True)
    assert res.returncode == 0 and "wrote 1 pairs" in res.stdout
    res = subprocess.run([sys.executable, "-m", "ttfuse", "nonsense"], capture_output=True, text=True)
    assert res.returncode == 1
