import os
import subprocess
import sys

import numpy as np
import pytest

from dualoct import io, metrics, mri
from dualoct.cli import main

TOY_CONFIG = """\
# small run used by the CLI tests
n_blocks = 2
layers_per_block = 3
feature_channels = 8
alpha = 0.125
coils = 4
batch_size = 4
seed = 0
n_train = 16
n_val = 4
height = 32
width = 32
pattern = random2d
acceleration = 3
mask_seed = 0
iterations = {iterations}
"""


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def usage_code(capsys, *argv):
    with pytest.raises(SystemExit) as exc:
        main(list(argv))
    capsys.readouterr()
    return exc.value.code


def test_mask_uniform_columns(tmp_path, capsys):
    out = tmp_path / "m.doct"
    code, text, _ = run(capsys, "mask", "--pattern", "uniform1d", "--accel", "3", "--size", "64x64",
                        "--seed", "1", "--out", str(out))
    assert code == 0
    grid = io.read_doct(out).real
    assert grid.shape == (64, 64)
    assert int(grid[0].sum()) == 22
    assert np.all(grid == grid[0])
    assert "samples=1408" in text


def test_eval_identical(tmp_path, capsys):
    p = tmp_path / "x.doct"
    assert run(capsys, "phantom", "--size", "32x32", "--seed", "3", "--out", str(p))[0] == 0
    code, text, _ = run(capsys, "eval", "--ref", str(p), "--test", str(p))
    assert code == 0
    assert text.strip().split(",")[-2:] == ["inf", "1.0"]
    assert len(text.strip().splitlines()) == 1


def test_usage_errors_exit_1(tmp_path, capsys):
    assert usage_code(capsys, "mask", "--bogus") == 1
    assert usage_code(capsys, "frobnicate") == 1
    assert usage_code(capsys) == 1
    assert usage_code(capsys, "mask", "--pattern", "spiral", "--accel", "3", "--size", "8x8",
                      "--out", str(tmp_path / "m")) == 1
    assert usage_code(capsys, "mask", "--pattern", "random2d", "--accel", "3", "--size", "8by8",
                      "--out", str(tmp_path / "m")) == 1


def test_help_documents_flags():
    r = subprocess.run([sys.executable, "-m", "dualoct.cli", "mask", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for flag in ("--pattern", "--accel", "--size", "--seed", "--out"):
        assert flag in r.stdout


def test_malformed_doct_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.doct"
    bad.write_bytes(b"DOCT" + b"\x01\x00\x00\x00" * 2)
    good = tmp_path / "good.doct"
    run(capsys, "phantom", "--size", "16x16", "--out", str(good))
    code, _, err = run(capsys, "eval", "--ref", str(bad), "--test", str(good))
    assert code == 2
    assert "offset" in err


def test_data_errors_exit_2(tmp_path, capsys):
    missing = str(tmp_path / "nope.doct")
    assert run(capsys, "eval", "--ref", missing, "--test", missing)[0] == 2
    assert run(capsys, "mask", "--pattern", "random2d", "--accel", "100", "--size", "8x8",
               "--out", str(tmp_path / "m.doct"))[0] == 2
    assert run(capsys, "mask", "--pattern", "random2d", "--accel", "2", "--size", "8x8",
               "--out", str(tmp_path / "no" / "dir" / "m.doct"))[0] == 2
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TOY_CONFIG.format(iterations=1) + "learning_rat = 0.1\n")
    code, _, err = run(capsys, "train", "--config", str(cfg), "--out", str(tmp_path / "ck"))
    assert code == 2 and "learning_rat" in err
    assert not (tmp_path / "ck").exists()
    cfg.write_text(TOY_CONFIG.format(iterations=1).replace("alpha = 0.125", "alpha = lots"))
    assert run(capsys, "train", "--config", str(cfg), "--out", str(tmp_path / "ck"))[0] == 2
    cfg.write_text(TOY_CONFIG.format(iterations=1) + "init_ckpt = missing_dir\n")
    assert run(capsys, "train", "--config", str(cfg), "--out", str(tmp_path / "ck"))[0] == 2


def test_simulate_outputs(tmp_path, capsys):
    ph, m, acq = tmp_path / "p.doct", tmp_path / "m.doct", tmp_path / "acq"
    run(capsys, "phantom", "--size", "32x32", "--seed", "1", "--out", str(ph))
    run(capsys, "mask", "--pattern", "random2d", "--accel", "3", "--size", "32x32", "--out", str(m))
    code, _, _ = run(capsys, "simulate", "--phantom", str(ph), "--coils", "4", "--mask", str(m), "--out", str(acq))
    assert code == 0
    y = io.read_doct(acq / "kspace.doct")
    grid = io.read_doct(acq / "mask.doct").real.astype(bool)
    assert y.shape == (4, 32, 32)
    assert np.all(y.to_complex()[:, ~grid] == 0)
    zf = io.read_doct(acq / "zero_filled.doct")
    np.testing.assert_allclose(zf.to_complex(), mri.ifft2(y).to_complex(), rtol=0, atol=0)
    assert io.read_pgm(acq / "zero_filled.pgm").shape == (32, 32)
    m16 = tmp_path / "m16.doct"
    run(capsys, "mask", "--pattern", "random2d", "--accel", "3", "--size", "16x16", "--out", str(m16))
    assert run(capsys, "simulate", "--phantom", str(ph), "--mask", str(m16), "--out", str(tmp_path / "b"))[0] == 2


def test_flops_sweep(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TOY_CONFIG.format(iterations=1))
    code, text, _ = run(capsys, "flops", "--config", str(cfg), "--alpha-sweep", "0,0.125,0.25,0.5,0.75")
    assert code == 0
    rows = [line.split(",") for line in text.strip().splitlines()]
    assert rows[0] == ["alpha", "flops", "relative"]
    flops = [int(r[1]) for r in rows[1:]]
    assert all(a > b for a, b in zip(flops, flops[1:]))
    assert float(rows[1][2]) == 1.0


def _pipeline(tmp_path, capsys, tag, config):
    d = tmp_path / tag
    d.mkdir()
    cfg = d / "run.cfg"
    cfg.write_text(config)
    steps = [
        ("mask", "--pattern", "random2d", "--accel", "3", "--size", "32x32", "--seed", "0", "--out", str(d / "m.doct")),
        ("phantom", "--size", "32x32", "--n", "6", "--seed", "99", "--out", str(d / "p.doct")),
        ("simulate", "--phantom", str(d / "p.doct"), "--coils", "4", "--mask", str(d / "m.doct"), "--out", str(d / "acq")),
        ("train", "--config", str(cfg), "--out", str(d / "ck")),
        ("reconstruct", "--ckpt", str(d / "ck"), "--acq", str(d / "acq"), "--out", str(d / "rec.doct")),
        ("eval", "--ref", str(d / "acq" / "image.doct"), "--test", str(d / "rec.doct")),
        ("flops", "--config", str(cfg), "--alpha-sweep", "0,0.125"),
    ]
    stdout = []
    for argv in steps:
        code, text, err = run(capsys, *argv)
        assert code == 0, (argv[0], err)
        stdout.append(text.replace(str(d), "<dir>"))
    files = {}
    for root, _, names in os.walk(d):
        for n in names:
            p = os.path.join(root, n)
            with open(p, "rb") as f:
                files[os.path.relpath(p, d)] = f.read()
    return files, stdout


def test_pipeline_bitwise_deterministic(tmp_path, capsys):
    config = TOY_CONFIG.format(iterations=20)
    files_a, out_a = _pipeline(tmp_path, capsys, "a", config)
    files_b, out_b = _pipeline(tmp_path, capsys, "b", config)
    assert len(files_a) >= 15
    assert files_a.keys() == files_b.keys()
    for name in files_a:
        assert files_a[name] == files_b[name], name
    assert out_a == out_b
    lines = (tmp_path / "a" / "ck" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,iter,loss,val_psnr,val_ssim"


@pytest.mark.slow
def test_pipeline_reconstruction_beats_zero_filled(tmp_path, capsys):
    config = TOY_CONFIG.format(iterations=300).replace("feature_channels = 8", "feature_channels = 16")
    _pipeline(tmp_path, capsys, "a", config)
    d = tmp_path / "a"
    ref = np.abs(io.read_doct(d / "acq" / "image.doct").to_complex())
    rec = mri.rss_combine(io.read_doct(d / "rec.doct"))
    zf = mri.rss_combine(io.read_doct(d / "acq" / "zero_filled.doct"))
    gain = np.mean([metrics.psnr(r, a) - metrics.psnr(r, z) for r, a, z in zip(ref, rec, zf)])
    assert gain > 0


def test_eval_series(tmp_path, capsys):
    ph, m, acq = tmp_path / "p.doct", tmp_path / "m.doct", tmp_path / "acq"
    run(capsys, "phantom", "--size", "32x32", "--out", str(ph))
    run(capsys, "mask", "--pattern", "random2d", "--accel", "3", "--size", "32x32", "--out", str(m))
    run(capsys, "simulate", "--phantom", str(ph), "--mask", str(m), "--out", str(acq))
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TOY_CONFIG.format(iterations=1))
    series = tmp_path / "series.txt"
    series.write_text("0.125 = acq/zero_filled.doct\n0 = acq/coil_images.doct\n")
    code, text, _ = run(capsys, "eval", "--ref", str(acq / "image.doct"), "--test", str(series),
                        "--series", "--config", str(cfg))
    assert code == 0
    rows = [r.split(",") for r in text.strip().splitlines()]
    assert rows[0] == ["alpha", "flops", "psnr"]
    assert [r[0] for r in rows[1:]] == ["0.0", "0.125"]
    assert int(rows[1][1]) > int(rows[2][1])
    # without --config the series mode is a usage error
    assert run(capsys, "eval", "--ref", str(acq / "image.doct"), "--test", str(series), "--series")[0] == 1
