"""CLI tests: exit codes, key resolution, byproduct suppression, config
file precedence, and artifact writing. Runs main() in-process; one test
exercises the installed console script end to end."""
import subprocess
import sys

import numpy as np
import pytest

from secureflow.cli import KEY_ENV, main
from secureflow.flow import FlowConfig, init_model
from secureflow.imageio import load_image, save_image
from secureflow.trainer import (read_checkpoint_header, save_checkpoint,
                                synthetic_faces)

SIDE = 16


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(KEY_ENV, raising=False)


@pytest.fixture()
def ckpt(tmp_path):
    model = init_model(FlowConfig(side=SIDE, blocks=1, growth=4), seed=210)
    rng = np.random.default_rng(211)
    for s in model.blocks[0].subnets():
        s.weights[-1].data[...] = rng.normal(0, 0.02, s.weights[-1].data.shape)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, None, path)
    return path


@pytest.fixture()
def face_png(tmp_path):
    img = synthetic_faces(1, SIDE, seed=212)[0]
    path = tmp_path / "face.png"
    save_image(img, path)
    return path


class TestKeygenInspect:
    def test_happy_path(self, capsys):
        assert main(["keygen-inspect", "--key", "hunter2", "--width", "16",
                     "--height", "16"]) == 0
        out = capsys.readouterr().out
        assert "key source: --key" in out
        assert "secret map: shape (4, 8, 8)" in out
        assert "hunter2" not in out  # never echo the secret

    def test_env_key(self, capsys, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "from-env")
        assert main(["keygen-inspect", "--width", "16", "--height", "16"]) == 0
        out = capsys.readouterr().out
        assert f"key source: env {KEY_ENV}" in out
        assert "from-env" not in out

    def test_flag_wins_over_env(self, capsys, monkeypatch):
        monkeypatch.setenv(KEY_ENV, "env-secret")
        assert main(["keygen-inspect", "--key", "flag-secret",
                     "--width", "16", "--height", "16"]) == 0
        assert "key source: --key" in capsys.readouterr().out

    def test_missing_key(self, capsys):
        assert main(["keygen-inspect"]) == 1
        assert "no key given" in capsys.readouterr().err

    def test_bad_dims(self, capsys):
        assert main(["keygen-inspect", "--key", "k", "--width", "3",
                     "--height", "3"]) == 3


class TestProtectRecover:
    def test_protect_writes_only_protected_by_default(self, tmp_path, ckpt, face_png, capsys):
        out = tmp_path / "protected.png"
        rc = main(["protect", "--model", str(ckpt), "--in", str(face_png),
                   "--out", str(out), "--key", "pw"])
        assert rc == 0
        assert out.exists()
        assert load_image(out, require_even=False).pixels.shape == (3, SIDE, SIDE)
        leftovers = [p.name for p in tmp_path.iterdir()
                     if p.suffix == ".png" and p not in (out, face_png)]
        assert leftovers == []  # byproduct must not be materialized

    def test_keep_byproduct_flag(self, tmp_path, ckpt, face_png):
        out = tmp_path / "protected.png"
        byp = tmp_path / "byproduct.png"
        rc = main(["protect", "--model", str(ckpt), "--in", str(face_png),
                   "--out", str(out), "--key", "pw", "--keep-byproduct", str(byp)])
        assert rc == 0 and byp.exists()

    def test_template_flag(self, tmp_path, ckpt, face_png):
        template = tmp_path / "tpl.png"
        save_image(synthetic_faces(1, SIDE, seed=213)[0], template)
        out = tmp_path / "protected.png"
        rc = main(["protect", "--model", str(ckpt), "--in", str(face_png),
                   "--out", str(out), "--key", "pw", "--template", str(template)])
        assert rc == 0 and out.exists()

    def test_template_and_obfuscator_conflict(self, tmp_path, ckpt, face_png, capsys):
        rc = main(["protect", "--model", str(ckpt), "--in", str(face_png),
                   "--out", str(tmp_path / "o.png"), "--key", "pw",
                   "--obfuscator", "gb", "--template", str(face_png)])
        assert rc == 1

    def test_recover_roundtrip_mechanics(self, tmp_path, ckpt, face_png):
        protected = tmp_path / "protected.png"
        recovered = tmp_path / "recovered.png"
        main(["protect", "--model", str(ckpt), "--in", str(face_png),
              "--out", str(protected), "--key", "pw"])
        rc = main(["recover", "--model", str(ckpt), "--in", str(protected),
                   "--out", str(recovered), "--key", "pw"])
        assert rc == 0
        assert load_image(recovered, require_even=False).pixels.shape == (3, SIDE, SIDE)

    def test_missing_model_is_io_error(self, tmp_path, face_png, capsys):
        rc = main(["protect", "--model", str(tmp_path / "nope.ckpt"),
                   "--in", str(face_png), "--out", str(tmp_path / "o.png"),
                   "--key", "pw"])
        assert rc == 2

    def test_corrupt_model_is_model_error(self, tmp_path, face_png, ckpt):
        bad = tmp_path / "bad.ckpt"
        raw = bytearray(ckpt.read_bytes())
        raw[0] ^= 0xFF
        bad.write_bytes(bytes(raw))
        rc = main(["protect", "--model", str(bad), "--in", str(face_png),
                   "--out", str(tmp_path / "o.png"), "--key", "pw"])
        assert rc == 3

    def test_wrong_image_size_is_model_error(self, tmp_path, ckpt):
        big = tmp_path / "big.png"
        save_image(synthetic_faces(1, 32, seed=214)[0], big)
        rc = main(["protect", "--model", str(ckpt), "--in", str(big),
                   "--out", str(tmp_path / "o.png"), "--key", "pw"])
        assert rc == 3

    def test_missing_required_flag(self, capsys):
        assert main(["protect", "--model", "m.ckpt", "--key", "pw"]) == 1
        assert main(["unknown-command"]) == 1


class TestTrainCommand:
    def test_tiny_train_writes_artifacts(self, tmp_path, capsys):
        out = tmp_path / "model.ckpt"
        csv = tmp_path / "loss.csv"
        rc = main(["train", "--out", str(out), "--loss-csv", str(csv),
                   "--steps", "2", "--batch", "2", "--side", str(SIDE),
                   "--blocks", "1", "--growth", "4", "--images", "4",
                   "--obfuscators", "pl", "--check-every", "0", "--seed", "3"])
        assert rc == 0
        assert out.exists()
        header = read_checkpoint_header(out)
        assert header["flow"]["side"] == SIDE
        assert header["train_config"]["steps"] == 2
        lines = csv.read_text().strip().splitlines()
        assert lines[0] == "step,L_P,L_R,L_WR,total"
        assert len(lines) == 3
        echoed = capsys.readouterr().out
        assert "resolved config:" in echoed and '"seed": 3' in echoed

    def test_config_file_with_flag_override(self, tmp_path):
        cfgfile = tmp_path / "train.cfg"
        cfgfile.write_text(
            "# toy run\n"
            "steps = 2\n"
            "batch = 2\n"
            f"side = {SIDE}\n"
            "blocks = 1\n"
            "growth = 4\n"
            "images = 4\n"
            "obfuscators = pl\n"
            "check-every = 0\n")
        out = tmp_path / "model.ckpt"
        rc = main(["train", "--config", str(cfgfile), "--out", str(out),
                   "--steps", "1"])  # flag overrides the file's 2
        assert rc == 0
        assert read_checkpoint_header(out)["train_config"]["steps"] == 1

    def test_out_can_come_from_config_file(self, tmp_path):
        out = tmp_path / "model.ckpt"
        cfgfile = tmp_path / "train.cfg"
        cfgfile.write_text(
            f"out = {out}\nsteps = 1\nbatch = 2\nside = {SIDE}\n"
            "blocks = 1\ngrowth = 4\nimages = 4\nobfuscators = pl\ncheck-every = 0\n")
        assert main(["train", "--config", str(cfgfile)]) == 0
        assert out.exists()

    def test_missing_out_is_usage_error(self, capsys):
        assert main(["train", "--steps", "1"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfgfile = tmp_path / "bad.cfg"
        cfgfile.write_text("stepz = 2\n")
        assert main(["train", "--config", str(cfgfile), "--out", "x.ckpt"]) == 1

    def test_bad_config_value(self, tmp_path):
        cfgfile = tmp_path / "bad.cfg"
        cfgfile.write_text("steps = soon\n")
        assert main(["train", "--config", str(cfgfile), "--out", "x.ckpt"]) == 1

    def test_malformed_config_line(self, tmp_path):
        cfgfile = tmp_path / "bad.cfg"
        cfgfile.write_text("steps\n")
        assert main(["train", "--config", str(cfgfile), "--out", "x.ckpt"]) == 1

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.cfg"),
                     "--out", "x.ckpt"]) == 2

    def test_bad_mode_value(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "x.ckpt"), "--steps", "1",
                     "--mode", "sideways"]) == 3


class TestEvaluateCommand:
    def test_report_written(self, tmp_path, ckpt, capsys):
        data = tmp_path / "data"
        data.mkdir()
        for i, im in enumerate(synthetic_faces(2, SIDE, seed=215)):
            save_image(im, data / f"im{i}.png")
        report = tmp_path / "report.csv"
        rc = main(["evaluate", "--model", str(ckpt), "--data", str(data),
                   "--report", str(report), "--obfuscator", "pl"])
        assert rc == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "role_pair,obfuscator,mode,psnr_db,ssim,perc"
        assert len(lines) == 1 + 2 * 6 + 6
        out = capsys.readouterr().out
        assert "recovered_vs_original" in out

    def test_deterministic_output(self, tmp_path, ckpt):
        data = tmp_path / "data"
        data.mkdir()
        save_image(synthetic_faces(1, SIDE, seed=216)[0], data / "im.png")
        r1, r2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        main(["evaluate", "--model", str(ckpt), "--data", str(data),
              "--report", str(r1), "--seed", "5"])
        main(["evaluate", "--model", str(ckpt), "--data", str(data),
              "--report", str(r2), "--seed", "5"])
        assert r1.read_bytes() == r2.read_bytes()

    def test_data_dir_errors(self, tmp_path, ckpt):
        assert main(["evaluate", "--model", str(ckpt),
                     "--data", str(tmp_path / "nope"), "--report", "r.csv"]) == 2
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["evaluate", "--model", str(ckpt), "--data", str(empty),
                     "--report", "r.csv"]) == 2

    def test_size_mismatch(self, tmp_path, ckpt):
        data = tmp_path / "data"
        data.mkdir()
        save_image(synthetic_faces(1, 32, seed=217)[0], data / "im.png")
        assert main(["evaluate", "--model", str(ckpt), "--data", str(data),
                     "--report", str(tmp_path / "r.csv")]) == 3


class TestConsoleScript:
    def test_installed_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "secureflow.cli", "keygen-inspect",
             "--key", "pw", "--width", "16", "--height", "16"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "secret map" in proc.stdout
