"""Command-line contracts: artifacts, exit codes, determinism."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from ceoptics import cli, fileio


def run(args):
    return cli.main(args)


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestPsf:
    def test_writes_requested_planes(self, tmp_path):
        out = tmp_path / "run"
        rc = run(["psf", "--mask", "open", "--z", "-1.5e-6:1.5e-6:7",
                  "--grid", "32", "--out", str(out)])
        assert rc == 0
        files = sorted(out.glob("psf_z*.ceo1"))
        assert len(files) == 7
        assert (out / "config.json").exists()
        assert (out / "psf_summary.csv").exists()
        assert (out / "mask.ceo1").exists()

    def test_fisher_baseline_renders(self, tmp_path):
        out = tmp_path / "run"
        rc = run(["psf", "--mask", "fisher", "--z", "0", "--grid", "32",
                  "--out", str(out)])
        assert rc == 0
        h = fileio.read_grid(next(iter(out.glob("psf_z*.ceo1"))))
        assert h.max() > 0

    def test_unknown_mask_exits_2(self, tmp_path, capsys):
        rc = run(["psf", "--mask", "missing.ceo1", "--grid", "32",
                  "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_bad_zrange_exits_2(self, tmp_path):
        rc = run(["psf", "--mask", "open", "--z", "nope", "--grid", "32",
                  "--out", str(tmp_path / "x")])
        assert rc == 2


class TestOptimize:
    def test_desk_scale_smoke(self, tmp_path):
        out = tmp_path / "opt"
        rc = run(["optimize", "--parameterization", "neural_phase",
                  "--epochs", "12", "--grid", "32", "--seed", "3",
                  "--val-motions", "8", "--val-every", "6",
                  "--out", str(out)])
        assert rc == 0
        lines = (out / "loss.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        vals = [float(r.split(",")[2]) for r in lines[1:] if r.split(",")[2]]
        assert vals[-1] < vals[0]
        assert (out / "mask.ceo1").exists()
        for tag in ("-1.5", "0", "+1.5"):
            assert (out / f"psf_z{tag}.ceo1").exists()
        assert (out / "params").is_dir()

    def test_zernike_exports_coefficients(self, tmp_path):
        out = tmp_path / "optz"
        rc = run(["optimize", "--parameterization", "zernike",
                  "--n-coeffs", "55", "--epochs", "2", "--grid", "32",
                  "--val-motions", "4", "--out", str(out)])
        assert rc == 0
        lines = (out / "zernike_coeffs.csv").read_text().splitlines()
        assert lines[0] == "index,coefficient"
        assert len(lines) == 56

    def test_invalid_beta1_exits_2(self, tmp_path):
        rc = run(["optimize", "--beta1", "1.5", "--epochs", "1",
                  "--grid", "32", "--out", str(tmp_path / "x")])
        assert rc == 2


class TestCrb:
    def test_curve_shape_and_determinism(self, tmp_path):
        args = ["crb", "--mask", "open", "--grid", "32", "--planes", "6",
                "--motions", "9", "--seed", "7"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(args + ["--out", str(out1)]) == 0
        assert run(args + ["--out", str(out2)]) == 0
        lines = (out1 / "crb_vs_depth.csv").read_text().splitlines()
        assert lines[0] == "z_m,crb_xp,crb_yp,crb_zp,crb_xt,crb_yt,crb_zt"
        assert len(lines) == 7
        assert digest(out1 / "crb_vs_depth.csv") == digest(out2 / "crb_vs_depth.csv")
        assert (out1 / "crb_summary.csv").exists()

    def test_mask_file_input(self, tmp_path):
        mask_path = tmp_path / "m.ceo1"
        fileio.write_grid(mask_path, np.zeros((32, 32)),
                          meta={"kind": "phase"})
        rc = run(["crb", "--mask", str(mask_path), "--grid", "32",
                  "--planes", "3", "--motions", "4",
                  "--out", str(tmp_path / "r")])
        assert rc == 0


class TestTrack:
    def test_summary_layout(self, tmp_path):
        out = tmp_path / "trk"
        rc = run(["track", "--masks", "open", "--trajectories", "1",
                  "--bins", "3", "--grid", "32", "--seed", "5",
                  "--volume", "4e-6", "4e-6", "2e-6",
                  "--out", str(out)])
        assert rc == 0
        lines = (out / "tracking_summary.csv").read_text().splitlines()
        assert lines[0] == "mask,rmse3d_nm,l1z_nm"
        assert lines[1].startswith("open,")
        assert (out / "traj0_truth.csv").exists()
        assert (out / "traj0_open_est.csv").exists()

    def test_zero_bins_rejected(self, tmp_path):
        rc = run(["track", "--masks", "open", "--bins", "0", "--grid", "32",
                  "--out", str(tmp_path / "x")])
        assert rc == 2


class TestAblate:
    def test_flux_sweep(self, tmp_path):
        out = tmp_path / "ab"
        rc = run(["ablate", "--mask", "open", "--sweep", "flux",
                  "--values", "1000,4000", "--grid", "32", "--planes", "3",
                  "--motions", "5", "--out", str(out)])
        assert rc == 0
        lines = (out / "ablate_flux.csv").read_text().splitlines()
        assert lines[0] == "signal_photons,mean_crb_m"
        assert len(lines) == 3
        v1, v2 = (float(r.split(",")[1]) for r in lines[1:])
        assert v2 < v1  # more photons, lower bound

    def test_unknown_sweep_rejected(self, tmp_path):
        rc = run(["ablate", "--mask", "open", "--sweep", "nope",
                  "--out", str(tmp_path / "x")])
        assert rc == 2


class TestConfigPlumbing:
    def test_version(self, capsys):
        assert cli.main(["--version"]) == 0
        from ceoptics import __version__
        assert __version__ in capsys.readouterr().out

    def test_dump_config(self, tmp_path, capsys):
        rc = run(["crb", "--mask", "open", "--grid", "32", "--dump-config"])
        assert rc == 0
        resolved = json.loads(capsys.readouterr().out)
        assert resolved["optical"]["grid"] == 32

    def test_config_file_with_flag_override(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"planes": 4, "motions": 3}))
        out = tmp_path / "r"
        rc = run(["crb", "--mask", "open", "--grid", "32",
                  "--config", str(cfg_file), "--planes", "5",
                  "--out", str(out)])
        assert rc == 0
        lines = (out / "crb_vs_depth.csv").read_text().splitlines()
        assert len(lines) == 6  # flag wins over file
        resolved = json.loads((out / "config.json").read_text())
        assert resolved["motions"] == 3  # file value survives

    def test_resolved_config_always_written(self, tmp_path):
        out = tmp_path / "r"
        run(["psf", "--mask", "open", "--z", "0", "--grid", "32",
             "--out", str(out)])
        resolved = json.loads((out / "config.json").read_text())
        assert "optical" in resolved and "seed" in resolved
