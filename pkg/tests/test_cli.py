import json
from pathlib import Path

import numpy as np
import pytest

from hsav import cli
from hsav.harness import read_csv
from hsav.spectral import read_snapshot

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
[model]
name = cahn_hilliard
lam = 0.1
eps = 0.1
gamma0 = 1
C0 = auto

[grid]
Nx = 16
Ny = 16
Lx = 4*pi
Ly = 4*pi

[time]
method = gauss2
dt = 0.01
t_end = 0.05

[initial]
kind = random
amp = 0.1
seed = 3

[output]
directory = small
snapshot_stride = 2
"""


@pytest.fixture
def cfg_file(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "out"))
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def run(*args):
    return cli.main([str(a) for a in args])


class TestRun:
    def test_single_run_outputs(self, cfg_file, tmp_path):
        assert run("run", cfg_file, "--csv-fields") == 0
        out = tmp_path / "out" / "small"
        manifest = json.loads((out / "manifest.json").read_text())
        names = {f["name"] for f in manifest["files"]}
        assert {"energy.csv", "energy.png", "phi_final.bin", "phi_000002.bin", "phi_000002.csv"} <= names
        for f in manifest["files"]:
            assert (out / f["name"]).stat().st_size == f["bytes"]
        assert manifest["seed"] == 3 and "PCG64" in manifest["prng"]
        assert manifest["results"]["energy_monotone"]
        cols = read_csv(out / "energy.csv")
        assert cols["t"][-1] == pytest.approx(0.05)
        assert np.all(np.diff(cols["E_modified"]) <= 0)
        assert read_snapshot(out / "phi_final.bin").grid.Nx == 16
        assert not list(out.glob("*.tmp"))

    def test_refuses_overwrite(self, cfg_file, tmp_path):
        assert run("run", cfg_file) == 0
        assert run("run", cfg_file) == cli.EXIT_IO
        assert run("run", cfg_file, "--force") == 0
        out = tmp_path / "out" / "small"
        assert len(list(out.glob("manifest*.json"))) == 1

    def test_deterministic(self, cfg_file, tmp_path):
        run("run", cfg_file)
        a = (tmp_path / "out" / "small" / "energy.csv").read_bytes()
        run("run", cfg_file, "--force", "--threads", "2")
        assert (tmp_path / "out" / "small" / "energy.csv").read_bytes() == a

    def test_overrides(self, cfg_file, tmp_path):
        assert run("run", cfg_file, "--set", "dt=0.025", "--set", "method=gauss3", "--set", "output.directory=o2") == 0
        m = json.loads((tmp_path / "out" / "o2" / "manifest.json").read_text())
        assert m["config"]["time"]["dt"] == 0.025 and m["config"]["time"]["method"] == "gauss3"

    def test_numerical_failure_leaves_failed_manifest(self, cfg_file, tmp_path):
        code = run("run", cfg_file, "--set", "max_iterations=1", "--set", "mode=full_picard")
        assert code == cli.EXIT_NUMERICAL
        out = tmp_path / "out" / "small"
        assert (out / cli.FAILED_MANIFEST).exists() and not (out / cli.MANIFEST).exists()
        assert "numerical failure" in json.loads((out / cli.FAILED_MANIFEST).read_text())["error"]

    def test_io_error(self, cfg_file, tmp_path):
        blocker = tmp_path / "out"
        blocker.write_text("not a directory")
        assert run("run", cfg_file) == cli.EXIT_IO

    def test_refinement_and_sweep(self, cfg_file, tmp_path):
        assert run("run", cfg_file, "--set", "experiment.kind=refinement", "--set", "dt_list=0.025,0.0125,0.00625",
                   "--set", "methods=cn,gauss2", "--set", "output.directory=ref") == 0
        out = tmp_path / "out" / "ref"
        assert (out / "convergence_cn.csv").exists() and (out / "convergence.png").exists()
        assert run("run", cfg_file, "--set", "experiment.kind=energy_sweep", "--set", "dt_list=0.025,0.0125",
                   "--set", "methods=gauss1", "--set", "output.directory=sweep") == 0
        assert (tmp_path / "out" / "sweep" / "energy_gauss1_dt0.025.csv").exists()


class TestValidate:
    def test_ok(self, cfg_file, capsys):
        assert run("validate", cfg_file) == 0
        out = capsys.readouterr().out
        assert out.startswith("OK") and "Lx = 12.566370614359172" in out

    def test_missing_dt(self, tmp_path, capsys):
        p = tmp_path / "c.cfg"
        p.write_text(SMALL.replace("dt = 0.01\n", ""))
        assert run("validate", p) == cli.EXIT_CONFIG
        assert "time.dt" in capsys.readouterr().err

    def test_missing_dt_on_run(self, tmp_path, capsys):
        p = tmp_path / "c.cfg"
        p.write_text(SMALL.replace("dt = 0.01\n", ""))
        assert run("run", p) == cli.EXIT_CONFIG
        assert "dt" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "override,needle",
        [
            ("dt=-0.1", "time.dt"),
            ("method=gauss11", "1..10"),
            ("grid.Nx=15", "grid"),
            ("model.kappa=1", "model.kappa"),
            ("solver.mode=anderson", "solver.mode"),
            ("experiment.kind=movie", "experiment.kind"),
            ("nonsense=1", "nonsense"),
            ("grid.Lx=4*banana", "grid.Lx"),
        ],
    )
    def test_violations_named(self, cfg_file, capsys, override, needle):
        assert run("validate", cfg_file, "--set", override) == cli.EXIT_CONFIG
        assert needle in capsys.readouterr().err

    def test_unknown_key_in_file(self, tmp_path, capsys):
        p = tmp_path / "c.cfg"
        p.write_text(SMALL + "\n[time]\n" if False else SMALL.replace("[output]", "[output]\ncolour = red"))
        assert run("validate", p) == cli.EXIT_CONFIG
        assert "colour" in capsys.readouterr().err

    def test_unreadable(self, tmp_path, capsys):
        assert run("validate", tmp_path / "missing.cfg") == cli.EXIT_CONFIG

    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*/*.cfg")), ids=lambda p: f"{p.parent.name}-{p.stem}")
    def test_bundled_configs_valid(self, path):
        assert run("validate", path) == 0


class TestTableau:
    def test_two_stage(self, capsys):
        assert run("tableau", 2) == 0
        out = capsys.readouterr().out
        assert "0.21132486540518711" in out and "0.53867513459481287" in out
        assert "algebraically stable" in out

    def test_three_stage_weights(self, capsys):
        run("tableau", 3)
        out = capsys.readouterr().out
        assert "0.27777777777777779" in out and "0.44444444444444442" in out

    def test_midpoint(self, capsys):
        run("tableau", 1)
        assert "0.5 |" in capsys.readouterr().out

    def test_out_of_range(self, capsys):
        assert run("tableau", 11) == cli.EXIT_CONFIG
