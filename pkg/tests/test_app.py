"""End-to-end tests for the deepfrc command line on the micro preset."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from deepfrc.app import expand_grid, main
from deepfrc.errors import ConfigError
from deepfrc.model.basis_registry import BasisRegistry
from deepfrc.model.spectral import FourierBasis
from deepfrc.training.checkpoint import load_checkpoint

TRAIN_ARGS = ["--TrainConfig.n_basis=8", "--TrainConfig.epochs=1", "--TrainConfig.batch_size=4"]


def run(argv):
    """Run the command line and return its exit code."""
    try:
        main(argv)
    except SystemExit as e:
        return e.code
    return 0


@pytest.fixture
def data_dir(tmp_path):
    target = tmp_path / "data"
    assert run(["gen", "--preset", "micro", "--out", str(target)]) == 0
    return target


@pytest.fixture
def run_dir(tmp_path, data_dir):
    target = tmp_path / "run"
    assert run(["train", "--data", str(data_dir), "--out", str(target), *TRAIN_ARGS]) == 0
    return target


class TestGen:
    """Test dataset generation."""

    def test_writes_dataset(self, data_dir):
        """Curves, sidecar, ground truth and the resolved config are written."""
        names = sorted(p.name for p in data_dir.iterdir())
        assert names == ["config.json", "dataset.csv", "dataset.json", "ground_truth.json"]
        resolved = json.loads((data_dir / "config.json").read_text())
        assert resolved["SynthConfig"]["n_samples"] == 8
        assert resolved["command"] == "deepfrc-gen"

    def test_seed_override(self, tmp_path):
        """--seed changes the generated curves."""
        assert run(["gen", "--preset", "micro", "--seed", "1", "--out", str(tmp_path / "a")]) == 0
        assert run(["gen", "--preset", "micro", "--seed", "2", "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "dataset.csv").read_text() != (tmp_path / "b" / "dataset.csv").read_text()

    def test_unknown_preset(self, tmp_path):
        """An unknown preset is a configuration error."""
        assert run(["gen", "--preset", "huge", "--out", str(tmp_path / "x")]) == 2

    def test_out_is_a_file(self, tmp_path):
        """--out must not name an existing file."""
        target = tmp_path / "file"
        target.write_text("")
        assert run(["gen", "--preset", "micro", "--out", str(target)]) == 2

    def test_json_config_file(self, tmp_path):
        """Values from --config apply under the command line."""
        config = tmp_path / "synth.json"
        config.write_text(json.dumps({"SynthConfig": {"noise_sigma": 0.05}}))
        assert run(["gen", "--preset", "micro", "--config", str(config), "--out", str(tmp_path / "d")]) == 0
        resolved = json.loads((tmp_path / "d" / "config.json").read_text())
        assert resolved["SynthConfig"]["noise_sigma"] == 0.05

    def test_missing_config_file(self, tmp_path):
        """A --config path that does not exist exits with 2."""
        assert run(["gen", "--config", str(tmp_path / "none.py"), "--out", str(tmp_path / "d")]) == 2

    def test_uppercase_key_in_json_config(self, tmp_path):
        """A config key that traitlets reads as a section exits with 2."""
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"SynthConfig": {"Seed": 3}}))
        assert run(["gen", "--preset", "micro", "--config", str(config), "--out", str(tmp_path / "d")]) == 2


class TestTrainEvalAlign:
    """Test the train, eval and align commands."""

    def test_train_outputs(self, run_dir):
        """Training writes checkpoints, history and the resolved config."""
        assert (run_dir / "checkpoint_last.json").exists()
        assert (run_dir / "checkpoint_epoch1.json").exists()
        with (run_dir / "history.csv").open() as handle:
            assert len(list(csv.DictReader(handle))) == 1
        assert json.loads((run_dir / "config.json").read_text())["TrainConfig"]["n_basis"] == 8

    def test_resume(self, data_dir, run_dir):
        """--ckpt continues from the saved epoch."""
        ckpt = str(run_dir / "checkpoint_last.json")
        assert run(["train", "--data", str(data_dir), "--out", str(run_dir), "--ckpt", ckpt, *TRAIN_ARGS]) == 0
        assert (run_dir / "checkpoint_epoch2.json").exists()

    def test_eval(self, data_dir, run_dir, capsys):
        """Eval prints the report and appends to metrics.csv."""
        argv = ["eval", "--data", str(data_dir), "--ckpt", str(run_dir / "checkpoint_last.json"), "--out", str(run_dir)]
        capsys.readouterr()
        assert run(argv) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["n_samples"] == 8
        assert report["split"] == "all"
        assert report["dq_reg"] is not None
        assert run(argv) == 0
        with (run_dir / "metrics.csv").open() as handle:
            assert len(list(csv.DictReader(handle))) == 2
        assert (run_dir / "metrics.json").exists()

    def test_align(self, data_dir, run_dir, tmp_path):
        """Align exports one valid warp and one aligned curve per sample."""
        out = tmp_path / "aligned"
        argv = ["align", "--data", str(data_dir), "--ckpt", str(run_dir / "checkpoint_last.json"), "--out", str(out)]
        assert run([*argv, "--validate"]) == 0
        with (out / "warps.csv").open() as handle:
            rows = list(csv.reader(handle))
        assert rows[0][:2] == ["id", "gamma_0"]
        assert len(rows) == 9
        warps = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
        assert np.all(np.diff(warps, axis=1) >= 0.0)
        assert (out / "aligned.csv").exists()

    def test_shipped_json_config(self, data_dir, tmp_path):
        """configs/micro.json sets the basis size through the config file."""
        config = Path(__file__).resolve().parent.parent / "configs" / "micro.json"
        out = tmp_path / "run"
        assert run(["train", "--data", str(data_dir), "--config", str(config), "--out", str(out)]) == 0
        assert json.loads((out / "config.json").read_text())["TrainConfig"]["n_basis"] == 8

    def test_python_config(self, data_dir, tmp_path):
        """A Python config file may set TrainConfig.n_basis."""
        config = tmp_path / "run_config.py"
        config.write_text(
            "c = get_config()\nc.TrainConfig.n_basis = 6\nc.TrainConfig.epochs = 1\nc.TrainConfig.batch_size = 4\n"
        )
        out = tmp_path / "run"
        assert run(["train", "--data", str(data_dir), "--config", str(config), "--out", str(out)]) == 0
        assert json.loads((out / "config.json").read_text())["TrainConfig"]["n_basis"] == 6

    def test_default_basis_family_from_config(self, data_dir, tmp_path):
        """--BasisRegistry.default_family picks the basis when TrainConfig.basis is empty."""
        BasisRegistry.register("fourier_alt", FourierBasis)
        out = tmp_path / "run"
        argv = ["train", "--data", str(data_dir), "--out", str(out), "--BasisRegistry.default_family=fourier_alt"]
        assert run([*argv, *TRAIN_ARGS]) == 0
        assert load_checkpoint(out / "checkpoint_last.json").model["basis_family"] == "fourier_alt"

    def test_unknown_default_basis_family(self, data_dir, tmp_path):
        """An unregistered default family is a configuration error."""
        argv = ["train", "--data", str(data_dir), "--out", str(tmp_path / "run"), "--BasisRegistry.default_family=nope"]
        assert run([*argv, *TRAIN_ARGS]) == 2

    def test_missing_data_option(self, tmp_path):
        """Train needs --data."""
        assert run(["train", "--out", str(tmp_path / "run")]) == 2

    def test_invalid_trait(self, data_dir, tmp_path):
        """Out-of-range settings exit with 2."""
        assert run(["train", "--data", str(data_dir), "--out", str(tmp_path / "run"), "--TrainConfig.n_basis=0"]) == 2

    def test_missing_dataset(self, tmp_path):
        """A dataset that is not there is a data error."""
        assert run(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "run"), *TRAIN_ARGS]) == 3

    def test_no_subcommand(self):
        """Without a subcommand the tool prints help and exits with 1."""
        assert run([]) == 1


class TestGradcheck:
    """Test the gradient check command."""

    def test_report(self, tmp_path):
        """Both parameter groups pass on the micro configuration and the report is written."""
        code = run(["gradcheck", "--out", str(tmp_path)])
        report = json.loads((tmp_path / "gradcheck.json").read_text())
        assert code == 0
        assert report["passed"] is True
        assert set(report["groups"]) == {"reg", "class"}
        assert report["max_error"] < report["tolerance"] == 1e-4
        assert all(isinstance(v, float) for v in report["parameters"].values())
        assert report["oracle"]["1000"] < 1e-2
        assert report["oracle"]["2000"] < report["oracle"]["1000"]


class TestTune:
    """Test the hyperparameter search command."""

    def test_grid_file(self, data_dir, tmp_path):
        """A grid file of candidates yields best.json."""
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps([{"beta": 1.0}, {"beta": 10.0}]))
        out = tmp_path / "tune"
        assert run(["tune", "--data", str(data_dir), "--grid", str(grid), "--out", str(out), *TRAIN_ARGS]) == 0
        payload = json.loads((out / "best.json").read_text())
        assert payload["best"] in ({"beta": 1.0}, {"beta": 10.0})
        assert len(payload["scores"]) == 2

    def test_unknown_trait(self, data_dir, tmp_path):
        """Grids may only name TrainConfig traits."""
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"gamma": [1.0]}))
        assert run(["tune", "--data", str(data_dir), "--grid", str(grid), *TRAIN_ARGS]) == 2


class TestExpandGrid:
    """Test grid expansion."""

    def test_product(self):
        """A mapping of lists expands to its Cartesian product."""
        assert expand_grid({"alpha": [1.0, 2.0], "beta": [3.0]}) == [
            {"alpha": 1.0, "beta": 3.0},
            {"alpha": 2.0, "beta": 3.0},
        ]

    def test_list_passthrough(self):
        """A list of candidates is used as given."""
        assert expand_grid([{"alpha": 1.0}]) == [{"alpha": 1.0}]

    @pytest.mark.parametrize("spec", [{"alpha": []}, {"alpha": 1.0}, [1.0], "alpha"])
    def test_invalid(self, spec):
        """Anything else is a configuration error."""
        with pytest.raises(ConfigError):
            expand_grid(spec)
