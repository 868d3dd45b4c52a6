"""The ``deepfrc`` command line: gen, train, eval, align, gradcheck and tune.

Every subcommand is a traitlets Application sharing the aliases below:

    --config <path>   Python (``c.TrainConfig.alpha = 100``) or JSON config file
    --data <path>     dataset directory (holding dataset.csv / dataset.json) or stem
    --out <dir>       output directory
    --ckpt <path>     checkpoint file
    --seed <int>      overrides SynthConfig.seed and TrainConfig.seed
    --preset <name>   SynthConfig preset (full, desk, micro, scarce100, scarce50)

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

import csv
import itertools
import json
import logging
import shutil
import sys
import tempfile
import typing as t
from pathlib import Path

import numpy as np
from traitlets import Bool, Dict, Float, Int, TraitError, Unicode, default
from traitlets.config import Application, Config

from . import _PACKAGE_NAME, __version__
from .data.fdata import Dataset
from .data.io import load_dataset, save_dataset
from .data.synthgen import PRESETS, GroundTruth, SynthConfig, exp_warp, generate
from .errors import ConfigError, DeepFRCError, NumericalError, WarpInvalidError
from .metrics import evaluate_report
from .model.basis_registry import BasisRegistry, configure_registry
from .model.classifier import Classifier
from .model.srvf import class_means, srvf_transform, warped_srvf_autodiff_gradient, warped_srvf_grad_oracle
from .model.warpnet import WarpNet, check_warps
from .states import DataFormat, Split
from .training.checkpoint import load_checkpoint, restore_model
from .training.trainer import TrainConfig, Trainer, evaluate, select_hyperparams

DATASET_STEM = "dataset"
GROUND_TRUTH_FILE = "ground_truth.json"
CONFIG_FILE = "config.json"

deepfrc_aliases = {
    **Application.aliases,
    "config": "DeepFRCBaseApp.config_file",
    "data": "DeepFRCBaseApp.data",
    "out": "DeepFRCBaseApp.out",
    "ckpt": "DeepFRCBaseApp.ckpt",
    "seed": "DeepFRCBaseApp.seed",
    "preset": "DeepFRCBaseApp.preset",
    "format": "DeepFRCBaseApp.data_format",
    "split": "DeepFRCBaseApp.split",
}

log_format = "[%(name)s] %(levelname)s %(message)s"


def _route_package_logs(level: int) -> None:
    package = logging.getLogger(_PACKAGE_NAME)
    package.setLevel(level)
    if not any(getattr(h, "_deepfrc_cli", False) for h in package.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(log_format))
        handler._deepfrc_cli = True
        package.addHandler(handler)


def _check_sections(config: t.Mapping[str, t.Any], source: str) -> None:
    """Uppercase keys name sections in traitlets, so their values must be sections too."""
    for key, value in config.items():
        if isinstance(value, t.Mapping):
            _check_sections(value, source)
        elif key[:1].isupper():
            raise ConfigError(f"{source}: {key!r} reads as a section name; trait names start lowercase")


def _write_json(path: Path, payload: t.Any) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


class DeepFRCBaseApp(Application):
    """Shared options, config-file loading and error-to-exit-code mapping."""

    version = __version__
    aliases = deepfrc_aliases
    classes = [SynthConfig, TrainConfig, WarpNet, Classifier, BasisRegistry]

    config_file = Unicode("", config=True, help="Python or JSON configuration file.")
    data = Unicode("", config=True, help="Dataset directory or file stem.")
    data_format = Unicode(DataFormat.CSV.value, config=True, help='Dataset format: "csv" or "ucr".')
    out = Unicode("", config=True, help="Output directory.")
    ckpt = Unicode("", config=True, help="Checkpoint file.")
    seed = Int(None, allow_none=True, config=True, help="Seed applied to SynthConfig and TrainConfig.")
    preset = Unicode("", config=True, help=f"SynthConfig preset: {', '.join(PRESETS)}.")
    split = Unicode("", config=True, help="Dataset split to use (default depends on the command).")

    @default("log_level")
    def _default_log_level(self):
        return logging.INFO

    def initialize(self, argv: t.Optional[t.List[str]] = None) -> None:
        try:
            super().initialize(argv)
            if self.subapp is not None:
                return
            self.load_run_config()
        except (TraitError, ConfigError, ValueError) as e:
            self.log.error(f"Bad configuration: {e}")
            self.exit(2)
        _route_package_logs(self.log_level)

    def load_run_config(self) -> None:
        """Load ``--config`` under the command-line values, then apply ``--seed``."""
        if self.config_file:
            path = Path(self.config_file)
            if not path.is_file():
                raise ConfigError(f"config file {path} does not exist")
            if path.suffix not in (".py", ".json"):
                raise ConfigError(f"config file {path} must end in .py or .json")
            self.raise_config_file_errors = True
            try:
                self.load_config_file(path.stem, path=str(path.parent.resolve()))
            except Exception as e:
                raise ConfigError(f"cannot read config file {path}: {e}") from e
            _check_sections(self.config, str(path))
            self.update_config(self.cli_config)
        if self.seed is not None:
            override = Config()
            override.SynthConfig.seed = self.seed
            override.TrainConfig.seed = self.seed
            self.update_config(override)
        configure_registry(self)

    def start(self) -> None:
        try:
            self.run()
        except (TraitError, ConfigError) as e:
            self.log.error(f"Bad configuration: {e}")
            self.exit(2)
        except DeepFRCError as e:
            self.log.error(f"{type(e).__name__}: {e}")
            self.exit(e.exit_code)

    def run(self) -> None:
        raise NotImplementedError

    # Helpers shared by the subcommands

    def require(self, name: str) -> str:
        value = getattr(self, name)
        if not value:
            raise ConfigError(f"--{name} is required for {self.name}")
        return value

    def out_dir(self) -> Path:
        path = Path(self.require("out"))
        if path.exists() and not path.is_dir():
            raise ConfigError(f"--out {path} exists and is not a directory")
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create --out {path}: {e}") from e
        return path

    def data_stem(self) -> Path:
        path = Path(self.require("data"))
        if path.is_dir():
            return path / DATASET_STEM
        return path

    def load_data(self) -> Dataset:
        stem = self.data_stem()
        if self.data_format not in DataFormat:
            raise ConfigError(f"unknown --format {self.data_format!r}")
        return load_dataset(stem, self.data_format)

    def load_ground_truth(self) -> t.Optional[GroundTruth]:
        candidate = self.data_stem().parent / GROUND_TRUTH_FILE
        if candidate.is_file():
            return GroundTruth.load(candidate)
        return None

    def select_split(self, dataset: Dataset, fallback: t.Optional[str]) -> t.Tuple[Dataset, t.Optional[t.List[int]]]:
        """The ``--split`` subset (else ``fallback`` when present, else everything) and its indices."""
        name = self.split or (fallback if fallback in dataset.splits and dataset.splits[fallback] else "")
        if not name:
            return dataset, None
        return dataset.split(name), list(dataset.splits[name])

    def train_config(self) -> TrainConfig:
        return TrainConfig(parent=self)

    def synth_config(self) -> SynthConfig:
        synth = SynthConfig(parent=self)
        if self.preset:
            if self.preset not in PRESETS:
                raise ConfigError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")
            configured = self.config.SynthConfig
            for key, value in PRESETS[self.preset].items():
                if key not in configured:
                    setattr(synth, key, value)
        return synth

    def resolved(self, **sections: t.Any) -> t.Dict[str, t.Any]:
        document = {name: section for name, section in sections.items() if section is not None}
        document["command"] = self.name
        document["version"] = __version__
        self.log.info(f"Resolved configuration: {json.dumps(document, sort_keys=True)}")
        return document


class GenApp(DeepFRCBaseApp):
    name = "deepfrc-gen"
    description = "Generate the two-class synthetic benchmark with its ground truth."

    def run(self) -> None:
        synth = self.synth_config()
        synth.check()
        target = Path(self.require("out"))
        if target.exists() and not target.is_dir():
            raise ConfigError(f"--out {target} exists and is not a directory")
        resolved = self.resolved(SynthConfig=synth.to_dict())
        dataset, truth = generate(synth)

        parent = target.parent if target.parent.exists() else None
        staging = Path(tempfile.mkdtemp(prefix=".deepfrc-gen-", dir=parent))
        try:
            written = save_dataset(dataset, staging / DATASET_STEM)
            written.append(truth.save(staging / GROUND_TRUTH_FILE, extra={"seed": synth.seed}))
            written.append(_write_json(staging / CONFIG_FILE, resolved))
            try:
                target.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise ConfigError(f"cannot create --out {target}: {e}") from e
            for path in written:
                shutil.move(str(path), str(target / path.name))
        finally:
            shutil.rmtree(staging, ignore_errors=True)
        self.log.info(f"Wrote {len(dataset)} curves and ground truth to {target}")


class TrainApp(DeepFRCBaseApp):
    name = "deepfrc-train"
    description = "Train a model on the train split; resume with --ckpt."

    def run(self) -> None:
        dataset = self.load_data()
        settings = self.train_config()
        out = self.out_dir()
        train, _ = self.select_split(dataset, Split.TRAIN.value)
        val, val_indices = (None, None)
        if dataset.splits.get(Split.VAL.value):
            val, val_indices = dataset.split(Split.VAL.value), dataset.splits[Split.VAL.value]
        truth = self.load_ground_truth()
        if truth is not None and val_indices is not None:
            truth = truth.subset(val_indices)
        else:
            truth = None
        _write_json(out / CONFIG_FILE, self.resolved(TrainConfig=settings.to_dict(), data=str(self.data_stem())))
        trainer = Trainer(settings, parent=self)
        trainer.train(train, val, truth, resume=self.ckpt or None, out_dir=out)
        self.log.info(f"Finished after epoch {trainer.history.last_epoch}; checkpoints in {out}")


class EvalApp(DeepFRCBaseApp):
    name = "deepfrc-eval"
    description = "Score a checkpoint on a dataset split (test by default)."

    def run(self) -> None:
        checkpoint = load_checkpoint(self.require("ckpt"))
        model = restore_model(checkpoint)
        dataset = self.load_data()
        subset, indices = self.select_split(dataset, Split.TEST.value)
        truth = self.load_ground_truth()
        if truth is not None and indices is not None:
            truth = truth.subset(indices)
        split_name = self.split or (Split.TEST.value if indices is not None else "all")
        report = evaluate_report(model, subset, truth, split=split_name)
        report.meta = self.resolved(checkpoint=str(self.ckpt), epoch=checkpoint.epoch, TrainConfig=checkpoint.config)
        print(report.to_json())
        if self.out:
            out = self.out_dir()
            _write_json(out / "metrics.json", report.to_dict())
            table = out / "metrics.csv"
            with table.open("a", encoding="utf-8") as handle:
                handle.write(report.csv_line(header=table.stat().st_size == 0))
            self.log.info(f"Wrote metrics for {len(subset)} samples to {out}")


class AlignApp(DeepFRCBaseApp):
    name = "deepfrc-align"
    description = "Export learned warps and aligned curves as CSV."

    check = Bool(False, config=True, help="Re-read warps.csv and check every row is a valid warp.")

    flags = {
        **Application.flags,
        "validate": ({"AlignApp": {"check": True}}, "Check the exported warps satisfy the warp invariants."),
    }

    def run(self) -> None:
        model = restore_model(load_checkpoint(self.require("ckpt")))
        dataset = self.load_data()
        subset, indices = self.select_split(dataset, None)
        ids = indices if indices is not None else list(range(len(subset)))
        result = evaluate(model, subset)
        out = self.out_dir()
        self.resolved(checkpoint=str(self.ckpt), data=str(self.data_stem()), split=self.split or "all")

        warps_file = out / "warps.csv"
        self._write_rows(warps_file, "gamma", ids, result.warps)
        aligned = result.aligned_raw
        if aligned.shape[1] == 1:
            self._write_rows(out / "aligned.csv", "x", ids, aligned[:, 0, :])
        else:
            for channel in range(aligned.shape[1]):
                self._write_rows(out / f"aligned_ch{channel}.csv", "x", ids, aligned[:, channel, :])
        self.log.info(f"Wrote {len(ids)} warps and aligned curves to {out}")
        if self.check:
            self.check_export(warps_file)

    @staticmethod
    def _write_rows(path: Path, prefix: str, ids: t.Sequence[int], rows: np.ndarray) -> None:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["id"] + [f"{prefix}_{k}" for k in range(rows.shape[1])])
            for sample_id, row in zip(ids, rows):
                writer.writerow([sample_id] + [repr(float(v)) for v in row])

    def check_export(self, path: Path) -> None:
        with path.open(encoding="utf-8") as handle:
            reader = csv.reader(handle)
            next(reader)
            rows = [(int(line[0]), [float(v) for v in line[1:]]) for line in reader]
        problems = check_warps(np.array([values for _, values in rows]))
        if problems:
            for row, reasons in sorted(problems.items())[:10]:
                self.log.error(f"warp id {rows[row][0]}: {'; '.join(reasons)}")
            raise WarpInvalidError(f"{len(problems)} exported warp(s) violate the warp invariants")
        self.log.info(f"All {len(rows)} exported warps are valid")


class GradcheckApp(DeepFRCBaseApp):
    name = "deepfrc-gradcheck"
    description = "Compare reverse-mode gradients with central differences on the micro configuration."

    step = Float(1e-6, config=True, help="Central-difference step.")
    entries = Int(12, config=True, help="Entries sampled per parameter tensor (0 checks all).")
    tolerance = Float(1e-4, config=True, help="Largest relative error accepted.")
    oracle_points = Int(1000, config=True, help="Grid size for the warped-SRVF oracle comparison.")

    @default("preset")
    def _default_preset(self):
        return "micro"

    def train_config(self) -> TrainConfig:
        settings = super().train_config()
        if "n_basis" not in self.config.TrainConfig:
            settings.n_basis = 8
        return settings

    def oracle_errors(self) -> t.Dict[str, float]:
        """Relative L2 gap between the closed-form warped-SRVF sensitivity and reverse mode."""
        errors = {}
        for n in (self.oracle_points, 2 * self.oracle_points):
            points = np.linspace(0.0, 1.0, n)
            curve = points + 0.1 * np.sin(2.0 * np.pi * points)
            q = srvf_transform(curve, points)
            gamma = exp_warp(points, 1.0)
            oracle = warped_srvf_grad_oracle(q, gamma, points)
            autodiff = warped_srvf_autodiff_gradient(q, gamma, points)
            errors[str(n)] = float(np.linalg.norm(autodiff - oracle) / np.linalg.norm(oracle))
        return errors

    def run(self) -> None:
        synth = self.synth_config()
        settings = self.train_config()
        resolved = self.resolved(SynthConfig=synth.to_dict(), TrainConfig=settings.to_dict())
        dataset, _ = generate(synth)
        trainer = Trainer(settings, parent=self)
        model = trainer.build_model(dataset)
        model.fit_standardizer(dataset)
        values = model.prepare(dataset)
        labels = dataset.labels
        means = class_means(srvf_transform(values, model.grid.points).reshape(len(dataset), -1), labels, model.n_classes)
        graph = model.forward(values, labels, means).graph()

        rng = np.random.default_rng(settings.seed)
        groups: t.Dict[str, float] = {}
        per_parameter: t.Dict[str, float] = {}
        for group, params in model.parameter_groups().items():
            if group == "reg" and model.freeze_warp:
                continue
            worst = 0.0
            for name, tensor in params.items():
                size = tensor.data.size
                chosen = None
                if self.entries and size > self.entries:
                    chosen = sorted(rng.choice(size, self.entries, replace=False).tolist())
                error = graph.grad_check(name, self.step, entries=chosen)
                per_parameter[name] = float(error)
                worst = max(worst, error)
            groups[group] = float(worst)
            self.log.info(f"Group {group}: max relative error {worst:.3e}")

        report = {
            "groups": groups,
            "parameters": per_parameter,
            "max_error": max(groups.values(), default=0.0),
            "tolerance": self.tolerance,
            "oracle": self.oracle_errors(),
            "config": resolved,
        }
        report["passed"] = bool(report["max_error"] <= self.tolerance)
        print(json.dumps(report, indent=2, sort_keys=True))
        if self.out:
            _write_json(self.out_dir() / "gradcheck.json", report)
        if not report["passed"]:
            raise NumericalError(f"gradient check error {report['max_error']:.3e} exceeds {self.tolerance:.1e}")


def expand_grid(spec: t.Union[t.Mapping[str, t.Sequence[t.Any]], t.Sequence[t.Mapping[str, t.Any]]]) -> t.List[t.Dict[str, t.Any]]:
    """A list of candidates as given, or the product of a {trait: [values]} mapping."""
    if isinstance(spec, t.Mapping):
        names = list(spec)
        for name in names:
            if not isinstance(spec[name], list) or not spec[name]:
                raise ConfigError(f"grid entry {name!r} must be a nonempty list")
        return [dict(zip(names, values)) for values in itertools.product(*(spec[n] for n in names))]
    if isinstance(spec, list) and all(isinstance(entry, dict) for entry in spec):
        return [dict(entry) for entry in spec]
    raise ConfigError("grid must be a list of objects or an object of lists")


class TuneApp(DeepFRCBaseApp):
    name = "deepfrc-tune"
    description = "Pick loss weights and learning rates on a 4:1 held-out split of the train data."

    grid = Unicode("", config=True, help="JSON file: a list of candidates or {trait: [values]}.")
    candidates = Dict(
        default_value={"alpha": [10.0, 100.0], "beta": [1.0, 10.0]},
        config=True,
        help="Grid used when --grid is not given.",
    )

    aliases = {**deepfrc_aliases, "grid": "TuneApp.grid"}

    def run(self) -> None:
        if self.grid:
            path = Path(self.grid)
            try:
                spec = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read grid file {path}: {e}") from e
        else:
            spec = self.candidates
        candidates = expand_grid(spec)
        unknown = {key for c in candidates for key in c} - set(TrainConfig.class_trait_names(config=True))
        if unknown:
            raise ConfigError(f"grid names unknown TrainConfig traits: {sorted(unknown)}")
        settings = self.train_config()
        dataset = self.load_data()
        train, _ = self.select_split(dataset, Split.TRAIN.value)
        resolved = self.resolved(TrainConfig=settings.to_dict(), grid=candidates)
        selection = select_hyperparams(train, candidates, settings)
        payload = {**selection.to_dict(), "config": resolved}
        print(json.dumps(payload, indent=2, sort_keys=True))
        if self.out:
            _write_json(self.out_dir() / "best.json", payload)


class DeepFRCApp(Application):
    """Joint registration and classification of functional data."""

    name = "deepfrc"
    version = __version__
    description = __doc__

    subcommands = {
        "gen": (GenApp, GenApp.description),
        "train": (TrainApp, TrainApp.description),
        "eval": (EvalApp, EvalApp.description),
        "align": (AlignApp, AlignApp.description),
        "gradcheck": (GradcheckApp, GradcheckApp.description),
        "tune": (TuneApp, TuneApp.description),
    }

    def initialize(self, argv: t.Optional[t.List[str]] = None) -> None:
        try:
            super().initialize(argv)
        except (TraitError, ValueError) as e:
            self.log.error(f"Bad configuration: {e}")
            self.exit(2)

    def start(self) -> None:
        if self.subapp is None:
            self.print_help()
            print(f"Available subcommands: {', '.join(self.subcommands)}")
            self.exit(1)
        self.subapp.start()


def main(argv: t.Optional[t.List[str]] = None) -> None:
    """Entry point of the ``deepfrc`` script; safe to call repeatedly in one process."""
    for app_class in (DeepFRCApp, *(cls for cls, _ in DeepFRCApp.subcommands.values())):
        app_class.clear_instance()
    BasisRegistry.clear_instance()
    DeepFRCApp.launch_instance(argv)


if __name__ == "__main__":
    main()
