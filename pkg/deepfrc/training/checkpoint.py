"""Checkpoint files: one JSON document per saved training state."""

import json
import logging
import os
import tempfile
import typing as t
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.fdata import Standardizer, TimeGrid
from ..errors import DataFormatError, ShapeError
from ..model.pipeline import DeepFRC
from ..states import SeparationGradient

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and continue training it."""

    config: t.Dict[str, t.Any]
    epoch: int
    model: t.Dict[str, t.Any]
    params: t.Dict[str, t.Dict[str, t.Any]]
    optimizer: t.Dict[str, t.Any] = field(default_factory=dict)
    running_stats: t.Dict[str, t.Any] = field(default_factory=dict)
    rng_state: t.Optional[t.Dict[str, t.Any]] = None
    history: t.List[t.Dict[str, t.Any]] = field(default_factory=list)

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config,
            "epoch": self.epoch,
            "model": self.model,
            "params": self.params,
            "optimizer": self.optimizer,
            "running_stats": self.running_stats,
            "rng_state": self.rng_state,
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, payload: t.Mapping[str, t.Any]) -> "Checkpoint":
        try:
            return cls(
                config=dict(payload["config"]),
                epoch=int(payload["epoch"]),
                model=dict(payload["model"]),
                params=dict(payload["params"]),
                optimizer=dict(payload.get("optimizer", {})),
                running_stats=dict(payload.get("running_stats", {})),
                rng_state=payload.get("rng_state"),
                history=list(payload.get("history", [])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"malformed checkpoint: {e}")


def model_spec(model: DeepFRC) -> t.Dict[str, t.Any]:
    """Architecture and preprocessing needed to rebuild ``model``."""
    return {
        "grid": model.grid.points.tolist(),
        "n_channels": model.n_channels,
        "n_classes": model.n_classes,
        "K": model.K,
        "basis_family": model.basis_family,
        "alpha": model.alpha,
        "beta": model.beta,
        "separation_gradient": SeparationGradient(model.separation_gradient).value,
        "freeze_warp": model.freeze_warp,
        "smooth_K": model.smooth_K,
        "warpnet": {
            "channels": list(model.warpnet.channels),
            "kernel_size": model.warpnet.kernel_size,
            "composition": model.warpnet.composition,
        },
        "classifier": {"hidden": list(model.classifier.hidden), "prob_floor": model.classifier.prob_floor},
        "standardizer": model.standardizer.to_dict() if model.standardizer is not None else None,
    }


def model_params(model: DeepFRC) -> t.Dict[str, t.Dict[str, t.Any]]:
    return {
        name: {"shape": list(tensor.shape), "values": tensor.data.reshape(-1).tolist()}
        for name, tensor in model.parameters().items()
    }


def build_model(spec: t.Mapping[str, t.Any]) -> DeepFRC:
    from traitlets.config import Config

    config = Config()
    config.WarpNet.channels = list(spec["warpnet"]["channels"])
    config.WarpNet.kernel_size = int(spec["warpnet"]["kernel_size"])
    config.WarpNet.composition = spec["warpnet"]["composition"]
    config.Classifier.hidden = list(spec["classifier"]["hidden"])
    config.Classifier.prob_floor = float(spec["classifier"]["prob_floor"])
    model = DeepFRC(
        TimeGrid(np.asarray(spec["grid"], dtype=np.float64)),
        spec["n_channels"],
        spec["n_classes"],
        K=spec["K"],
        basis_family=spec.get("basis_family"),
        alpha=spec["alpha"],
        beta=spec["beta"],
        separation_gradient=spec["separation_gradient"],
        freeze_warp=spec["freeze_warp"],
        smooth_K=spec.get("smooth_K", 0),
        config=config,
    )
    if spec.get("standardizer") is not None:
        model.standardizer = Standardizer.from_dict(spec["standardizer"])
    return model


def load_params(model: DeepFRC, params: t.Mapping[str, t.Mapping[str, t.Any]]) -> None:
    current = model.parameters()
    missing = set(current) - set(params)
    if missing:
        raise ShapeError(f"checkpoint lacks parameters {sorted(missing)}", node="checkpoint")
    for name, tensor in current.items():
        shape = tuple(params[name]["shape"])
        if shape != tensor.shape:
            raise ShapeError(f"saved shape {shape} vs model {tensor.shape}", node=name)
        tensor.data = np.asarray(params[name]["values"], dtype=np.float64).reshape(shape)


def save_checkpoint(checkpoint: Checkpoint, path: t.Union[str, Path]) -> Path:
    """Write ``checkpoint`` as JSON, replacing ``path`` atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temporary = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(checkpoint.to_dict(), handle)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise
    logger.debug(f"Wrote checkpoint for epoch {checkpoint.epoch} to {path}")
    return path


def load_checkpoint(path: t.Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"checkpoint is not valid JSON: {e}", path=str(path))
    return Checkpoint.from_dict(payload)


def restore_model(checkpoint: Checkpoint) -> DeepFRC:
    """Rebuild the model in a checkpoint with its parameters and batch-norm statistics."""
    model = build_model(checkpoint.model)
    load_params(model, checkpoint.params)
    if checkpoint.running_stats:
        model.warpnet.load_running_state(checkpoint.running_stats)
    return model
