"""Joint training loop, evaluation and the held-out hyperparameter search."""

import csv
import logging
import math
import time
import typing as t
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from traitlets import Bool, Float, Int, TraitError, Unicode, validate
from traitlets.config import Configurable, LoggingConfigurable

from ..core import tensor as T
from ..data.fdata import Dataset
from ..errors import DataError, DivergenceError, NonFiniteGradientError
from ..model.losses import LossBreakdown, alignment_loss, cross_entropy
from ..model.pipeline import DeepFRC
from ..model.srvf import class_means, srvf_transform
from ..model.warpnet import apply_warp
from ..states import SeparationGradient, Split
from .checkpoint import Checkpoint, load_checkpoint, model_params, model_spec, restore_model, save_checkpoint
from .optim import AdamW

logger = logging.getLogger(__name__)

HISTORY_FILE = "history.csv"
LAST_CHECKPOINT = "checkpoint_last.json"


class TrainConfig(Configurable):
    """Loss weights, optimizer settings and loop length for one training run."""

    n_basis = Int(100, config=True, help="Number of basis functions K per channel.")
    basis = Unicode(
        "", config=True, help="Basis family registered with BasisRegistry; empty uses BasisRegistry.default_family."
    )
    alpha = Float(100.0, config=True, help="Weight of the class-separation term inside the alignment loss.")
    beta = Float(10.0, config=True, help="Weight of the cross-entropy term.")
    lr_reg = Float(1e-3, config=True, help="Learning rate of the warp network parameters.")
    lr_class = Float(1e-3, config=True, help="Learning rate of the classifier parameters.")
    epochs = Int(30, config=True, help="Number of passes over the training split.")
    batch_size = Int(64, config=True, help="Mini-batch size; the whole split when it has fewer samples.")
    decay_c0 = Float(
        0.0,
        config=True,
        help="Learning rates follow lr / (1 + t / c0) over update steps t; 0 keeps them constant.",
    )
    seed = Int(0, config=True, help="Seed for initialization and batch order.")
    adam_beta1 = Float(0.9, config=True, help="AdamW first-moment decay.")
    adam_beta2 = Float(0.999, config=True, help="AdamW second-moment decay.")
    adam_eps = Float(1e-8, config=True, help="AdamW denominator offset.")
    weight_decay = Float(1e-4, config=True, help="Decoupled weight decay.")
    freeze_warp = Bool(False, config=True, help="Keep identity warps and never update the warp network.")
    separation_gradient = Unicode(
        SeparationGradient.DIFFERENTIATE.value,
        config=True,
        help='"differentiate" or "detach" the batch class means in the separation term.',
    )
    smooth_K = Int(0, config=True, help="Fourier terms used to smooth imputed gaps; 0 keeps linear fills.")
    checkpoint_every = Int(1, config=True, help="Write checkpoint_epoch{E}.json every this many epochs.")

    @validate("lr_reg", "lr_class")
    def _validate_lr(self, proposal):
        if proposal["value"] <= 0:
            raise TraitError(f"{proposal['trait'].name} must be positive, got {proposal['value']}")
        return proposal["value"]

    @validate("n_basis", "batch_size", "checkpoint_every")
    def _validate_positive(self, proposal):
        if proposal["value"] < 1:
            raise TraitError(f"{proposal['trait'].name} must be at least 1, got {proposal['value']}")
        return proposal["value"]

    @validate("epochs", "smooth_K")
    def _validate_count(self, proposal):
        if proposal["value"] < 0:
            raise TraitError(f"{proposal['trait'].name} must be nonnegative, got {proposal['value']}")
        return proposal["value"]

    @validate("alpha", "beta", "decay_c0", "weight_decay")
    def _validate_nonnegative(self, proposal):
        if proposal["value"] < 0:
            raise TraitError(f"{proposal['trait'].name} must be nonnegative, got {proposal['value']}")
        return proposal["value"]

    @validate("adam_beta1", "adam_beta2")
    def _validate_decay(self, proposal):
        if not 0.0 <= proposal["value"] < 1.0:
            raise TraitError(f"{proposal['trait'].name} must lie in [0, 1), got {proposal['value']}")
        return proposal["value"]

    @validate("separation_gradient")
    def _validate_separation(self, proposal):
        if proposal["value"] not in SeparationGradient:
            raise TraitError(f"separation_gradient must be one of {[m.value for m in SeparationGradient]}")
        return proposal["value"]

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {name: getattr(self, name) for name in self.trait_names(config=True)}


@dataclass
class EpochRecord:
    """Training-split loss averages and validation scores after one epoch."""

    epoch: int
    l1_intra: float
    l1_sep: float
    l2: float
    total: float
    train_acc: float
    lr_reg: float
    lr_class: float
    guarded_steps: int = 0
    val_acc: t.Optional[float] = None
    val_f1: t.Optional[float] = None
    val_total: t.Optional[float] = None
    atv: t.Optional[float] = None
    rho: t.Optional[float] = None
    dq_reg: t.Optional[float] = None

    @classmethod
    def from_dict(cls, payload: t.Mapping[str, t.Any]) -> "EpochRecord":
        return cls(**{f.name: payload.get(f.name) for f in fields(cls)})


@dataclass
class TrainHistory:
    records: t.List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    @property
    def last_epoch(self) -> int:
        return self.records[-1].epoch if self.records else 0

    def to_rows(self) -> t.List[t.Dict[str, t.Any]]:
        return [asdict(record) for record in self.records]

    @classmethod
    def from_rows(cls, rows: t.Iterable[t.Mapping[str, t.Any]]) -> "TrainHistory":
        return cls([EpochRecord.from_dict(row) for row in rows])

    def write_csv(self, path: t.Union[str, Path]) -> Path:
        path = Path(path)
        names = [f.name for f in fields(EpochRecord)]
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=names)
            writer.writeheader()
            for row in self.to_rows():
                writer.writerow({k: "" if v is None else v for k, v in row.items()})
        return path


@dataclass
class EvaluationResult:
    """Everything one eval-mode pass over a dataset produces."""

    warps: np.ndarray
    aligned: np.ndarray
    aligned_raw: np.ndarray
    coefficients: np.ndarray
    probabilities: np.ndarray
    predictions: np.ndarray
    loss: LossBreakdown
    raw_dataset: Dataset


def _batches(order: np.ndarray, batch_size: int) -> t.Iterator[np.ndarray]:
    for start in range(0, order.size, batch_size):
        yield order[start : start + batch_size]


def _loss_on_arrays(model: DeepFRC, srvfs: np.ndarray, probabilities: np.ndarray, labels: np.ndarray) -> LossBreakdown:
    """Loss terms for a whole evaluated set, with class means taken from that set.

    Classes missing from the set are left out of both alignment terms.
    """
    present = np.flatnonzero(np.bincount(labels, minlength=model.n_classes))
    if present.size < model.n_classes:
        logger.warning(f"Evaluated set covers classes {present.tolist()} of {model.n_classes}")
    local = np.searchsorted(present, labels)
    means = class_means(srvfs, local, present.size)
    intra, separation = alignment_loss(T.constant(srvfs), local, means, model.separation_gradient)
    l2 = cross_entropy(T.constant(probabilities), labels)
    return LossBreakdown.from_terms(intra, separation, l2, model.alpha, model.beta)


def evaluate(model: DeepFRC, dataset: Dataset, batch_size: int = 256) -> EvaluationResult:
    """Eval-mode warps, aligned curves, coefficients and predictions for ``dataset``.

    ``aligned_raw`` applies the learned warps to the imputed but unstandardized
    curves, which is what registration metrics are computed on.
    """
    model.eval()
    values = model.prepare(dataset)
    labels = dataset.labels
    parts: t.Dict[str, t.List[np.ndarray]] = {k: [] for k in ("gamma", "aligned", "srvfs", "coefficients", "probabilities")}
    for index in _batches(np.arange(len(dataset)), batch_size):
        rep = model.represent(values[index])
        for key in parts:
            parts[key].append(getattr(rep, key).data)
    stacked = {key: np.concatenate(arrays) for key, arrays in parts.items()}
    raw = model.complete(dataset)
    aligned_raw = apply_warp(raw.values, stacked["gamma"], model.grid, model.warpnet.composition)
    return EvaluationResult(
        warps=stacked["gamma"],
        aligned=stacked["aligned"],
        aligned_raw=aligned_raw,
        coefficients=stacked["coefficients"],
        probabilities=stacked["probabilities"],
        predictions=stacked["probabilities"].argmax(axis=1),
        loss=_loss_on_arrays(model, stacked["srvfs"], stacked["probabilities"], labels),
        raw_dataset=raw,
    )


class Trainer(LoggingConfigurable):
    """Runs mini-batch AdamW over the joint objective.

    The warp network parameters ("reg") and the classifier parameters
    ("class") form two optimizer groups with their own learning rates.
    Class means for the intra-class term come from a per-sample cache of the
    warped SRVFs produced at each sample's most recent step; before its first
    step a sample contributes its unwarped SRVF.
    """

    def __init__(self, settings: t.Optional[TrainConfig] = None, **kwargs: t.Any) -> None:
        super().__init__(**kwargs)
        self.settings = settings if settings is not None else TrainConfig(parent=self)
        self.model: t.Optional[DeepFRC] = None
        self.optimizer: t.Optional[AdamW] = None
        self.history = TrainHistory()
        self.last_checkpoint: t.Optional[Path] = None
        self.rng = np.random.default_rng(self.settings.seed)

    def build_model(self, train: Dataset) -> DeepFRC:
        s = self.settings
        return DeepFRC(
            train.grid,
            train.n_channels,
            train.n_classes,
            K=s.n_basis,
            basis_family=s.basis or None,
            alpha=s.alpha,
            beta=s.beta,
            separation_gradient=s.separation_gradient,
            freeze_warp=s.freeze_warp,
            smooth_K=s.smooth_K,
            rng=self.rng,
            config=self.config,
        )

    def build_optimizer(self, model: DeepFRC) -> AdamW:
        s = self.settings
        optimizer = AdamW(
            model.parameter_groups(),
            {"reg": s.lr_reg, "class": s.lr_class},
            beta1=s.adam_beta1,
            beta2=s.adam_beta2,
            eps=s.adam_eps,
            weight_decay=s.weight_decay,
            decay_c0=s.decay_c0,
        )
        if s.freeze_warp:
            optimizer.frozen.add("reg")
        return optimizer

    def _checkpoint(self, epoch: int) -> Checkpoint:
        return Checkpoint(
            config=self.settings.to_dict(),
            epoch=epoch,
            model=model_spec(self.model),
            params=model_params(self.model),
            optimizer=self.optimizer.state_dict(),
            running_stats=self.model.warpnet.running_state(),
            rng_state=self.rng.bit_generator.state,
            history=self.history.to_rows(),
        )

    def _write(self, epoch: int, out_dir: t.Optional[Path], final: bool) -> None:
        if out_dir is None:
            return
        checkpoint = self._checkpoint(epoch)
        if epoch > 0 and (epoch % self.settings.checkpoint_every == 0 or final):
            save_checkpoint(checkpoint, out_dir / f"checkpoint_epoch{epoch}.json")
        self.last_checkpoint = save_checkpoint(checkpoint, out_dir / LAST_CHECKPOINT)
        self.history.write_csv(out_dir / HISTORY_FILE)

    def _resume(self, resume: t.Union[Checkpoint, str, Path]) -> int:
        checkpoint = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        self.model = restore_model(checkpoint)
        self.optimizer = self.build_optimizer(self.model)
        if checkpoint.optimizer:
            self.optimizer.load_state_dict(checkpoint.optimizer)
        if checkpoint.rng_state is not None:
            self.rng.bit_generator.state = checkpoint.rng_state
        self.history = TrainHistory.from_rows(checkpoint.history)
        self.log.info(f"Resuming after epoch {checkpoint.epoch}")
        return checkpoint.epoch

    def train(
        self,
        train: Dataset,
        val: t.Optional[Dataset] = None,
        ground_truth: t.Optional[t.Any] = None,
        resume: t.Optional[t.Union[Checkpoint, str, Path]] = None,
        out_dir: t.Optional[t.Union[str, Path]] = None,
    ) -> t.Tuple[DeepFRC, TrainHistory]:
        """Train for ``epochs`` epochs and return the model with its history.

        ``ground_truth`` belongs to ``val`` and adds registration and
        coefficient metrics to each record. With ``resume`` the run restores
        the saved state and numbers its epochs after the saved one. A
        non-finite loss or gradient raises DivergenceError carrying the last
        checkpoint written.
        """
        from ..metrics import evaluate_report

        s = self.settings
        train.check_classes()
        out_dir = Path(out_dir) if out_dir is not None else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        if resume is not None:
            start = self._resume(resume)
            if self.model.standardizer is None:
                self.model.fit_standardizer(train)
        else:
            start = 0
            self.model = self.build_model(train)
            self.optimizer = self.build_optimizer(self.model)
            self.model.fit_standardizer(train)
            self.history = TrainHistory()
        model = self.model
        self.log.info(f"Training on {len(train)} samples for {s.epochs} epoch(s): {s.to_dict()}")

        if s.epochs == 0:
            self._write(start, out_dir, final=True)
            return model, self.history

        values = model.prepare(train)
        labels = train.labels
        cache = srvf_transform(values, model.grid.points).reshape(len(train), model.srvf_width)
        batch_size = min(s.batch_size, len(train))
        model.train()

        for epoch in range(start + 1, start + s.epochs + 1):
            tic = time.perf_counter()
            sums = np.zeros(4)
            correct = 0
            guarded_steps = 0
            for index in _batches(self.rng.permutation(len(train)), batch_size):
                means = class_means(cache, labels, model.n_classes)
                result = model.forward(values[index], labels[index], means)
                terms = result.breakdown
                if not terms.is_finite:
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}: {terms.to_dict()}",
                        checkpoint=str(self.last_checkpoint) if self.last_checkpoint else None,
                    )
                grads = result.graph().backward_grad()
                try:
                    self.optimizer.step(grads)
                except NonFiniteGradientError as e:
                    raise DivergenceError(
                        f"epoch {epoch}: {e}",
                        checkpoint=str(self.last_checkpoint) if self.last_checkpoint else None,
                    ) from e
                model.warpnet.update_running_stats()
                cache[index] = result.srvfs.data
                sums += index.size * np.array([terms.l1_intra, terms.l1_sep, terms.l2, terms.total])
                correct += int((result.probabilities.data.argmax(axis=1) == labels[index]).sum())
                guarded_steps += int(not result.diagnostics.clean)
                self.log.debug(f"epoch {epoch} batch of {index.size}: total {terms.total:.6g}")

            averages = sums / len(train)
            record = EpochRecord(
                epoch=epoch,
                l1_intra=float(averages[0]),
                l1_sep=float(averages[1]),
                l2=float(averages[2]),
                total=float(averages[3]),
                train_acc=correct / len(train),
                lr_reg=self.optimizer.lr("reg"),
                lr_class=self.optimizer.lr("class"),
                guarded_steps=guarded_steps,
            )
            if val is not None:
                report = evaluate_report(model, val, ground_truth, split=Split.VAL.value)
                record.val_acc, record.val_f1 = report.accuracy, report.macro_f1
                record.val_total = report.loss["total"]
                record.atv, record.rho, record.dq_reg = report.atv, report.rho, report.dq_reg
                model.train()
            self.history.append(record)
            self.log.info(
                f"Epoch {epoch}: loss {record.total:.6g} (intra {record.l1_intra:.4g}, sep {record.l1_sep:.4g}, "
                f"ce {record.l2:.4g}), train acc {record.train_acc:.3f}"
                + (f", val acc {record.val_acc:.3f}" if record.val_acc is not None else "")
                + f" [{time.perf_counter() - tic:.1f}s]"
            )
            self._write(epoch, out_dir, final=epoch == start + s.epochs)

        model.eval()
        return model, self.history


@dataclass
class SelectionResult:
    best: t.Dict[str, t.Any]
    scores: t.List[t.Tuple[t.Dict[str, t.Any], float]]

    def to_dict(self) -> t.Dict[str, t.Any]:
        return {
            "best": self.best,
            "scores": [{"params": params, "loss": None if math.isinf(loss) else loss} for params, loss in self.scores],
        }


def holdout_split(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> t.Tuple[Dataset, Dataset]:
    """Per-class shuffled split into a ``ratio`` portion and the remainder."""
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    fit, held = [], []
    for j in range(dataset.n_classes):
        members = rng.permutation(np.flatnonzero(labels == j))
        cut = int(round(ratio * members.size))
        if members.size > 1:
            cut = min(max(cut, 1), members.size - 1)
        fit.extend(members[:cut].tolist())
        held.extend(members[cut:].tolist())
    if not held:
        raise DataError(f"{len(dataset)} samples are too few for a held-out portion")
    return dataset.subset(sorted(fit)), dataset.subset(sorted(held))


def select_hyperparams(
    dataset: Dataset,
    candidates: t.Sequence[t.Mapping[str, t.Any]],
    settings: t.Optional[TrainConfig] = None,
    seed: t.Optional[int] = None,
) -> SelectionResult:
    """Train each candidate on 4/5 of ``dataset`` and keep the lowest held-out total loss.

    Candidates override TrainConfig traits (alpha, beta, lr_reg, lr_class, ...).
    Diverged or non-finite runs rank last; ties keep the earliest candidate.
    """
    if not candidates:
        raise ValueError("hyperparameter grid is empty")
    base = settings if settings is not None else TrainConfig()
    seed = base.seed if seed is None else seed
    fit, held = holdout_split(dataset, 0.8, seed)
    scores: t.List[t.Tuple[t.Dict[str, t.Any], float]] = []
    best_index, best_loss = 0, math.inf
    for index, candidate in enumerate(candidates):
        candidate = dict(candidate)
        config = TrainConfig(**{**base.to_dict(), **candidate})
        try:
            model, _ = Trainer(config, config=base.config).train(fit)
            loss = evaluate(model, held).loss.total
        except DivergenceError as e:
            logger.warning(f"Candidate {candidate} diverged: {e}")
            loss = math.inf
        if not math.isfinite(loss):
            loss = math.inf
        scores.append((candidate, loss))
        logger.info(f"Candidate {candidate}: held-out loss {loss:.6g}")
        if loss < best_loss:
            best_index, best_loss = index, loss
    best = scores[best_index][0]
    logger.info(f"Selected {best} (held-out loss {best_loss:.6g})")
    return SelectionResult(best, scores)
