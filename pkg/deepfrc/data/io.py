"""Dataset files: per-channel CSV with a JSON sidecar, and UCR archive text files.

CSV layout (one file per channel)::

    label,v_0,v_1,...,v_n

Single-channel datasets are written to ``<stem>.csv``; multichannel ones to
``<stem>_ch0.csv``, ``<stem>_ch1.csv``, ... with identical label columns. The
sidecar ``<stem>.json`` records ``n``, ``d``, ``C``, the grid, split indices
and any label-name mapping. Missing entries are written as ``NaN`` and read
back from ``NaN`` or an empty field.
"""

import csv
import json
import logging
import math
import re
import typing as t
from pathlib import Path

import numpy as np

from ..errors import DataFormatError
from ..states import DataFormat
from .fdata import Dataset, FunctionalSample, TimeGrid

logger = logging.getLogger(__name__)

MISSING_TOKENS = ("", "NaN", "nan")


def _stem(path: t.Union[str, Path]) -> Path:
    path = Path(path)
    if path.suffix in (".csv", ".json"):
        path = path.with_suffix("")
    return path


def channel_paths(stem: Path, n_channels: int) -> t.List[Path]:
    if n_channels == 1:
        return [stem.with_name(f"{stem.name}.csv")]
    return [stem.with_name(f"{stem.name}_ch{k}.csv") for k in range(n_channels)]


def sidecar_path(path: t.Union[str, Path]) -> Path:
    stem = _stem(path)
    return stem.with_name(f"{stem.name}.json")


def _format_value(value: float) -> str:
    if math.isnan(value):
        return "NaN"
    return repr(float(value))


def _parse_value(token: str, path: Path, row: int) -> float:
    token = token.strip()
    if token in MISSING_TOKENS:
        return math.nan
    try:
        value = float(token)
    except ValueError:
        raise DataFormatError(f"non-numeric field {token!r}", path=str(path), row=row)
    if not math.isfinite(value):
        raise DataFormatError(f"non-finite field {token!r}", path=str(path), row=row)
    return value


def _parse_label(token: str, path: Path, row: int) -> int:
    token = token.strip()
    try:
        value = float(token)
    except ValueError:
        raise DataFormatError(f"non-numeric label {token!r}", path=str(path), row=row)
    if not value.is_integer():
        raise DataFormatError(f"label {token!r} is not an integer", path=str(path), row=row)
    return int(value)


def _read_rows(path: Path, delimiter: t.Optional[str] = ",") -> t.Tuple[t.List[int], np.ndarray]:
    labels: t.List[int] = []
    rows: t.List[t.List[float]] = []
    width = None
    with open(path, newline="", encoding="utf-8") as handle:
        for row_number, line in enumerate(handle, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = re.split(r"\s+", line.strip()) if delimiter is None else next(csv.reader([line], delimiter=delimiter))
            if width is None:
                width = len(fields)
                if width < 2:
                    raise DataFormatError("rows need a label and at least one value", path=str(path), row=row_number)
            elif len(fields) != width:
                raise DataFormatError(f"expected {width} fields, got {len(fields)}", path=str(path), row=row_number)
            labels.append(_parse_label(fields[0], path, row_number))
            rows.append([_parse_value(token, path, row_number) for token in fields[1:]])
    if not rows:
        raise DataFormatError("file holds no rows", path=str(path))
    return labels, np.array(rows, dtype=np.float64)


def _grid_from_sidecar(sidecar: t.Mapping[str, t.Any], n_points: int) -> TimeGrid:
    raw = sidecar.get("grid")
    if raw is None:
        return TimeGrid.uniform(n_points)
    if len(raw) != n_points:
        raise DataFormatError(f"sidecar grid has {len(raw)} points but rows have {n_points} values")
    return TimeGrid.from_timestamps(raw)


def _load_csv(path: t.Union[str, Path]) -> Dataset:
    stem = _stem(path)
    sidecar_file = sidecar_path(stem)
    sidecar: t.Dict[str, t.Any] = {}
    if sidecar_file.exists():
        sidecar = json.loads(sidecar_file.read_text(encoding="utf-8"))

    single = stem.with_name(f"{stem.name}.csv")
    if single.exists():
        files = [single]
    else:
        pattern = re.compile(rf"^{re.escape(stem.name)}_ch(\d+)\.csv$")
        found = sorted(
            (int(m.group(1)), p) for p in stem.parent.glob(f"{stem.name}_ch*.csv") if (m := pattern.match(p.name))
        )
        files = [p for _, p in found]
        if not files or [k for k, _ in found] != list(range(len(found))):
            raise DataFormatError(f"no channel files found for {stem}")
    if "d" in sidecar and int(sidecar["d"]) != len(files):
        raise DataFormatError(f"sidecar declares d={sidecar['d']} but {len(files)} channel files exist")

    labels, first = _read_rows(files[0])
    channels = [first]
    for channel_file in files[1:]:
        other_labels, values = _read_rows(channel_file)
        if len(other_labels) != len(labels):
            raise DataFormatError(f"{len(other_labels)} rows vs {len(labels)} in {files[0].name}", path=str(channel_file))
        for row, (a, b) in enumerate(zip(labels, other_labels), start=1):
            if a != b:
                raise DataFormatError(f"label {b} differs from {a} in {files[0].name}", path=str(channel_file), row=row)
        if values.shape[1] != first.shape[1]:
            raise DataFormatError(f"{values.shape[1]} values per row vs {first.shape[1]}", path=str(channel_file), row=1)
        channels.append(values)

    n_classes = int(sidecar.get("C", max(labels) + 1))
    for row, label in enumerate(labels, start=1):
        if not 0 <= label < n_classes:
            raise DataFormatError(f"unknown label {label} (C = {n_classes})", path=str(files[0]), row=row)

    grid = _grid_from_sidecar(sidecar, first.shape[1])
    stacked = np.stack(channels, axis=1)
    samples = tuple(FunctionalSample(grid, v, y) for v, y in zip(stacked, labels))
    splits = {name: [int(i) for i in indices] for name, indices in sidecar.get("splits", {}).items()}
    dataset = Dataset(samples, n_classes, splits, sidecar.get("label_names"), dict(sidecar.get("meta", {})))
    dataset.check_classes()
    logger.info(f"Loaded {len(dataset)} samples (d={dataset.n_channels}, C={n_classes}) from {stem}")
    return dataset


def _load_ucr(path: t.Union[str, Path]) -> Dataset:
    """UCR archive text file: label first, then values; tab, comma or space separated."""
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        head = handle.readline()
    delimiter = "\t" if "\t" in head else "," if "," in head else None
    raw_labels, values = _read_rows(path, delimiter=delimiter)
    names = sorted(set(raw_labels))
    mapping = {raw: index for index, raw in enumerate(names)}
    labels = [mapping[raw] for raw in raw_labels]
    grid = TimeGrid.uniform(values.shape[1])
    samples = tuple(FunctionalSample(grid, v, y) for v, y in zip(values, labels))
    dataset = Dataset(samples, len(names), label_names=[str(n) for n in names])
    logger.info(f"Loaded {len(dataset)} UCR samples with {len(names)} classes from {path}")
    return dataset


def load_dataset(path: t.Union[str, Path], format: str = DataFormat.CSV) -> Dataset:
    if format not in DataFormat:
        raise DataFormatError(f"unknown dataset format {format!r}")
    if format == DataFormat.UCR:
        return _load_ucr(path)
    return _load_csv(path)


def save_dataset(dataset: Dataset, path: t.Union[str, Path], extra: t.Optional[t.Mapping[str, t.Any]] = None) -> t.List[Path]:
    """Write channel CSV files plus the sidecar; returns the written paths."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    values = dataset.values
    written = []
    for channel, channel_file in enumerate(channel_paths(stem, dataset.n_channels)):
        with open(channel_file, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            for sample, row in zip(dataset.samples, values[:, channel, :]):
                writer.writerow([sample.label] + [_format_value(v) for v in row])
        written.append(channel_file)

    grid = dataset.grid
    sidecar = {
        "n": grid.n,
        "d": dataset.n_channels,
        "C": dataset.n_classes,
        "grid": grid.points.tolist(),
        "splits": {name: list(indices) for name, indices in dataset.splits.items()},
    }
    if dataset.label_names is not None:
        sidecar["label_names"] = list(dataset.label_names)
    meta = dict(dataset.meta)
    if extra:
        meta.update(extra)
    if meta:
        sidecar["meta"] = meta
    side = sidecar_path(stem)
    side.write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    written.append(side)
    logger.info(f"Wrote {len(dataset)} samples to {stem} ({len(written)} files)")
    return written
