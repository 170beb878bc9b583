"""Tabular data loading, metadata, and deterministic train/validation splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BINARY = "binary-classification"
MULTICLASS = "multiclass-classification"
REGRESSION = "regression"

TASK_KINDS = (BINARY, MULTICLASS, REGRESSION)


class DatasetError(ValueError):
    """Raised for malformed input files or invalid split requests."""


@dataclass(frozen=True)
class FeatureTable:
    """Columnar numeric dataset: an (m, n) feature matrix plus a label vector."""

    feature_names: tuple[str, ...]
    X: np.ndarray  # shape (m, n), float64
    labels: np.ndarray  # shape (m,), float64
    task_kind: str

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise DatasetError(f"unknown task kind {self.task_kind!r}")
        if self.X.ndim != 2:
            raise DatasetError("feature matrix must be 2-dimensional")
        m, n = self.X.shape
        if n < 2:
            raise DatasetError(f"need at least 2 features, got {n}")
        if m < 2:
            raise DatasetError(f"need at least 2 rows, got {m}")
        if len(self.feature_names) != n:
            raise DatasetError("feature name count does not match column count")
        if self.labels.shape != (m,):
            raise DatasetError("label vector length does not match row count")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.labels)):
            raise DatasetError("non-finite values in table")
        if self.is_classification:
            self._check_class_labels()

    def _check_class_labels(self):
        if not np.allclose(self.labels, np.round(self.labels)):
            raise DatasetError("classification labels must be integers")
        ints = self.labels.astype(int)
        if ints.min() < 0:
            raise DatasetError("classification labels must be non-negative")
        present = set(np.unique(ints).tolist())
        n_classes = max(present) + 1
        if present != set(range(n_classes)):
            missing = sorted(set(range(n_classes)) - present)
            raise DatasetError(f"classification labels must cover 0..C-1; missing {missing}")
        if self.task_kind == BINARY and n_classes != 2:
            raise DatasetError(f"binary task requires exactly 2 classes, got {n_classes}")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.task_kind in (BINARY, MULTICLASS)

    @property
    def n_classes(self) -> int:
        if not self.is_classification:
            raise DatasetError("n_classes undefined for regression")
        return int(self.labels.max()) + 1

    def take_rows(self, idx: np.ndarray) -> "FeatureTable":
        return FeatureTable(self.feature_names, self.X[idx], self.labels[idx], self.task_kind)


@dataclass(frozen=True)
class FeatureMetadata:
    """Optional dataset description plus a partial feature-name -> description map."""

    dataset_description: str | None = None
    descriptions: dict[str, str] = field(default_factory=dict)

    def missing_names(self, feature_names) -> tuple[str, ...]:
        return tuple(name for name in feature_names if name not in self.descriptions)

    @property
    def is_empty(self) -> bool:
        return self.dataset_description is None and not self.descriptions


@dataclass(frozen=True)
class SplitPair:
    train: FeatureTable
    valid: FeatureTable


def _resolve_task(task_kind: str, labels: np.ndarray) -> str:
    """Map the CLI-level 'classification' shorthand onto binary/multiclass."""
    if task_kind in TASK_KINDS:
        return task_kind
    if task_kind in ("classification", "clf"):
        n_classes = int(np.max(labels)) + 1 if labels.size else 0
        return BINARY if n_classes == 2 else MULTICLASS
    if task_kind in ("reg",):
        return REGRESSION
    raise DatasetError(f"unknown task kind {task_kind!r}")


def load_table(csv_path: str | Path, label_column: str, task_kind: str) -> FeatureTable:
    """Load a UTF-8 CSV with a header row into a FeatureTable.

    The label column is removed from the feature matrix; feature order follows
    header order. Missing or non-numeric cells are rejected with the offending
    row (1-indexed data row) and column name.
    """
    path = Path(csv_path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"dataset is empty: {path}") from None
        header = [cell.strip() for cell in header]
        if label_column not in header:
            raise DatasetError(f"unknown label column {label_column!r}")
        label_idx = header.index(label_column)
        feature_names = tuple(name for i, name in enumerate(header) if i != label_idx)
        if len(feature_names) < 2:
            raise DatasetError(f"need at least 2 feature columns, got {len(feature_names)}")

        rows: list[list[float]] = []
        labels: list[float] = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"row {row_no}: expected {len(header)} cells, got {len(row)}")
            parsed: list[float] = []
            for col_idx, cell in enumerate(row):
                text = cell.strip()
                try:
                    value = float(text)
                except ValueError:
                    value = math.nan
                if not math.isfinite(value):
                    raise DatasetError(
                        f"non-numeric cell in row {row_no}, column {header[col_idx]!r}: {cell!r}"
                    )
                parsed.append(value)
            labels.append(parsed.pop(label_idx))
            rows.append(parsed)

    if len(rows) < 2:
        raise DatasetError("dataset needs at least 2 rows")
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return FeatureTable(feature_names, X, y, _resolve_task(task_kind, y))


def write_table(table: FeatureTable, csv_path: str | Path, label_column: str = "label") -> None:
    """Serialize a FeatureTable back to CSV (inverse of load_table)."""
    path = Path(csv_path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(list(table.feature_names) + [label_column])
        for i in range(table.n_rows):
            row = [repr(v) for v in table.X[i].tolist()]
            if table.is_classification:
                row.append(str(int(table.labels[i])))
            else:
                row.append(repr(float(table.labels[i])))
            writer.writerow(row)


def split_table(table: FeatureTable, holdout_fraction: float, seed: int) -> SplitPair:
    """Deterministic seeded train/validation split.

    Validation gets round(m * holdout_fraction) rows. Classification splits are
    stratified per class whenever every class has at least 2 rows; otherwise a
    plain shuffle is used. Row order within each side follows the source table.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise DatasetError(f"holdout fraction must be in (0, 1), got {holdout_fraction}")
    m = table.n_rows
    n_valid = int(math.floor(m * holdout_fraction + 0.5))
    if n_valid < 1 or m - n_valid < 1:
        raise DatasetError(
            f"degenerate split sizes: m={m}, fraction={holdout_fraction} "
            f"gives valid={n_valid}, train={m - n_valid}"
        )

    rng = np.random.default_rng(seed)
    if table.is_classification:
        class_counts = np.bincount(table.labels.astype(int))
        stratify = bool(np.all(class_counts >= 2))
    else:
        stratify = False

    if stratify:
        valid_idx = _stratified_pick(table.labels.astype(int), n_valid, rng)
    else:
        perm = rng.permutation(m)
        valid_idx = np.sort(perm[:n_valid])

    valid_mask = np.zeros(m, dtype=bool)
    valid_mask[valid_idx] = True
    train = table.take_rows(np.flatnonzero(~valid_mask))
    valid = table.take_rows(np.flatnonzero(valid_mask))
    return SplitPair(train=train, valid=valid)


def _stratified_pick(labels: np.ndarray, n_valid: int, rng: np.random.Generator) -> np.ndarray:
    """Per-class validation counts by largest remainder, summing exactly to n_valid."""
    m = labels.size
    classes = np.unique(labels)
    ideals = {c: np.sum(labels == c) * n_valid / m for c in classes}
    counts = {c: int(math.floor(ideals[c])) for c in classes}
    leftover = n_valid - sum(counts.values())
    by_remainder = sorted(classes, key=lambda c: (-(ideals[c] - counts[c]), c))
    for c in by_remainder[:leftover]:
        counts[c] += 1

    picked: list[np.ndarray] = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        take = min(counts[c], members.size)
        perm = rng.permutation(members.size)
        picked.append(members[perm[:take]])
    return np.sort(np.concatenate(picked))


def normalize_table(table: FeatureTable) -> FeatureTable:
    """Z-score every feature column; constant columns become all zeros."""
    mean = table.X.mean(axis=0)
    std = table.X.std(axis=0)
    safe = np.where(std > 1e-12, std, 1.0)
    X = (table.X - mean) / safe
    X[:, std <= 1e-12] = 0.0
    return FeatureTable(table.feature_names, X, table.labels.copy(), table.task_kind)


def load_metadata(path: str | Path, table: FeatureTable) -> FeatureMetadata:
    """Load the JSON metadata file and validate names against the table."""
    file = Path(path)
    if not file.exists():
        raise DatasetError(f"metadata file not found: {file}")
    try:
        payload = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed metadata file {file}: {exc}") from exc
    if not isinstance(payload, dict) or "features" not in payload:
        raise DatasetError(f"metadata file {file} must be an object with a 'features' list")

    description = payload.get("dataset_description")
    if description is not None and not isinstance(description, str):
        raise DatasetError("dataset_description must be a string or null")

    known = set(table.feature_names)
    descriptions: dict[str, str] = {}
    for entry in payload["features"]:
        if not isinstance(entry, dict) or "name" not in entry or "description" not in entry:
            raise DatasetError("each feature entry needs 'name' and 'description'")
        name = entry["name"]
        if name not in known:
            raise DatasetError(f"metadata names unknown feature {name!r}")
        descriptions[name] = str(entry["description"])
    return FeatureMetadata(dataset_description=description, descriptions=descriptions)
