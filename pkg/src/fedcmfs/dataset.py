"""Multi-label datasets, train/test splitting and client partitioning.

Variables are addressed by a single global index: features occupy
``[0, m)`` and labels ``[m, m + q)``.
"""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Raised when a dataset file cannot be turned into a valid dataset."""


class DataKind(str, enum.Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


@dataclass(frozen=True, eq=False)
class MultiLabelDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    label_names: tuple[str, ...]
    data_kind: DataKind
    # per feature column: code -> original token (discrete data only)
    category_maps: tuple[tuple[str, ...], ...] = ()
    constant_columns: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        s, m = self.features.shape
        if self.labels.ndim != 2 or self.labels.shape[0] != s:
            raise DatasetError("features and labels must have the same number of rows")
        q = self.labels.shape[1]
        if s < 1 or m < 1 or q < 1:
            raise DatasetError(f"need s, m, q >= 1 (got s={s}, m={m}, q={q})")
        if len(self.feature_names) != m or len(self.label_names) != q:
            raise DatasetError("column name count does not match the data")
        if not np.isin(self.labels, (0, 1)).all():
            bad = int(np.nonzero(~np.isin(self.labels, (0, 1)).all(axis=0))[0][0])
            raise DatasetError(f"label column {self.label_names[bad]!r} is not binary")
        if self.data_kind is DataKind.CONTINUOUS and not np.isfinite(self.features).all():
            row, col = np.argwhere(~np.isfinite(self.features))[0]
            raise DatasetError(
                f"non-finite value in feature {self.feature_names[col]!r} at row {row}"
            )
        if self.data_kind is DataKind.DISCRETE and (self.features < 0).any():
            raise DatasetError("discrete features must be non-negative category codes")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)
        data = self.data
        const = frozenset(int(j) for j in np.nonzero((data == data[0]).all(axis=0))[0])
        object.__setattr__(self, "constant_columns", const)
        self.data.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    @property
    def n_variables(self) -> int:
        return self.n_features + self.n_labels

    @property
    def feature_ids(self) -> list[int]:
        return list(range(self.n_features))

    @property
    def label_ids(self) -> list[int]:
        return list(range(self.n_features, self.n_variables))

    def is_label(self, var: int) -> bool:
        return var >= self.n_features

    def variable_name(self, var: int) -> str:
        if self.is_label(var):
            return self.label_names[var - self.n_features]
        return self.feature_names[var]

    @property
    def data(self) -> np.ndarray:
        """The full ``s x (m + q)`` variable matrix, features first."""
        cached = self.__dict__.get("_data")
        if cached is None:
            dtype = np.int64 if self.data_kind is DataKind.DISCRETE else np.float64
            cached = np.hstack([self.features.astype(dtype), self.labels.astype(dtype)])
            self.__dict__["_data"] = cached
        return cached

    def subset(self, rows) -> MultiLabelDataset:
        rows = np.asarray(rows, dtype=np.int64)
        return MultiLabelDataset(
            features=self.features[rows].copy(),
            labels=self.labels[rows].copy(),
            feature_names=self.feature_names,
            label_names=self.label_names,
            data_kind=self.data_kind,
            category_maps=self.category_maps,
        )

    def equals(self, other: MultiLabelDataset) -> bool:
        return (
            self.data_kind is other.data_kind
            and self.feature_names == other.feature_names
            and self.label_names == other.label_names
            and self.features.dtype == other.features.dtype
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    row_indices: tuple[int, ...]

    def __post_init__(self):
        if not self.row_indices:
            raise ValueError(f"client {self.client_id} has an empty shard")
        if len(set(self.row_indices)) != len(self.row_indices):
            raise ValueError(f"client {self.client_id} shard contains duplicate rows")

    @property
    def weight(self) -> int:
        return len(self.row_indices)


@dataclass(frozen=True)
class PartitionPlan:
    n_clients: int
    fraction_low: float = 0.4
    fraction_high: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if not 0 < self.fraction_low <= self.fraction_high <= 1:
            raise ValueError(
                f"need 0 < fraction_low <= fraction_high <= 1, "
                f"got [{self.fraction_low}, {self.fraction_high}]"
            )


def partition_clients(ds: MultiLabelDataset, plan: PartitionPlan) -> list[ClientShard]:
    """Give every client a random row subset of ``ds`` (no repeats within a client).

    Shard sizes are uniform in ``[floor(low * s), floor(high * s)]``. Rows may
    be shared between clients.
    """
    s = ds.n_samples
    lo = math.floor(plan.fraction_low * s)
    hi = math.floor(plan.fraction_high * s)
    if lo < 1:
        raise ValueError(f"fraction_low={plan.fraction_low} gives empty shards for s={s}")
    rng = np.random.default_rng(plan.seed)
    shards = []
    for cid in range(plan.n_clients):
        size = int(rng.integers(lo, hi + 1))
        rows = np.sort(rng.choice(s, size=size, replace=False))
        shards.append(ClientShard(cid, tuple(int(r) for r in rows)))
    return shards


def train_test_split(ds: MultiLabelDataset, test_fraction: float, seed: int):
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    s = ds.n_samples
    n_test = max(1, math.floor(test_fraction * s))
    if s - n_test < 1:
        raise ValueError(f"cannot split {s} rows into two non-empty sides")
    perm = np.random.default_rng(seed).permutation(s)
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


# -- loading ---------------------------------------------------------------


def _recode(tokens: list[str], column: str) -> tuple[np.ndarray, tuple[str, ...]]:
    codes: dict[str, int] = {}
    out = np.empty(len(tokens), dtype=np.int64)
    for r, tok in enumerate(tokens):
        if tok == "" or tok == "?":
            raise DatasetError(f"missing value in column {column!r} at row {r}")
        out[r] = codes.setdefault(tok, len(codes))
    return out, tuple(codes)


def _parse_float(tok: str, column: str, row: int) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise DatasetError(f"cannot parse {tok!r} in column {column!r} at row {row}") from None
    if not math.isfinite(value):
        raise DatasetError(f"non-finite value in column {column!r} at row {row}")
    return value


def _parse_label(tok: str, column: str, row: int) -> int:
    try:
        value = float(tok)
    except ValueError:
        value = math.nan
    if value not in (0.0, 1.0):
        raise DatasetError(f"label column {column!r} has non-binary value {tok!r} at row {row}")
    return int(value)


def _build(columns: list[list[str]], names: list[str], label_pos: list[int],
           data_kind: DataKind) -> MultiLabelDataset:
    label_set = set(label_pos)
    feat_pos = [j for j in range(len(names)) if j not in label_set]
    if not feat_pos:
        raise DatasetError("dataset has no feature columns")
    n_rows = len(columns[0]) if columns else 0
    if n_rows == 0:
        raise DatasetError("dataset has no rows")
    labels = np.array(
        [[_parse_label(t, names[j], r) for r, t in enumerate(columns[j])] for j in label_pos],
        dtype=np.int64,
    ).T
    cat_maps: list[tuple[str, ...]] = []
    if data_kind is DataKind.DISCRETE:
        cols = []
        for j in feat_pos:
            codes, cmap = _recode(columns[j], names[j])
            cols.append(codes)
            cat_maps.append(cmap)
        features = np.column_stack(cols)
    else:
        features = np.array(
            [[_parse_float(t, names[j], r) for r, t in enumerate(columns[j])] for j in feat_pos],
            dtype=np.float64,
        ).T
    return MultiLabelDataset(
        features=features,
        labels=labels.reshape(n_rows, len(label_pos)),
        feature_names=tuple(names[j] for j in feat_pos),
        label_names=tuple(names[j] for j in label_pos),
        data_kind=data_kind,
        category_maps=tuple(cat_maps),
    )


def _load_csv(path: Path, label_count: int, data_kind: DataKind) -> MultiLabelDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    width = len(header)
    for r, row in enumerate(body):
        if len(row) != width:
            raise DatasetError(f"{path}: row {r} has {len(row)} fields, expected {width}")
    if not 1 <= label_count < width:
        raise DatasetError(f"label_count={label_count} invalid for {width} columns")
    columns = [[row[j].strip() for row in body] for j in range(width)]
    return _build(columns, [h.strip() for h in header],
                  list(range(width - label_count, width)), data_kind)


_ATTR_RE = re.compile(r"@attribute\s+('(?:[^']|\\')*'|\"[^\"]*\"|\S+)\s+(.*)", re.IGNORECASE)
_MEKA_RE = re.compile(r"-C\s+(-?\d+)")


def _unquote(tok: str) -> str:
    tok = tok.strip()
    if len(tok) >= 2 and tok[0] == tok[-1] and tok[0] in "'\"":
        return tok[1:-1]
    return tok


def _load_arff(path: Path, label_count: int, data_kind: DataKind) -> MultiLabelDataset:
    names: list[str] = []
    relation = ""
    data_lines: list[str] = []
    in_data = False
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            if in_data:
                data_lines.append(line)
                continue
            low = line.lower()
            if low.startswith("@relation"):
                relation = line[len("@relation"):].strip()
            elif low.startswith("@attribute"):
                match = _ATTR_RE.match(line)
                if match is None:
                    raise DatasetError(f"{path}: cannot parse {line!r}")
                names.append(_unquote(match.group(1)))
            elif low.startswith("@data"):
                in_data = True
    if not names:
        raise DatasetError(f"{path}: no attributes declared")
    width = len(names)
    rows: list[list[str]] = []
    for r, line in enumerate(data_lines):
        if line.startswith("{"):
            row = ["0"] * width
            body = line.strip("{}").strip()
            for item in filter(None, (p.strip() for p in body.split(","))):
                idx, _, val = item.partition(" ")
                row[int(idx)] = _unquote(val)
        else:
            row = [_unquote(t) for t in next(csv.reader([line], quotechar="'", skipinitialspace=True))]
        if len(row) != width:
            raise DatasetError(f"{path}: data row {r} has {len(row)} fields, expected {width}")
        rows.append(row)
    # MEKA header: -C q puts labels first, -C -q puts them last
    meka = _MEKA_RE.search(relation)
    if meka:
        c = int(meka.group(1))
        label_pos = list(range(c)) if c > 0 else list(range(width + c, width))
    else:
        if not 1 <= label_count < width:
            raise DatasetError(f"label_count={label_count} invalid for {width} attributes")
        label_pos = list(range(width - label_count, width))
    columns = [[row[j] for row in rows] for j in range(width)]
    return _build(columns, names, label_pos, data_kind)


def load_dataset(path, format: str = "csv", label_count: int = 1,
                 data_kind: DataKind | str = DataKind.CONTINUOUS) -> MultiLabelDataset:
    """Load a multi-label dataset from CSV (labels trailing) or ARFF."""
    path = Path(path)
    data_kind = DataKind(data_kind)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    if format == "csv":
        return _load_csv(path, label_count, data_kind)
    if format == "arff":
        return _load_arff(path, label_count, data_kind)
    raise DatasetError(f"unknown dataset format {format!r}")


def save_csv(ds: MultiLabelDataset, path) -> None:
    """Write ``ds`` in the CSV layout understood by :func:`load_dataset`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + list(ds.label_names))
        for r in range(ds.n_samples):
            if ds.data_kind is DataKind.DISCRETE:
                feats = [
                    ds.category_maps[j][c] if ds.category_maps else str(c)
                    for j, c in enumerate(ds.features[r])
                ]
            else:
                feats = [repr(float(v)) for v in ds.features[r]]
            writer.writerow(feats + [str(int(v)) for v in ds.labels[r]])
