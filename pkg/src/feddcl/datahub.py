"""Dataset ingestion, the group/institution partitioner, and anchor generation.

A :class:`LabeledTable` is the unit of raw data; :func:`partition_iid` splits
it into ``d`` groups of institutions plus a holdout pool, and
:func:`generate_anchor` produces the shared pseudo-dataset every institution
can reconstruct locally from per-feature ranges and a seed.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, FormatError, ParameterError, ParseError
from .numkit import as_matrix
from .rng import RngStream

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class Task:
    kind: str
    num_classes: int | None = None

    def __post_init__(self):
        if self.kind not in (REGRESSION, CLASSIFICATION):
            raise ParameterError(f"unknown task kind {self.kind!r}")
        if self.kind == CLASSIFICATION:
            if self.num_classes is None or self.num_classes < 2:
                raise ParameterError("classification task needs num_classes >= 2")
        elif self.num_classes is not None:
            raise ParameterError("regression task takes no num_classes")

    @classmethod
    def regression(cls) -> "Task":
        return cls(REGRESSION)

    @classmethod
    def classification(cls, num_classes: int) -> "Task":
        return cls(CLASSIFICATION, num_classes)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ParameterError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(
            f"label out of range [0, {num_classes}): min={labels.min()}, max={labels.max()}"
        )
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass(frozen=True)
class LabeledTable:
    """Feature matrix ``x`` (n-by-m) with aligned targets ``y`` (n-by-l)."""

    x: np.ndarray
    y: np.ndarray
    task: Task
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = as_matrix(self.x, "table features")
        y = as_matrix(self.y, "table targets")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if x.shape[0] != y.shape[0]:
            raise ParameterError(
                f"feature rows ({x.shape[0]}) != target rows ({y.shape[0]})"
            )
        if self.task.kind == CLASSIFICATION:
            if y.shape[1] != self.task.num_classes:
                raise ParameterError(
                    f"classification targets must have {self.task.num_classes} columns, "
                    f"got {y.shape[1]}"
                )
            ones = np.isclose(y, 1.0)
            zeros = y == 0.0
            if not np.all(ones.sum(axis=1) == 1) or not np.all(ones | zeros):
                raise DataError("classification targets must be one-hot rows")
        if self.feature_names is not None and len(self.feature_names) != x.shape[1]:
            raise ParameterError("feature_names length must match the number of columns")

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class Block:
    """One institution's rows."""

    x: np.ndarray
    y: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class PartitionedDataset:
    """Disjoint institution blocks organized into groups, plus a holdout pool."""

    groups: tuple[tuple[Block, ...], ...]
    holdout: Block
    task: Task
    partition_seed: int
    feature_names: tuple[str, ...] | None = None

    @property
    def d(self) -> int:
        return len(self.groups)

    @property
    def institution_counts(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    @property
    def n_features(self) -> int:
        return self.groups[0][0].x.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.groups[0][0].y.shape[1]

    @property
    def n_train(self) -> int:
        return sum(block.n_rows for _, _, block in self.iter_blocks())

    def iter_blocks(self) -> Iterator[tuple[int, int, Block]]:
        """Yield ``(group, institution, block)`` in ascending order."""
        for i, group in enumerate(self.groups):
            for j, block in enumerate(group):
                yield i, j, block

    def group_stack(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """All of group ``i``'s rows stacked in ascending institution order."""
        xs = np.vstack([b.x for b in self.groups[i]])
        ys = np.vstack([b.y for b in self.groups[i]])
        return xs, ys

    def fingerprint(self) -> str:
        """Content hash of every block and the holdout, for fair-comparison checks."""
        h = hashlib.sha256()
        h.update(repr((self.task.kind, self.task.num_classes, self.partition_seed)).encode())
        for i, j, block in self.iter_blocks():
            h.update(struct.pack(">iiii", i, j, *block.x.shape))
            h.update(np.ascontiguousarray(block.x).tobytes())
            h.update(np.ascontiguousarray(block.y).tobytes())
        h.update(np.ascontiguousarray(self.holdout.x).tobytes())
        h.update(np.ascontiguousarray(self.holdout.y).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class AnchorSet:
    """Shared pseudo-data: ``a`` is r-by-m, uniform within per-feature ranges."""

    a: np.ndarray
    r: int
    ranges: np.ndarray = field(repr=False)
    seed: int = 0


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for :func:`load_csv`.

    ``features`` defaults to every non-target column in header order.
    ``label_order`` pins the class order for classification targets; when
    given, an unseen label is a :class:`DataError` (use it when loading a
    test file against a training label set).
    """

    target: str
    task: str
    features: tuple[str, ...] | None = None
    label_order: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ParameterError(f"unknown task kind {self.task!r}")


def load_csv(path, schema: CsvSchema) -> LabeledTable:
    """Load a headed CSV ('.' decimals, UTF-8) into a :class:`LabeledTable`.

    Classification labels are one-hot encoded in sorted distinct-value order
    (or in ``schema.label_order`` when provided).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read CSV file {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise FormatError(f"{path}: empty CSV, header row required")
    header = [h.strip() for h in rows[0]]
    if schema.target not in header:
        raise ParameterError(f"{path}: target column {schema.target!r} not in header {header}")
    feature_cols = (
        list(schema.features)
        if schema.features is not None
        else [h for h in header if h != schema.target]
    )
    missing = [c for c in feature_cols if c not in header]
    if missing:
        raise ParameterError(f"{path}: feature columns {missing} not in header")
    col_index = {name: header.index(name) for name in header}

    x_rows: list[list[float]] = []
    raw_targets: list[str] = []
    for r, row in enumerate(rows[1:], start=2):  # r is the 1-based file line
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        vals = []
        for name in feature_cols:
            cell = row[col_index[name]].strip()
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(
                    f"{path}: row {r}, column {name!r}: cannot parse {cell!r} as a number"
                ) from None
        x_rows.append(vals)
        raw_targets.append(row[col_index[schema.target]].strip())

    if not x_rows:
        raise FormatError(f"{path}: no data rows")
    x = np.array(x_rows, dtype=np.float64)

    if schema.task == REGRESSION:
        y_vals = []
        for r, cell in enumerate(raw_targets):
            try:
                y_vals.append(float(cell))
            except ValueError:
                raise ParseError(
                    f"{path}: data row {r + 1}, column {schema.target!r}: "
                    f"cannot parse {cell!r} as a number"
                ) from None
        y = np.array(y_vals, dtype=np.float64).reshape(-1, 1)
        task = Task.regression()
    else:
        order = (
            list(schema.label_order)
            if schema.label_order is not None
            else sorted(set(raw_targets))
        )
        mapping = {label: idx for idx, label in enumerate(order)}
        unknown = sorted(set(raw_targets) - set(order))
        if unknown:
            raise DataError(f"{path}: unknown labels {unknown} not in label order {order}")
        y = one_hot(np.array([mapping[t] for t in raw_targets]), len(order))
        task = Task.classification(len(order))

    return LabeledTable(x=x, y=y, task=task, feature_names=tuple(feature_cols))


_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def load_idx_images(images_path, labels_path, flatten: bool = True,
                    num_classes: int = 10) -> LabeledTable:
    """Load a big-endian IDX image/label pair as flattened rows in [0, 1]."""
    if not flatten:
        # the table type is strictly 2-D; unflattened images have no home here
        raise ParameterError("only flattened image loading is supported")
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_bytes = images_path.read_bytes()
    lbl_bytes = labels_path.read_bytes()

    if len(img_bytes) < 16:
        raise FormatError(f"{images_path}: truncated IDX image header")
    magic, n, rows, cols = struct.unpack(">IIII", img_bytes[:16])
    if magic != _IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad IDX image magic 0x{magic:08x}")
    if len(img_bytes) != 16 + n * rows * cols:
        raise FormatError(f"{images_path}: payload size does not match {n} images")

    if len(lbl_bytes) < 8:
        raise FormatError(f"{labels_path}: truncated IDX label header")
    lmagic, ln = struct.unpack(">II", lbl_bytes[:8])
    if lmagic != _IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad IDX label magic 0x{lmagic:08x}")
    if len(lbl_bytes) != 8 + ln:
        raise FormatError(f"{labels_path}: payload size does not match {ln} labels")
    if n != ln:
        raise FormatError(f"image count {n} != label count {ln}")

    x = np.frombuffer(img_bytes, dtype=np.uint8, offset=16).reshape(n, rows * cols)
    x = x.astype(np.float64) / 255.0
    labels = np.frombuffer(lbl_bytes, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"label {labels.max()} exceeds num_classes={num_classes}")
    return LabeledTable(x=x, y=one_hot(labels, num_classes),
                        task=Task.classification(num_classes))


def partition_iid(table: LabeledTable, d: int, c: int | Sequence[int],
                  n_ij: int | Sequence[Sequence[int]], seed: int) -> PartitionedDataset:
    """Shuffle ``table`` by ``seed`` and deal contiguous blocks to institutions.

    ``c`` gives institutions per group (a scalar applies to every group);
    ``n_ij`` gives rows per institution (scalar, or one list per group).
    Leftover rows become the holdout pool.
    """
    if d < 1:
        raise ParameterError(f"number of groups d must be >= 1, got {d}")
    counts = [c] * d if isinstance(c, int) else list(c)
    if len(counts) != d:
        raise ParameterError(f"institution counts must have length d={d}, got {len(counts)}")
    if any(ci < 1 for ci in counts):
        raise ParameterError("every group needs at least one institution")
    if isinstance(n_ij, int):
        sizes = [[n_ij] * ci for ci in counts]
    else:
        sizes = [list(row) for row in n_ij]
        if len(sizes) != d or any(len(row) != ci for row, ci in zip(sizes, counts)):
            raise ParameterError("per-block sizes must match the (d, c_i) layout")
    if any(s < 1 for row in sizes for s in row):
        raise ParameterError("every block needs at least one row")

    required = sum(s for row in sizes for s in row)
    n = table.n_rows
    if required > n:
        raise ParameterError(
            f"partition requires {required} rows but the table has only {n}"
        )

    perm = RngStream(seed).generator().permutation(n)
    cursor = 0
    groups: list[tuple[Block, ...]] = []
    for i in range(d):
        blocks = []
        for j in range(counts[i]):
            take = perm[cursor:cursor + sizes[i][j]]
            cursor += sizes[i][j]
            blocks.append(Block(x=table.x[take].copy(), y=table.y[take].copy()))
        groups.append(tuple(blocks))
    rest = perm[cursor:]
    holdout = Block(x=table.x[rest].copy(), y=table.y[rest].copy())
    return PartitionedDataset(
        groups=tuple(groups),
        holdout=holdout,
        task=table.task,
        partition_seed=int(seed),
        feature_names=table.feature_names,
    )


def feature_ranges(parts: PartitionedDataset) -> np.ndarray:
    """Per-feature (min, max) over all training blocks, as an m-by-2 array."""
    mins = None
    maxs = None
    for _, _, block in parts.iter_blocks():
        bmin = block.x.min(axis=0)
        bmax = block.x.max(axis=0)
        mins = bmin if mins is None else np.minimum(mins, bmin)
        maxs = bmax if maxs is None else np.maximum(maxs, bmax)
    return np.column_stack([mins, maxs])


def generate_anchor(ranges, r: int, seed: int) -> AnchorSet:
    """Draw the shared anchor matrix, feature-by-feature, from one stream.

    Entry (s, t) is uniform in feature t's [min, max]; the same
    (ranges, r, seed) triple reproduces the identical anchor anywhere.
    """
    ranges = np.asarray(ranges, dtype=np.float64)
    if ranges.ndim != 2 or ranges.shape[1] != 2:
        raise ParameterError("ranges must be an m-by-2 array of (min, max) pairs")
    if r < 1:
        raise ParameterError(f"anchor sample count r must be >= 1, got {r}")
    if np.any(ranges[:, 0] > ranges[:, 1]):
        raise ParameterError("every feature range needs min <= max")
    gen = RngStream(seed).generator()
    cols = [gen.uniform(lo, hi, size=r) for lo, hi in ranges]
    return AnchorSet(a=np.column_stack(cols), r=int(r), ranges=ranges.copy(), seed=int(seed))
