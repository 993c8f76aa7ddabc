"""Datasets, CSV ingestion, splitting, standardization and synthetic generators.

All randomness goes through :func:`make_rng`, a Philox4x64 counter-based
generator keyed by ``(seed, stream)``. Permutations are numpy's
``Generator.permutation`` (a Fisher-Yates shuffle) drawn from that generator.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# named random streams; every consumer of a seed picks a distinct stream
STREAM_SPLIT = 0
STREAM_SYNTHETIC = 1
STREAM_INIT = 2
STREAM_SHUFFLE = 3
STREAM_DROPOUT = 4


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a Philox4x64 generator keyed by the 128-bit value (stream, seed)."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(key=(stream << 64) | seed))


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    label_count: int
    sensitive_count: int

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        s = np.ascontiguousarray(self.sensitive, dtype=np.int64)
        if X.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        n = X.shape[0]
        if n == 0:
            raise DataError("dataset is empty")
        if y.shape != (n,) or s.shape != (n,):
            raise DataError(
                f"length mismatch: {n} feature rows, {y.size} labels, {s.size} sensitive values"
            )
        if not np.all(np.isfinite(X)):
            row, col = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite feature at row {row}, column {col}")
        for name, v, count in (("label", y, self.label_count), ("sensitive", s, self.sensitive_count)):
            if count < 1:
                raise DataError(f"{name}_count must be positive")
            if v.min() < 0 or v.max() >= count:
                raise DataError(f"{name} values must lie in [0, {count})")
        for arr in (X, y, s):
            arr.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sensitive", s)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], self.sensitive[index],
                       self.label_count, self.sensitive_count)

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.sensitive, self.label_count, self.sensitive_count)


@dataclass(frozen=True)
class CsvCodes:
    """Raw CSV value -> dense integer code maps, in first-appearance order."""
    labels: dict[str, int]
    sensitive: dict[str, int]
    feature_names: tuple[str, ...] = ()


def load_csv(path, label_column: str, sensitive_column: str, *,
             codes: CsvCodes | None = None) -> tuple[Dataset, CsvCodes]:
    """Read a headed numeric CSV into a :class:`Dataset`.

    Label and sensitive values are treated as categories and coded densely in
    order of first appearance. Passing ``codes`` from an earlier call reuses
    those maps (e.g. for a separately stored test file); unseen values are an
    error in that case.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (label_column, sensitive_column):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        li, si = header.index(label_column), header.index(sensitive_column)
        feat_idx = [j for j in range(len(header)) if j not in (li, si)]
        frozen = codes is not None
        label_map = dict(codes.labels) if frozen else {}
        sens_map = dict(codes.sensitive) if frozen else {}

        rows, ys, ss = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} cells, expected {len(header)}")
            feats = []
            for j in feat_idx:
                cell = rec[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {header[j]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: non-finite value {cell!r} at row {lineno}, column {header[j]!r}"
                    )
                feats.append(v)
            coded = []
            for col, raw, mapping in ((label_column, rec[li].strip(), label_map),
                                      (sensitive_column, rec[si].strip(), sens_map)):
                if raw not in mapping:
                    if frozen:
                        raise DataError(f"{path}: unknown {col} value {raw!r} at row {lineno}")
                    mapping[raw] = len(mapping)
                coded.append(mapping[raw])
            rows.append(feats)
            ys.append(coded[0])
            ss.append(coded[1])
    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_idx))
    ds = Dataset(X, np.array(ys), np.array(ss), max(len(label_map), 1), max(len(sens_map), 1))
    return ds, CsvCodes(label_map, sens_map, tuple(header[j] for j in feat_idx))


def write_csv(ds: Dataset, path, *, label_column: str = "y", sensitive_column: str = "s") -> None:
    header = [f"f{j + 1}" for j in range(ds.dim)] + [label_column, sensitive_column]
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y, s in zip(ds.features, ds.labels, ds.sensitive):
            w.writerow([repr(float(v)) for v in x] + [int(y), int(s)])


def split(ds: Dataset, seed: int, *, test_fraction: float = 0.2,
          val_fraction: float = 0.25) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle, hold out ``test_fraction`` of n for test, then ``val_fraction`` of the rest."""
    n = ds.n
    n_test = int(n * test_fraction)
    n_val = int((n - n_test) * val_fraction)
    if n < 8 or n_test < 1 or n_val < 1 or n - n_test - n_val < 1:
        raise DataError(f"dataset with n={n} is too small to split into train/val/test")
    perm = make_rng(seed, STREAM_SPLIT).permutation(n)
    test = perm[:n_test]
    val = perm[n_test:n_test + n_val]
    train = perm[n_test + n_val:]
    return ds.subset(train), ds.subset(val), ds.subset(test)


def split_train_val(ds: Dataset, seed: int, *, val_fraction: float = 0.25) -> tuple[Dataset, Dataset]:
    """Train/validation split for data whose test set is provided separately."""
    n = ds.n
    n_val = int(n * val_fraction)
    if n_val < 1 or n - n_val < 1:
        raise DataError(f"dataset with n={n} is too small to split into train/val")
    perm = make_rng(seed, STREAM_SPLIT).permutation(n)
    return ds.subset(perm[n_val:]), ds.subset(perm[:n_val])


@dataclass(frozen=True)
class StandardizeStats:
    means: np.ndarray
    stddevs: np.ndarray

    def apply(self, ds: Dataset) -> Dataset:
        return ds.with_features((ds.features - self.means) / self.stddevs)


def standardize(train: Dataset, others=()) -> tuple[list[Dataset], StandardizeStats]:
    """Center and scale every feature with statistics estimated on ``train``.

    Uses the population (1/n) standard deviation. Zero-variance columns get a
    standard deviation of 1, so they map to all zeros. Returns the transformed
    ``[train, *others]`` and the stats.
    """
    means = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    stats = StandardizeStats(means, std)
    return [stats.apply(d) for d in (train, *others)], stats


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic Gaussian cells indexed by ``[label][sensitive]``."""
    means: np.ndarray          # (|Y|, |S|, d)
    counts: np.ndarray         # (|Y|, |S|)
    std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if means.ndim != 3 or counts.shape != means.shape[:2]:
            raise DataError("means must be (labels, groups, dim) and counts (labels, groups)")
        if np.any(counts < 0):
            raise DataError("cell counts must be non-negative")
        if np.count_nonzero(counts) < 2:
            raise DataError("at least two cells need a nonzero count")
        if not (self.std > 0 and math.isfinite(self.std)):
            raise DataError("std must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "counts", counts)

    @property
    def priors(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        try:
            doc = json.loads(text)
            return cls(np.array(doc["means"], dtype=float), np.array(doc["counts"], dtype=np.int64),
                       float(doc.get("std", 1.0)), int(doc.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid synthetic spec: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps({"means": self.means.tolist(), "counts": self.counts.tolist(),
                           "std": self.std, "seed": self.seed}, sort_keys=True)


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Sample exactly ``counts[l, r]`` points around ``means[l, r]`` for every cell.

    Rows are emitted cell by cell (label-major); callers shuffle via :func:`split`.
    """
    rng = make_rng(spec.seed, STREAM_SYNTHETIC)
    n_labels, n_groups, d = spec.means.shape
    X, y, s = [], [], []
    for l in range(n_labels):
        for r in range(n_groups):
            c = int(spec.counts[l, r])
            X.append(spec.means[l, r] + spec.std * rng.standard_normal((c, d)))
            y.append(np.full(c, l))
            s.append(np.full(c, r))
    return Dataset(np.concatenate(X), np.concatenate(y), np.concatenate(s), n_labels, n_groups)


# fraction of each (label, sensitive) cell in the skewed training pool:
# (y=1, s=0) 40%, (y=0, s=0) 10%, (y=1, s=1) 10%, (y=0, s=1) 40%
BIASED_PROPORTIONS = np.array([[0.10, 0.40],
                               [0.40, 0.10]])


def two_group_means(label_sep: float, group_sep: float, extra_dims: int = 0) -> np.ndarray:
    """Means for a 2x2 design: coordinate 0 encodes the label, coordinate 1 the group."""
    means = np.zeros((2, 2, 2 + extra_dims))
    for l in range(2):
        for r in range(2):
            means[l, r, 0] = label_sep * (2 * l - 1)
            means[l, r, 1] = group_sep * (2 * r - 1)
    return means


def biased_spec(total: int, seed: int, *, label_sep: float = 1.0, group_sep: float = 2.0,
                std: float = 1.0, proportions=BIASED_PROPORTIONS) -> SyntheticSpec:
    proportions = np.asarray(proportions, dtype=float)
    counts = np.rint(proportions * total).astype(np.int64)
    counts[-1, -1] += total - counts.sum()
    return SyntheticSpec(two_group_means(label_sep, group_sep), counts, std, seed)


def biased_benchmark(n: int, seed: int, **kw) -> tuple[Dataset, Dataset, Dataset]:
    """Skewed-train / balanced-evaluation benchmark, standardized on train.

    Split sizes follow :func:`split` for ``n`` points. Only the training part
    is drawn with :data:`BIASED_PROPORTIONS`; validation and test have the four
    (label, group) cells equally represented. Returns ``(train, val, test)``.
    """
    n_test = int(n * 0.2)
    n_val = int((n - n_test) * 0.25)
    balanced = np.full((2, 2), 0.25)
    sub = [(seed * 3 + i) % 2**64 for i in range(3)]
    train = gen_synthetic(biased_spec(n - n_test - n_val, sub[0], **kw))
    val = gen_synthetic(biased_spec(n_val, sub[1], proportions=balanced, **kw))
    test = gen_synthetic(biased_spec(n_test, sub[2], proportions=balanced, **kw))
    (train, val, test), _ = standardize(train, [val, test])
    return train, val, test
