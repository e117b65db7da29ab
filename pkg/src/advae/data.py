"""Tabular dataset loading, the 80/20 normal split, min-max scaling and contamination."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .nn import RngStream

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    name: str
    features: np.ndarray
    labels: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64).reshape(-1)
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise DataError(f"{self.name}: features must be 2-D with at least one column")
        if self.labels.shape[0] != self.features.shape[0]:
            raise DataError(f"{self.name}: {self.labels.shape[0]} labels for {self.features.shape[0]} rows")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.name}: missing or non-finite feature values")

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_anomalies(self):
        return int(self.labels.sum())

    def subset(self, idx, name=None):
        return Dataset(name or self.name, self.features[idx], self.labels[idx], self.provenance)


def _is_number(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def load_csv(path, label_column=-1, name=None) -> Dataset:
    """Read a numeric CSV; the label column holds 0 (normal) / 1 (anomaly).

    ``label_column`` is an index (negative allowed) or a header name. A header
    row is detected when the first row has any non-numeric cell.
    """
    name = name or os.path.splitext(os.path.basename(path))[0]
    with open(path, newline="") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = None
    if not all(_is_number(c) for c in rows[0][1]):
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0][1])
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None or label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found in header")
        lab = header.index(label_column)
    else:
        lab = int(label_column)
        if not -width <= lab < width:
            raise DataError(f"{path}: label column {lab} out of range for {width} columns")
        lab %= width
    feats, labels = [], []
    for line, r in rows:
        if len(r) != width:
            raise DataError(f"{path}:{line}: expected {width} fields, found {len(r)}")
        try:
            vals = [float(c) for c in r]
        except ValueError as exc:
            raise DataError(f"{path}:{line}: non-numeric value ({exc})") from None
        y = vals.pop(lab)
        if y not in (0.0, 1.0):
            raise DataError(f"{path}:{line}: label must be 0 or 1, got {y}")
        feats.append(vals)
        labels.append(int(y))
    return Dataset(name, np.array(feats), np.array(labels), provenance=os.path.abspath(path))


def load_mat(path, name=None) -> Dataset:
    """ODDS-style .mat file with arrays ``X`` and ``y``."""
    from scipy.io import loadmat

    name = name or os.path.splitext(os.path.basename(path))[0]
    mat = loadmat(path)
    return Dataset(name, mat["X"], np.asarray(mat["y"]).reshape(-1), provenance=os.path.abspath(path))


def load_dataset(path, label_column=-1, name=None) -> Dataset:
    if str(path).lower().endswith(".mat"):
        return load_mat(path, name)
    return load_csv(path, label_column, name)


def save_csv(dataset: Dataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(dataset.n_features)] + ["label"])
        for row, y in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


@dataclass
class ManifestEntry:
    name: str
    path: str
    label_column: str = "-1"
    expected_rows: int | None = None
    expected_dims: int | None = None


def read_manifest(path) -> dict[str, ManifestEntry]:
    """CSV manifest with columns name,path,label_column,expected_rows,expected_dims.

    Relative paths resolve against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    out = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            p = rec["path"].strip()
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            rows = (rec.get("expected_rows") or "").strip()
            dims = (rec.get("expected_dims") or "").strip()
            entry = ManifestEntry(
                rec["name"].strip(), p, (rec.get("label_column") or "-1").strip(),
                int(rows) if rows else None, int(dims) if dims else None,
            )
            out[entry.name] = entry
    return out


def load_from_manifest(entry: ManifestEntry) -> Dataset:
    ds = load_dataset(entry.path, entry.label_column, entry.name)
    if entry.expected_rows is not None and ds.n_rows != entry.expected_rows:
        raise DataError(f"{entry.name}: expected {entry.expected_rows} rows, found {ds.n_rows}")
    if entry.expected_dims is not None and ds.n_features != entry.expected_dims:
        raise DataError(f"{entry.name}: expected {entry.expected_dims} features, found {ds.n_features}")
    return ds


# benchmark shapes: rows, features, anomalies
BENCHMARKS = {
    "letter": (1600, 32, 100),
    "cardio": (1831, 21, 176),
    "satellite": (5100, 36, 75),
    "optical": (5216, 64, 150),
    "pen": (6870, 16, 156),
}


def find_benchmark(name, data_dir=None):
    """Locate ``<name>.csv`` or ``<name>.mat`` (also ODDS names) in ``data_dir`` or $ADVAE_DATA_DIR."""
    data_dir = data_dir or os.environ.get("ADVAE_DATA_DIR", "data")
    aliases = {"pen": ["pen", "pendigits"], "optical": ["optical", "optdigits"], "satellite": ["satellite", "satimage-2"]}
    for stem in aliases.get(name, [name]):
        for ext in (".csv", ".mat"):
            p = os.path.join(data_dir, stem + ext)
            if os.path.exists(p):
                return p
    return None


# ---------------------------------------------------------------------------


@dataclass
class Scaler:
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=np.float64)
        return cls(x.min(axis=0), x.max(axis=0))


def apply_scaler(scaler: Scaler, x, clip=(-0.05, 1.05)):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != scaler.min.shape[0]:
        raise DataError(f"expected {scaler.min.shape[0]} features, got shape {x.shape}")
    span = scaler.max - scaler.min
    const = span <= 0
    out = (x - scaler.min) / np.where(const, 1.0, span)
    out[:, const] = 0.5
    n_clipped = int(np.sum((out < clip[0]) | (out > clip[1])))
    if n_clipped:
        log.info("clipped %d scaled values to [%g, %g]", n_clipped, *clip)
    return np.clip(out, *clip)


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    contamination_ratio: float = 0.0
    # share of anomalies set aside as the contamination source; these never enter the test side
    pool_fraction: float = 0.5
    reserve_pool: bool = False

    def __post_init__(self):
        for n in ("train_fraction", "contamination_ratio", "pool_fraction"):
            v = getattr(self, n)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{n} must lie in [0, 1], got {v}")
        if self.contamination_ratio >= 1.0:
            raise ValueError("contamination_ratio must be < 1")


@dataclass
class Split:
    train: Dataset
    test: Dataset
    scaler: Scaler
    x_train: np.ndarray
    x_test: np.ndarray
    train_index: np.ndarray
    test_index: np.ndarray
    held_out_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __iter__(self):
        # (train, test, scaler) unpacking
        return iter((self.train, self.test, self.scaler))


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> Split:
    """Seeded split: ``train_fraction`` of normal rows train; the rest plus anomalies test.

    With contamination, anomalies from a reserved pool are added to the training
    side until they make up ``contamination_ratio`` of it (drawn without
    replacement while the pool lasts, then with replacement). Pool rows that
    are not used stay out of both sides so the test set does not depend on the
    ratio.
    """
    labels = dataset.labels
    normal = np.flatnonzero(labels == 0)
    anomalous = np.flatnonzero(labels == 1)
    if normal.size < 10:
        raise DataError(f"{dataset.name}: need at least 10 normal rows, found {normal.size}")
    rng = RngStream(spec.seed, (0x5B117,))
    normal = normal[rng.permutation(normal.size)]
    n_train = int(math.floor(spec.train_fraction * normal.size))
    train_idx = normal[:n_train]
    test_idx = normal[n_train:]

    anomalous = anomalous[rng.permutation(anomalous.size)]
    pool = np.zeros(0, dtype=np.int64)
    if spec.contamination_ratio > 0 or spec.reserve_pool:
        n_pool = int(round(spec.pool_fraction * anomalous.size))
        pool, anomalous = anomalous[:n_pool], anomalous[n_pool:]
    held_out = pool
    if spec.contamination_ratio > 0:
        r = spec.contamination_ratio
        count = int(round(r / (1.0 - r) * n_train))
        if pool.size == 0 and count > 0:
            raise DataError(f"{dataset.name}: no anomalies available for contamination")
        if count <= pool.size:
            picked = pool[:count]
        else:
            extra = pool[rng.integers(pool.size, count - pool.size)]
            picked = np.concatenate([pool, extra])
        held_out = np.setdiff1d(pool, picked)
        train_idx = np.concatenate([train_idx, picked])
    test_idx = np.concatenate([test_idx, anomalous])

    train = dataset.subset(train_idx, f"{dataset.name}-train")
    test = dataset.subset(test_idx, f"{dataset.name}-test")
    scaler = Scaler.fit(train.features)
    return Split(train, test, scaler, apply_scaler(scaler, train.features), apply_scaler(scaler, test.features),
                 train_idx, test_idx, np.sort(held_out))
