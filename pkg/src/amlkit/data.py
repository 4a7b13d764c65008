"""Transaction records, standardization, ingestion, synthesis, pair sampling.

Datasets are immutable after load and safe to share across workers; sampling
takes an explicit rng so parallel callers can use independent seeded streams.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .exceptions import DataError
from .rng import SeededRng, derive_stream

ILLICIT = "illicit"
LICIT = "licit"
UNKNOWN = "unknown"
LABELS = (ILLICIT, LICIT, UNKNOWN)

# Synthetic anomaly template: the two designated feature columns.
AMOUNT_COL = 0
FREQUENCY_COL = 1


@dataclass(frozen=True)
class TransactionRecord:
    """One transaction: opaque id, d-dimensional feature vector, label."""

    id: str
    features: np.ndarray
    label: str


class Dataset:
    """Columnar store of transaction records sharing one feature dimension."""

    def __init__(self, ids: Sequence[str], features: np.ndarray,
                 labels: Sequence[str], edge_count: int | None = None):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got shape {features.shape}")
        if not (len(ids) == features.shape[0] == len(labels)):
            raise DataError("ids, features, and labels must have equal lengths")
        bad = [lab for lab in labels if lab not in LABELS]
        if bad:
            raise DataError(f"unknown label '{bad[0]}'")
        if features.size and not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite values")
        self.ids = list(ids)
        self.features = features
        self.labels = list(labels)
        self.edge_count = edge_count

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def record(self, i: int) -> TransactionRecord:
        return TransactionRecord(self.ids[i], self.features[i].copy(), self.labels[i])

    def __iter__(self) -> Iterator[TransactionRecord]:
        return (self.record(i) for i in range(len(self)))

    def labeled_indices(self) -> np.ndarray:
        """Indices of records with a licit/illicit ground truth."""
        return np.array([i for i, lab in enumerate(self.labels) if lab != UNKNOWN],
                        dtype=np.int64)


@dataclass
class StandardizationParams:
    """Per-feature mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    constant_mask: np.ndarray  # true where std == 0


def fit_standardizer(dataset: Dataset) -> StandardizationParams:
    if len(dataset) == 0:
        raise DataError("cannot fit standardizer on an empty dataset")
    mean = dataset.features.mean(axis=0)
    std = dataset.features.std(axis=0)  # population std (ddof=0)
    return StandardizationParams(mean=mean, std=std, constant_mask=std == 0.0)


def apply_standardizer(params: StandardizationParams, dataset: Dataset) -> Dataset:
    """Map feature j to (x_j - mean_j) / std_j; constant features map to 0."""
    if dataset.d != params.mean.shape[0]:
        raise DataError(f"standardizer fitted for d={params.mean.shape[0]} "
                        f"cannot apply to d={dataset.d}")
    safe = np.where(params.constant_mask, 1.0, params.std)
    feats = (dataset.features - params.mean) / safe
    feats[:, params.constant_mask] = 0.0
    return Dataset(dataset.ids, feats, dataset.labels, dataset.edge_count)


def _label_from_class(value: str) -> str:
    value = value.strip()
    if value == "1":
        return ILLICIT
    if value == "2":
        return LICIT
    return UNKNOWN


def ingest_elliptic(features_path, classes_path, edges_path=None) -> Dataset:
    """Load the Elliptic CSV layout into a dataset.

    The features file is header-less: first column is the transaction id,
    remaining columns are numeric features. The classes file has a header and
    maps id -> {"1", "2", "unknown"}; ids absent from it become unknown. The
    edges file, when given, is parsed and counted but feeds no model.
    """
    ids: list[str] = []
    rows: list[list[float]] = []
    seen: dict[str, int] = {}
    width = None
    with open(features_path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"features file line {lineno}: expected id plus at "
                                f"least one feature column")
            tx_id = row[0].strip()
            if width is None:
                width = len(row) - 1
            elif len(row) - 1 != width:
                raise DataError(f"features file line {lineno}: expected {width} feature "
                                f"columns, found {len(row) - 1}")
            if tx_id in seen:
                raise DataError(f"features file line {lineno}: duplicate transaction "
                                f"id '{tx_id}' (first seen on line {seen[tx_id]})")
            seen[tx_id] = lineno
            values = []
            for col, token in enumerate(row[1:], start=2):
                try:
                    values.append(float(token))
                except ValueError:
                    raise DataError(f"features file line {lineno}, column {col}: "
                                    f"non-numeric value '{token.strip()}'") from None
            ids.append(tx_id)
            rows.append(values)
    if not rows:
        raise DataError(f"features file '{features_path}' contains no records")

    label_by_id: dict[str, str] = {}
    with open(classes_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 or not row:
                continue  # header
            if len(row) < 2:
                raise DataError(f"classes file line {lineno}: expected id,class")
            label_by_id[row[0].strip()] = _label_from_class(row[1])

    labels = [label_by_id.get(tx_id, UNKNOWN) for tx_id in ids]

    edge_count = None
    if edges_path is not None:
        edge_count = 0
        with open(edges_path, "r", encoding="utf-8", newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                if lineno == 1 and any(not _is_number(c) for c in row):
                    continue  # header
                edge_count += 1

    return Dataset(ids, np.array(rows, dtype=np.float64), labels, edge_count)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def write_elliptic(dataset: Dataset, features_path, classes_path) -> None:
    """Write a dataset in the Elliptic layout; re-ingesting recovers it exactly."""
    class_of = {ILLICIT: "1", LICIT: "2", UNKNOWN: "unknown"}
    with open(features_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for i in range(len(dataset)):
            writer.writerow([dataset.ids[i]] + [repr(v) for v in dataset.features[i]])
    with open(classes_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["txId", "class"])
        for i in range(len(dataset)):
            writer.writerow([dataset.ids[i], class_of[dataset.labels[i]]])


def write_dataset_csv(dataset: Dataset, path) -> None:
    """Canonical export: header `id,label,f0..f{d-1}`."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"f{j}" for j in range(dataset.d)])
        for i in range(len(dataset)):
            writer.writerow([dataset.ids[i], dataset.labels[i]]
                            + [repr(v) for v in dataset.features[i]])


def read_dataset_csv(path) -> Dataset:
    """Read the canonical `id,label,f*` export."""
    ids, labels, rows = [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["id", "label"]:
            raise DataError(f"'{path}' is not a dataset CSV (expected id,label,f0,... header)")
        width = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 2:
                raise DataError(f"dataset file line {lineno}: expected {width + 2} "
                                f"columns, found {len(row)}")
            if row[1] not in LABELS:
                raise DataError(f"dataset file line {lineno}: unknown label '{row[1]}'")
            try:
                rows.append([float(tok) for tok in row[2:]])
            except ValueError:
                raise DataError(f"dataset file line {lineno}: non-numeric feature") from None
            ids.append(row[0])
            labels.append(row[1])
    if not rows:
        raise DataError(f"'{path}' contains no records")
    return Dataset(ids, np.array(rows, dtype=np.float64), labels)


@dataclass
class SyntheticSpec:
    """Recipe for a labeled synthetic transaction set.

    Normal records come from Gaussian base clusters with unit sigma; anomalies
    additionally shift the amount/frequency columns by at least +offset sigma
    (the large-rapid-transfer template) plus uniform jitter.
    """

    count: int = 2000
    anomaly_fraction: float = 0.05
    base_clusters: int = 2
    offset: float = 6.0
    d: int = 16
    seed: int = 7

    def __post_init__(self):
        if self.d < 2:
            raise DataError("synthetic data needs d >= 2 (amount and frequency features)")
        if self.count < 1:
            raise DataError("record count must be positive")
        if not 0.0 <= self.anomaly_fraction <= 1.0:
            raise DataError("anomaly fraction must lie in [0, 1]")
        if self.base_clusters < 1:
            raise DataError("base cluster count must be positive")
        if self.anomaly_fraction > 0 and self.anomaly_fraction * self.count < 1:
            raise DataError("anomaly fraction times record count must be at least 1")


_CENTER_SPREAD = 8.0


def _cluster_centers(spec: SyntheticSpec) -> np.ndarray:
    """Well-separated deterministic centers on scaled coordinate axes."""
    centers = np.zeros((spec.base_clusters, spec.d))
    for j in range(spec.base_clusters):
        axis = j % spec.d
        scale = 1 + j // spec.d
        centers[j, axis] = _CENTER_SPREAD * scale
    return centers


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic labeled dataset for a given spec (same seed, same bytes)."""
    rng = derive_stream(spec.seed, "synthetic")
    centers = _cluster_centers(spec)
    n_anomalies = int(round(spec.count * spec.anomaly_fraction))
    features = np.empty((spec.count, spec.d))
    labels: list[str] = []
    for i in range(spec.count):
        anomalous = i < n_anomalies
        center = centers[rng.randint(spec.base_clusters)]
        x = center + rng.normals(spec.d)
        if anomalous:
            # Per-record magnitude jitter keeps every offset at >= spec.offset
            # sigma while scattering anomalies instead of stacking them.
            for col in (AMOUNT_COL, FREQUENCY_COL):
                x[col] += spec.offset * (1.0 + rng.uniform()) + 0.5 * rng.uniform()
        features[i] = x
        labels.append(ILLICIT if anomalous else LICIT)
    order = rng.permutation(spec.count)
    features = features[order]
    labels = [labels[i] for i in order]
    ids = [f"t{i:06d}" for i in range(spec.count)]
    return Dataset(ids, features, labels)


@dataclass
class PairConfig:
    """Knobs for contrastive pair construction."""

    knn_k: int = 5              # positive pool: k nearest neighbors
    neg_percentile: float = 50.0  # negatives drawn beyond this distance percentile

    def __post_init__(self):
        if self.knn_k < 1:
            raise DataError("knn_k must be at least 1")
        if not 0.0 < self.neg_percentile <= 100.0:
            raise DataError("neg_percentile must lie in (0, 100]")


@dataclass
class PairBatch:
    """Anchor/positive/negative index sets for one pass over the data."""

    anchors: np.ndarray    # [n]
    positives: np.ndarray  # [n]
    negatives: np.ndarray  # [n, N]


class PairSampler:
    """Samples similar positives and feature-distant negatives per anchor.

    Distances are Euclidean over standardized raw features and are computed
    once at construction; `sample` only draws indices, so per-epoch resampling
    is cheap and deterministic given the rng.
    """

    def __init__(self, dataset: Dataset, knn_k: int = 5, negatives: int = 8,
                 neg_percentile: float = 50.0):
        n = len(dataset)
        minimum = knn_k + negatives + 1
        if n < minimum:
            raise DataError(f"pair sampling needs at least {minimum} records "
                            f"(k={knn_k}, negatives={negatives}), got {n}")
        if negatives < 1:
            raise DataError("need at least one negative per anchor")
        self.n = n
        self.negatives = negatives
        feats = dataset.features
        sq = np.sum(feats * feats, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * feats @ feats.T
        np.maximum(d2, 0.0, out=d2)
        dist = np.sqrt(d2)

        self._neighbors = []
        self._eligible = []
        for i in range(n):
            row = dist[i]
            others = np.delete(row, i)
            order = np.argsort(row, kind="stable")
            self._neighbors.append(order[order != i][:knn_k])
            threshold = np.percentile(others, neg_percentile)
            eligible = np.flatnonzero(row > threshold)
            eligible = eligible[eligible != i]
            if eligible.size == 0:
                # Degenerate geometry (e.g. all records identical): fall back
                # to every other record so sampling still terminates.
                eligible = np.setdiff1d(np.arange(n), [i])
            self._eligible.append(eligible)

    def sample(self, rng: SeededRng) -> PairBatch:
        anchors = np.arange(self.n)
        positives = np.empty(self.n, dtype=np.int64)
        negatives = np.empty((self.n, self.negatives), dtype=np.int64)
        for i in range(self.n):
            pool = self._neighbors[i]
            positives[i] = pool[rng.randint(len(pool))]
            eligible = self._eligible[i]
            for j in range(self.negatives):
                pick = eligible[rng.randint(len(eligible))]
                tries = 0
                while pick == positives[i] and tries < 64:
                    pick = eligible[rng.randint(len(eligible))]
                    tries += 1
                if pick == positives[i]:
                    alternatives = eligible[eligible != positives[i]]
                    pick = alternatives[rng.randint(len(alternatives))]
                negatives[i, j] = pick
        return PairBatch(anchors=anchors, positives=positives, negatives=negatives)


def sample_pairs(dataset: Dataset, knn_k: int, negatives: int,
                 neg_percentile: float, rng: SeededRng) -> PairBatch:
    """One-shot pair construction over the whole dataset."""
    sampler = PairSampler(dataset, knn_k=knn_k, negatives=negatives,
                          neg_percentile=neg_percentile)
    return sampler.sample(rng)
