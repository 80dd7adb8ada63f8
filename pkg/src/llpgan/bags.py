"""Bag construction from labeled data, and manifest persistence.

Supervision in this package is always bag-level: a bag is a disjoint group
of instance indices plus the class-proportion vector of its (hidden) labels.
Ground-truth labels are consumed here once, to compute proportions; nothing
downstream of a :class:`BagDataset` can see them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConfigurationError,
    InvalidBagError,
    LabelDomainError,
    ManifestParseError,
    ManifestValidationError,
)
from .validation import check_labels, check_positive_int, check_simplex

MANIFEST_KEYS = ("k", "bag_size", "seed", "source", "n")
MULTIPLE_ATOL = 1e-9


@dataclass(frozen=True)
class ProportionVector:
    """A length-K probability vector of class frequencies."""

    values: np.ndarray

    def __post_init__(self):
        arr = check_simplex(np.asarray(self.values, dtype=np.float64), "proportion vector")
        if arr.ndim != 1:
            raise ConfigurationError("proportion vector must be 1-dimensional")
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return float(self.values[k])

    def __eq__(self, other):
        if not isinstance(other, ProportionVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def tolist(self):
        return self.values.tolist()


@dataclass(frozen=True)
class LabeledDataset:
    """Instances with ground-truth labels, used for bag construction and test-time scoring."""

    features: np.ndarray
    labels: np.ndarray
    k: int
    name: str = "dataset"

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if self.k < 2:
            raise ConfigurationError(f"k must be >= 2, got {self.k}")
        labels = check_labels(self.labels, self.k)
        if len(features) != len(labels):
            raise ConfigurationError(
                f"features ({len(features)}) and labels ({len(labels)}) differ in length"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class Bag:
    """Indices into a parent dataset plus the bag's class proportions."""

    id: int
    instance_indices: np.ndarray
    proportions: ProportionVector

    def __post_init__(self):
        idx = np.asarray(self.instance_indices, dtype=np.int64)
        if idx.size == 0:
            raise InvalidBagError(f"bag {self.id} is empty")
        if len(np.unique(idx)) != len(idx):
            raise InvalidBagError(f"bag {self.id} contains duplicate indices")
        scaled = self.proportions.values * len(idx)
        if np.any(np.abs(scaled - np.round(scaled)) > MULTIPLE_ATOL * len(idx)):
            raise InvalidBagError(
                f"bag {self.id}: proportions are not multiples of 1/{len(idx)}"
            )
        object.__setattr__(self, "instance_indices", idx)

    @property
    def size(self):
        return len(self.instance_indices)

    def __eq__(self, other):
        if not isinstance(other, Bag):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.instance_indices, other.instance_indices)
            and self.proportions == other.proportions
        )


@dataclass(frozen=True)
class BagDataset:
    """Pairwise-disjoint bags over one source dataset."""

    bags: tuple
    k: int
    source: str
    bag_size: int
    seed: int

    def __post_init__(self):
        bags = tuple(self.bags)
        if not bags:
            raise InvalidBagError("a bag dataset needs at least one bag")
        all_idx = np.concatenate([b.instance_indices for b in bags])
        if len(np.unique(all_idx)) != len(all_idx):
            raise InvalidBagError("bags are not pairwise disjoint")
        for bag in bags:
            if len(bag.proportions) != self.k:
                raise ConfigurationError(
                    f"bag {bag.id} has {len(bag.proportions)} proportions, expected k={self.k}"
                )
        object.__setattr__(self, "bags", bags)

    def __len__(self):
        return len(self.bags)

    def __eq__(self, other):
        if not isinstance(other, BagDataset):
            return NotImplemented
        return (
            self.k == other.k
            and self.source == other.source
            and self.bag_size == other.bag_size
            and self.seed == other.seed
            and len(self.bags) == len(other.bags)
            and all(a == b for a, b in zip(self.bags, other.bags))
        )

    def priors_matrix(self):
        """All bag proportions stacked into an (n, K) array."""
        return np.stack([b.proportions.values for b in self.bags])

    def instance_count(self):
        return sum(b.size for b in self.bags)


def compute_proportions(labels, k) -> ProportionVector:
    """Empirical class frequencies of a bag's labels."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidBagError("cannot compute proportions of an empty bag")
    labels = check_labels(labels, k)
    counts = np.bincount(labels, minlength=k)
    return ProportionVector(counts / labels.size)


def partition_into_bags(dataset: LabeledDataset, bag_size, seed) -> BagDataset:
    """Shuffle instances with a seeded RNG and chunk into disjoint fixed-size bags.

    Trailing instances that do not fill a whole bag are dropped, so every bag
    has exactly ``bag_size`` members.
    """
    bag_size = check_positive_int(bag_size, "bag_size")
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    if bag_size > len(dataset):
        raise ConfigurationError(
            f"bag_size {bag_size} exceeds dataset size {len(dataset)}"
        )
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_bags = len(dataset) // bag_size
    bags = []
    for i in range(n_bags):
        idx = order[i * bag_size : (i + 1) * bag_size]
        bags.append(
            Bag(
                id=i,
                instance_indices=np.sort(idx),
                proportions=compute_proportions(dataset.labels[idx], dataset.k),
            )
        )
    return BagDataset(
        bags=tuple(bags), k=dataset.k, source=dataset.name, bag_size=bag_size, seed=int(seed)
    )


def select_binary_subset(dataset: LabeledDataset, class_a, class_b) -> LabeledDataset:
    """Restrict to two classes, relabeled {0, 1}."""
    if class_a == class_b:
        raise ConfigurationError("binary subset needs two distinct classes")
    for c in (class_a, class_b):
        if not 0 <= c < dataset.k:
            raise LabelDomainError(f"class {c} outside [0, {dataset.k - 1}]")
    mask = (dataset.labels == class_a) | (dataset.labels == class_b)
    labels = np.where(dataset.labels[mask] == class_b, 1, 0)
    return LabeledDataset(
        features=dataset.features[mask],
        labels=labels,
        k=2,
        name=f"{dataset.name}|binary={class_a},{class_b}",
    )


def persist_manifest(bagdataset: BagDataset, path):
    """Write a JSON-lines manifest: one header object, then one object per bag."""
    header = {
        "k": bagdataset.k,
        "bag_size": bagdataset.bag_size,
        "seed": bagdataset.seed,
        "source": bagdataset.source,
        "n": len(bagdataset),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for bag in bagdataset.bags:
            row = {
                "id": bag.id,
                "indices": bag.instance_indices.tolist(),
                "proportions": bag.proportions.tolist(),
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path) -> BagDataset:
    """Parse and validate a JSON-lines manifest written by :func:`persist_manifest`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestParseError("empty manifest", line=1)

    header = _parse_json_line(lines[0], 1)
    missing = [key for key in MANIFEST_KEYS if key not in header]
    if missing:
        raise ManifestParseError(f"header missing fields {missing}", line=1)

    bags = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        row = _parse_json_line(raw, lineno)
        for key in ("id", "indices", "proportions"):
            if key not in row:
                raise ManifestParseError(f"bag row missing field {key!r}", line=lineno)
        props = np.asarray(row["proportions"], dtype=np.float64)
        try:
            vector = ProportionVector(props)
        except ConfigurationError as exc:
            raise ManifestValidationError(f"line {lineno}: {exc}") from exc
        try:
            bags.append(Bag(id=row["id"], instance_indices=row["indices"], proportions=vector))
        except InvalidBagError as exc:
            raise ManifestValidationError(f"line {lineno}: {exc}") from exc

    if len(bags) != header["n"]:
        raise ManifestValidationError(
            f"header declares {header['n']} bags but manifest holds {len(bags)}"
        )
    try:
        return BagDataset(
            bags=tuple(bags),
            k=header["k"],
            source=header["source"],
            bag_size=header["bag_size"],
            seed=header["seed"],
        )
    except (InvalidBagError, ConfigurationError) as exc:
        raise ManifestValidationError(str(exc)) from exc


def _parse_json_line(raw, lineno):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
    if not isinstance(value, dict):
        raise ManifestParseError("expected a JSON object", line=lineno)
    return value
