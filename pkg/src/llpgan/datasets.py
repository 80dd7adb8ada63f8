"""Dataset construction and name resolution.

Two sources are built in: synthetic 2-D Gaussian blobs (with a brute-force
Bayes classifier, since the mixture is known exactly) and MNIST loaded from
a local ``mnist.npz`` (see scripts/fetch_mnist.py; nothing here downloads).
Features are always scaled into [-1, 1] to match the generator's output
range.

Dataset names are strings so they can live inside bag manifests:

    blobs                      defaults (n=4000, k=4, seed=0, std=0.12)
    blobs:n=8000,k=2,seed=3    overrides as key=value pairs
    mnist                      full training split
    mnist:n=10000,seed=0       random subset of the training split
    <name>|binary=a,b          two-class restriction of any of the above
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .bags import LabeledDataset, select_binary_subset
from .exceptions import ConfigurationError, DatasetResolutionError

MNIST_ENV_VAR = "LLP_MNIST_PATH"
MNIST_DEFAULT_PATH = "data/mnist.npz"


@dataclass(frozen=True)
class DatasetBundle:
    """Train/test splits plus whatever exact oracle the source supports."""

    train: LabeledDataset
    test: LabeledDataset
    name: str
    bayes_centers: np.ndarray | None = None

    def bayes_predict(self, features):
        """Nearest-center rule; exact Bayes for equal isotropic blobs."""
        if self.bayes_centers is None:
            raise ConfigurationError(f"dataset {self.name!r} has no Bayes oracle")
        features = np.asarray(features, dtype=np.float64)
        d2 = ((features[:, None, :] - self.bayes_centers[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    def bayes_error(self):
        pred = self.bayes_predict(self.test.features)
        return 100.0 * np.mean(pred != self.test.labels)


def make_blobs(n_samples=4000, k=4, seed=0, cluster_std=0.12, n_test=None) -> DatasetBundle:
    """Isotropic Gaussian clusters on a circle, scaled into [-1, 1].

    Cluster centers sit on the unit circle, so neighboring classes are
    separated by many standard deviations and the Bayes error is ~0.
    """
    if k < 2:
        raise ConfigurationError("blobs need k >= 2")
    n_test = n_samples // 4 if n_test is None else n_test
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def draw(n):
        labels = rng.integers(0, k, size=n)
        feats = centers[labels] + cluster_std * rng.standard_normal((n, 2))
        return feats, labels

    train_x, train_y = draw(n_samples)
    test_x, test_y = draw(n_test)
    scale = 1.0 + 4.0 * cluster_std  # keeps essentially all mass inside [-1, 1]
    name = f"blobs:n={n_samples},k={k},seed={seed},std={cluster_std}"
    return DatasetBundle(
        train=LabeledDataset(train_x / scale, train_y, k=k, name=name),
        test=LabeledDataset(test_x / scale, test_y, k=k, name=name),
        name=name,
        bayes_centers=centers / scale,
    )


def load_mnist(path=None, subset=None, seed=0) -> DatasetBundle:
    """MNIST from a local npz with x_train/y_train/x_test/y_test arrays.

    Pixels are rescaled to [-1, 1] and shaped (1, 28, 28). ``subset`` takes
    a seeded random sample of the training split.
    """
    path = path or os.environ.get(MNIST_ENV_VAR) or MNIST_DEFAULT_PATH
    if not os.path.exists(path):
        raise DatasetResolutionError(
            f"MNIST file not found at {path!r}; run scripts/fetch_mnist.py or set "
            f"{MNIST_ENV_VAR}"
        )
    with np.load(path) as data:
        train_x, train_y = data["x_train"], data["y_train"]
        test_x, test_y = data["x_test"], data["y_test"]
    if subset is not None:
        idx = np.random.default_rng(seed).permutation(len(train_x))[:subset]
        train_x, train_y = train_x[idx], train_y[idx]

    def prep(x):
        return (x.astype(np.float64) / 127.5 - 1.0).reshape(-1, 1, 28, 28)

    name = "mnist" if subset is None else f"mnist:n={subset},seed={seed}"
    return DatasetBundle(
        train=LabeledDataset(prep(train_x), train_y.astype(np.int64), k=10, name=name),
        test=LabeledDataset(prep(test_x), test_y.astype(np.int64), k=10, name=name),
        name=name,
    )


def _parse_params(text):
    params = {}
    for part in text.split(","):
        if not part:
            continue
        if "=" not in part:
            raise DatasetResolutionError(f"bad dataset parameter {part!r}, expected key=value")
        key, value = part.split("=", 1)
        params[key.strip()] = value.strip()
    return params


def resolve_dataset(name) -> DatasetBundle:
    """Build the dataset a name describes; see the module docstring grammar."""
    base = name
    binary = None
    if "|" in name:
        base, modifier = name.split("|", 1)
        if not modifier.startswith("binary="):
            raise DatasetResolutionError(f"unknown dataset modifier {modifier!r}")
        try:
            a, b = (int(v) for v in modifier[len("binary=") :].split(","))
        except ValueError as exc:
            raise DatasetResolutionError(f"bad binary modifier in {name!r}") from exc
        binary = (a, b)

    kind, _, param_text = base.partition(":")
    params = _parse_params(param_text)
    if kind == "blobs":
        bundle = make_blobs(
            n_samples=int(params.get("n", 4000)),
            k=int(params.get("k", 4)),
            seed=int(params.get("seed", 0)),
            cluster_std=float(params.get("std", 0.12)),
        )
    elif kind == "mnist":
        bundle = load_mnist(
            subset=int(params["n"]) if "n" in params else None,
            seed=int(params.get("seed", 0)),
        )
    else:
        raise DatasetResolutionError(f"unknown dataset {kind!r}")

    if binary is not None:
        train = select_binary_subset(bundle.train, *binary)
        test = select_binary_subset(bundle.test, *binary)
        return DatasetBundle(
            train=train, test=test, name=f"{bundle.name}|binary={binary[0]},{binary[1]}",
            bayes_centers=(
                bundle.bayes_centers[list(binary)] if bundle.bayes_centers is not None else None
            ),
        )
    return bundle
