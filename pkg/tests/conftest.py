import numpy as np
import pytest

from llpgan.bags import partition_into_bags
from llpgan.datasets import make_blobs
from llpgan.networks import (
    build_discriminator,
    build_generator,
    mlp_discriminator_spec,
    mlp_generator_spec,
)
from llpgan.training import TrainConfig, train_dllp, train_llp_gan


@pytest.fixture(scope="session")
def blobs2():
    """Small 2-class blobs bundle with its bags (40 bags of 16)."""
    bundle = make_blobs(n_samples=640, k=2, seed=1)
    bags = partition_into_bags(bundle.train, 16, seed=1)
    return bundle, bags


@pytest.fixture(scope="session")
def trained_dllp(blobs2):
    """A converged baseline run shared by trainer/harness tests."""
    bundle, bags = blobs2
    model = build_discriminator(mlp_discriminator_spec(2, 2), 2, seed=3)
    state = train_dllp(
        bundle.train.features,
        bags,
        TrainConfig(total_steps=300, seed=3),
        model=model,
        eval_set=(bundle.test.features, bundle.test.labels),
    )
    return bundle, bags, state


@pytest.fixture(scope="session")
def trained_llp_gan(blobs2):
    """A converged adversarial run shared by trainer/harness tests."""
    bundle, bags = blobs2
    disc = build_discriminator(mlp_discriminator_spec(2, 2), 2, seed=3)
    gen = build_generator(mlp_generator_spec(2), seed=4)
    state = train_llp_gan(
        bundle.train.features,
        bags,
        TrainConfig(total_steps=300, seed=3),
        discriminator=disc,
        generator=gen,
        eval_set=(bundle.test.features, bundle.test.labels),
    )
    return bundle, bags, state


def trace_rows_equal(a, b, ignore=("wallclock_s",)):
    """Exact row-by-row equality of metric traces, NaN-tolerant."""
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        keys = set(ra) | set(rb)
        for key in keys:
            if key in ignore:
                continue
            va, vb = ra.get(key), rb.get(key)
            if isinstance(va, float) and isinstance(vb, float):
                if np.isnan(va) and np.isnan(vb):
                    continue
            if va != vb:
                return False
    return True
