"""Scalar training objectives.

All losses are differentiable torch expressions; plain arrays and lists are
accepted and promoted. Probabilities are floored at ``LOG_EPS`` before any
logarithm. For the adversarial supervised term the *normalized posteriors*
are floored once and shared by both the Jensen lower bound (mean of logs)
and the exact bag-level term (log of mean), so the lower bound can never
numerically exceed the exact term it approximates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import ConfigurationError, InvalidBagError

LOG_EPS = 1e-7
DEGENERATE_FAKE_EPS = 1e-12


@dataclass
class LossValue:
    """A scalar objective plus the named addends it decomposes into.

    ``components`` sum to ``value`` (weights already applied); ``extras``
    carries unweighted diagnostics.
    """

    value: torch.Tensor
    components: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __float__(self):
        return _scalar(self.value)


def _scalar(value):
    return float(value.detach()) if torch.is_tensor(value) else float(value)


def _as_tensor(values, name):
    if torch.is_tensor(values):
        return values
    try:
        return torch.as_tensor(np.asarray(values, dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} is not numeric: {exc}") from exc


def _safe_log(t: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(t, min=LOG_EPS))


def bag_posterior_mean(posteriors):
    """Elementwise mean of a bag's posterior rows (the bag-level estimate)."""
    rows = _as_tensor(posteriors, "posteriors")
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise InvalidBagError("bag posterior mean needs at least one posterior row")
    mean = rows.mean(dim=0)
    return mean if torch.is_tensor(posteriors) else mean.numpy()


def proportion_ce(priors, bag_means):
    """Bag-level cross entropy between prior proportions and posterior means."""
    p = _as_tensor(priors, "priors")
    m = _as_tensor(bag_means, "bag_means")
    p, m = torch.atleast_2d(p), torch.atleast_2d(m)
    if p.shape != m.shape:
        raise ConfigurationError(f"priors {tuple(p.shape)} vs bag means {tuple(m.shape)}")
    return -(p * _safe_log(m)).sum()


def instance_entropy(posteriors):
    """Sum of per-instance entropies of posterior rows."""
    rows = torch.atleast_2d(_as_tensor(posteriors, "posteriors"))
    return -(rows * _safe_log(rows)).sum()


def dllp_total(priors, posteriors_by_bag, lambda_ent=0.0) -> LossValue:
    """Proportion cross entropy plus the entropy regularizer.

    ``posteriors_by_bag`` is one (N_i, K) block of instance posteriors per
    bag. ``lambda_ent = 0`` recovers plain DLLP.
    """
    if lambda_ent < 0:
        raise ConfigurationError(f"lambda_ent must be >= 0, got {lambda_ent}")
    priors = torch.atleast_2d(_as_tensor(priors, "priors"))
    blocks = [_as_tensor(b, "posteriors") for b in posteriors_by_bag]
    if len(blocks) != priors.shape[0]:
        raise ConfigurationError(
            f"{len(blocks)} bags of posteriors vs {priors.shape[0]} priors"
        )
    means = torch.stack([b.mean(dim=0) for b in blocks])
    l_prop = proportion_ce(priors, means)
    e_in = instance_entropy(torch.cat(blocks))
    value = l_prop + lambda_ent * e_in
    return LossValue(
        value=value,
        components={"l_prop": _scalar(l_prop), "entropy_reg": _scalar(lambda_ent * e_in)},
        extras={"e_in": _scalar(e_in)},
    )


def normalize_posterior(probs):
    """Strip the fake class from a (K+1)-way distribution and renormalize.

    Rows whose fake probability is 1 (within 1e-12) map to the uniform
    distribution over the K real classes.
    """
    is_tensor = torch.is_tensor(probs)
    rows = _as_tensor(probs, "probs")
    squeeze = rows.ndim == 1
    rows = torch.atleast_2d(rows)
    if rows.shape[-1] < 3:
        raise ConfigurationError("posterior rows need at least 3 entries (K >= 2 plus fake)")
    k = rows.shape[-1] - 1
    real_mass = 1.0 - rows[..., -1:]
    degenerate = real_mass <= DEGENERATE_FAKE_EPS
    safe = torch.where(degenerate, torch.ones_like(real_mass), real_mass)
    out = torch.where(degenerate, torch.full_like(rows[..., :-1], 1.0 / k), rows[..., :-1] / safe)
    if squeeze:
        out = out[0]
    return out if is_tensor else out.numpy()


def _normalized_clamped(probs_by_bag):
    """Shared preprocessing for the supervised term and its exact oracle."""
    out = []
    for i, block in enumerate(probs_by_bag):
        rows = torch.atleast_2d(_as_tensor(block, "real outputs"))
        if rows.shape[0] < 1:
            raise InvalidBagError(f"bag {i} has no discriminator outputs")
        out.append(torch.clamp(normalize_posterior(rows), min=LOG_EPS))
    return out


def llp_gan_disc_loss(real_probs_by_bag, fake_probs, priors, lambda_sup=1.0) -> LossValue:
    """Adversarial discriminator objective (to be maximized).

    ``l_real`` sums per-bag means of log(1 - fake prob) over real instances,
    ``l_fake`` averages log(fake prob) over generated samples, and the
    supervised term is the Jensen lower bound on the negative bag-level
    cross entropy, weighted by ``lambda_sup``.
    """
    if lambda_sup < 0:
        raise ConfigurationError(f"lambda_sup must be >= 0, got {lambda_sup}")
    priors = torch.atleast_2d(_as_tensor(priors, "priors"))
    if len(real_probs_by_bag) != priors.shape[0]:
        raise ConfigurationError(
            f"{len(real_probs_by_bag)} bags of outputs vs {priors.shape[0]} priors"
        )
    fake = torch.atleast_2d(_as_tensor(fake_probs, "fake probs"))
    if fake.shape[0] < 1:
        raise ConfigurationError("fake batch is empty")

    blocks = [torch.atleast_2d(_as_tensor(b, "real outputs")) for b in real_probs_by_bag]
    for i, rows in enumerate(blocks):
        if rows.shape[0] < 1:
            raise InvalidBagError(f"bag {i} has no discriminator outputs")

    l_real = sum(_safe_log(1.0 - rows[:, -1]).mean() for rows in blocks)
    l_fake = _safe_log(fake[:, -1]).mean()
    posteriors = _normalized_clamped(blocks)
    lb = sum(
        (priors[i] * torch.log(rows).mean(dim=0)).sum() for i, rows in enumerate(posteriors)
    )
    value = l_real + l_fake + lambda_sup * lb
    return LossValue(
        value=value,
        components={
            "l_real": _scalar(l_real),
            "l_fake": _scalar(l_fake),
            "lb_sup": _scalar(lambda_sup * lb),
        },
        extras={"lb": _scalar(lb)},
    )


def exact_proportion_term(real_probs_by_bag, priors):
    """The pre-bound supervised term: sum of priors dotted with log bag means.

    This is the quantity the Jensen lower bound approximates; it serves as
    the dominance oracle for that bound.
    """
    priors = torch.atleast_2d(_as_tensor(priors, "priors"))
    if len(real_probs_by_bag) != priors.shape[0]:
        raise ConfigurationError(
            f"{len(real_probs_by_bag)} bags of outputs vs {priors.shape[0]} priors"
        )
    posteriors = _normalized_clamped(real_probs_by_bag)
    return sum(
        (priors[i] * torch.log(rows.mean(dim=0))).sum() for i, rows in enumerate(posteriors)
    )


def feature_matching_loss(real_feature_mean, fake_feature_mean):
    """Squared Euclidean distance between mean real and mean fake features."""
    a = _as_tensor(real_feature_mean, "real feature mean")
    b = _as_tensor(fake_feature_mean, "fake feature mean")
    if a.shape != b.shape:
        raise ConfigurationError(
            f"feature mean shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}"
        )
    return ((a - b) ** 2).sum()
