"""Alternating adversarial training and the proportion-only baseline.

Each adversarial iteration draws fresh noise, synthesizes fakes, takes
exactly one ascent step on the discriminator objective, then exactly one
descent step on the generator's feature-matching loss. The baseline loop
minimizes the bag-level cross entropy (plus optional entropy regularizer)
with the same tracing and checkpointing contract.

Training code sees features and bag proportions only; instance labels exist
solely in the optional ``eval_set`` used for test-time scoring.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .bags import BagDataset
from .exceptions import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigurationError,
    TrainingDivergedError,
)
from .losses import dllp_total, feature_matching_loss, instance_entropy, llp_gan_disc_loss, normalize_posterior
from .networks import ArchitectureSpec, build_discriminator, build_generator

CHECKPOINT_VERSION = 1
TRACE_COLUMNS = (
    "step",
    "epoch",
    "l_real",
    "l_fake",
    "lb_sup",
    "fm",
    "dllp",
    "entropy",
    "test_error",
    "wallclock_s",
)


@dataclass
class TrainConfig:
    """Hyperparameters for either training loop."""

    lambda_sup: float = 1.0
    lambda_ent: float = 0.0
    total_steps: int = 1000
    bags_per_step: int = 4
    fake_batch: int | None = None  # None: bags_per_step * bag_size fakes per step
    literal_fake_batch: bool = False  # draw one fake per training instance instead
    noise_dim: int | None = None  # None: take the generator spec's value
    learning_rate: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.lambda_sup < 0 or self.lambda_ent < 0:
            raise ConfigurationError("lambda weights must be >= 0")
        if self.total_steps < 1 or self.bags_per_step < 1:
            raise ConfigurationError("step and bag counts must be >= 1")
        if self.fake_batch is not None and self.fake_batch < 1:
            raise ConfigurationError("fake_batch must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")


@dataclass
class TrainState:
    """Models, optimizers, counters, and the metric trace of one run."""

    algo: str
    k: int
    config: TrainConfig
    discriminator: torch.nn.Module
    generator: torch.nn.Module | None
    opt_d: torch.optim.Optimizer
    opt_g: torch.optim.Optimizer | None
    step: int = 0
    d_updates: int = 0
    g_updates: int = 0
    trace: list = field(default_factory=list)

    def trace_column(self, name):
        return [row[name] for row in self.trace]


def steps_per_epoch(n_bags, bags_per_step):
    return math.ceil(n_bags / bags_per_step)


def steps_for_epochs(n_bags, bags_per_step, epochs):
    return epochs * steps_per_epoch(n_bags, bags_per_step)


def bag_ids_for_step(seed, step, n_bags, bags_per_step):
    """Whole-bag minibatch for a step: a pure function of (seed, step).

    Each epoch shuffles the bag order with its own child seed, so resuming
    from any step reproduces the original schedule exactly.
    """
    spe = steps_per_epoch(n_bags, bags_per_step)
    epoch, chunk = divmod(step, spe)
    perm = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n_bags)
    return epoch, perm[chunk * bags_per_step : (chunk + 1) * bags_per_step]


def resolve_fake_batch(config: TrainConfig, bags: BagDataset):
    if config.literal_fake_batch:
        return bags.instance_count()
    if config.fake_batch is not None:
        return config.fake_batch
    return config.bags_per_step * bags.bag_size


def _adam(params, config):
    return torch.optim.Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2))


def _prepare(features, bags: BagDataset, model):
    features = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    if tuple(features.shape[1:]) != model.spec.input_shape:
        raise ConfigurationError(
            f"feature shape {tuple(features.shape[1:])} does not match the model's "
            f"{model.spec.input_shape}"
        )
    max_index = max(int(b.instance_indices.max()) for b in bags.bags)
    if max_index >= features.shape[0]:
        raise ConfigurationError(
            f"bag index {max_index} outside the feature array of length {features.shape[0]}"
        )
    priors = torch.as_tensor(bags.priors_matrix(), dtype=torch.float32)
    index_of = [torch.as_tensor(b.instance_indices) for b in bags.bags]
    return features, priors, index_of


def _nan_row():
    return {c: float("nan") for c in TRACE_COLUMNS}


def _guard_finite(state, step, **values):
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDivergedError(
            f"non-finite loss at step {step}: {bad}", step=step, snapshot=state
        )


def predict_posteriors(model, features, algo="llp-gan", batch_size=1024):
    """Instance-level K-class posteriors in evaluation mode.

    Adversarial models renormalize the real classes after removing the fake
    mass; the baseline applies a plain K-way softmax to the logits.
    """
    features = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    model.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, features.shape[0], batch_size):
            out = model(features[i : i + batch_size])
            if algo == "llp-gan":
                outs.append(normalize_posterior(out.probs))
            else:
                outs.append(torch.softmax(out.logits, dim=-1))
    return torch.cat(outs).numpy()


def predict_labels(model, features, algo="llp-gan", batch_size=1024):
    """Argmax prediction; ties break toward the lowest class index."""
    return np.argmax(predict_posteriors(model, features, algo, batch_size), axis=1)


def _test_error(model, eval_set, algo):
    feats, labels = eval_set
    pred = predict_labels(model, feats, algo)
    return 100.0 * float(np.mean(pred != np.asarray(labels)))


def _train_entropy(model, features, batch_size=1024):
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, features.shape[0], batch_size):
            posterior = torch.softmax(model(features[i : i + batch_size]).logits, dim=-1)
            total += float(instance_entropy(posterior))
    return total


def train_llp_gan(
    features,
    bags: BagDataset,
    config: TrainConfig,
    discriminator=None,
    generator=None,
    eval_set=None,
    state: TrainState | None = None,
    steps: int | None = None,
) -> TrainState:
    """Run the alternating adversarial loop; returns the final state.

    A fresh run needs ``discriminator`` and ``generator``; passing ``state``
    (e.g. from :func:`checkpoint_restore`) resumes instead. ``steps`` caps
    how many additional iterations run, defaulting to the remainder of
    ``config.total_steps``.
    """
    if state is None:
        if discriminator is None or generator is None:
            raise ConfigurationError("a fresh run needs both models")
        torch.manual_seed(config.seed)
        state = TrainState(
            algo="llp-gan",
            k=discriminator.k,
            config=config,
            discriminator=discriminator,
            generator=generator,
            opt_d=_adam(discriminator.parameters(), config),
            opt_g=_adam(generator.parameters(), config),
        )
    config = state.config
    disc, gen = state.discriminator, state.generator
    if config.noise_dim is not None and config.noise_dim != gen.noise_dim:
        raise ConfigurationError(
            f"config noise_dim {config.noise_dim} != generator's {gen.noise_dim}"
        )
    features, priors, index_of = _prepare(features, bags, disc)
    m = resolve_fake_batch(config, bags)
    spe = steps_per_epoch(len(bags), config.bags_per_step)
    last = min(config.total_steps, state.step + steps) if steps else config.total_steps

    while state.step < last:
        t0 = time.perf_counter()
        step = state.step
        epoch, bag_ids = bag_ids_for_step(config.seed, step, len(bags), config.bags_per_step)
        real = features[torch.cat([index_of[i] for i in bag_ids])]
        sizes = [len(index_of[i]) for i in bag_ids]

        disc.train()
        gen.train()
        z = torch.randn(m, gen.noise_dim)
        fake = gen(z)

        # one ascent step on the discriminator objective
        state.opt_d.zero_grad()
        real_out = disc(real)
        fake_out = disc(fake.detach())
        loss = llp_gan_disc_loss(
            torch.split(real_out.probs, sizes), fake_out.probs, priors[bag_ids], config.lambda_sup
        )
        _guard_finite(state, step, disc_objective=float(loss))
        (-loss.value).backward()
        state.opt_d.step()
        state.d_updates += 1

        # one descent step on feature matching for the generator
        state.opt_g.zero_grad()
        real_features = disc(real).features.mean(dim=0).detach()
        fm = feature_matching_loss(real_features, disc(gen(z)).features.mean(dim=0))
        _guard_finite(state, step, feature_matching=float(fm.detach()))
        fm.backward()
        state.opt_g.step()
        state.g_updates += 1

        row = _nan_row()
        row.update(
            step=step,
            epoch=epoch,
            l_real=loss.components["l_real"],
            l_fake=loss.components["l_fake"],
            lb_sup=loss.components["lb_sup"],
            fm=float(fm.detach()),
        )
        if eval_set is not None and ((step + 1) % spe == 0 or step + 1 == config.total_steps):
            row["test_error"] = _test_error(disc, eval_set, "llp-gan")
        row["wallclock_s"] = time.perf_counter() - t0
        state.trace.append(row)
        state.step += 1
        _maybe_checkpoint(state)
    return state


def train_dllp(
    features,
    bags: BagDataset,
    config: TrainConfig,
    model=None,
    eval_set=None,
    state: TrainState | None = None,
    steps: int | None = None,
) -> TrainState:
    """Minimize the bag-level proportion loss over whole-bag minibatches.

    Logs the instance-entropy trace (summed over the training split) at
    epoch boundaries alongside the loss and test error.
    """
    if state is None:
        if model is None:
            raise ConfigurationError("a fresh run needs a model")
        torch.manual_seed(config.seed)
        state = TrainState(
            algo="dllp",
            k=model.k,
            config=config,
            discriminator=model,
            generator=None,
            opt_d=_adam(model.parameters(), config),
            opt_g=None,
        )
    config = state.config
    model = state.discriminator
    features, priors, index_of = _prepare(features, bags, model)
    spe = steps_per_epoch(len(bags), config.bags_per_step)
    last = min(config.total_steps, state.step + steps) if steps else config.total_steps

    while state.step < last:
        t0 = time.perf_counter()
        step = state.step
        epoch, bag_ids = bag_ids_for_step(config.seed, step, len(bags), config.bags_per_step)
        real = features[torch.cat([index_of[i] for i in bag_ids])]
        sizes = [len(index_of[i]) for i in bag_ids]

        model.train()
        state.opt_d.zero_grad()
        posteriors = torch.softmax(model(real).logits, dim=-1)
        loss = dllp_total(priors[bag_ids], torch.split(posteriors, sizes), config.lambda_ent)
        _guard_finite(state, step, dllp=float(loss))
        loss.value.backward()
        state.opt_d.step()
        state.d_updates += 1

        row = _nan_row()
        row.update(step=step, epoch=epoch, dllp=float(loss))
        if (step + 1) % spe == 0 or step + 1 == config.total_steps:
            row["entropy"] = _train_entropy(model, features)
            if eval_set is not None:
                row["test_error"] = _test_error(model, eval_set, "dllp")
        row["wallclock_s"] = time.perf_counter() - t0
        state.trace.append(row)
        state.step += 1
        _maybe_checkpoint(state)
    return state


def _maybe_checkpoint(state):
    cfg = state.config
    if cfg.checkpoint_every and cfg.checkpoint_dir and state.step % cfg.checkpoint_every == 0:
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)
        checkpoint_save(state, os.path.join(cfg.checkpoint_dir, f"step{state.step:08d}.ckpt"))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_save(state: TrainState, path):
    """Self-describing container: specs, parameter arrays, optimizer and RNG state."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "algo": state.algo,
        "k": state.k,
        "config": asdict(state.config),
        "d_spec": state.discriminator.spec.to_dict(),
        "d_params": state.discriminator.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "g_spec": state.generator.spec.to_dict() if state.generator is not None else None,
        "g_params": state.generator.state_dict() if state.generator is not None else None,
        "opt_g": state.opt_g.state_dict() if state.opt_g is not None else None,
        "step": state.step,
        "d_updates": state.d_updates,
        "g_updates": state.g_updates,
        "trace": state.trace,
        "torch_rng": torch.get_rng_state(),
    }
    torch.save(payload, path)


def checkpoint_restore(path) -> TrainState:
    """Rebuild a :class:`TrainState` and restore the global RNG stream."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises various unpickling/zip errors
        raise CheckpointIntegrityError(f"cannot read checkpoint {path!r}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointIntegrityError(f"{path!r} is not a training checkpoint")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {payload['format_version']} != supported {CHECKPOINT_VERSION}"
        )
    config = TrainConfig(**payload["config"])
    disc = build_discriminator(ArchitectureSpec.from_dict(payload["d_spec"]), payload["k"])
    disc.load_state_dict(payload["d_params"])
    opt_d = _adam(disc.parameters(), config)
    opt_d.load_state_dict(payload["opt_d"])
    gen = opt_g = None
    if payload["g_spec"] is not None:
        gen = build_generator(ArchitectureSpec.from_dict(payload["g_spec"]))
        gen.load_state_dict(payload["g_params"])
        opt_g = _adam(gen.parameters(), config)
        opt_g.load_state_dict(payload["opt_g"])
    torch.set_rng_state(payload["torch_rng"])
    return TrainState(
        algo=payload["algo"],
        k=payload["k"],
        config=config,
        discriminator=disc,
        generator=gen,
        opt_d=opt_d,
        opt_g=opt_g,
        step=payload["step"],
        d_updates=payload["d_updates"],
        g_updates=payload["g_updates"],
        trace=list(payload["trace"]),
    )


def write_trace(trace, path):
    """Metric trace as CSV; NaN cells are left empty."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace:
            cells = []
            for col in TRACE_COLUMNS:
                v = row.get(col, float("nan"))
                if isinstance(v, float) and math.isnan(v):
                    cells.append("")
                elif col in ("step", "epoch"):
                    cells.append(str(int(v)))
                else:
                    cells.append(repr(float(v)))
            fh.write(",".join(cells) + "\n")


def read_trace(path):
    """Inverse of :func:`write_trace`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            row = {}
            for col, cell in zip(header, cells):
                if cell == "":
                    row[col] = float("nan")
                elif col in ("step", "epoch"):
                    row[col] = int(cell)
                else:
                    row[col] = float(cell)
            rows.append(row)
    return rows
