"""Evaluation metrics, experiment orchestration, sweeps, and timing studies.

Experiment configs are plain JSON objects::

    {"dataset": "blobs", "algo": "llp-gan", "bag_size": 16,
     "lambda_sup": 1.0, "lambda_ent": 0.0, "epochs": 4,
     "seeds": [1, 2, 3], "out_dir": "runs/demo", "plots": false}

Optional keys: ``bags_per_step``, ``learning_rate``, ``hidden``,
``generator_hidden``, ``noise_dim``, ``fake_batch``, ``steps`` (overrides
``epochs``). Each run writes ``report.json`` plus one ``curves_<seed>.csv``
per seed; reports are a pure function of (config, seeds) apart from the
wallclock fields.
"""

from __future__ import annotations

import json
import os
import statistics
from dataclasses import dataclass, field, asdict

import numpy as np

from .bags import partition_into_bags
from .datasets import resolve_dataset
from .exceptions import ConfigurationError
from .networks import (
    build_discriminator,
    build_generator,
    cifar10_discriminator_spec,
    cifar10_generator_spec,
    mlp_discriminator_spec,
    mlp_generator_spec,
    mnist_discriminator_spec,
    mnist_generator_spec,
)
from .training import (
    TrainConfig,
    steps_for_epochs,
    train_dllp,
    train_llp_gan,
    write_trace,
)

ALGOS = ("llp-gan", "dllp")


def error_rate(predictions, truth):
    """Percentage of mismatched labels."""
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ConfigurationError(
            f"predictions {predictions.shape} vs truth {truth.shape}"
        )
    if predictions.size == 0:
        raise ConfigurationError("cannot score empty prediction arrays")
    return 100.0 * float(np.mean(predictions != truth))


@dataclass
class ExperimentReport:
    """Aggregated outcome of one experiment config across seeds."""

    dataset: str
    algorithm: str
    bag_size: int
    lambda_sup: float
    lambda_ent: float
    seeds: list
    epochs: int
    curves: dict = field(default_factory=dict)  # label -> per-epoch test error
    final_errors: dict = field(default_factory=dict)
    final_error_mean: float = float("nan")
    final_error_std: float = 0.0
    per_bag_wallclock: dict = field(default_factory=dict)
    lambda_values: list | None = None
    partial: bool = False  # set when a training abort interrupted the seed loop

    def __post_init__(self):
        for label, curve in self.curves.items():
            if any(not 0.0 <= v <= 100.0 for v in curve):
                raise ConfigurationError(f"curve {label} has error rates outside [0, 100]")
        if self.final_error_std < 0:
            raise ConfigurationError("error deviation must be >= 0")

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)


def load_config(config):
    if isinstance(config, dict):
        return dict(config)
    with open(config, "r", encoding="utf-8") as fh:
        return json.load(fh)


def specs_for_dataset(bundle, cfg):
    """Model specs for a dataset: MLPs for flat features, conv presets for images."""
    shape = bundle.train.features.shape[1:]
    k = bundle.train.k
    noise_dim = cfg.get("noise_dim")
    if len(shape) == 1:
        return (
            mlp_discriminator_spec(shape[0], k, tuple(cfg.get("hidden", (64, 64)))),
            mlp_generator_spec(
                shape[0], noise_dim or 16, tuple(cfg.get("generator_hidden", (64, 64)))
            ),
        )
    if shape == (1, 28, 28):
        return mnist_discriminator_spec(k), mnist_generator_spec(noise_dim or 100)
    if shape == (3, 32, 32):
        return cifar10_discriminator_spec(k), cifar10_generator_spec(noise_dim or 100)
    raise ConfigurationError(f"no preset architecture for feature shape {shape}")


def train_from_config(cfg, seed, bundle=None):
    """One training run for a config and seed; returns (state, bags, bundle)."""
    cfg = load_config(cfg)
    algo = cfg.get("algo", "llp-gan")
    if algo not in ALGOS:
        raise ConfigurationError(f"algo must be one of {ALGOS}, got {algo!r}")
    bundle = bundle or resolve_dataset(cfg.get("dataset", "blobs"))
    bags = partition_into_bags(bundle.train, cfg.get("bag_size", 16), seed)
    if "steps" in cfg:
        total = int(cfg["steps"])
    else:
        total = steps_for_epochs(len(bags), cfg.get("bags_per_step", 4), cfg.get("epochs", 1))
    config = TrainConfig(
        lambda_sup=cfg.get("lambda_sup", 1.0),
        lambda_ent=cfg.get("lambda_ent", 0.0),
        total_steps=total,
        bags_per_step=cfg.get("bags_per_step", 4),
        fake_batch=cfg.get("fake_batch"),
        learning_rate=cfg.get("learning_rate", 3e-4),
        seed=seed,
    )
    d_spec, g_spec = specs_for_dataset(bundle, cfg)
    eval_set = (bundle.test.features, bundle.test.labels)
    if algo == "llp-gan":
        state = train_llp_gan(
            bundle.train.features,
            bags,
            config,
            discriminator=build_discriminator(d_spec, bundle.train.k, seed=seed),
            generator=build_generator(g_spec, seed=seed + 1),
            eval_set=eval_set,
        )
    else:
        state = train_dllp(
            bundle.train.features,
            bags,
            config,
            model=build_discriminator(d_spec, bundle.train.k, seed=seed),
            eval_set=eval_set,
        )
    return state, bags, bundle


def epoch_error_curve(trace):
    """Test errors at epoch boundaries, in epoch order."""
    return [row["test_error"] for row in trace if not np.isnan(row["test_error"])]


def _per_bag_time(trace, bags_per_step):
    steps = [row["wallclock_s"] for row in trace]
    return statistics.median(steps) / bags_per_step if steps else float("nan")


def run_experiment(config, out_dir=None) -> ExperimentReport:
    """Bag, train, and evaluate per seed; aggregate and write artifacts."""
    cfg = load_config(config)
    seeds = list(cfg.get("seeds", [0]))
    out_dir = out_dir or cfg.get("out_dir")
    bundle = resolve_dataset(cfg.get("dataset", "blobs"))
    report = ExperimentReport(
        dataset=cfg.get("dataset", "blobs"),
        algorithm=cfg.get("algo", "llp-gan"),
        bag_size=cfg.get("bag_size", 16),
        lambda_sup=cfg.get("lambda_sup", 1.0),
        lambda_ent=cfg.get("lambda_ent", 0.0),
        seeds=seeds,
        epochs=cfg.get("epochs", 1),
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for seed in seeds:
        state, _, _ = train_from_config(cfg, seed, bundle=bundle)
        label = f"seed={seed}"
        report.curves[label] = epoch_error_curve(state.trace)
        report.final_errors[label] = report.curves[label][-1]
        report.per_bag_wallclock[label] = _per_bag_time(state.trace, state.config.bags_per_step)
        if out_dir:
            write_trace(state.trace, os.path.join(out_dir, f"curves_{seed}.csv"))
    finals = list(report.final_errors.values())
    report.final_error_mean = float(np.mean(finals))
    report.final_error_std = float(statistics.stdev(finals)) if len(finals) > 1 else 0.0
    if out_dir:
        report.save(os.path.join(out_dir, "report.json"))
        if cfg.get("plots"):
            _plot_curves(report, os.path.join(out_dir, "curves.png"))
    return report


def sweep(config, param, values, out_dir=None) -> ExperimentReport:
    """Repeat an experiment across values of one hyperparameter.

    One curve per value lands in a single report (averaged over the config's
    seeds at each value).
    """
    if param not in ("lambda_sup", "lambda_ent", "bag_size", "learning_rate"):
        raise ConfigurationError(f"unsupported sweep parameter {param!r}")
    cfg = load_config(config)
    out_dir = out_dir or cfg.get("out_dir")
    seeds = list(cfg.get("seeds", [0]))
    report = ExperimentReport(
        dataset=cfg.get("dataset", "blobs"),
        algorithm=cfg.get("algo", "llp-gan"),
        bag_size=cfg.get("bag_size", 16),
        lambda_sup=cfg.get("lambda_sup", 1.0),
        lambda_ent=cfg.get("lambda_ent", 0.0),
        seeds=seeds,
        epochs=cfg.get("epochs", 1),
        lambda_values=list(values),
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    for value in values:
        sub = dict(cfg)
        sub[param] = value
        curves = []
        for seed in seeds:
            state, _, _ = train_from_config(sub, seed)
            curves.append(epoch_error_curve(state.trace))
            if out_dir:
                write_trace(
                    state.trace, os.path.join(out_dir, f"curves_{param}={value}_{seed}.csv")
                )
        mean_curve = np.mean(np.asarray(curves), axis=0)
        label = f"{param}={value}"
        report.curves[label] = [float(v) for v in mean_curve]
        report.final_errors[label] = report.curves[label][-1]
    finals = list(report.final_errors.values())
    report.final_error_mean = float(np.mean(finals))
    report.final_error_std = float(statistics.stdev(finals)) if len(finals) > 1 else 0.0
    if out_dir:
        report.save(os.path.join(out_dir, "report.json"))
        if cfg.get("plots"):
            _plot_curves(report, os.path.join(out_dir, "sweep.png"))
    return report


@dataclass
class TimingProfile:
    """Per-bag step times across training-set sizes, with a log-linear fit."""

    sizes: list
    log_sizes: list
    per_bag_seconds: list
    fit_slope: float
    fit_intercept: float
    r_squared: float

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)


def timing_profile(config, sizes, warmup=5, measured=20) -> TimingProfile:
    """Median warm per-bag step time at each sample size, plus (ln m, t) fit."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3:
        raise ConfigurationError("timing profile needs at least 3 sample sizes")
    cfg = load_config(config)
    cfg.pop("epochs", None)
    # throwaway run so allocator/thread spin-up is not billed to the first size
    warm_cfg = dict(cfg)
    warm_cfg["dataset"] = _with_size(cfg.get("dataset", "blobs"), min(sizes))
    warm_cfg["steps"] = warmup
    train_from_config(warm_cfg, cfg.get("seeds", [0])[0])
    times = []
    for size in sizes:
        sub = dict(cfg)
        sub["dataset"] = _with_size(cfg.get("dataset", "blobs"), size)
        sub["steps"] = warmup + measured
        bundle = resolve_dataset(sub["dataset"])
        state, _, _ = train_from_config(sub, cfg.get("seeds", [0])[0], bundle=bundle)
        warm = [row["wallclock_s"] for row in state.trace[warmup:]]
        times.append(statistics.median(warm) / state.config.bags_per_step)
    logs = np.log(np.asarray(sizes, dtype=np.float64))
    slope, intercept = np.polyfit(logs, times, 1)
    predicted = slope * logs + intercept
    ss_res = float(np.sum((times - predicted) ** 2))
    ss_tot = float(np.sum((times - np.mean(times)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return TimingProfile(
        sizes=sizes,
        log_sizes=[float(v) for v in logs],
        per_bag_seconds=[float(t) for t in times],
        fit_slope=float(slope),
        fit_intercept=float(intercept),
        r_squared=float(min(max(r2, 0.0), 1.0)),
    )


def _with_size(dataset_name, size):
    kind, _, param_text = dataset_name.partition(":")
    params = dict(
        p.split("=", 1) for p in param_text.split(",") if "=" in p
    )
    params["n"] = str(size)
    return kind + ":" + ",".join(f"{k}={v}" for k, v in sorted(params.items()))


def entropy_trace_report(state_or_trace, path=None):
    """Per-epoch summed instance entropy from a baseline run's trace."""
    trace = state_or_trace.trace if hasattr(state_or_trace, "trace") else state_or_trace
    rows = [
        (int(row["epoch"]), row["entropy"])
        for row in trace
        if "entropy" in row and not np.isnan(row["entropy"])
    ]
    if not rows:
        raise ConfigurationError("trace has no entropy column; was this a baseline run?")
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,entropy\n")
            for epoch, value in rows:
                fh.write(f"{epoch},{value!r}\n")
    return rows


def _plot_curves(report: ExperimentReport, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in report.curves.items():
        ax.plot(range(1, len(curve) + 1), curve, marker="o", label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test error (%)")
    ax.set_title(f"{report.dataset} / {report.algorithm} / bag {report.bag_size}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
