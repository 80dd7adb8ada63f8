"""Command-line interface.

Subcommands::

    llp bag     --dataset blobs --bag-size 16 --seed 7 --out bags.jsonl [--binary 3,8]
    llp train   --algo llp-gan --manifest bags.jsonl --lambda-sup 1 --epochs 4 \\
                --seed 0 --out runs/demo
    llp oracle  --world world.json --check all
    llp run     --config exp.json
    llp sweep   --param lambda_sup --values 0.1,0.5,1,2,4 --config exp.json
    llp timing  --sizes 1000,4000,16000 --config exp.json

Every command is deterministic for a fixed seed apart from wallclock fields.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import equilibria
from .bags import load_manifest, persist_manifest, partition_into_bags, select_binary_subset
from .datasets import resolve_dataset
from .exceptions import LLPError
from .harness import load_config, run_experiment, specs_for_dataset, sweep, timing_profile
from .losses import normalize_posterior
from .networks import build_discriminator, build_generator
from .training import TrainConfig, checkpoint_save, steps_for_epochs, train_dllp, train_llp_gan, write_trace


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LLPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser():
    parser = argparse.ArgumentParser(prog="llp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("bag", help="partition a dataset into proportion-labeled bags")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bag-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", default=None, metavar="A,B")
    p.set_defaults(func=cmd_bag)

    p = sub.add_parser("train", help="train from a bag manifest")
    p.add_argument("--algo", choices=("llp-gan", "dllp"), default="llp-gan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--lambda-sup", type=float, default=1.0)
    p.add_argument("--lambda-ent", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--steps", type=int, default=None, help="override the epoch count")
    p.add_argument("--bags-per-step", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=3e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oracle", help="verify equilibrium theory on a tabular world")
    p.add_argument("--world", required=True)
    p.add_argument("--check", choices=("thm1", "lemma1", "thm2", "value", "all"), default="all")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one hyperparameter of an experiment config")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("timing", help="per-bag training time across sample sizes")
    p.add_argument("--sizes", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_timing)
    return parser


def cmd_bag(args):
    bundle = resolve_dataset(args.dataset)
    train = bundle.train
    if args.binary:
        a, b = (int(v) for v in args.binary.split(","))
        train = select_binary_subset(train, a, b)
    bags = partition_into_bags(train, args.bag_size, args.seed)
    persist_manifest(bags, args.out)
    print(f"wrote {len(bags)} bags of size {bags.bag_size} to {args.out}")
    return 0


def cmd_train(args):
    # train on the manifest's bags rather than re-partitioning
    bags = load_manifest(args.manifest)
    bundle = resolve_dataset(bags.source)
    total = args.steps or steps_for_epochs(len(bags), args.bags_per_step, args.epochs)
    config = TrainConfig(
        lambda_sup=args.lambda_sup,
        lambda_ent=args.lambda_ent,
        total_steps=total,
        bags_per_step=args.bags_per_step,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    d_spec, g_spec = specs_for_dataset(bundle, {})
    eval_set = (bundle.test.features, bundle.test.labels)
    if args.algo == "llp-gan":
        state = train_llp_gan(
            bundle.train.features,
            bags,
            config,
            discriminator=build_discriminator(d_spec, bags.k, seed=args.seed),
            generator=build_generator(g_spec, seed=args.seed + 1),
            eval_set=eval_set,
        )
    else:
        state = train_dllp(
            bundle.train.features,
            bags,
            config,
            model=build_discriminator(d_spec, bags.k, seed=args.seed),
            eval_set=eval_set,
        )
    os.makedirs(args.out, exist_ok=True)
    write_trace(state.trace, os.path.join(args.out, "trace.csv"))
    checkpoint_save(state, os.path.join(args.out, "final.ckpt"))
    final_error = [r["test_error"] for r in state.trace if not np.isnan(r["test_error"])]
    summary = {
        "algo": args.algo,
        "steps": state.step,
        "final_test_error": final_error[-1] if final_error else None,
    }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    print(f"trained {args.algo} for {state.step} steps; artifacts in {args.out}")
    return 0


def _check_thm1(world):
    closed = equilibria.optimal_discriminator_closed_form(world)
    numeric = equilibria.numeric_best_response(world)
    dev = float(np.max(np.abs(closed.rows - numeric.rows)))
    return dev <= 1e-4, f"max |closed - numeric| = {dev:.2e} (tol 1e-4)"


def _check_lemma1(world):
    if world.n_bags != 1:
        return None, "needs a single-bag world; skipped"
    numeric = equilibria.numeric_best_response(world)
    posterior = normalize_posterior(numeric.rows)
    alive = world.mixture_density > 0
    dev = float(np.max(np.abs(posterior[alive] - world.priors[0][None, :])))
    return dev <= 1e-4, f"max |posterior - prior| on support = {dev:.2e} (tol 1e-4)"


def _check_thm2(world):
    numeric = equilibria.numeric_generator_minimizer(world)
    target = equilibria.optimal_generator(world)
    tv = 0.5 * float(np.abs(numeric - target).sum())
    return tv <= 1e-3, f"TV(numeric minimizer, mixture/n) = {tv:.2e} (tol 1e-3)"


def _check_value(world):
    eq = equilibria.equilibrium_value(world)
    at_opt = equilibria.generator_objective(world, equilibria.optimal_generator(world))
    dev = abs(eq.value - at_opt)
    rng = np.random.default_rng(0)
    closed_dev = 0.0
    posterior, _ = equilibria.classifier_posterior_and_weights(world)
    for _ in range(10):
        pg = rng.dirichlet(np.ones(world.support_size))
        closed = equilibria.optimal_discriminator_closed_form(world, pg)
        closed_dev = max(
            closed_dev, float(np.max(np.abs(normalize_posterior(closed.rows) - posterior)))
        )
    ok = dev <= 1e-9 and closed_dev <= 1e-9
    return ok, (
        f"|equilibrium value - C(G*)| = {dev:.2e}, "
        f"max p_g-dependence of the classifier = {closed_dev:.2e} (tol 1e-9)"
    )


def cmd_oracle(args):
    world = equilibria.load_world(args.world)
    checks = {
        "thm1": _check_thm1,
        "lemma1": _check_lemma1,
        "thm2": _check_thm2,
        "value": _check_value,
    }
    names = list(checks) if args.check == "all" else [args.check]
    failed = False
    for name in names:
        ok, detail = checks[name](world)
        if ok is None:
            print(f"SKIP {name}: {detail}")
            continue
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed |= not ok
    return 1 if failed else 0


def cmd_run(args):
    report = run_experiment(args.config, out_dir=args.out)
    print(
        f"{report.algorithm} on {report.dataset}: final error "
        f"{report.final_error_mean:.2f}% (std {report.final_error_std:.2f}) "
        f"over seeds {report.seeds}"
    )
    return 0


def cmd_sweep(args):
    values = [float(v) for v in args.values.split(",")]
    param = args.param
    if param == "bag_size":
        values = [int(v) for v in values]
    report = sweep(args.config, param, values, out_dir=args.out)
    for label, err in report.final_errors.items():
        print(f"{label}: final error {err:.2f}%")
    return 0


def cmd_timing(args):
    sizes = [int(v) for v in args.sizes.split(",")]
    profile = timing_profile(args.config, sizes)
    for size, log_m, t in zip(profile.sizes, profile.log_sizes, profile.per_bag_seconds):
        print(f"m={size:>8d}  ln m={log_m:6.3f}  per-bag {t * 1e3:8.3f} ms")
    print(
        f"fit: t = {profile.fit_slope:.3e} * ln m + {profile.fit_intercept:.3e},  "
        f"R^2 = {profile.r_squared:.3f}"
    )
    out = args.out or (load_config(args.config).get("out_dir"))
    if out:
        os.makedirs(out, exist_ok=True)
        profile.save(os.path.join(out, "timing.json"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
