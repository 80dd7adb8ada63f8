"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line with the measured quantity and its
tolerance, so ``pytest -s tests/test_acceptance.py`` reads as a checklist.
The MNIST band is informational: it skips without local data and never
blocks the suite.
"""

import math
import os
import time

import numpy as np
import pytest
import torch

from conftest import trace_rows_equal
from llpgan.bags import partition_into_bags
from llpgan.datasets import load_mnist, make_blobs
from llpgan.equilibria import (
    equilibrium_value,
    numeric_best_response,
    numeric_generator_minimizer,
    optimal_discriminator_closed_form,
    optimal_generator,
    classifier_posterior_and_weights,
    random_world,
    TabularWorld,
)
from llpgan.harness import error_rate
from llpgan.losses import (
    exact_proportion_term,
    feature_matching_loss,
    instance_entropy,
    llp_gan_disc_loss,
    normalize_posterior,
    proportion_ce,
)
from llpgan.networks import (
    build_discriminator,
    build_generator,
    mlp_discriminator_spec,
    mlp_generator_spec,
    mnist_discriminator_spec,
    mnist_generator_spec,
    overparam_softmax,
)
from llpgan.training import TrainConfig, predict_labels, train_dllp, train_llp_gan


def report(name, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def random_simplex(rng, shape, floor=0.0):
    rows = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    if floor:
        rows = np.clip(rows, floor, None)
        rows /= rows.sum(axis=-1, keepdims=True)
    return rows


class TestOracleCriteria:
    def test_theorem1_numeric_matches_closed_form(self):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(20):
            world = random_world(
                rng,
                support_size=int(rng.integers(1, 6)),
                n_bags=int(rng.integers(1, 4)),
                k=int(rng.integers(2, 4)),
            )
            closed = optimal_discriminator_closed_form(world)
            numeric = numeric_best_response(world)
            worst = max(worst, float(np.max(np.abs(closed.rows - numeric.rows))))
        elapsed = time.perf_counter() - t0
        report(
            "theorem-1 oracle equivalence",
            worst <= 1e-4 and elapsed < 60.0,
            f"20 worlds, max deviation {worst:.2e} (tol 1e-4), {elapsed:.1f}s (< 60s)",
        )

    def test_lemma1_single_bag_posterior_equals_prior(self):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(3):
            world = random_world(rng, 4, 1, 3, with_generator=False)
            for _ in range(3):
                pg = rng.dirichlet(np.ones(4))
                best = numeric_best_response(world, generator_density=pg)
                posterior = normalize_posterior(best.rows)
                alive = world.mixture_density > 0
                worst = max(
                    worst,
                    float(np.max(np.abs(posterior[alive] - world.priors[0][None, :]))),
                )
        report(
            "lemma-1 single-bag consistency",
            worst <= 1e-4,
            f"3 worlds x 3 generator densities, max |posterior - prior| {worst:.2e} (tol 1e-4)",
        )

    def test_classifier_is_generator_free(self):
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(5):
            world = random_world(rng, 5, 3, 3, with_generator=False)
            target, _ = classifier_posterior_and_weights(world)
            for _ in range(10):
                pg = rng.dirichlet(np.ones(5))
                closed = optimal_discriminator_closed_form(world, generator_density=pg)
                worst = max(
                    worst, float(np.max(np.abs(normalize_posterior(closed.rows) - target)))
                )
        report(
            "weighted-prior classifier is p_g-independent",
            worst <= 1e-9,
            f"5 worlds x 10 generator densities, max deviation {worst:.2e} (tol 1e-9)",
        )

    def test_theorem2_generator_optimum(self):
        rng = np.random.default_rng(13)
        worst_tv = 0.0
        for _ in range(10):
            world = random_world(
                rng,
                support_size=int(rng.integers(2, 6)),
                n_bags=int(rng.integers(1, 4)),
                k=int(rng.integers(2, 4)),
                with_generator=False,
            )
            numeric = numeric_generator_minimizer(world)
            tv = 0.5 * float(np.abs(numeric - optimal_generator(world)).sum())
            worst_tv = max(worst_tv, tv)
        single = TabularWorld(bag_densities=[[1.0]], priors=[[0.5, 0.5]])
        divergence = equilibrium_value(single).divergence
        div_dev = abs(divergence - (-2.0 * math.log(2.0)))
        report(
            "theorem-2 optimal generator",
            worst_tv <= 1e-3 and div_dev <= 1e-12,
            f"10 worlds, worst TV {worst_tv:.2e} (tol 1e-3); "
            f"n=1 divergence deviation {div_dev:.1e} (tol 1e-12)",
        )


class TestLossCriteria:
    def test_jensen_lower_bound_dominated(self):
        rng = np.random.default_rng(14)
        violations = 0
        worst_gap = -math.inf
        single_dev = 0.0
        for batch in range(1000):
            k = int(rng.integers(2, 4))
            n_bags = int(rng.integers(1, 4))
            single = batch % 5 == 0  # every fifth batch uses single-instance bags
            priors = random_simplex(rng, (n_bags, k))
            blocks = [
                random_simplex(rng, (1 if single else int(rng.integers(1, 6)), k + 1))
                for _ in range(n_bags)
            ]
            fakes = random_simplex(rng, (2, k + 1))
            lb = llp_gan_disc_loss(blocks, fakes, priors, 1.0).extras["lb"]
            exact = float(exact_proportion_term(blocks, priors))
            gap = lb - exact
            worst_gap = max(worst_gap, gap)
            if gap > 0:
                violations += 1
            if single:
                single_dev = max(single_dev, abs(gap))
        report(
            "Jensen bound dominance",
            violations == 0 and single_dev <= 1e-9,
            f"1000 batches, violations {violations}, worst gap {worst_gap:.2e}; "
            f"single-instance equality deviation {single_dev:.2e} (tol 1e-9)",
        )

    def test_gradient_checks(self):
        rng = np.random.default_rng(15)
        worst = {"proportion_ce": 0.0, "instance_entropy": 0.0,
                 "llp_gan_disc_loss": 0.0, "feature_matching_loss": 0.0}

        def central(fn, x, h=1e-6):
            grad = np.zeros_like(x)
            flat, xf = grad.reshape(-1), x.reshape(-1)
            for i in range(xf.size):
                orig = xf[i]
                xf[i] = orig + h
                up = fn()
                xf[i] = orig - h
                down = fn()
                xf[i] = orig
                flat[i] = (up - down) / (2 * h)
            return grad

        def rel(analytic, numeric):
            # relative deviation, with an absolute floor for exactly-zero entries
            return float(
                np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-2))
            )

        for _ in range(50):
            p = random_simplex(rng, (2, 3), floor=1e-3)
            q = random_simplex(rng, (2, 3), floor=1e-3)
            qt = torch.tensor(q, requires_grad=True)
            proportion_ce(torch.tensor(p), qt).backward()
            worst["proportion_ce"] = max(
                worst["proportion_ce"],
                rel(qt.grad.numpy(), central(lambda: float(proportion_ce(p, q)), q)),
            )

            e = random_simplex(rng, (3, 3), floor=1e-3)
            et = torch.tensor(e, requires_grad=True)
            instance_entropy(et).backward()
            worst["instance_entropy"] = max(
                worst["instance_entropy"],
                rel(et.grad.numpy(), central(lambda: float(instance_entropy(e)), e)),
            )

            priors = random_simplex(rng, (2, 3), floor=1e-2)
            blocks = [random_simplex(rng, (2, 4), floor=1e-2) for _ in range(2)]
            fake = random_simplex(rng, (3, 4), floor=1e-2)
            tensors = [torch.tensor(b, requires_grad=True) for b in blocks]
            fake_t = torch.tensor(fake, requires_grad=True)
            llp_gan_disc_loss(tensors, fake_t, priors, 1.0).value.backward()

            def gan_value():
                return float(llp_gan_disc_loss(blocks, fake, priors, 1.0))

            dev = max(
                rel(t.grad.numpy(), central(gan_value, b, h=3e-7))
                for t, b in zip(tensors, blocks)
            )
            dev = max(dev, rel(fake_t.grad.numpy(), central(gan_value, fake, h=3e-7)))
            worst["llp_gan_disc_loss"] = max(worst["llp_gan_disc_loss"], dev)

            a, b = rng.normal(size=5), rng.normal(size=5)
            bt = torch.tensor(b, requires_grad=True)
            feature_matching_loss(torch.tensor(a), bt).backward()
            worst["feature_matching_loss"] = max(
                worst["feature_matching_loss"],
                rel(bt.grad.numpy(),
                    central(lambda: float(feature_matching_loss(a, b)), b)),
            )

        bad = {k: v for k, v in worst.items() if v >= 1e-4}
        report(
            "analytic gradients vs central differences",
            not bad,
            "50 inputs per loss, worst relative errors "
            + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
            + " (tol 1e-4)",
        )

    def test_overparameterized_softmax(self):
        rng = np.random.default_rng(16)
        logits = rng.uniform(-30.0, 30.0, size=(500, 10))
        logits[:3] = np.array([[30.0] * 10, [-30.0] * 10, [0.0] * 10])
        ours = overparam_softmax(logits)
        padded = np.concatenate([logits, np.zeros((len(logits), 1))], axis=1)
        shifted = padded - padded.max(axis=1, keepdims=True)
        std = np.exp(shifted)
        std /= std.sum(axis=1, keepdims=True)
        dev = float(np.max(np.abs(ours - std)))
        sum_dev = float(np.max(np.abs(ours.sum(axis=1) - 1.0)))
        report(
            "over-parameterized softmax",
            dev <= 1e-6 and sum_dev <= 1e-6,
            f"500 rows incl magnitude-30 extremes, max deviation {dev:.2e}, "
            f"row-sum deviation {sum_dev:.2e} (tol 1e-6)",
        )


class TestEndToEnd:
    def test_desk_scale_blobs_run(self):
        t0 = time.perf_counter()
        bundle = make_blobs(n_samples=4000, k=4, seed=0)
        bayes = bundle.bayes_error()
        bags = partition_into_bags(bundle.train, 16, seed=0)
        eval_set = (bundle.test.features, bundle.test.labels)

        disc = build_discriminator(mlp_discriminator_spec(2, 4), 4, seed=0)
        gen = build_generator(mlp_generator_spec(2), seed=1)
        gan_state = train_llp_gan(
            bundle.train.features, bags, TrainConfig(total_steps=1000, seed=0),
            discriminator=disc, generator=gen, eval_set=eval_set,
        )
        gan_err = error_rate(
            predict_labels(gan_state.discriminator, bundle.test.features, "llp-gan"),
            bundle.test.labels,
        )

        model = build_discriminator(mlp_discriminator_spec(2, 4), 4, seed=0)
        dllp_state = train_dllp(
            bundle.train.features, bags, TrainConfig(total_steps=1000, seed=0),
            model=model, eval_set=eval_set,
        )
        dllp_err = error_rate(
            predict_labels(dllp_state.discriminator, bundle.test.features, "dllp"),
            bundle.test.labels,
        )
        elapsed = time.perf_counter() - t0
        report(
            "desk-scale end-to-end run",
            gan_err <= 10.0 and dllp_err <= 10.0 and elapsed < 600.0 and bayes < 0.5,
            f"adversarial {gan_err:.2f}%, baseline {dllp_err:.2f}% (tol 10%), "
            f"Bayes oracle {bayes:.2f}% (~0), {elapsed:.0f}s (< 600s)",
        )

    @pytest.mark.mnist
    def test_mnist_sanity_band_informational(self):
        try:
            bundle = load_mnist(subset=10_000, seed=0)
        except Exception as exc:
            pytest.skip(f"informational MNIST band skipped: {exc}")
        bags = partition_into_bags(bundle.train, 16, seed=0)
        config = TrainConfig(
            total_steps=50 * math.ceil(len(bags) / 4), bags_per_step=4, seed=0
        )
        disc = build_discriminator(mnist_discriminator_spec(10), 10, seed=0)
        gen = build_generator(mnist_generator_spec(100), seed=1)
        state = train_llp_gan(
            bundle.train.features, bags, config, discriminator=disc, generator=gen,
            eval_set=(bundle.test.features, bundle.test.labels),
        )
        err = error_rate(
            predict_labels(state.discriminator, bundle.test.features, "llp-gan"),
            bundle.test.labels,
        )
        print(f"\nINFO mnist sanity band: test error {err:.2f}% after 50 epochs (band 10%)")
        if err > 10.0:
            pytest.xfail(f"informational band exceeded: {err:.2f}% > 10%")

    def test_determinism_of_reruns(self, blobs2):
        bundle, bags = blobs2
        traces = []
        for _ in range(2):
            disc = build_discriminator(mlp_discriminator_spec(2, 2), 2, seed=8)
            gen = build_generator(mlp_generator_spec(2), seed=9)
            state = train_llp_gan(
                bundle.train.features, bags, TrainConfig(total_steps=25, seed=8),
                discriminator=disc, generator=gen,
                eval_set=(bundle.test.features, bundle.test.labels),
            )
            traces.append(state.trace)
        train_same = trace_rows_equal(traces[0], traces[1])

        rng = np.random.default_rng(17)
        world = random_world(rng, 4, 2, 2)
        rows_a = numeric_best_response(world, seed=5).rows
        rows_b = numeric_best_response(world, seed=5).rows
        oracle_same = np.array_equal(rows_a, rows_b)
        report(
            "rerun determinism",
            train_same and oracle_same,
            f"training traces identical (ex wallclock): {train_same}; "
            f"oracle rows bit-identical: {oracle_same}",
        )
