import math

import numpy as np
import pytest
import torch

from conftest import trace_rows_equal
from llpgan.bags import LabeledDataset, partition_into_bags
from llpgan.datasets import make_blobs
from llpgan.exceptions import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigurationError,
    TrainingDivergedError,
)
from llpgan.networks import (
    build_discriminator,
    build_generator,
    mlp_discriminator_spec,
    mlp_generator_spec,
)
from llpgan.training import (
    TrainConfig,
    bag_ids_for_step,
    checkpoint_restore,
    checkpoint_save,
    predict_labels,
    resolve_fake_batch,
    steps_per_epoch,
    train_dllp,
    train_llp_gan,
)


def fresh_models(k=2, seed=3):
    return (
        build_discriminator(mlp_discriminator_spec(2, k), k, seed=seed),
        build_generator(mlp_generator_spec(2), seed=seed + 1),
    )


def run_gan(bundle, bags, steps, seed=3, state=None, cap=None, **cfg):
    config = TrainConfig(total_steps=steps, seed=seed, **cfg)
    eval_set = (bundle.test.features, bundle.test.labels)
    if state is not None:
        return train_llp_gan(bundle.train.features, bags, config, state=state,
                             eval_set=eval_set, steps=cap)
    d, g = fresh_models(bags.k, seed)
    return train_llp_gan(bundle.train.features, bags, config, discriminator=d, generator=g,
                         eval_set=eval_set, steps=cap)


class TestLLPGanLoop:
    def test_single_step_changes_discriminator(self, blobs2):
        bundle, bags = blobs2
        d, g = fresh_models()
        before = [p.detach().clone() for p in d.parameters()]
        train_llp_gan(bundle.train.features, bags, TrainConfig(total_steps=1, seed=0),
                      discriminator=d, generator=g)
        assert any(not torch.equal(a, b) for a, b in zip(before, d.parameters()))

    def test_blobs_two_class_converges(self, trained_llp_gan):
        bundle, bags, state = trained_llp_gan
        # oracle: nearest-center Bayes rule is essentially perfect on this mixture
        assert bundle.bayes_error() < 0.5
        pred = predict_labels(state.discriminator, bundle.train.features, "llp-gan")
        train_err = 100.0 * np.mean(pred != bundle.train.labels)
        assert train_err < 10.0

    def test_exactly_one_update_per_network_per_iteration(self, trained_llp_gan):
        _, _, state = trained_llp_gan
        assert state.d_updates == state.step
        assert state.g_updates == state.step

    def test_same_seed_identical_traces(self, blobs2):
        bundle, bags = blobs2
        a = run_gan(bundle, bags, 15)
        b = run_gan(bundle, bags, 15)
        assert trace_rows_equal(a.trace, b.trace)

    def test_fresh_fake_batch_of_m_each_iteration(self, blobs2):
        bundle, bags = blobs2
        d, g = fresh_models()
        sizes = []
        inputs = []

        def spy(module, args, output):
            sizes.append(args[0].shape[0])
            inputs.append(args[0].detach().clone())

        g.register_forward_hook(spy)
        cfg = TrainConfig(total_steps=3, seed=0, fake_batch=9)
        train_llp_gan(bundle.train.features, bags, cfg, discriminator=d, generator=g)
        assert resolve_fake_batch(cfg, bags) == 9
        # the generator runs twice per step (discriminator step, then its own)
        assert sizes == [9] * 6
        per_step = [inputs[i] for i in range(0, 6, 2)]
        assert not torch.equal(per_step[0], per_step[1])
        assert not torch.equal(per_step[1], per_step[2])

    def test_default_fake_batch_matches_real_batch(self, blobs2):
        _, bags = blobs2
        cfg = TrainConfig(total_steps=1, bags_per_step=4)
        assert resolve_fake_batch(cfg, bags) == 4 * bags.bag_size

    def test_literal_fake_batch_covers_all_instances(self, blobs2):
        _, bags = blobs2
        cfg = TrainConfig(total_steps=1, literal_fake_batch=True)
        assert resolve_fake_batch(cfg, bags) == bags.instance_count()

    def test_disc_objective_ascends_early(self, trained_llp_gan):
        _, _, state = trained_llp_gan
        totals = [
            row["l_real"] + row["l_fake"] + row["lb_sup"] for row in state.trace[:100]
        ]
        window = 20
        smoothed = [np.mean(totals[i : i + window]) for i in range(0, 100 - window, window)]
        assert smoothed[-1] > smoothed[0]

    def test_divergence_guard_aborts_with_snapshot(self, blobs2):
        bundle, bags = blobs2
        d, g = fresh_models()
        features = bundle.train.features.copy()
        features[:] = np.inf
        with pytest.raises(TrainingDivergedError) as err:
            train_llp_gan(features, bags, TrainConfig(total_steps=3, seed=0),
                          discriminator=d, generator=g)
        assert err.value.snapshot is not None
        assert err.value.step == 0


class TestLabelSecrecy:
    def test_bag_types_carry_no_labels(self, blobs2):
        _, bags = blobs2
        assert not hasattr(bags, "labels")
        assert all(not hasattr(b, "labels") for b in bags.bags)

    def test_training_runs_after_labels_are_destroyed(self):
        rng = np.random.default_rng(0)
        features = rng.normal(size=(64, 2))
        labels = rng.integers(0, 2, size=64)
        ds = LabeledDataset(features, labels, k=2, name="secrecy")
        bags = partition_into_bags(ds, 16, seed=2)
        del ds, labels  # only features and the proportion manifest remain reachable
        d, g = fresh_models()
        state = train_llp_gan(features, bags, TrainConfig(total_steps=2, seed=0),
                              discriminator=d, generator=g)
        assert state.step == 2

    def test_train_signatures_accept_no_labels(self):
        import inspect

        for fn in (train_llp_gan, train_dllp):
            assert "labels" not in inspect.signature(fn).parameters


class TestDLLPLoop:
    def test_blobs_converges(self, trained_dllp):
        bundle, bags, state = trained_dllp
        pred = predict_labels(state.discriminator, bundle.train.features, "dllp")
        assert 100.0 * np.mean(pred != bundle.train.labels) < 10.0

    def test_entropy_trace_nonnegative(self, trained_dllp):
        _, _, state = trained_dllp
        logged = [r["entropy"] for r in state.trace if not math.isnan(r["entropy"])]
        assert logged and all(v >= 0 for v in logged)

    def test_single_bag_loss_approaches_prior_entropy(self):
        bundle = make_blobs(n_samples=64, k=2, seed=5)
        bags = partition_into_bags(bundle.train, 64, seed=0)
        assert len(bags) == 1
        prior = bags.bags[0].proportions.values
        model = build_discriminator(mlp_discriminator_spec(2, 2), 2, seed=1)
        state = train_dllp(bundle.train.features, bags,
                           TrainConfig(total_steps=400, bags_per_step=1, seed=1), model=model)
        entropy = -float(np.sum(prior * np.log(np.clip(prior, 1e-12, None))))
        assert abs(state.trace[-1]["dllp"] - entropy) < 0.05

    def test_same_seed_identical_traces(self, blobs2):
        bundle, bags = blobs2
        runs = []
        for _ in range(2):
            model = build_discriminator(mlp_discriminator_spec(2, 2), 2, seed=3)
            runs.append(train_dllp(bundle.train.features, bags,
                                   TrainConfig(total_steps=12, seed=3), model=model))
        assert trace_rows_equal(runs[0].trace, runs[1].trace)


class TestSchedule:
    def test_whole_bags_per_step(self, blobs2):
        _, bags = blobs2
        spe = steps_per_epoch(len(bags), 4)
        seen = []
        for step in range(spe):
            _, ids = bag_ids_for_step(0, step, len(bags), 4)
            seen.extend(ids.tolist())
        assert sorted(seen) == list(range(len(bags)))

    def test_epoch_has_own_shuffle(self, blobs2):
        _, bags = blobs2
        _, first = bag_ids_for_step(0, 0, len(bags), 4)
        spe = steps_per_epoch(len(bags), 4)
        _, second = bag_ids_for_step(0, spe, len(bags), 4)
        assert not np.array_equal(first, second)

    def test_schedule_pure_function_of_seed_and_step(self):
        a = bag_ids_for_step(5, 13, 40, 4)
        b = bag_ids_for_step(5, 13, 40, 4)
        assert a[0] == b[0] and np.array_equal(a[1], b[1])


class TestCheckpoints:
    def test_resume_matches_uninterrupted(self, blobs2, tmp_path):
        bundle, bags = blobs2
        full = run_gan(bundle, bags, 12, seed=9)
        half = run_gan(bundle, bags, 12, seed=9, cap=6)
        path = tmp_path / "half.ckpt"
        checkpoint_save(half, path)
        restored = checkpoint_restore(path)
        assert restored.step == 6
        resumed = train_llp_gan(
            bundle.train.features, bags, restored.config, state=restored,
            eval_set=(bundle.test.features, bundle.test.labels),
        )
        assert trace_rows_equal(full.trace, resumed.trace)

    def test_round_trip_preserves_counters_and_params(self, trained_dllp, tmp_path):
        _, _, state = trained_dllp
        path = tmp_path / "st.ckpt"
        checkpoint_save(state, path)
        restored = checkpoint_restore(path)
        assert restored.step == state.step
        assert restored.d_updates == state.d_updates
        for a, b in zip(state.discriminator.state_dict().values(),
                        restored.discriminator.state_dict().values()):
            assert torch.equal(a, b)

    def test_corrupted_file_rejected(self, trained_dllp, tmp_path):
        _, _, state = trained_dllp
        path = tmp_path / "bad.ckpt"
        checkpoint_save(state, path)
        path.write_bytes(path.read_bytes()[: path.stat().st_size // 2])
        with pytest.raises(CheckpointIntegrityError):
            checkpoint_restore(path)

    def test_periodic_checkpoints_written(self, blobs2, tmp_path):
        bundle, bags = blobs2
        d, g = fresh_models()
        cfg = TrainConfig(total_steps=6, seed=0, checkpoint_every=2,
                          checkpoint_dir=str(tmp_path / "ckpts"))
        train_llp_gan(bundle.train.features, bags, cfg, discriminator=d, generator=g)
        written = sorted(p.name for p in (tmp_path / "ckpts").iterdir())
        assert written == ["step00000002.ckpt", "step00000004.ckpt", "step00000006.ckpt"]
        assert checkpoint_restore(tmp_path / "ckpts" / "step00000004.ckpt").step == 4

    def test_version_mismatch_rejected(self, trained_dllp, tmp_path):
        _, _, state = trained_dllp
        path = tmp_path / "old.ckpt"
        payload_path = tmp_path / "v0.ckpt"
        checkpoint_save(state, path)
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = 0
        torch.save(payload, payload_path)
        with pytest.raises(CheckpointVersionError):
            checkpoint_restore(payload_path)


class TestConfigValidation:
    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(lambda_sup=-1.0)

    def test_zero_steps_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(total_steps=0)

    def test_noise_dim_mismatch_rejected(self, blobs2):
        bundle, bags = blobs2
        d, g = fresh_models()
        with pytest.raises(ConfigurationError):
            train_llp_gan(bundle.train.features, bags,
                          TrainConfig(total_steps=1, noise_dim=7),
                          discriminator=d, generator=g)

    def test_feature_shape_mismatch_rejected(self, blobs2):
        bundle, bags = blobs2
        d, g = fresh_models()
        with pytest.raises(ConfigurationError):
            train_llp_gan(bundle.train.features[:, :1], bags, TrainConfig(total_steps=1),
                          discriminator=d, generator=g)
