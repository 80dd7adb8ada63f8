import json
import math

import numpy as np
import pytest

from llpgan.exceptions import ConfigurationError
from llpgan.harness import (
    entropy_trace_report,
    error_rate,
    run_experiment,
    sweep,
    timing_profile,
)

TINY = {
    "dataset": "blobs:n=320,k=2,seed=1",
    "algo": "dllp",
    "bag_size": 16,
    "epochs": 2,
    "seeds": [1, 2, 3],
}


class TestErrorRate:
    def test_identical_is_zero(self):
        assert error_rate([1, 2, 3], [1, 2, 3]) == 0.0

    def test_disjoint_is_hundred(self):
        assert error_rate([0, 0, 0], [1, 1, 1]) == 100.0

    def test_half_mismatched(self):
        assert error_rate([0, 0, 1, 1], [0, 0, 0, 0]) == 50.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            error_rate([1, 2], [1, 2, 3])

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            error_rate([], [])


class TestRunExperiment:
    def test_structure_and_aggregation(self, tmp_path):
        report = run_experiment(TINY, out_dir=str(tmp_path))
        assert len(report.curves) == 3
        assert all(len(c) == TINY["epochs"] for c in report.curves.values())
        finals = list(report.final_errors.values())
        assert report.final_error_mean == pytest.approx(float(np.mean(finals)))
        # unbiased sample deviation over seeds
        expected_std = float(np.std(finals, ddof=1))
        assert report.final_error_std == pytest.approx(expected_std)
        assert (tmp_path / "report.json").exists()
        for seed in TINY["seeds"]:
            assert (tmp_path / f"curves_{seed}.csv").exists()

    def test_report_deterministic_except_wallclock(self, tmp_path):
        a = run_experiment(TINY, out_dir=str(tmp_path / "a")).to_dict()
        b = run_experiment(TINY, out_dir=str(tmp_path / "b")).to_dict()
        a.pop("per_bag_wallclock")
        b.pop("per_bag_wallclock")
        assert a == b

    def test_config_file_accepted(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({**TINY, "seeds": [1]}))
        report = run_experiment(str(cfg_path), out_dir=str(tmp_path / "out"))
        assert report.seeds == [1]

    def test_plot_emission_flag_gated(self, tmp_path):
        run_experiment({**TINY, "seeds": [1], "plots": True}, out_dir=str(tmp_path))
        assert (tmp_path / "curves.png").exists()

    def test_unknown_dataset_rejected(self):
        with pytest.raises(ConfigurationError):
            run_experiment({**TINY, "dataset": "imagenet"})


class TestSweep:
    def test_one_curve_per_value(self, tmp_path):
        cfg = {**TINY, "algo": "llp-gan", "seeds": [1]}
        report = sweep(cfg, "lambda_sup", [0.5, 1.0], out_dir=str(tmp_path))
        assert set(report.curves) == {"lambda_sup=0.5", "lambda_sup=1.0"}
        assert report.lambda_values == [0.5, 1.0]

    def test_unsupported_parameter_rejected(self):
        with pytest.raises(ConfigurationError):
            sweep(TINY, "dropout", [0.1])


class TestTiming:
    def test_profile_rows_and_fit(self):
        profile = timing_profile(
            {**TINY, "seeds": [1]}, sizes=[320, 640, 1280], warmup=2, measured=5
        )
        assert len(profile.per_bag_seconds) == 3
        assert 0.0 <= profile.r_squared <= 1.0
        # per-step cost cannot shrink with more data beyond measurement noise
        for earlier, later in zip(profile.per_bag_seconds, profile.per_bag_seconds[1:]):
            assert later >= 0.5 * earlier

    def test_too_few_sizes_rejected(self):
        with pytest.raises(ConfigurationError):
            timing_profile(TINY, sizes=[320, 640])


class TestEntropyReport:
    def test_curve_from_baseline_run(self, trained_dllp, tmp_path):
        _, _, state = trained_dllp
        path = tmp_path / "entropy.csv"
        rows = entropy_trace_report(state, path)
        assert path.exists()
        assert all(value >= 0 for _, value in rows)
        # a converging run ends with lower summed entropy than it starts with
        assert rows[-1][1] < rows[0][1]
        epochs = {row["epoch"] for row in state.trace if not math.isnan(row["entropy"])}
        assert len(rows) == len(epochs)

    def test_missing_entropy_column_rejected(self, trained_llp_gan):
        _, _, state = trained_llp_gan
        with pytest.raises(ConfigurationError):
            entropy_trace_report(state)
