import json
from pathlib import Path

import numpy as np
import pytest

from bayesimpute.cli import main


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    code = run_cli(
        "synth", "--out", out, "--n", 40, "--t", 8, "--m", 3,
        "--missing-rate", 0.3, "--seed", 11,
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def run_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run_cli(
        "train", "--data", data_dir, "--out", out, "--epochs", 3,
        "--batch-size", 8, "--hidden-size", 5, "--seed", 11,
    )
    assert code == 0
    return out


class TestSmokeDataset:
    def test_default_train_on_bundled_smoke_data(self, tmp_path):
        import time

        from bayesimpute.training import load_checkpoint

        data = Path(__file__).resolve().parent.parent / "data" / "smoke"
        out = tmp_path / "run"
        start = time.monotonic()
        assert run_cli("train", "--data", data, "--out", out, "--seed", 1) == 0
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"smoke training took {elapsed:.0f}s"
        ckpt = load_checkpoint(out / "checkpoint.bin")
        assert ckpt.model_config.num_features == 3


class TestSynth:
    def test_writes_expected_row_counts(self, tmp_path):
        out = tmp_path / "ds"
        assert run_cli("synth", "--out", out, "--n", 10, "--t", 8, "--m", 3, "--seed", 1) == 0
        values = (out / "values.csv").read_text().strip().splitlines()
        labels = (out / "labels.csv").read_text().strip().splitlines()
        assert len(values) == 1 + 10 * 8
        assert len(labels) == 1 + 10
        assert (out / "truth.csv").exists()
        assert (out / "config.txt").exists()

    def test_byte_identical_with_same_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("synth", "--out", out, "--n", 6, "--t", 5, "--m", 2, "--seed", 3) == 0
        for name in ("values.csv", "labels.csv", "truth.csv", "config.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_refuses_nonempty_without_force(self, tmp_path):
        out = tmp_path / "ds"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert run_cli("synth", "--out", out, "--n", 4, "--t", 4, "--m", 2) == 2
        assert run_cli("synth", "--out", out, "--n", 4, "--t", 4, "--m", 2, "--force") == 0


class TestConfigPrecedence:
    def test_file_overrides_defaults_and_flags_override_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n = 12\nt = 6\nm = 2\nseed = 5  # comment\n")
        out = tmp_path / "ds"
        assert run_cli("synth", "--config", cfg, "--out", out, "--n", 7) == 0
        snapshot = (out / "config.txt").read_text()
        assert "n = 7" in snapshot        # flag beats file
        assert "t = 6" in snapshot        # file beats default
        assert "seed = 5" in snapshot

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("volume = 11\n")
        assert run_cli("synth", "--config", cfg, "--out", tmp_path / "ds") == 2

    def test_missing_data_dir_is_data_error(self, tmp_path):
        assert run_cli("train", "--data", tmp_path / "nope", "--out", tmp_path / "o") == 3

    def test_non_finite_data_is_numeric_error(self, tmp_path, capsys):
        # 'nan' parses as a float, slips through ingestion, and must be
        # caught by the non-finite loss guard with exit code 4
        d = tmp_path / "bad"
        d.mkdir()
        lines = ["sample_id,hour,f1,f2"]
        rng = np.random.default_rng(0)
        for i in range(8):
            for t in range(4):
                lines.append(f"s{i},{t},{rng.uniform():.3f},{rng.uniform():.3f}")
        lines[1] = "s0,0,nan,0.5"
        (d / "values.csv").write_text("\n".join(lines) + "\n")
        (d / "labels.csv").write_text(
            "sample_id,label\n" + "\n".join(f"s{i},{i % 2}" for i in range(8)) + "\n"
        )
        code = run_cli("train", "--data", d, "--out", tmp_path / "o", "--epochs", 1,
                       "--batch-size", 4, "--hidden-size", 3)
        assert code == 4
        assert "error:numeric:" in capsys.readouterr().err


class TestTrain:
    def test_outputs(self, run_dir):
        assert (run_dir / "checkpoint.bin").exists()
        epochs = (run_dir / "epochs.csv").read_text().strip().splitlines()
        assert epochs[0] == "epoch,total,imputation,prediction,kl"
        assert len(epochs) == 1 + 3

    def test_zero_epochs_checkpoint_is_initialization(self, data_dir, tmp_path):
        out = tmp_path / "r0"
        assert run_cli(
            "train", "--data", data_dir, "--out", out, "--epochs", 0,
            "--hidden-size", 5, "--seed", 11,
        ) == 0
        from bayesimpute.model import ModelConfig, ModelWeights
        from bayesimpute.training import load_checkpoint

        ckpt = load_checkpoint(out / "checkpoint.bin")
        init = ModelWeights.init(
            ModelConfig(num_features=3, hidden_size=5), np.random.default_rng([11, 0])
        )
        for name, vt in init.items():
            np.testing.assert_array_equal(ckpt.arrays[name]["mu"], vt.mu)

    def test_deterministic_flag(self, data_dir, tmp_path):
        out = tmp_path / "det"
        assert run_cli(
            "train", "--data", data_dir, "--out", out, "--epochs", 1,
            "--hidden-size", 4, "--deterministic", "--seed", 2,
        ) == 0
        from bayesimpute.training import load_checkpoint

        assert load_checkpoint(out / "checkpoint.bin").model_config.deterministic_mode


class TestEval:
    def test_metrics_schema(self, data_dir, run_dir, tmp_path):
        out = tmp_path / "ev"
        assert run_cli(
            "eval", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 5,
        ) == 0
        report = json.loads((out / "metrics.json").read_text())
        for key in ("mae", "mre", "auroc", "auprc", "n_eval_cells", "n_test_samples"):
            assert key in report
        assert set(report["baselines"]) == {"zero", "mean", "forward_fill"}

    def test_zero_baseline_mre_is_one(self, data_dir, run_dir, tmp_path):
        out = tmp_path / "ev"
        run_cli(
            "eval", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 4,
        )
        report = json.loads((out / "metrics.json").read_text())
        assert report["baselines"]["zero"]["mre"] == pytest.approx(1.0, abs=1e-12)
        assert report["baselines"]["mean"]["mre"] == pytest.approx(1.0, abs=1e-12)

    def test_byte_identical_across_runs(self, data_dir, run_dir, tmp_path):
        outs = [tmp_path / "e1", tmp_path / "e2"]
        for out in outs:
            assert run_cli(
                "eval", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
                "--out", out, "--mc-samples", 6,
            ) == 0
        assert (outs[0] / "metrics.json").read_bytes() == (outs[1] / "metrics.json").read_bytes()

    def test_bad_checkpoint_is_data_error(self, data_dir, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"not a checkpoint at all")
        assert run_cli(
            "eval", "--data", data_dir, "--checkpoint", bad, "--out", tmp_path / "o"
        ) == 3


class TestImpute:
    def test_observed_cells_pass_through_bitwise(self, data_dir, run_dir, tmp_path):
        out = tmp_path / "imp"
        assert run_cli(
            "impute", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 3,
        ) == 0
        from bayesimpute.data import load_csv

        original = load_csv(data_dir / "values.csv", data_dir / "labels.csv", num_steps=8)
        imputed = load_csv(out / "imputed.csv", data_dir / "labels.csv", num_steps=8)
        assert np.all(imputed.V == 1)  # grid is complete
        observed = original.V == 1
        np.testing.assert_array_equal(imputed.X[observed], original.X[observed])
        assert (out / "sigma2.csv").exists()

    def test_single_draw_skips_sigma(self, data_dir, run_dir, tmp_path, capsys):
        out = tmp_path / "imp1"
        assert run_cli(
            "impute", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 1,
        ) == 0
        assert not (out / "sigma2.csv").exists()
        assert "sigma2" in capsys.readouterr().out


class TestAnalyze:
    @pytest.fixture(scope="class")
    def analysis(self, data_dir, run_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("ana")
        code = run_cli(
            "analyze", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 8,
        )
        assert code == 0
        return out

    def test_emits_three_csvs_and_figures(self, analysis):
        for stem in ("fig_distribution", "fig_reliability", "fig_per_feature"):
            assert (analysis / f"{stem}.csv").exists()
            png = (analysis / f"{stem}.png").read_bytes()
            assert png[:8] == b"\x89PNG\r\n\x1a\n"

    def test_reliability_hundred_row_matches_eval_mae(self, analysis, data_dir, run_dir, tmp_path):
        out = tmp_path / "ev"
        run_cli(
            "eval", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 8,
        )
        report = json.loads((out / "metrics.json").read_text())
        rows = (analysis / "fig_reliability.csv").read_text().strip().splitlines()
        last = rows[-1].split(",")
        assert last[0] == "100"
        assert float(last[2]) == pytest.approx(report["mae"], abs=1e-12)

    def test_distribution_counts_sum_to_k(self, analysis):
        rows = (analysis / "fig_distribution.csv").read_text().strip().splitlines()[1:]
        draws = [r for r in rows if r.startswith("draw,")]
        counts = [int(r.split(",")[4]) for r in rows if r.startswith("bin,")]
        assert len(draws) == 8
        assert sum(counts) == 8

    def test_per_feature_row_limit(self, analysis):
        rows = (analysis / "fig_per_feature.csv").read_text().strip().splitlines()[1:]
        assert 1 <= len(rows) <= 3

    def test_plot_data_byte_identical_across_runs(self, data_dir, run_dir, tmp_path, analysis):
        out = tmp_path / "ana2"
        assert run_cli(
            "analyze", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 8,
        ) == 0
        for stem in ("fig_distribution", "fig_reliability", "fig_per_feature"):
            assert (out / f"{stem}.csv").read_bytes() == (analysis / f"{stem}.csv").read_bytes()

    def test_no_figures_flag(self, data_dir, run_dir, tmp_path):
        out = tmp_path / "nofig"
        assert run_cli(
            "analyze", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 4, "--no-figures",
        ) == 0
        assert (out / "fig_reliability.csv").exists()
        assert not (out / "fig_reliability.png").exists()

    def test_no_ground_truth_exits_nonzero(self, data_dir, tmp_path, capsys):
        # a checkpoint trained with mar_rate 0 leaves no hidden-cell truth
        run0 = tmp_path / "run0"
        assert run_cli(
            "train", "--data", data_dir, "--out", run0, "--epochs", 1,
            "--hidden-size", 4, "--mar-rate", 0.0, "--seed", 11,
        ) == 0
        code = run_cli(
            "analyze", "--data", data_dir, "--checkpoint", run0 / "checkpoint.bin",
            "--out", tmp_path / "ana", "--mc-samples", 3,
        )
        assert code == 3
        assert "mar_rate" in capsys.readouterr().err

    def test_explicit_cell(self, data_dir, run_dir, tmp_path):
        # cell indices are in test-split coordinates
        from bayesimpute.cli import _load_data_dir, _rebuild_test_split
        from bayesimpute.training import load_checkpoint

        ckpt = load_checkpoint(run_dir / "checkpoint.bin")
        test_ds = _rebuild_test_split(ckpt, _load_data_dir(data_dir))
        cell = np.argwhere(test_ds.V == 0)[0]
        out = tmp_path / "cell"
        assert run_cli(
            "analyze", "--data", data_dir, "--checkpoint", run_dir / "checkpoint.bin",
            "--out", out, "--mc-samples", 4,
            "--cell", f"{cell[0]},{cell[1]},{cell[2]}",
        ) == 0
        header = (out / "fig_distribution.csv").read_text().splitlines()[1]
        assert header == f'cell,"{cell[0]} {cell[1]} {cell[2]}",,,'
