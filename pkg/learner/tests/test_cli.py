import csv
import os

import pytest

from tabmfm.cli import main
from tabmfm.config import ModelConfig, dumps_config
from tabmfm.trainer import read_metric_log, read_terms
from tabmfm.viewio import save_view

from tests.synth import tiny_view


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A saved view, a config file, and one finished training run."""
    root = tmp_path_factory.mktemp("cliws")
    view = tiny_view(n=40, seed=1, observed=1.0)
    save_view(view, str(root / "view"))
    config = ModelConfig(d_model=16, n_layers=1, n_heads=2, ff_dim=32,
                         epochs=2, batch_size=16, seed=3)
    (root / "config.json").write_text(dumps_config(config))
    rc = main(["train", "--view", str(root / "view"),
               "--config", str(root / "config.json"),
               "--out", str(root / "run")])
    assert rc == 0
    return root


def ckpt(workspace):
    return str(workspace / "run" / "checkpoint_final.pt")


class TestTrain:
    def test_outputs_and_summary_line(self, workspace, capsys):
        rc = main(["train", "--view", str(workspace / "view"),
                   "--config", str(workspace / "config.json"),
                   "--out", str(workspace / "again")])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.startswith("trained 2 epochs; final eval recon_mse=")
        assert "checkpoint:" in out
        for name in ("checkpoint_final.pt", "metrics.csv", "targets_final_eval.csv"):
            assert (workspace / "again" / name).exists()

    def test_rerun_metrics_byte_identical(self, workspace):
        with open(workspace / "run" / "metrics.csv", "rb") as fh:
            first = fh.read()
        with open(workspace / "again" / "metrics.csv", "rb") as fh:
            second = fh.read()
        assert first == second

    def test_missing_config_is_reported_not_raised(self, workspace, capsys):
        rc = main(["train", "--view", str(workspace / "view"),
                   "--config", str(workspace / "nope.json"),
                   "--out", str(workspace / "x")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_config_keys_reported(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"d_model": 16, "warp_drive": 1}')
        rc = main(["train", "--view", str(workspace / "view"),
                   "--config", str(bad), "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "unknown config keys" in capsys.readouterr().err


class TestEval:
    def test_row_printed_and_written(self, workspace, tmp_path, capsys):
        out_dir = str(tmp_path / "evalout")
        dump = str(tmp_path / "terms.csv")
        rc = main(["eval", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"),
                   "--dump", dump, "--out", out_dir])
        assert rc == 0
        printed = capsys.readouterr().out
        rows = read_metric_log(os.path.join(out_dir, "eval_metrics.csv"))
        assert len(rows) == 1
        row = rows[0]
        assert f"recon_mse={row.recon_mse:.6f}" in printed
        assert f"top1={row.top1:.4f}" in printed
        terms = read_terms(dump)
        assert len(terms) == row.n_numeric + row.n_categorical

    def test_train_split_also_works(self, workspace, capsys):
        rc = main(["eval", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"), "--split", "train"])
        assert rc == 0
        assert "split=train" in capsys.readouterr().out

    def test_mismatched_view_refused(self, workspace, tmp_path, capsys):
        other = tiny_view(n=40, seed=1, observed=1.0)
        from tabmfm.viewio import FeatureSpec
        other.features[3] = FeatureSpec(
            id="grade", theme="t2", modality="categorical",
            vocabulary=("low", "mid", "high", "worse"))
        save_view(other, str(tmp_path / "otherview"))
        rc = main(["eval", "--ckpt", ckpt(workspace),
                   "--view", str(tmp_path / "otherview")])
        assert rc == 1
        assert "layout digest" in capsys.readouterr().err

    def test_missing_checkpoint(self, workspace, capsys):
        rc = main(["eval", "--ckpt", str(workspace / "ghost.pt"),
                   "--view", str(workspace / "view")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestAnalyzeHist:
    def test_files_and_conservation(self, workspace, tmp_path, capsys):
        out_dir = tmp_path / "hist"
        rc = main(["analyze", "hist", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"),
                   "--out", str(out_dir), "--trials", "3", "--bins", "6"])
        assert rc == 0
        printed = capsys.readouterr().out
        for kind in ("numeric", "categorical"):
            assert (out_dir / f"hist_{kind}.csv").exists()
            assert (out_dir / f"hist_{kind}.svg").exists()
            with open(out_dir / f"hist_{kind}.csv") as fh:
                cells = list(csv.DictReader(fh))
            assert len(cells) == 36
            binned = sum(int(r["count"]) for r in cells)
            with open(out_dir / f"hist_{kind}_samples.csv") as fh:
                samples = list(csv.DictReader(fh))
            assert binned == len(samples)
            assert f"{kind}: {binned} samples binned" in printed

    def test_median_aggregate_accepted(self, workspace, tmp_path):
        rc = main(["analyze", "hist", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"), "--out", str(tmp_path / "h"),
                   "--trials", "2", "--aggregate", "median"])
        assert rc == 0

    def test_bad_ratio_reported(self, workspace, tmp_path, capsys):
        rc = main(["analyze", "hist", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"), "--out", str(tmp_path / "h"),
                   "--trials", "1", "--ratio", "1.5"])
        assert rc == 1
        assert "ratio" in capsys.readouterr().err


class TestAnalyzeMcj:
    def test_matrix_files(self, workspace, tmp_path, capsys):
        out_dir = tmp_path / "mcj"
        rc = main(["analyze", "mcj", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"), "--out", str(out_dir),
                   "--targets", "alpha,pair", "--sources", "alpha,beta,pair"])
        assert rc == 0
        assert "mcj: 2x3 entries, 0 undefined" in capsys.readouterr().out
        with open(out_dir / "mcj.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["target", "alpha", "beta", "pair"]
        assert len(rows) == 3
        assert float(rows[1][1]) == 0.0  # alpha vs alpha
        assert float(rows[2][3]) == 0.0  # pair vs pair
        for row in rows[1:]:
            for cell in row[1:]:
                float(cell)  # all defined on a fully observed view
        assert (out_dir / "mcj.svg").exists()
        with open(out_dir / "mcj_counts.csv") as fh:
            counts = list(csv.reader(fh))
        assert all(int(c) > 0 for row in counts[1:] for c in row[1:])

    def test_fd_method_flag(self, workspace, tmp_path):
        rc = main(["analyze", "mcj", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"), "--out", str(tmp_path / "m"),
                   "--targets", "alpha", "--sources", "beta",
                   "--method", "fd", "--fd-step", "1e-3"])
        assert rc == 0

    def test_empty_target_list_rejected(self, workspace, tmp_path, capsys):
        rc = main(["analyze", "mcj", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"), "--out", str(tmp_path / "m"),
                   "--targets", ",", "--sources", "beta"])
        assert rc == 1
        assert "non-empty" in capsys.readouterr().err

    def test_categorical_target_rejected(self, workspace, tmp_path, capsys):
        rc = main(["analyze", "mcj", "--ckpt", ckpt(workspace),
                   "--view", str(workspace / "view"), "--out", str(tmp_path / "m"),
                   "--targets", "grade", "--sources", "beta"])
        assert rc == 1
        assert "not a kept numeric" in capsys.readouterr().err


class TestUsage:
    def test_no_arguments_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--bogus"])
        assert exc.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "tabmfm" in capsys.readouterr().out
