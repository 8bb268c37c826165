"""End-to-end command-line behavior: artifacts, determinism, exit codes."""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from maskcorrect import cli, config, data, metrics, pgm, train

# small canvases and a thin net keep every run under a second
SYNTH_ARGS = ["--seed", "7", "--train_count", "20", "--meta_count", "2",
              "--test_count", "4", "--height", "32", "--width", "32",
              "--count_min", "2", "--count_max", "3",
              "--radius_min", "3", "--radius_max", "6"]
TRAIN_ARGS = ["--total_epochs", "2", "--alpha_drop_epoch", "2",
              "--arch_levels", "2", "--arch_channels", "4",
              "--cnet_hidden", "2", "--checkpoint_every", "2",
              "--meta_batch_size", "2", "--seed", "7"]


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def clean_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("clean_ds")
    assert cli.run(["synth", "--out", str(root), *SYNTH_ARGS]) == cli.OK
    return root


@pytest.fixture(scope="module")
def dataset(clean_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("noisy_ds")
    shutil.copytree(clean_dataset, root, dirs_exist_ok=True)
    assert cli.run(["corrupt", "--data", str(root), "--kind", "dilation",
                    "--p", "0.4", "--seed", "7"]) == cli.OK
    return root


@pytest.fixture(scope="module")
def mmc_run(dataset, tmp_path_factory):
    runs = tmp_path_factory.mktemp("runs")
    rc = cli.run(["train", "--data", str(dataset), "--runs_dir", str(runs),
                  "--name", "mmc", "--method", "mmc", *TRAIN_ARGS])
    assert rc == cli.OK
    return runs / "mmc"


class TestParsing:
    def test_no_args_prints_usage_and_fails(self, capsys):
        assert cli.run([]) == cli.CONFIG_ERROR
        assert "usage:" in capsys.readouterr().out

    def test_help_exits_clean(self, capsys):
        assert cli.run(["--help"]) == cli.OK
        assert "gradcheck" in capsys.readouterr().out

    def test_unknown_command(self, capsys):
        assert cli.run(["trian"]) == cli.CONFIG_ERROR
        assert "trian" in capsys.readouterr().err

    def test_unknown_key_is_hard_error(self, capsys):
        assert cli.run(["synth", "--sedd", "7"]) == cli.CONFIG_ERROR
        assert "sedd" in capsys.readouterr().err

    def test_bad_value_type(self, capsys):
        assert cli.run(["synth", "--seed", "seven"]) == cli.CONFIG_ERROR
        assert "seed" in capsys.readouterr().err

    def test_override_forms_equivalent(self):
        for argv in (["--seed", "9"], ["--seed=9"], ["seed=9"]):
            assert cli._parse_argv(["synth", *argv]) == ("synth", None, [("seed", "9")])

    def test_config_flag_shapes(self):
        assert cli._parse_argv(["eval", "--config", "f.cfg"]) == ("eval", "f.cfg", [])
        with pytest.raises(ValueError, match="twice"):
            cli._parse_argv(["eval", "--config", "a", "--config", "b"])
        with pytest.raises(ValueError, match="needs a file"):
            cli._parse_argv(["eval", "--config"])
        with pytest.raises(ValueError, match="needs a value"):
            cli._parse_argv(["eval", "--seed"])
        with pytest.raises(ValueError, match="unexpected argument"):
            cli._parse_argv(["eval", "stray"])

    def test_missing_config_file(self, tmp_path, capsys):
        rc = cli.run(["synth", "--config", str(tmp_path / "nope.cfg")])
        assert rc == cli.CONFIG_ERROR

    def test_config_file_feeds_run(self, tmp_path):
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text("seed = 7\nheight = 32\nwidth = 32\n"
                           "train_count = 20\nmeta_count = 2\ntest_count = 4\n"
                           "count_min = 2\ncount_max = 3\n"
                           "radius_min = 3\nradius_max = 6\n")
        out = tmp_path / "ds"
        rc = cli.run(["synth", "--config", str(cfgfile), "--out", str(out),
                      "--test_count", "5"])
        assert rc == cli.OK
        written = config.load_config(out / "config.txt")
        assert written["height"] == 32      # from the file
        assert written["test_count"] == 5   # override beats the file
        assert len(list((out / "test" / "images").glob("*.pgm"))) == 5

    def test_main_exits_with_status(self, monkeypatch):
        monkeypatch.setattr(sys, "argv", ["maskcorrect", "bogus-command"])
        with pytest.raises(SystemExit) as exc:
            cli.main()
        assert exc.value.code == cli.CONFIG_ERROR

    def test_module_entry(self):
        out = subprocess.run([sys.executable, "-m", "maskcorrect.cli", "--help"],
                             capture_output=True, text=True)
        assert out.returncode == 0
        assert "usage:" in out.stdout


class TestSynth:
    def test_byte_identical_under_seed(self, tmp_path, monkeypatch):
        # same invocation from two working directories, relative --out
        trees = []
        for sub in ("a", "b"):
            base = tmp_path / sub
            base.mkdir()
            monkeypatch.chdir(base)
            assert cli.run(["synth", "--out", "ds", *SYNTH_ARGS]) == cli.OK
            trees.append(_tree(base / "ds"))
        assert trees[0] == trees[1]

    def test_writes_resolved_config(self, clean_dataset):
        written = config.load_config(clean_dataset / "config.txt")
        assert set(written) == set(config.DEFAULTS)
        assert written["seed"] == 7
        assert written["train_count"] == 20

    def test_bad_synth_config_is_config_error(self, tmp_path, capsys):
        rc = cli.run(["synth", "--out", str(tmp_path / "ds"), "--radius_min", "1"])
        assert rc == cli.CONFIG_ERROR

    def test_unplaceable_config_is_data_error(self, tmp_path, capsys):
        rc = cli.run(["synth", "--out", str(tmp_path / "ds"),
                      "--height", "16", "--width", "16",
                      "--count_min", "8", "--count_max", "8",
                      "--radius_min", "6", "--radius_max", "8",
                      "--max_occlusion", "0.0"])
        assert rc == cli.DATA_ERROR
        assert "could not place" in capsys.readouterr().err


class TestCorrupt:
    def test_manifest_records_kind_p_and_radii(self, dataset):
        rec = json.loads((dataset / "noise.json").read_text())
        assert rec["kind"] == "dilation"
        assert rec["proportion"] == 0.4
        assert sorted(rec["per_sample"]) == [data.sample_id("train", i)
                                             for i in range(20)]
        draws = [r for s in rec["per_sample"].values()
                 for r in s["draws"].values()]
        assert draws and all(1 <= r <= 5 for r in draws)
        masks = sorted((dataset / "train" / "noisy_masks").glob("*.pgm"))
        assert len(masks) == 20

    def test_only_adds_files(self, clean_dataset, tmp_path):
        root = tmp_path / "ds"
        shutil.copytree(clean_dataset, root)
        before = _tree(root)
        assert cli.run(["corrupt", "--data", str(root), "--kind", "partial",
                        "--p", "0.4", "--seed", "3"]) == cli.OK
        after = _tree(root)
        assert all(after[k] == v for k, v in before.items())
        added = set(after) - set(before)
        assert added == ({"noise.json", "corrupt_config.txt"}
                         | {f"train/noisy_masks/{data.sample_id('train', i)}.pgm"
                            for i in range(20)})

    def test_idempotent_bytes(self, clean_dataset, tmp_path, monkeypatch):
        root = tmp_path / "ds"
        shutil.copytree(clean_dataset, root)
        monkeypatch.chdir(tmp_path)
        args = ["corrupt", "--data", "ds", "--kind", "bbox",
                "--p", "0.5", "--seed", "11"]
        assert cli.run(args) == cli.OK
        first = _tree(root)
        assert cli.run(args) == cli.OK
        assert _tree(root) == first

    def test_partial_records_kept_ids(self, clean_dataset, tmp_path):
        root = tmp_path / "ds"
        shutil.copytree(clean_dataset, root)
        assert cli.run(["corrupt", "--data", str(root), "--kind", "partial",
                        "--p", "0.5", "--seed", "3"]) == cli.OK
        rec = json.loads((root / "noise.json").read_text())
        assert all("kept" in s for s in rec["per_sample"].values())

    def test_corrupted_dataset_loads_with_noise_info(self, dataset):
        splits = data.load_dataset(dataset)
        assert splits.info["noise"]["kind"] == "dilation"
        assert all(s.noisy_mask is not None for s in splits.train)

    def test_bad_kind_is_config_error(self, dataset, capsys):
        rc = cli.run(["corrupt", "--data", str(dataset), "--kind", "sparkle"])
        assert rc == cli.CONFIG_ERROR
        assert "sparkle" in capsys.readouterr().err

    def test_missing_dataset_is_data_error(self, tmp_path, capsys):
        rc = cli.run(["corrupt", "--data", str(tmp_path / "nope")])
        assert rc == cli.DATA_ERROR
        assert "manifest missing" in capsys.readouterr().err


class TestTrain:
    def test_run_directory_contents(self, mmc_run):
        names = {p.name for p in mmc_run.iterdir()}
        assert {"config.txt", "history.csv", "timing.csv", "metrics.csv",
                "checkpoints", "overlays"} <= names
        ckpts = {p.name for p in (mmc_run / "checkpoints").iterdir()}
        assert ckpts == {"epoch_0001.main.ckpt", "epoch_0001.meta.ckpt",
                         "final.main.ckpt", "final.meta.ckpt"}
        assert len(list((mmc_run / "overlays").glob("*.pgm"))) == 4

    def test_run_artifacts_deterministic(self, clean_dataset, tmp_path, monkeypatch):
        trees = []
        for sub in ("a", "b"):
            base = tmp_path / sub
            shutil.copytree(clean_dataset, base / "ds")
            monkeypatch.chdir(base)
            assert cli.run(["corrupt", "--data", "ds", "--kind", "dilation",
                            "--p", "0.4", "--seed", "7"]) == cli.OK
            assert cli.run(["train", "--data", "ds", "--runs_dir", "runs",
                            "--name", "mmc", "--method", "mmc",
                            *TRAIN_ARGS]) == cli.OK
            tree = _tree(base / "runs")
            del tree["mmc/timing.csv"]  # wall clock, the one unstable file
            trees.append(tree)
        assert trees[0] == trees[1]

    def test_history_wall_times_live_in_timing_csv(self, mmc_run):
        rows = train.read_history(mmc_run / "history.csv")
        assert rows and all(r.wall_ms == 0.0 for r in rows)
        timed = train.read_history(mmc_run / "timing.csv")
        assert [r._replace(wall_ms=0.0) for r in timed] == rows

    def test_metrics_carry_noise_metadata(self, mmc_run):
        rows = metrics.read_csv(mmc_run / "metrics.csv")
        assert all(r["method"] == "mmc" for r in rows)
        assert all(r["noise"] == "dilation" for r in rows)
        assert all(r["proportion"] == 0.4 for r in rows)

    @pytest.mark.parametrize("method", ["noisy", "clean", "finetune"])
    def test_baseline_methods_run(self, dataset, tmp_path, method):
        runs = tmp_path / "runs"
        rc = cli.run(["train", "--data", str(dataset), "--runs_dir", str(runs),
                      "--name", method, "--method", method, *TRAIN_ARGS])
        assert rc == cli.OK
        rows = metrics.read_csv(runs / method / "metrics.csv")
        assert all(r["method"] == method for r in rows)

    def test_bad_method_is_config_error(self, dataset, capsys):
        rc = cli.run(["train", "--data", str(dataset), "--method", "magic"])
        assert rc == cli.CONFIG_ERROR
        assert "magic" in capsys.readouterr().err

    def test_uncorrupted_dataset_is_data_error(self, clean_dataset, tmp_path, capsys):
        rc = cli.run(["train", "--data", str(clean_dataset), "--runs_dir",
                      str(tmp_path), "--name", "x", "--method", "mmc",
                      *TRAIN_ARGS])
        assert rc == cli.DATA_ERROR
        assert "run the corruption first" in capsys.readouterr().err

    def test_clean_method_needs_no_corruption(self, clean_dataset, tmp_path):
        rc = cli.run(["train", "--data", str(clean_dataset), "--runs_dir",
                      str(tmp_path), "--name", "clean", "--method", "clean",
                      *TRAIN_ARGS])
        assert rc == cli.OK

    @pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
    def test_divergence_exit_code_and_dump(self, dataset, tmp_path, capsys):
        runs = tmp_path / "runs"
        rc = cli.run(["train", "--data", str(dataset), "--runs_dir", str(runs),
                      "--name", "blowup", "--method", "mmc", *TRAIN_ARGS,
                      "--alpha", "1e80"])
        assert rc == cli.DIVERGED
        assert "diverged" in capsys.readouterr().err
        assert (runs / "blowup" / "divergence_dump.npz").exists()


class TestEval:
    def test_scores_match_train_metrics(self, dataset, mmc_run, tmp_path):
        runs = tmp_path / "runs"
        rc = cli.run(["eval", "--data", str(dataset), "--runs_dir", str(runs),
                      "--name", "ev", "--checkpoint",
                      str(mmc_run / "checkpoints" / "final.main.ckpt"),
                      "--split", "test", "--method", "mmc", "--seed", "7"])
        assert rc == cli.OK
        ours = metrics.read_csv(runs / "ev" / "metrics.csv")
        theirs = metrics.read_csv(mmc_run / "metrics.csv")
        assert ours == theirs

    def test_any_split_scoreable(self, dataset, mmc_run, tmp_path):
        runs = tmp_path / "runs"
        rc = cli.run(["eval", "--data", str(dataset), "--runs_dir", str(runs),
                      "--name", "ev", "--checkpoint",
                      str(mmc_run / "checkpoints" / "final.main.ckpt"),
                      "--split", "meta"])
        assert rc == cli.OK
        rows = metrics.read_csv(runs / "ev" / "metrics.csv")
        assert {r["split"] for r in rows} == {"meta"}
        assert sum(r["image_id"] != "MEAN" for r in rows) == 2

    def test_overlay_panels(self, dataset, mmc_run):
        overlay = pgm.read_pgm(mmc_run / "overlays" / "test_00000.pgm")
        image = pgm.read_pgm(dataset / "test" / "images" / "test_00000.pgm")
        gold = pgm.read_pgm(dataset / "test" / "masks" / "test_00000.pgm")
        h, w = image.shape
        assert overlay.shape == (h, 3 * w + 2)
        np.testing.assert_array_equal(overlay[:, :w], image)
        np.testing.assert_array_equal(overlay[:, w], np.full(h, 128))
        np.testing.assert_array_equal(overlay[:, w + 1:2 * w + 1], gold)
        assert set(np.unique(overlay[:, 2 * w + 2:])) <= {0, 255}

    def test_overlay_limit_zero_skips_them(self, dataset, mmc_run, tmp_path):
        runs = tmp_path / "runs"
        rc = cli.run(["eval", "--data", str(dataset), "--runs_dir", str(runs),
                      "--name", "ev", "--checkpoint",
                      str(mmc_run / "checkpoints" / "final.main.ckpt"),
                      "--overlay_limit", "0"])
        assert rc == cli.OK
        assert not (runs / "ev" / "overlays").exists()

    def test_checkpoint_required(self, dataset, capsys):
        rc = cli.run(["eval", "--data", str(dataset)])
        assert rc == cli.CONFIG_ERROR
        assert "checkpoint" in capsys.readouterr().err

    def test_bad_split_name(self, dataset, capsys):
        rc = cli.run(["eval", "--data", str(dataset), "--checkpoint", "x.ckpt",
                      "--split", "validation"])
        assert rc == cli.CONFIG_ERROR
        assert "validation" in capsys.readouterr().err

    def test_missing_checkpoint_is_data_error(self, dataset, tmp_path):
        rc = cli.run(["eval", "--data", str(dataset), "--runs_dir",
                      str(tmp_path), "--name", "ev", "--checkpoint",
                      str(tmp_path / "nope.ckpt")])
        assert rc == cli.DATA_ERROR


class TestGradcheck:
    def test_passes_and_prints_suite_maxima(self, capsys):
        assert cli.run(["gradcheck"]) == cli.OK
        out = capsys.readouterr().out
        for op in ("conv2d", "relu", "sigmoid", "softplus", "maxpool2",
                   "upsample_nearest2", "concat_channels", "bce_with_logits"):
            assert f"op {op}" in out
        assert "suite ops: max rel err" in out
        assert "suite hypergrad toy" in out
        assert "suite hypergrad net" in out
        assert "all suites passed" in out

    def test_deterministic_output(self, capsys):
        assert cli.run(["gradcheck", "--seed", "3"]) == cli.OK
        first = capsys.readouterr().out
        assert cli.run(["gradcheck", "--seed", "3"]) == cli.OK
        assert capsys.readouterr().out == first

    def test_detected_failure_exits_5(self, monkeypatch, capsys):
        monkeypatch.setattr(cli, "_fd_max_rel_err", lambda fn, arrays: 1.0)
        assert cli.run(["gradcheck"]) == cli.GRADCHECK_FAILED
        out = capsys.readouterr().out
        assert "FAIL" in out
        assert "gradcheck FAILED" in out
