"""Command-line surface: config parsing, command artifacts, exit codes."""

import json

import numpy as np
import pytest

from slicelearn.cli import main, verify_reference_identities
from slicelearn.config import load_run_config, run_config_from_dict
from slicelearn.errors import ConfigError
from slicelearn.evaluate import generate_synthetic_cohort, write_cohort
from slicelearn.training import TransferMode, load_weights


@pytest.fixture()
def cohort_dir(tmp_path):
    volumes, records = generate_synthetic_cohort(8, (16, 16, 12), 4.0, 21,
                                                 noise_std=1.0)
    write_cohort(volumes, records, tmp_path / "data")
    return tmp_path


def write_config(tmp_path, **overrides) -> str:
    cfg = {
        "manifest_path": str(tmp_path / "data" / "manifest.jsonl"),
        "selection": {"k": 4, "bins": 64},
        "input_size": 16,
        "architecture": "micro_gap",
        "regime": "scratch",
        "train": {"epochs": 3, "batch_size": 8, "optimizer": "rmsprop",
                  "learning_rate": 0.01, "seed": 5},
        "cv": {"k": 2, "level": "subject", "seed": 3},
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfigParsing:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"bogus": 1})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"selection": {"bins": 8, "oops": 1}})

    def test_head_only_requires_weights(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"regime": "head_only"})

    def test_input_size_minimum(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"input_size": 4})

    def test_bad_enum_value(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"regime": "finetune"})

    def test_defaults(self):
        cfg = run_config_from_dict({})
        assert cfg.selection.k == 32
        assert cfg.selection.bins == 256
        assert cfg.input_size == 32
        assert cfg.cv.k == 5
        assert cfg.train.batch_size == 40
        assert cfg.regime is TransferMode.SCRATCH

    def test_paper_scale_values_accepted(self):
        cfg = run_config_from_dict({
            "input_size": 150,
            "train": {"epochs": 100, "batch_size": 40,
                      "optimizer": "rmsprop"},
        })
        assert cfg.input_size == 150
        cfg2 = run_config_from_dict({
            "input_size": 299,
            "train": {"epochs": 100, "batch_size": 8, "optimizer": "sgd",
                      "learning_rate": 0.0001},
        })
        assert cfg2.train.learning_rate == 0.0001

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "nope.json")


class TestSelectCommand:
    def test_writes_one_selection_per_subject(self, cohort_dir, capsys):
        config = write_config(cohort_dir)
        assert main(["--config", config, "select"]) == 0
        out = cohort_dir / "out" / "selections"
        files = sorted(out.glob("*.json"))
        assert len(files) == 8
        doc = json.loads(files[0].read_text())
        assert len(doc["selected"]) == 4
        assert doc["k"] == 4
        summary = capsys.readouterr().out
        assert summary.count("select syn") == 8

    def test_k_saturation_warns_but_succeeds(self, cohort_dir, capsys):
        config = write_config(cohort_dir, selection={"k": 99, "bins": 64})
        assert main(["--config", config, "select"]) == 0
        err = capsys.readouterr().err
        assert "only 12 slices" in err

    def test_unreadable_volume_names_subject(self, cohort_dir, capsys):
        manifest = cohort_dir / "data" / "manifest.jsonl"
        lines = manifest.read_text().splitlines()
        bad = json.loads(lines[0])
        bad["volume_path"] = "missing.rvol"
        lines[0] = json.dumps(bad)
        manifest.write_text("\n".join(lines) + "\n")
        config = write_config(cohort_dir)
        assert main(["--config", config, "select"]) == 1
        err = capsys.readouterr().err
        assert "syn000" in err
        assert "missing.rvol" in err

    def test_threads_flag_same_output(self, cohort_dir):
        config = write_config(cohort_dir)
        assert main(["--config", config, "select"]) == 0
        single = {p.name: p.read_text()
                  for p in (cohort_dir / "out" / "selections").glob("*.json")}
        assert main(["--config", config, "--threads", "4", "select"]) == 0
        multi = {p.name: p.read_text()
                 for p in (cohort_dir / "out" / "selections").glob("*.json")}
        assert single == multi


class TestPretrainCommand:
    def test_container_written_and_loadable(self, cohort_dir):
        config = write_config(cohort_dir, pretrain={
            "n_subjects": 4, "dims": [16, 16, 12], "class_gap": 4.0,
            "cohort_seed": 77,
            "train": {"epochs": 2, "batch_size": 8, "seed": 1},
        })
        assert main(["--config", config, "pretrain"]) == 0
        path = cohort_dir / "out" / "weights" / "micro_gap_pretrained.nswt"
        container = load_weights(path.read_bytes())
        assert container.architecture_id == "micro_gap-16-2"
        assert container.metadata["normalization"] == "unit_range"

    def test_rerun_bit_identical(self, cohort_dir):
        config = write_config(cohort_dir, pretrain={
            "n_subjects": 4, "dims": [16, 16, 12], "class_gap": 4.0,
            "cohort_seed": 77,
            "train": {"epochs": 2, "batch_size": 8, "seed": 1},
        })
        path = cohort_dir / "out" / "weights" / "micro_gap_pretrained.nswt"
        assert main(["--config", config, "pretrain"]) == 0
        first = path.read_bytes()
        assert main(["--config", config, "pretrain"]) == 0
        assert path.read_bytes() == first

    def test_requires_pretrain_section(self, cohort_dir):
        config = write_config(cohort_dir)
        assert main(["--config", config, "pretrain"]) == 1


class TestTrainEvalCommand:
    def test_report_files_written(self, cohort_dir):
        config = write_config(cohort_dir)
        assert main(["--config", config, "train-eval"]) == 0
        report_dir = cohort_dir / "out" / "reports"
        payload = json.loads((report_dir / "report_scratch_seed5.json").read_text())
        assert payload["regime"] == "scratch"
        assert payload["cv_k"] == 2
        assert len(payload["fold_accuracies"]) == 2
        assert "created_at" in payload
        assert (report_dir / "report_scratch_seed5.txt").exists()

    def test_scratch_vs_head_only_echo_differs_only_in_regime(self, cohort_dir):
        pre = write_config(cohort_dir, pretrain={
            "n_subjects": 4, "dims": [16, 16, 12], "class_gap": 4.0,
            "cohort_seed": 78,
            "train": {"epochs": 2, "batch_size": 8, "seed": 1},
        })
        assert main(["--config", pre, "pretrain"]) == 0
        weights = cohort_dir / "out" / "weights" / "micro_gap_pretrained.nswt"

        scratch_cfg = write_config(cohort_dir)
        assert main(["--config", scratch_cfg, "train-eval"]) == 0
        head_cfg = write_config(cohort_dir, regime="head_only",
                                weights_path=str(weights))
        assert main(["--config", head_cfg, "train-eval"]) == 0

        rep_dir = cohort_dir / "out" / "reports"
        scratch = json.loads((rep_dir / "report_scratch_seed5.json").read_text())
        head = json.loads((rep_dir / "report_head_only_seed5.json").read_text())
        for key in ("model", "strategy", "cv_k", "cv_level", "seed",
                    "training_size"):
            assert scratch[key] == head[key], key
        assert scratch["regime"] == "scratch"
        assert head["regime"] == "head_only"

    def test_missing_weights_path_fails(self, cohort_dir):
        config = write_config(cohort_dir, regime="head_only")
        assert main(["--config", config, "train-eval"]) == 1


class TestCompareCommand:
    def test_table_written(self, cohort_dir, capsys):
        config = write_config(cohort_dir, compare={
            "strategies": ["entropy", "random"], "seeds": [0, 1]})
        assert main(["--config", config, "compare"]) == 0
        payload = json.loads(
            (cohort_dir / "out" / "reports" / "comparison.json").read_text())
        assert len(payload["rows"]) == 4
        assert set(payload["strategy_means"]) == {"entropy", "random"}
        out = capsys.readouterr().out
        assert "mean accuracy gap" in out

    def test_requires_compare_section(self, cohort_dir):
        config = write_config(cohort_dir)
        assert main(["--config", config, "compare"]) == 1


class TestReportCommand:
    def test_identities(self):
        ids = verify_reference_identities()
        assert ids["subjects_times_slices"] == 6400
        assert ids["training_split"] == 5120
        assert ids["subjects_times_slices_ok"]
        assert ids["training_split_ok"]

    def test_consolidated_output(self, cohort_dir, capsys):
        config = write_config(cohort_dir)
        assert main(["--config", config, "train-eval"]) == 0
        report = cohort_dir / "out" / "reports" / "report_scratch_seed5.json"
        assert main(["report", str(report),
                     "--output", str(cohort_dir / "out")]) == 0
        out = capsys.readouterr().out
        assert "Inception V4 (transfer learning)" in out
        assert "96.25" in out
        assert "(reported" in out or "[ref]" in out
        assert "5,120" in out
        assert "46,751" in out
        assert "= 6400 images [OK]" in out
        assert "5120 training images [OK]" in out
        payload = json.loads(
            (cohort_dir / "out" / "reports" / "consolidated.json").read_text())
        sources = {row["source"] for row in payload["rows"]}
        assert sources == {"this run", "reported"}

    def test_zero_files_is_error(self, capsys):
        assert main(["report"]) == 1
        assert "no report files" in capsys.readouterr().err

    def test_malformed_file_is_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["report", str(bad)]) == 1


class TestGlobalFlags:
    def test_seed_override(self, cohort_dir):
        config = write_config(cohort_dir)
        assert main(["--config", config, "--seed", "99", "train-eval"]) == 0
        report = (cohort_dir / "out" / "reports" / "report_scratch_seed99.json")
        assert json.loads(report.read_text())["seed"] == 99

    def test_output_override(self, cohort_dir, tmp_path):
        config = write_config(cohort_dir)
        alt = tmp_path / "elsewhere"
        assert main(["--config", config, "--output", str(alt), "select"]) == 0
        assert len(list((alt / "selections").glob("*.json"))) == 8

    def test_missing_config_is_error(self, capsys):
        assert main(["select"]) == 1
        assert "requires --config" in capsys.readouterr().err

    def test_deterministic_flag_accepted(self, cohort_dir):
        config = write_config(cohort_dir)
        assert main(["--config", config, "--deterministic", "select"]) == 0
