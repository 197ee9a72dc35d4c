import json
import os

import pytest

from prognote import cli
from prognote.errors import ConfigError

FAST_CONFIG = {
    "seed": 5,
    "synth": {"n_patients": 50, "case_fraction": 0.4},
    "cohort": {"settings": ["no_restrict"]},
    "vocab": {"max_size": 400},
    "encoder": {"max_len": 16, "hidden": 16, "layers": 1, "heads": 2, "ffn": 32},
    "pretrain": {"steps": 8, "batch_size": 4},
    "finetune": {"epochs": 1, "batch_size": 4},
    "evaluate": {"attention_patients": 1},
}


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(FAST_CONFIG))
    return str(path)


class TestConfigValidation:
    def test_defaults_pass(self):
        cfg = cli.validate_config({})
        assert cfg["synth"]["n_patients"] == 120

    def test_unknown_keys_rejected_at_both_levels(self):
        with pytest.raises(ConfigError) as err:
            cli.validate_config({"extra": 1, "synth": {"n_patient": 5}})
        message = str(err.value)
        assert "unknown config key 'extra'" in message
        assert "unknown key 'synth.n_patient'" in message

    def test_all_problems_reported_together(self):
        bad = {
            "seed": -2,
            "synth": {"n_patients": 0, "case_fraction": 7},
            "cohort": {"settings": []},
            "pretrain": {"steps": 0},
        }
        with pytest.raises(ConfigError) as err:
            cli.validate_config(bad)
        message = str(err.value)
        for needle in ("seed", "n_patients", "case_fraction", "settings", "steps"):
            assert needle in message

    def test_window_settings_validated(self):
        with pytest.raises(ConfigError):
            cli.validate_config({"cohort": {"settings": ["sometimes"]}})
        cfg = cli.validate_config({"cohort": {"settings": ["no_restrict", 182]}})
        assert cfg["cohort"]["settings"] == ["no_restrict", 182]

    def test_booleans_are_not_integers(self):
        with pytest.raises(ConfigError):
            cli.validate_config({"synth": {"n_patients": True}})


class TestStageSeeds:
    def test_substreams_differ_by_stage(self):
        a = cli.stage_seed(0, cli.SEED_SYNTH)
        b = cli.stage_seed(0, cli.SEED_PRETRAIN)
        assert a != b

    def test_substreams_stable(self):
        assert cli.stage_seed(9, cli.SEED_SPLIT, 1) == cli.stage_seed(
            9, cli.SEED_SPLIT, 1
        )


class TestExitCodes:
    def test_invalid_config_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"synth": {"n_patients": -3}}')
        code = cli.main(["synth", "--config", str(bad), "--out", str(tmp_path / "r")])
        assert code == 2
        assert "n_patients" in capsys.readouterr().err

    def test_malformed_json_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = cli.main(["synth", "--config", str(bad), "--out", str(tmp_path / "r")])
        assert code == 2

    def test_missing_config_file_exits_3(self, tmp_path):
        code = cli.main(["synth", "--config", str(tmp_path / "none.json"),
                         "--out", str(tmp_path / "r")])
        assert code == 3

    def test_missing_upstream_artifact_exits_3(self, tmp_path, capsys):
        code = cli.main(["vocab", "--out", str(tmp_path / "empty_run")])
        assert code == 3
        assert "sections.jsonl" in capsys.readouterr().err

    def test_nothing_written_on_config_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"synth": {"n_patients": -3}}')
        out = tmp_path / "run"
        cli.main(["synth", "--config", str(bad), "--out", str(out)])
        assert not out.exists()


class TestStages:
    def test_synth_then_cohort_then_vocab(self, config_file, tmp_path, capsys):
        out = str(tmp_path / "run")
        assert cli.main(["synth", "--config", config_file, "--out", out]) == 0
        assert cli.main(["cohort", "--config", config_file, "--out", out]) == 0
        assert cli.main(["preprocess", "--config", config_file, "--out", out]) == 0
        assert cli.main(["vocab", "--config", config_file, "--out", out]) == 0
        paths = cli.RunPaths(out)
        for p in (paths.roster, paths.ledger, paths.exclusions, paths.cohort,
                  paths.summary, paths.sections, paths.vocab,
                  paths.resolved_config):
            assert os.path.exists(p), p

    def test_cohort_jsonl_has_entry_and_count_lines(self, config_file, tmp_path):
        out = str(tmp_path / "run")
        cli.main(["synth", "--config", config_file, "--out", out])
        cli.main(["cohort", "--config", config_file, "--out", out])
        rows = [json.loads(line) for line in
                open(cli.RunPaths(out).cohort, encoding="ascii")]
        entries = [r for r in rows if "patient_id" in r]
        counts = [r for r in rows if "counts" in r]
        assert len(counts) == 1  # one settings block in FAST_CONFIG
        assert counts[0]["counts"]["total"] == len(entries)

    def test_seed_flag_overrides_config(self, config_file, tmp_path):
        out_a = str(tmp_path / "a")
        out_b = str(tmp_path / "b")
        cli.main(["synth", "--config", config_file, "--out", out_a])
        cli.main(["synth", "--config", config_file, "--out", out_b,
                  "--seed", "99"])
        roster_a = open(cli.RunPaths(out_a).roster, encoding="ascii").read()
        roster_b = open(cli.RunPaths(out_b).roster, encoding="ascii").read()
        assert roster_a != roster_b
        resolved = json.load(open(cli.RunPaths(out_b).resolved_config))
        assert resolved["seed"] == 99

    def test_resolved_config_is_fully_defaulted(self, config_file, tmp_path):
        out = str(tmp_path / "run")
        cli.main(["synth", "--config", config_file, "--out", out])
        resolved = json.load(open(cli.RunPaths(out).resolved_config))
        assert set(resolved) == set(cli.DEFAULT_CONFIG)
        assert resolved["finetune"]["threshold"] == 0.5


class TestFullPipeline:
    def test_pipeline_produces_eval_artifacts(self, config_file, tmp_path,
                                              capsys):
        out = str(tmp_path / "run")
        assert cli.main(["pipeline", "--config", config_file, "--out", out]) == 0
        paths = cli.RunPaths(out)
        assert os.path.exists(os.path.join(paths.pretrain_dir, "loss_curve.csv"))
        assert os.path.exists(os.path.join(paths.finetune_dir("no_restrict"),
                                           "train_report.csv"))
        assert os.path.exists(os.path.join(paths.eval_dir, "metrics.csv"))
        assert os.path.exists(os.path.join(paths.eval_dir, "comparison.csv"))
        attention_dir = os.path.join(paths.eval_dir, "attention")
        assert os.listdir(attention_dir)
        header = open(os.path.join(paths.eval_dir, "metrics.csv")).readline()
        assert header.startswith("setting,model,auc,f1")
