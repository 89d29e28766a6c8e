import copy
import json
import pickle
from pathlib import Path

import numpy as np
import pytest
import yaml

from mflo.checkpoint import (
    FORMAT_VERSION,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from mflo.config import ConfigError, RunConfig, load_config
from mflo.controller import ActiveLearningRun
from mflo.report import build_result, emit_run_report


class TestConfig:
    def test_minimal_config_fully_defaulted(self):
        cfg = RunConfig.from_dict({})
        assert cfg.seeds == [0]
        assert cfg.mode == "full"
        assert cfg.n_fidelities == 4
        assert cfg.escalation_gamma == (0.5, 0.5, 0.5)
        assert cfg.max_cost == 20000.0
        assert cfg.controller.seed_low == 2000
        assert cfg.model.latent_dim == 16

    def test_negative_budget_names_field(self):
        with pytest.raises(ConfigError, match="budget.max_cost"):
            RunConfig.from_dict({"budget": {"max_cost": -5}})

    def test_single_fidelity_env_with_gamma_rejected(self):
        data = {
            "environment": {"rho": [1.0], "noise": [0.0], "cost": [1.0]},
            "escalation": {"gamma": [0.5]},
        }
        with pytest.raises(ConfigError, match="escalation.gamma"):
            RunConfig.from_dict(data)

    def test_gamma_count_must_match(self):
        with pytest.raises(ConfigError, match="escalation.gamma"):
            RunConfig.from_dict({"escalation": {"gamma": [0.5, 0.5]}})

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="wibble"):
            RunConfig.from_dict({"wibble": 3})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError, match="model"):
            RunConfig.from_dict({"model": {"latent_dmi": 8}})

    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigError, match="mode"):
            RunConfig.from_dict({"mode": "drop_fidelity_9"})

    def test_round_trip(self, micro_config_dict):
        cfg = RunConfig.from_dict(micro_config_dict)
        again = RunConfig.from_dict(cfg.to_dict())
        assert cfg.to_dict() == again.to_dict()

    def test_overrides(self):
        cfg = RunConfig.from_dict({})
        out = cfg.with_overrides(seed=7, mode="no_likelihood", budget=500.0)
        assert out.seeds == [7]
        assert out.mode == "no_likelihood"
        assert out.max_cost == 500.0

    def test_load_yaml_file(self, tmp_path, micro_config_dict):
        path = tmp_path / "run.yaml"
        path.write_text(yaml.safe_dump(micro_config_dict))
        cfg = load_config(path)
        assert cfg.environment.alphabet_size == 6

    def test_load_empty_file_is_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config(path).mode == "full"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.yaml")

    def test_external_environment_config(self):
        data = {
            "environment": {
                "kind": "external",
                "alphabet_size": 4,
                "length": 3,
                "oracles": [
                    {"command": "prog_a {sequence}", "cost": 1.0},
                    {"command": "prog_b {sequence}", "cost": 9.0},
                ],
            }
        }
        cfg = RunConfig.from_dict(data)
        assert cfg.n_fidelities == 2
        assert cfg.escalation_gamma == (0.5,)

    def test_external_oracle_missing_placeholder(self):
        data = {
            "environment": {
                "kind": "external",
                "oracles": [{"command": "prog_a", "cost": 1.0}],
            }
        }
        with pytest.raises(ConfigError, match="placeholder"):
            RunConfig.from_dict(data)


@pytest.fixture
def sample_payload():
    return {
        "version_tag": "x",
        "values": np.arange(6.0).reshape(2, 3),
        "nested": {"a": [1, 2, 3], "b": (4.0, 5.0)},
        "flag": True,
    }


class TestCheckpoint:
    def test_save_load_save_identical_bytes(self, tmp_path, sample_payload):
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(sample_payload, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_clean_failure(self, tmp_path, sample_payload):
        path = tmp_path / "c.bin"
        save_checkpoint(sample_payload, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated or corrupt"):
            load_checkpoint(path)

    def test_version_mismatch_names_both(self, tmp_path, sample_payload):
        path = tmp_path / "d.bin"
        envelope = {"format_version": FORMAT_VERSION + 7, "schema_hash": "x",
                    "payload": sample_payload}
        path.write_bytes(pickle.dumps(envelope, protocol=4))
        with pytest.raises(CheckpointError) as err:
            load_checkpoint(path)
        assert str(FORMAT_VERSION + 7) in str(err.value)
        assert str(FORMAT_VERSION) in str(err.value)

    def test_schema_drift_detected(self, tmp_path, sample_payload):
        path = tmp_path / "e.bin"
        envelope = {"format_version": FORMAT_VERSION,
                    "schema_hash": "0" * 64, "payload": sample_payload}
        path.write_bytes(pickle.dumps(envelope, protocol=4))
        with pytest.raises(CheckpointError, match="schema hash"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "none.bin")


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    from tests.conftest import MICRO_CONFIG

    out = tmp_path_factory.mktemp("run_out")
    cfg = RunConfig.from_dict(copy.deepcopy(MICRO_CONFIG))
    run = ActiveLearningRun(cfg, seed=0)
    result = run.run(checkpoint_path=out / "checkpoint.bin")
    emit_run_report(result, out)
    return run, result, out


class TestReportEmission:
    def test_trace_row_count(self, finished_run):
        run, result, out = finished_run
        lines = (out / "trace.csv").read_text().strip().splitlines()
        expected = run.stats.seed_queries + run.stats.al_steps + run.stats.final_evals
        assert len(lines) - 1 == expected == len(result.records)

    def test_top3_sorted_best_first(self, finished_run):
        _, result, _ = finished_run
        assert result.top3 == sorted(result.top3)

    def test_summary_recomputable_from_trace(self, finished_run):
        _, result, out = finished_run
        import csv as csv_mod

        with open(out / "trace.csv") as handle:
            rows = list(csv_mod.DictReader(handle))
        finals = [float(r["score"]) for r in rows if r["phase"] == "final"]
        assert np.mean(finals) == pytest.approx(result.mean_score)
        assert sorted(finals)[:3] == pytest.approx(result.top3)
        total = sum(float(r["cost"]) for r in rows)
        assert total == pytest.approx(result.total_cost)

    def test_series_covers_al_phase(self, finished_run):
        run, _, out = finished_run
        lines = (out / "series.csv").read_text().strip().splitlines()
        assert len(lines) - 1 == run.stats.al_steps - run.stats.failed_queries

    def test_report_json_includes_config_echo(self, finished_run):
        run, _, out = finished_run
        payload = json.loads((out / "report.json").read_text())
        assert payload["config"] == run.config.to_dict()

    def test_figures_rendered(self, finished_run):
        _, _, out = finished_run
        assert (out / "figures" / "al_progress.png").stat().st_size > 0

    def test_reemit_from_checkpoint_identical(self, finished_run, tmp_path):
        _, _, out = finished_run
        payload = load_checkpoint(out / "checkpoint.bin")
        run2 = ActiveLearningRun.from_snapshot(payload)
        emit_run_report(build_result(run2), tmp_path)
        for name in ("summary.csv", "trace.csv", "series.csv", "report.json"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


class TestResumeEquivalence:
    def test_interrupted_resume_matches_uninterrupted(self, micro_config_dict, tmp_path):
        cfg = RunConfig.from_dict(micro_config_dict)

        solid_dir = tmp_path / "solid"
        solid_dir.mkdir()
        solid = ActiveLearningRun(cfg, seed=0)
        solid_result = solid.run(checkpoint_path=solid_dir / "checkpoint.bin")
        emit_run_report(solid_result, solid_dir)

        broken_dir = tmp_path / "broken"
        broken_dir.mkdir()
        broken = ActiveLearningRun(RunConfig.from_dict(micro_config_dict), seed=0)
        paused = broken.run(checkpoint_path=broken_dir / "checkpoint.bin",
                            stop_after_steps=3)
        assert paused is None  # interrupted mid-loop

        payload = load_checkpoint(broken_dir / "checkpoint.bin")
        resumed = ActiveLearningRun.from_snapshot(payload)
        resumed_result = resumed.run(checkpoint_path=broken_dir / "checkpoint.bin")
        emit_run_report(resumed_result, broken_dir)

        for name in ("summary.csv", "trace.csv", "series.csv", "report.json",
                     "figures/al_progress.png"):
            assert (broken_dir / name).read_bytes() == (solid_dir / name).read_bytes(), name
