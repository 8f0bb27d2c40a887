import json
import time

import pytest

from fruitband.pipeline import PipelineConfig, run_pipeline
from fruitband.synth import GenConfig
from fruitband.training import TrainConfig


def desk_config(tmp_path, **overrides):
    cfg = PipelineConfig(
        output_root=str(tmp_path / "run"),
        gen=GenConfig(fruits_per_class=2, views_per_fruit=3, resolution=(128, 112),
                      noise_sigma=0.02, master_seed=5),
        register={"search_radius": 8},
        maskproc={"min_area": 4, "connectivity": 8},
        train=TrainConfig(epochs=2, batch_size=8, seed=5),
        models=["tiny"],
        arms=["single_nb"],
        val_fraction=0.34,
        split_seed=3,
        input_size=(64, 64),
        master_seed=5,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


class TestPipeline:
    def test_end_to_end_artifacts(self, tmp_path):
        cfg = desk_config(tmp_path)
        summary = run_pipeline(cfg)
        root = tmp_path / "run"
        assert summary["records"] == 18
        assert (root / "run_meta.json").is_file()
        assert (root / "data" / "manifest.json").is_file()
        assert (root / "registered" / "registration_report.json").is_file()
        assert (root / "masks" / "manifest.json").is_file()
        assert (root / "results" / "tiny" / "single_nb" / "result.json").is_file()
        assert (root / "reports" / "table1.txt").is_file()
        meta = json.loads((root / "run_meta.json").read_text())
        assert {"subcommand", "artifact_version", "config_hash", "config"} <= set(meta)
        assert meta["config"]["master_seed"] == 5

    def test_second_run_uses_caches(self, tmp_path):
        cfg = desk_config(tmp_path)
        t0 = time.monotonic()
        first = run_pipeline(cfg)
        first_wall = time.monotonic() - t0

        result_file = tmp_path / "run" / "results" / "tiny" / "single_nb" / "result.json"
        before = result_file.read_bytes()
        t1 = time.monotonic()
        second = run_pipeline(desk_config(tmp_path))
        second_wall = time.monotonic() - t1

        assert second["results"] == first["results"]
        assert result_file.read_bytes() == before
        assert second_wall < 0.1 * first_wall

    def test_config_json_round_trip(self, tmp_path):
        cfg = desk_config(tmp_path)
        path = tmp_path / "pipeline.json"
        path.write_text(json.dumps(cfg.to_dict()))
        loaded = PipelineConfig.from_json(path)
        assert loaded.to_dict() == cfg.to_dict()

    def test_reseeding_changes_gen_and_train(self, tmp_path):
        cfg = desk_config(tmp_path, master_seed=9)
        assert cfg.master_seed == 9
        path = tmp_path / "pipeline.json"
        path.write_text(json.dumps(cfg.to_dict()))
        loaded = PipelineConfig.from_json(path)
        assert loaded.gen.master_seed == 9
        assert loaded.train.seed == 9
