import json
import subprocess
import sys
from pathlib import Path

import pytest

from melkit.cli import main

FAST_CONFIG = {
    "seed": 5,
    "forge": {
        "n_person_entities": 8, "n_org_entities": 4, "collision_factor": 4,
        "mention_tweets_min": 6, "mention_tweets_max": 9,
        "timeline_mu": 1.8, "timeline_sigma": 0.4,
        "timeline_min": 3, "timeline_max": 15,
    },
    "features": {"dim_text": 16, "dim_image": 16},
    "jmel": {"d_hidden": 12, "d_branch": 8, "d_joint": 8, "margin": 0.5},
    "train": {"batch_size": 64, "max_epochs": 4, "negatives_per_positive": 4},
    "fusion": {"step_scale": 1.0, "max_iters": 25},
    "extratrees": {"n_trees": 10},
}


def write_config(tmp_path, out_name="run", **overrides):
    config = json.loads(json.dumps(FAST_CONFIG))
    config["out_dir"] = str(tmp_path / out_name)
    config.update(overrides)
    path = tmp_path / f"{out_name}.json"
    path.write_text(json.dumps(config))
    return path


def run(*argv):
    return main(list(argv))


class TestConfig:
    def test_unknown_top_level_key_is_usage_error(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"sed": 1}))
        assert run("forge", "--config", str(path)) == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_unknown_section_key_is_usage_error(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"train": {"batch_siez": 3}}))
        assert run("forge", "--config", str(path)) == 1
        assert "batch_siez" in capsys.readouterr().err

    def test_missing_config_file(self, capsys):
        assert run("forge", "--config", "/nope/nothing.json") == 1

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        assert run("forge", "--config", str(path)) == 1

    def test_unknown_row_feature_is_usage_error(self, tmp_path, capsys):
        config = write_config(tmp_path, eval={"rows": ["JMEL(Sound)"]})
        assert run("forge", "--config", str(config)) == 0
        assert run("features", "--config", str(config)) == 0
        assert run("eval", "--config", str(config)) == 1


class TestPipeline:
    def test_forge_then_stats(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert run("forge", "--config", str(config)) == 0
        assert run("stats", "--config", str(config)) == 0
        out_dir = tmp_path / "run"
        text = (out_dir / "stats.txt").read_text()
        assert "tweets_per_timeline" in text and "reference" in text
        assert (out_dir / "stats.csv").exists()

    def test_eval_without_jmel_model_exits_2_naming_artifact(self, tmp_path, capsys):
        config = write_config(tmp_path, eval={"rows": ["JMEL(S2V+Img)"]})
        assert run("forge", "--config", str(config)) == 0
        assert run("features", "--config", str(config)) == 0
        assert run("eval", "--config", str(config)) == 2
        err = capsys.readouterr().err
        assert "jmel-uni-bi-img.ckpt" in err and "train-jmel" in err

    def test_full_pipeline_emits_results(self, tmp_path, capsys):
        rows = ["Popularity", "BM25", "S2V-uni", "S2V-bi", "Img",
                "ET(S2V+Img)", "JMEL(S2V+Img)", "JMEL(S2V+Img+Pop+BM25)"]
        config = write_config(tmp_path, eval={"rows": rows},
                              extratrees={"n_trees": 10, "mask": ["uni", "bi", "img"]})
        for cmd in ("forge", "features", "index", "train-jmel", "train-fusion",
                    "train-et", "eval"):
            assert run(cmd, "--config", str(config)) == 0, cmd
        out_dir = tmp_path / "run"
        csv = (out_dir / "results.csv").read_text().strip().splitlines()
        assert csv[0] == "config,split,accuracy,n,empty_candidates,seed"
        assert len(csv) == 1 + 2 * len(rows)
        names = [line.split(",")[0] for line in csv[1:]]
        assert names == [r for r in rows for _ in range(2)]

    def test_features_validate_mode(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert run("forge", "--config", str(config)) == 0
        assert run("features", "--config", str(config)) == 0
        store = tmp_path / "run" / "features"
        assert run("features", "--validate", str(store)) == 0
        assert "store ok" in capsys.readouterr().out
        assert run("features", "--validate", str(tmp_path)) == 2

    def test_ablate_two_stores(self, tmp_path, capsys):
        config_path = write_config(tmp_path)
        assert run("forge", "--config", str(config_path)) == 0
        assert run("features", "--config", str(config_path)) == 0
        # second store with a different seed, same dims
        other = json.loads(config_path.read_text())
        other["seed"] = 6
        other["features_dir"] = str(tmp_path / "store-b")
        other_path = tmp_path / "other.json"
        other_path.write_text(json.dumps(other))
        assert run("features", "--config", str(other_path)) == 0

        final = json.loads(config_path.read_text())
        final["ablate"] = {"stores": {
            "oracle-a": str(tmp_path / "run" / "features"),
            "oracle-b": str(tmp_path / "store-b"),
        }}
        final_path = tmp_path / "final.json"
        final_path.write_text(json.dumps(final))
        assert run("ablate", "--config", str(final_path)) == 0
        csv = (tmp_path / "run" / "ablation.csv").read_text().strip().splitlines()
        assert len(csv) == 5  # header + 2 stores x {txt, txt+img}

    def test_mask_override_changes_artifact_name(self, tmp_path):
        config = write_config(tmp_path)
        assert run("forge", "--config", str(config)) == 0
        assert run("features", "--config", str(config)) == 0
        assert run("train-jmel", "--config", str(config), "--mask", "uni,bi") == 0
        assert (tmp_path / "run" / "models" / "jmel-uni-bi.ckpt").exists()


class TestDeterminism:
    def test_forge_and_features_byte_identical(self, tmp_path):
        for name in ("one", "two"):
            config = write_config(tmp_path, out_name=name)
            assert run("forge", "--config", str(config)) == 0
            assert run("features", "--config", str(config)) == 0
        for rel in ("data/kb.jsonl", "data/tweets.jsonl", "data/mentions.jsonl",
                    "data/topics.jsonl", "data/forge_report.json",
                    "features/manifest.json", "features/records.jsonl",
                    "features/images.jsonl"):
            a = (tmp_path / "one" / rel).read_bytes()
            b = (tmp_path / "two" / rel).read_bytes()
            assert a == b, rel

    def test_seed_override_changes_output(self, tmp_path):
        config = write_config(tmp_path, out_name="one")
        assert run("forge", "--config", str(config)) == 0
        config2 = write_config(tmp_path, out_name="two")
        assert run("forge", "--config", str(config2), "--seed", "99") == 0
        assert (tmp_path / "one" / "data" / "kb.jsonl").read_bytes() != \
               (tmp_path / "two" / "data" / "kb.jsonl").read_bytes()


class TestProcessLevel:
    def test_help_exits_zero(self):
        proc = subprocess.run([sys.executable, "-m", "melkit", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for sub in ("forge", "features", "index", "train-jmel", "train-fusion",
                    "train-et", "eval", "ablate", "stats"):
            assert sub in proc.stdout

    def test_no_subcommand_is_usage_error(self):
        proc = subprocess.run([sys.executable, "-m", "melkit"],
                              capture_output=True, text=True)
        assert proc.returncode == 1

    def test_missing_data_is_data_error(self, tmp_path):
        config = write_config(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "melkit", "index", "--config", str(config)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2
        assert "data error" in proc.stderr
