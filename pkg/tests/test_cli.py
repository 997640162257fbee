import json

import numpy as np
import pytest

from voxelgan.cli import main
from voxelgan.grids import LevelGrid, load_level, save_level

from conftest import stripe_grid


def write_config(tmp_path, snippet, output, **overrides):
    config = {
        "input": str(snippet),
        "output": str(output),
        "seed": 7,
        "factors": [1.0, 0.5],
        "embedding": {"dimension": 4, "epochs": 2, "subsample": False},
        "train": {"steps_per_scale": 2, "generator_steps": 1,
                  "discriminator_steps": 1, "blocks": 2, "base_channels": 4},
        "evaluate": {"pattern_sizes": [1, 2], "sample_count": 3},
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


@pytest.fixture
def snippet(tmp_path):
    path = tmp_path / "snippet.json"
    save_level(stripe_grid(size=6), path)
    return path


@pytest.fixture
def run(tmp_path, snippet):
    output = tmp_path / "run"
    config = write_config(tmp_path, snippet, output)
    return config, output


class TestTrainEmbeddingsCommand:
    def test_writes_table_with_k_rows(self, run, capsys):
        config, output = run
        assert main(["train-embeddings", "--config", str(config)]) == 0
        payload = json.loads((output / "embeddings" / "tokens.json").read_text())
        assert payload["dimension"] == 4
        assert set(payload["tokens"]) == {"air", "stone"}
        losses = json.loads((output / "logs" / "embedding_losses.json").read_text())
        assert len(losses["loss_per_epoch"]) == 2

    def test_rerun_is_byte_identical(self, tmp_path, snippet):
        outputs = []
        for name in ("a", "b"):
            output = tmp_path / name
            config = write_config(tmp_path, snippet, output)
            assert main(["train-embeddings", "--config", str(config)]) == 0
            outputs.append((output / "embeddings" / "tokens.json").read_bytes())
        assert outputs[0] == outputs[1]

    def test_missing_input_exits_2(self, tmp_path, capsys):
        config = write_config(tmp_path, tmp_path / "nope.json", tmp_path / "run")
        assert main(["train-embeddings", "--config", str(config)]) == 2
        assert "does not exist" in capsys.readouterr().err


class TestTrainCommand:
    def test_zero_step_run_emits_valid_stack(self, tmp_path, snippet):
        output = tmp_path / "run"
        config = write_config(
            tmp_path, snippet, output,
            train={"steps_per_scale": 0, "blocks": 2, "base_channels": 4})
        assert main(["train", "--config", str(config)]) == 0
        stack_dir = output / "stack"
        assert (stack_dir / "config.json").is_file()
        assert (stack_dir / "sigmas.json").is_file()
        assert (stack_dir / "scale_0.bin").is_file()
        assert (stack_dir / "scale_1.bin").is_file()
        from voxelgan.gan import load_stack
        stack = load_stack(stack_dir)
        assert stack.seed == 7

    def test_corrupt_embedding_file_exits_2(self, run, capsys):
        config, output = run
        (output / "embeddings").mkdir(parents=True)
        (output / "embeddings" / "tokens.json").write_text("{not json")
        assert main(["train", "--config", str(config)]) == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_loss_curves_written(self, run):
        config, output = run
        assert main(["train", "--config", str(config)]) == 0
        curves = json.loads((output / "logs" / "train_losses.json").read_text())
        assert set(curves["per_scale"]) == {"0", "1"}
        assert len(curves["per_scale"]["0"]["reconstruction"]) == 2


class TestGenerateCommand:
    @pytest.fixture
    def stack_dir(self, run):
        config, output = run
        assert main(["train", "--config", str(config)]) == 0
        return output / "stack"

    def test_count_three_distinct_files(self, stack_dir, tmp_path):
        samples = tmp_path / "samples"
        assert main(["generate", "--stack", str(stack_dir), "--output",
                     str(samples), "--count", "3", "--seed", "5"]) == 0
        paths = sorted(samples.glob("*.json"))
        assert len(paths) == 3
        contents = [p.read_bytes() for p in paths]
        assert len(set(contents)) > 1
        seeds = [json.loads(c)["meta"]["seed"] for c in contents]
        assert seeds == [5, 6, 7]

    def test_native_size(self, stack_dir, tmp_path):
        samples = tmp_path / "samples"
        assert main(["generate", "--stack", str(stack_dir),
                     "--output", str(samples)]) == 0
        grid = load_level(samples / "sample_000.json")
        assert grid.shape == (6, 6, 6)

    def test_style_map_applied(self, stack_dir, tmp_path):
        style = tmp_path / "style.json"
        style.write_text(json.dumps({"stone": "red_sandstone"}))
        samples = tmp_path / "samples"
        assert main(["generate", "--stack", str(stack_dir), "--output",
                     str(samples), "--style-map", str(style)]) == 0
        grid = load_level(samples / "sample_000.json")
        assert "red_sandstone" in grid.palette
        assert "stone" not in grid.palette

    def test_missing_stack_exits_2(self, tmp_path, capsys):
        assert main(["generate", "--stack", str(tmp_path / "nope"),
                     "--output", str(tmp_path / "s")]) == 2


class TestEvaluateCommand:
    def test_copies_of_original_score_zero(self, snippet, tmp_path):
        samples = tmp_path / "samples"
        samples.mkdir()
        grid = load_level(snippet)
        for i in range(3):
            save_level(grid, samples / f"sample_{i:03d}.json")
        reports = tmp_path / "reports"
        assert main(["evaluate", "--original", str(snippet), "--samples",
                     str(samples), "--output", str(reports),
                     "--pattern-sizes", "1", "2"]) == 0
        report = json.loads((reports / "evaluation.json").read_text())
        assert report["tpkl_div"]["mean"] == 0.0
        assert report["levenshtein_variability"] == 0.0
        assert report["protocol"]["pattern_sizes"] == [1, 2]
        assert report["protocol"]["sample_count"] == 3
        assert report["block_histogram"]["tokens"]["air"]["variance"] == 0.0

    def test_missing_samples_dir_exits_2(self, snippet, tmp_path, capsys):
        assert main(["evaluate", "--original", str(snippet), "--samples",
                     str(tmp_path / "nope"), "--output", str(tmp_path)]) == 2
        assert "does not exist" in capsys.readouterr().err


class TestEditStyleCommand:
    def test_renames_palette(self, snippet, tmp_path):
        style = tmp_path / "style.json"
        style.write_text(json.dumps({"air": "cave_air"}))
        out = tmp_path / "edited.json"
        assert main(["edit-style", "--input", str(snippet), "--style-map",
                     str(style), "--output", str(out)]) == 0
        edited = load_level(out)
        assert edited.palette == ("cave_air", "stone")
        assert np.array_equal(edited.voxels, load_level(snippet).voxels)


class TestEstimateMemoryCommand:
    @pytest.mark.parametrize("shape,channels,expected", [
        (["202", "16"], "12", "0.16 MB"),
        (["121", "136", "33"], "71", "154.23 MB"),
        (["121", "136", "33"], "32", "69.51 MB"),
    ])
    def test_published_figures(self, capsys, shape, channels, expected):
        assert main(["estimate-memory", "--shape", *shape,
                     "--channels", channels]) == 0
        assert capsys.readouterr().out.strip() == expected

    def test_single_channel(self, capsys):
        assert main(["estimate-memory", "--shape", "10", "10", "10",
                     "--channels", "1"]) == 0
        assert capsys.readouterr().out.strip() == "0.00 MB"

    def test_non_integer_shape_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["estimate-memory", "--shape", "1.5", "--channels", "2"])
        assert excinfo.value.code == 2


class TestConfigValidation:
    def test_unknown_field_rejected(self, tmp_path, snippet, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"input": str(snippet), "output": "x",
                                    "typo_field": 1}))
        assert main(["train-embeddings", "--config", str(path)]) == 2
        assert "typo_field" in capsys.readouterr().err

    def test_seed_override_changes_artifacts(self, tmp_path, snippet):
        tables = []
        for seed in ("3", "4"):
            output = tmp_path / f"run{seed}"
            config = write_config(tmp_path, snippet, output)
            assert main(["train-embeddings", "--config", str(config),
                         "--seed", seed]) == 0
            tables.append((output / "embeddings" / "tokens.json").read_bytes())
        assert tables[0] != tables[1]
