"""Pipeline orchestration: config file, run directories, subcommands.

Every stage is a subcommand writing into a fixed run-directory layout
(embeddings/, stack/, samples/, reports/, logs/).  Artifacts embed the
hash of the effective config and the seeds that produced them, so equal
configs yield byte-identical artifacts; timestamps appear only in
``logs/*.log``.

Exit codes: 0 success, 2 usage or validation failure, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import embeddings as emb
from . import gan, generate, grids, metrics, pyramid

LOG_DIRS = ("embeddings", "stack", "samples", "reports", "logs")


class ConfigError(ValueError):
    """The run config file is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class EmbeddingSection:
    dimension: int = emb.DEFAULT_DIMENSION
    epochs: int = emb.DEFAULT_EPOCHS
    learning_rate: float = emb.DEFAULT_LEARNING_RATE
    neighborhood: str = emb.AXIS6
    subsample: bool = True
    external_path: str | None = None


@dataclass(frozen=True)
class TrainSection:
    alpha: float = 10.0
    gp_lambda: float = 0.1
    steps_per_scale: int = 2000
    generator_steps: int = 3
    discriminator_steps: int = 3
    lr_generator: float = 5e-4
    lr_discriminator: float = 5e-4
    blocks: int = 5
    kernel: int = 3
    base_channels: int = 32


@dataclass(frozen=True)
class EvaluateSection:
    pattern_sizes: tuple[int, ...] = metrics.DEFAULT_PATTERN_SIZES
    epsilon: float = metrics.DEFAULT_EPSILON
    sample_count: int = 20
    slice_axis: str = metrics.SLICE_AXIS_VERTICAL


@dataclass(frozen=True)
class RunConfig:
    input: Path
    output: Path
    seed: int = 0
    factors: tuple[float, ...] = pyramid.DEFAULT_FACTORS
    embedding: EmbeddingSection = EmbeddingSection()
    train: TrainSection = TrainSection()
    evaluate: EvaluateSection = EvaluateSection()

    @classmethod
    def load(cls, path, seed: int | None = None,
             output: str | None = None) -> "RunConfig":
        """Parse and validate a config file, applying CLI overrides."""
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        known = {"input", "output", "seed", "factors", "embedding", "train", "evaluate"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
        if "input" not in raw or "output" not in raw:
            raise ConfigError(f"{path}: config needs 'input' and 'output' fields")
        try:
            config = cls(
                input=Path(raw["input"]),
                output=Path(output if output is not None else raw["output"]),
                seed=int(seed if seed is not None else raw.get("seed", 0)),
                factors=tuple(raw.get("factors", pyramid.DEFAULT_FACTORS)),
                embedding=_section(EmbeddingSection, raw.get("embedding"), path),
                train=_section(TrainSection, raw.get("train"), path),
                evaluate=_section(EvaluateSection, raw.get("evaluate"), path),
            )
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}")
        if not config.input.is_file():
            raise ConfigError(f"input snippet {config.input} does not exist")
        external = config.embedding.external_path
        if external is not None and not Path(external).is_file():
            raise ConfigError(f"external embedding file {external} does not exist")
        return config

    def canonical(self) -> dict:
        # Everything that affects artifact content; the output location
        # deliberately isn't part of it, so equal configs pointed at
        # different directories produce byte-identical artifacts.
        data = dataclasses.asdict(self)
        data["input"] = str(self.input)
        del data["output"]
        data["factors"] = list(self.factors)
        data["evaluate"]["pattern_sizes"] = list(self.evaluate.pattern_sizes)
        return data

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def meta(self, seed: int | None = None) -> dict:
        return {"config_hash": self.config_hash,
                "seed": self.seed if seed is None else seed}


def _section(section_cls, raw, path):
    if raw is None:
        return section_cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: section {section_cls.__name__} must be an object")
    fields = {f.name for f in dataclasses.fields(section_cls)}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)} in "
                          f"{section_cls.__name__.replace('Section', '').lower()} section")
    if "pattern_sizes" in raw:
        raw = dict(raw, pattern_sizes=tuple(raw["pattern_sizes"]))
    return section_cls(**raw)


def _infer_format(path: Path) -> str:
    return grids.CSV_FORMAT if path.suffix.lower() == ".csv" else grids.JSON_FORMAT


def _run_dirs(output: Path) -> dict[str, Path]:
    dirs = {name: output / name for name in LOG_DIRS}
    for directory in dirs.values():
        directory.mkdir(parents=True, exist_ok=True)
    return dirs


class _Log:
    """Plain append log; the only artifacts allowed to carry timestamps."""

    def __init__(self, path: Path):
        self.path = path

    def write(self, message: str) -> None:
        stamp = time.strftime("%Y-%m-%d %H:%M:%S")
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(f"[{stamp}] {message}\n")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _embedding_table(config: RunConfig, dirs: dict[str, Path],
                     grid: grids.LevelGrid, log: _Log) -> emb.EmbeddingTable:
    """Load external embeddings, reuse an earlier run's, or train inline."""
    if config.embedding.external_path is not None:
        log.write(f"loading external embeddings from {config.embedding.external_path}")
        return emb.load_external_embeddings(config.embedding.external_path)
    tokens_path = dirs["embeddings"] / "tokens.json"
    if tokens_path.is_file():
        log.write(f"reusing embeddings at {tokens_path}")
        return emb.load_embeddings(tokens_path)
    return _train_table(config, dirs, grid, log)


def _train_table(config: RunConfig, dirs: dict[str, Path],
                 grid: grids.LevelGrid, log: _Log) -> emb.EmbeddingTable:
    section = config.embedding
    stats = grids.token_stats(grid)
    pairs = emb.build_context_dataset(
        grid, section.neighborhood, stats, seed=config.seed,
        subsample=section.subsample)
    log.write(f"context dataset: {len(pairs)} pairs from {grid.voxels.size} voxels")
    losses: list[float] = []
    table = emb.train_embeddings(
        pairs, grid.palette, dimension=section.dimension, epochs=section.epochs,
        learning_rate=section.learning_rate, seed=config.seed,
        on_epoch=lambda epoch, loss: losses.append(loss))
    emb.save_embeddings(table, dirs["embeddings"] / "tokens.json",
                        meta=config.meta())
    _write_json(dirs["logs"] / "embedding_losses.json", {
        "loss_per_epoch": losses,
        "pairs": len(pairs),
        **config.meta(),
    })
    log.write(f"trained {table.dimension}-dimensional embeddings for "
              f"{len(table.palette)} tokens")
    return table


def cmd_train_embeddings(config: RunConfig) -> int:
    dirs = _run_dirs(config.output)
    log = _Log(dirs["logs"] / "run.log")
    grid = grids.load_level(config.input, _infer_format(config.input))
    _train_table(config, dirs, grid, log)
    print(f"embeddings written to {dirs['embeddings'] / 'tokens.json'}")
    return 0


def cmd_train(config: RunConfig) -> int:
    dirs = _run_dirs(config.output)
    log = _Log(dirs["logs"] / "run.log")
    grid = grids.load_level(config.input, _infer_format(config.input))
    table = _embedding_table(config, dirs, grid, log)
    field = emb.encode_level(grid, table)
    scale_pyramid = pyramid.build_pyramid(field, config.factors)
    section = config.train
    train_config = gan.TrainConfig(
        alpha=section.alpha, gp_lambda=section.gp_lambda,
        steps_per_scale=section.steps_per_scale,
        generator_steps=section.generator_steps,
        discriminator_steps=section.discriminator_steps,
        lr_generator=section.lr_generator,
        lr_discriminator=section.lr_discriminator,
        dimension=table.dimension, factors=config.factors, seed=config.seed,
        net=gan.ConvNetSpec(blocks=section.blocks, kernel=section.kernel,
                            base_channels=section.base_channels),
    )
    curves: dict[int, dict[str, list[float]]] = {}
    def record(scale: int, step: int, losses: dict) -> None:
        per_scale = curves.setdefault(scale, {key: [] for key in losses})
        for key, value in losses.items():
            per_scale.setdefault(key, []).append(value)
    log.write(f"training {len(config.factors)} scales on shapes "
              f"{scale_pyramid.shapes}")
    stack = gan.train(scale_pyramid, train_config, table, on_step=record)
    gan.save_stack(stack, dirs["stack"])
    _write_json(dirs["logs"] / "train_losses.json", {
        "per_scale": {str(scale): losses for scale, losses in curves.items()},
        **config.meta(),
    })
    log.write(f"stack saved to {dirs['stack']}")
    print(f"stack written to {dirs['stack']}")
    return 0


def _stack_hash(stack_dir: Path) -> str:
    digest = hashlib.sha256((stack_dir / "config.json").read_bytes())
    return digest.hexdigest()[:16]


def cmd_generate(stack_dir: Path, size_factors: Sequence[float], count: int,
                 seed: int, style_map_path: Path | None, output: Path) -> int:
    if not stack_dir.is_dir():
        raise ConfigError(f"stack directory {stack_dir} does not exist")
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    stack = gan.load_stack(stack_dir)
    style = generate.load_style_map(style_map_path) if style_map_path else None
    output.mkdir(parents=True, exist_ok=True)
    stack_hash = _stack_hash(stack_dir)
    for index in range(count):
        sample_seed = seed + index
        _, grid = generate.sample(stack, size_factors, seed=sample_seed)
        if style is not None:
            grid = generate.apply_style_map(grid, style)
        path = output / f"sample_{index:03d}.json"
        grids.save_level(grid, path, meta={
            "config_hash": stack_hash,
            "seed": sample_seed,
            "size_factors": [float(f) for f in size_factors],
        })
        print(f"wrote {path} shape={grid.shape}")
    return 0


def _align_palette(sample_grid: grids.LevelGrid,
                   reference: grids.LevelGrid, name: str) -> grids.LevelGrid:
    """Re-index a sample's voxels into the reference palette (by name)."""
    if sample_grid.palette == reference.palette:
        return sample_grid
    lookup = {token: i for i, token in enumerate(reference.palette)}
    missing = [t for t in sample_grid.palette if t not in lookup]
    if missing:
        raise ConfigError(
            f"sample {name} uses tokens {missing} absent from the original palette"
        )
    index_map = np.array([lookup[t] for t in sample_grid.palette], dtype=np.int32)
    return grids.LevelGrid(index_map[sample_grid.voxels], reference.palette)


def cmd_evaluate(original_path: Path, samples_dir: Path,
                 section: EvaluateSection, output: Path,
                 config_hash: str = "") -> int:
    if not samples_dir.is_dir():
        raise ConfigError(f"samples directory {samples_dir} does not exist")
    original = grids.load_level(original_path, _infer_format(original_path))
    sample_paths = sorted(samples_dir.glob("*.json"))
    if not sample_paths:
        raise ConfigError(f"no *.json samples in {samples_dir}")
    samples = [
        _align_palette(grids.load_level(p), original, p.name) for p in sample_paths
    ]
    per_sample = [
        metrics.tpkl_div(original, grid, section.pattern_sizes, section.epsilon)
        for grid in samples
    ]
    variability = (metrics.pairwise_variability(samples, section.slice_axis)
                   if len(samples) >= 2 else None)
    histogram = metrics.histogram_report(original, samples)
    report = {
        "config_hash": config_hash,
        "protocol": {
            "pattern_sizes": list(section.pattern_sizes),
            "epsilon": section.epsilon,
            "slice_axis": section.slice_axis,
            "sample_count": len(samples),
            "original": str(original_path),
        },
        "tpkl_div": {
            "mean": sum(per_sample) / len(per_sample),
            "per_sample": {p.name: v for p, v in zip(sample_paths, per_sample)},
        },
        "levenshtein_variability": variability,
        "block_histogram": histogram.as_dict(),
    }
    output.mkdir(parents=True, exist_ok=True)
    report_path = output / "evaluation.json"
    _write_json(report_path, report)
    print(f"report written to {report_path}")
    print(f"tpkl_div mean: {report['tpkl_div']['mean']:.6f}")
    if variability is not None:
        print(f"levenshtein variability: {variability:.3f}")
    return 0


def cmd_edit_style(input_path: Path, style_map_path: Path, output_path: Path) -> int:
    grid = grids.load_level(input_path, _infer_format(input_path))
    style = generate.load_style_map(style_map_path)
    edited = generate.apply_style_map(grid, style)
    grids.save_level(edited, output_path, _infer_format(output_path))
    print(f"wrote {output_path} with palette {list(edited.palette)}")
    return 0


def cmd_estimate_memory(shape: Sequence[int], channels: int,
                        bytes_per_value: int) -> int:
    mb = grids.memory_footprint(shape, channels, bytes_per_value)
    print(f"{mb:.2f} MB")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxelgan",
        description="Single-example generative pipeline for voxel snippets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override global seed")
        p.add_argument("--output", default=None, help="override output directory")

    with_config(sub.add_parser("train-embeddings",
                               help="learn token embeddings from the snippet"))
    with_config(sub.add_parser("train", help="train the multi-scale generator stack"))

    p = sub.add_parser("generate", help="sample snippets from a trained stack")
    p.add_argument("--stack", required=True, help="stack directory")
    p.add_argument("--output", required=True, help="directory for sample files")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size-factors", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                   metavar=("FD", "FH", "FW"))
    p.add_argument("--style-map", default=None, help="JSON token renaming map")

    p = sub.add_parser("evaluate", help="compare generated samples to an original")
    p.add_argument("--original", required=True)
    p.add_argument("--samples", required=True, help="directory of sample files")
    p.add_argument("--output", required=True, help="directory for the report")
    p.add_argument("--config", default=None, help="run config JSON (evaluate section)")
    p.add_argument("--pattern-sizes", type=int, nargs="+", default=None)
    p.add_argument("--epsilon", type=float, default=None)

    p = sub.add_parser("edit-style", help="rename tokens of a snippet")
    p.add_argument("--input", required=True)
    p.add_argument("--style-map", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("estimate-memory",
                       help="dense-tensor storage for a shape and channel count")
    p.add_argument("--shape", type=int, nargs="+", required=True)
    p.add_argument("--channels", type=int, required=True)
    p.add_argument("--bytes-per-value", type=int, default=4)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command in ("train-embeddings", "train"):
        config = RunConfig.load(args.config, seed=args.seed, output=args.output)
        if args.command == "train-embeddings":
            return cmd_train_embeddings(config)
        return cmd_train(config)
    if args.command == "generate":
        style = Path(args.style_map) if args.style_map else None
        return cmd_generate(Path(args.stack), tuple(args.size_factors), args.count,
                            args.seed, style, Path(args.output))
    if args.command == "evaluate":
        if args.config is not None:
            section = RunConfig.load(args.config).evaluate
            config_hash = RunConfig.load(args.config).config_hash
        else:
            section = EvaluateSection()
            config_hash = ""
        if args.pattern_sizes is not None:
            section = dataclasses.replace(section,
                                          pattern_sizes=tuple(args.pattern_sizes))
        if args.epsilon is not None:
            section = dataclasses.replace(section, epsilon=args.epsilon)
        return cmd_evaluate(Path(args.original), Path(args.samples), section,
                            Path(args.output), config_hash)
    if args.command == "edit-style":
        return cmd_edit_style(Path(args.input), Path(args.style_map),
                              Path(args.output))
    if args.command == "estimate-memory":
        return cmd_estimate_memory(args.shape, args.channels, args.bytes_per_value)
    raise ValueError(f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
