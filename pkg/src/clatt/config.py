"""Experiment configuration: JSON schema, validation, and overrides.

A single JSON file drives a whole experiment run. Validation errors
always name the offending field by its dotted path so a typo in a large
config is findable without reading the schema source.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .graphs import FEATURE_TRANSFORMS, TASKS
from .nn import ModelSpec
from .training import CANONICAL_TAGS, GRID_DROPOUTS, GRID_LRS

OUTPUT_DIR_ENV = "CLATT_OUT_DIR"

# accepted keys per clustering algorithm's params block
CLUSTERING_PARAM_KEYS = {
    "LA": ("gamma", "seed", "max_passes"),
    "BPP": ("k_max", "seed", "sweeps", "restarts"),
    "H1": ("k_max", "seed", "sweeps", "restarts"),
    "KM": ("k", "seed", "hidden", "layers", "steps", "lr", "max_iters"),
}


class ConfigError(ValueError):
    """Schema violation; the message starts with the field path."""


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


@dataclass(frozen=True)
class DatasetConfig:
    edges: Path
    nodes: Path | None = None
    id_column: str = "id"
    feature_columns: tuple | None = None
    target_column: str | None = None
    task: str = "multiclass"
    directed: bool = False


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple = (0.1, 0.1, 0.8)
    seed: int = 0
    stratified: bool = True


@dataclass(frozen=True)
class GridConfig:
    lrs: tuple = GRID_LRS
    dropouts: tuple = GRID_DROPOUTS
    transforms: tuple = ("none",)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    models: tuple
    split: SplitConfig = field(default_factory=SplitConfig)
    clusterings: dict = field(default_factory=dict)
    min_cluster_size: int = 4
    max_cluster_size: int = 512
    grid: GridConfig | None = None
    seeds: tuple = tuple(range(10))
    steps: int = 1000
    eval_every: int = 10
    selection_model: ModelSpec | None = None
    output_dir: Path = Path(".")

    def needed_tags(self) -> tuple:
        tags = set()
        for m in self.models:
            tags.update(m.clusterings)
        if self.selection_model is not None:
            tags.update(CANONICAL_TAGS)
        return tuple(t for t in CANONICAL_TAGS if t in tags)


def _expect(raw, path, typ, what):
    if not isinstance(raw, typ):
        _fail(path, f"expected {what}, got {type(raw).__name__}")
    return raw


def _check_keys(raw: dict, path: str, allowed):
    for key in raw:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown config key")


def _int_field(raw, path, minimum=None):
    if isinstance(raw, bool) or not isinstance(raw, int):
        _fail(path, f"expected an integer, got {raw!r}")
    if minimum is not None and raw < minimum:
        _fail(path, f"must be >= {minimum}, got {raw}")
    return raw


def _parse_dataset(raw, base: Path) -> DatasetConfig:
    _expect(raw, "dataset", dict, "an object")
    _check_keys(raw, "dataset", ("edges", "nodes", "id_column", "feature_columns", "target_column", "task", "directed"))
    if "edges" not in raw:
        _fail("dataset.edges", "required")
    edges = base / str(raw["edges"])
    if not edges.is_file():
        _fail("dataset.edges", f"file not found: {edges}")
    nodes = None
    if raw.get("nodes") is not None:
        nodes = base / str(raw["nodes"])
        if not nodes.is_file():
            _fail("dataset.nodes", f"file not found: {nodes}")
    task = raw.get("task", "multiclass")
    if task not in TASKS:
        _fail("dataset.task", f"must be one of {TASKS}, got {task!r}")
    cols = raw.get("feature_columns")
    if cols is not None:
        cols = tuple(_expect(cols, "dataset.feature_columns", list, "a list"))
    return DatasetConfig(
        edges=edges,
        nodes=nodes,
        id_column=str(raw.get("id_column", "id")),
        feature_columns=cols,
        target_column=raw.get("target_column"),
        task=task,
        directed=bool(raw.get("directed", False)),
    )


def _parse_split(raw, task: str) -> SplitConfig:
    _expect(raw, "split", dict, "an object")
    _check_keys(raw, "split", ("ratios", "seed", "stratified"))
    ratios = raw.get("ratios", [0.1, 0.1, 0.8])
    _expect(ratios, "split.ratios", list, "a list")
    if len(ratios) != 3:
        _fail("split.ratios", f"expected 3 values, got {len(ratios)}")
    ratios = tuple(float(r) for r in ratios)
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        _fail("split.ratios", f"must be non-negative and sum to 1, got {ratios}")
    stratified = bool(raw.get("stratified", task != "regression"))
    if stratified and task == "regression":
        _fail("split.stratified", "stratified splits need discrete labels; use false for regression")
    return SplitConfig(ratios=ratios, seed=_int_field(raw.get("seed", 0), "split.seed"), stratified=stratified)


MODEL_KEYS = ("conv_type", "use_clatt", "clusterings", "pe", "layers", "hidden", "heads", "dropout", "lr")


def _parse_model(raw, path: str) -> ModelSpec:
    _expect(raw, path, dict, "an object")
    _check_keys(raw, path, MODEL_KEYS)
    if "conv_type" not in raw:
        _fail(f"{path}.conv_type", "required")
    try:
        spec = ModelSpec.from_json(json.dumps(raw))
        spec.validate()
    except (TypeError, ValueError) as e:
        _fail(path, str(e))
    for tag in spec.clusterings:
        if tag not in CANONICAL_TAGS:
            _fail(f"{path}.clusterings", f"unknown tag {tag!r}, expected one of {CANONICAL_TAGS}")
    return spec


def _parse_clusterings(raw) -> dict:
    _expect(raw, "clusterings", dict, "an object")
    out = {}
    for tag, params in raw.items():
        if tag not in CANONICAL_TAGS:
            _fail(f"clusterings.{tag}", f"unknown tag, expected one of {CANONICAL_TAGS}")
        _expect(params, f"clusterings.{tag}", dict, "an object")
        _check_keys(params, f"clusterings.{tag}", CLUSTERING_PARAM_KEYS[tag])
        out[tag] = dict(params)
    return out


def _parse_grid(raw) -> GridConfig:
    _expect(raw, "grid", dict, "an object")
    _check_keys(raw, "grid", ("lrs", "dropouts", "transforms"))
    lrs = tuple(float(v) for v in _expect(raw.get("lrs", list(GRID_LRS)), "grid.lrs", list, "a list"))
    dropouts = tuple(float(v) for v in _expect(raw.get("dropouts", list(GRID_DROPOUTS)), "grid.dropouts", list, "a list"))
    transforms = tuple(_expect(raw.get("transforms", ["none"]), "grid.transforms", list, "a list"))
    if not lrs:
        _fail("grid.lrs", "must be non-empty")
    if not dropouts:
        _fail("grid.dropouts", "must be non-empty")
    for i, t in enumerate(transforms):
        if t not in FEATURE_TRANSFORMS:
            _fail(f"grid.transforms[{i}]", f"must be one of {FEATURE_TRANSFORMS}, got {t!r}")
    return GridConfig(lrs=lrs, dropouts=dropouts, transforms=transforms)


TOP_KEYS = (
    "dataset",
    "split",
    "models",
    "clusterings",
    "min_cluster_size",
    "max_cluster_size",
    "grid",
    "seeds",
    "steps",
    "eval_every",
    "selection_model",
    "output_dir",
)


def parse_config(raw: dict, base_dir) -> ExperimentConfig:
    """Validate a raw JSON object; relative paths resolve against base_dir."""
    base = Path(base_dir)
    _expect(raw, "config", dict, "an object")
    _check_keys(raw, "", TOP_KEYS)
    if "dataset" not in raw:
        _fail("dataset", "required")
    dataset = _parse_dataset(raw["dataset"], base)
    models_raw = raw.get("models", [])
    _expect(models_raw, "models", list, "a list")
    if not models_raw:
        _fail("models", "must list at least one model")
    models = tuple(_parse_model(m, f"models[{i}]") for i, m in enumerate(models_raw))
    split = _parse_split(raw.get("split", {}), dataset.task)
    clusterings = _parse_clusterings(raw.get("clusterings", {}))
    seeds_raw = _expect(raw.get("seeds", list(range(10))), "seeds", list, "a list")
    if not seeds_raw:
        _fail("seeds", "must be non-empty")
    seeds = tuple(_int_field(s, f"seeds[{i}]") for i, s in enumerate(seeds_raw))
    grid = _parse_grid(raw["grid"]) if raw.get("grid") is not None else None
    selection = None
    if raw.get("selection_model") is not None:
        selection = _parse_model(raw["selection_model"], "selection_model")
    out_raw = raw.get("output_dir") or os.environ.get(OUTPUT_DIR_ENV) or "."
    cfg = ExperimentConfig(
        dataset=dataset,
        models=models,
        split=split,
        clusterings=clusterings,
        min_cluster_size=_int_field(raw.get("min_cluster_size", 4), "min_cluster_size", minimum=1),
        max_cluster_size=_int_field(raw.get("max_cluster_size", 512), "max_cluster_size", minimum=1),
        grid=grid,
        seeds=seeds,
        steps=_int_field(raw.get("steps", 1000), "steps", minimum=0),
        eval_every=_int_field(raw.get("eval_every", 10), "eval_every", minimum=1),
        selection_model=selection,
        output_dir=base / str(out_raw),
    )
    if cfg.min_cluster_size > cfg.max_cluster_size:
        _fail("min_cluster_size", "exceeds max_cluster_size")
    return cfg


def apply_override(raw: dict, assignment: str) -> None:
    """Apply one ``--set path=value`` to the raw config in place.

    The path is dot-separated; integer segments index lists. Values are
    parsed as JSON when possible, otherwise taken as strings.
    """
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r}: expected key=value")
    key, _, text = assignment.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"override {assignment!r}: empty key")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    segments = key.split(".")
    for i, seg in enumerate(segments):
        last = i == len(segments) - 1
        if isinstance(node, list):
            try:
                idx = int(seg)
                node[idx]
            except (ValueError, IndexError):
                raise ConfigError(f"override {key!r}: bad list index {seg!r}") from None
            if last:
                node[idx] = value
            else:
                node = node[idx]
        elif isinstance(node, dict):
            if last:
                node[seg] = value
            else:
                node = node.setdefault(seg, {})
                if not isinstance(node, (dict, list)):
                    raise ConfigError(f"override {key!r}: {seg!r} is not an object")
        else:
            raise ConfigError(f"override {key!r}: cannot descend into {seg!r}")


def load_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON in {path}: {e}") from None
    for item in overrides:
        apply_override(raw, item)
    return parse_config(raw, path.parent)
