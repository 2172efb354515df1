"""Experiment grids: config schema, cell execution, and CSV aggregation.

A matrix is the cartesian product {weighting} x {matcher} x {ipc} x {br}
x {init} x {seeds} over one dataset recipe and one eval recipe.  Every
cell is independent, fully reconstructable from its manifest, and lands
in exactly one CSV row ordered by grid index.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .datasets import (BiasSpec, LabeledDataset, apply_color_bias, apply_grayscale_bias,
                       build_balanced_test, colorize_uniform, default_palette,
                       generate_glyph_dataset)
from .distill import DistillConfig, distill, save_synthetic
from .fairness import EvalConfig, evaluate
from .matching import MATCHERS, WEIGHTINGS, MatchSpec

MODES = ("foreground", "background", "grayscale")


class ConfigError(ValueError):
    """Schema violation; message carries a JSON pointer to the offending key."""


def _require(cond: bool, pointer: str, message: str) -> None:
    if not cond:
        raise ConfigError("%s: %s" % (pointer, message))


@dataclass(frozen=True)
class DatasetRecipe:
    num_classes: int = 5
    num_groups: int = 4
    mode: str = "foreground"
    per_class_count: int = 200
    test_per_class_count: int = 80
    resolution: Tuple[int, int] = (16, 16)
    seed: int = 0

    def name(self) -> str:
        tag = {"foreground": "fg", "background": "bg", "grayscale": "gray"}[self.mode]
        return "glyph-c%d-g%d-%s" % (self.num_classes, self.num_groups, tag)


@dataclass(frozen=True)
class GridAxes:
    weighting: Tuple[str, ...] = ("vanilla_ratio", "fairdd_uniform")
    matcher: Tuple[str, ...] = ("distribution",)
    ipc: Tuple[int, ...] = (10,)
    br: Tuple[float, ...] = (0.9,)
    init: Tuple[str, ...] = ("random_real",)
    seeds: Tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class ExperimentMatrix:
    dataset: DatasetRecipe = field(default_factory=DatasetRecipe)
    grid: GridAxes = field(default_factory=GridAxes)
    distance: str = "mse"
    iterations: int = 500
    lr_pixels: float = 5.0
    group_batch: int = 64
    eval: EvalConfig = field(default_factory=EvalConfig)
    eval_seeds_per_cell: int = 1

    def cells(self) -> List[Dict]:
        axes = self.grid
        out = []
        for i, (w, m, ipc, br, init, seed) in enumerate(
                product(axes.weighting, axes.matcher, axes.ipc, axes.br, axes.init, axes.seeds)):
            out.append({"grid_index": i, "weighting": w, "matcher": m, "ipc": ipc,
                        "br": br, "init": init, "seed": seed})
        return out

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["dataset"]["resolution"] = list(self.dataset.resolution)
        data["grid"] = {k: list(v) for k, v in asdict(self.grid).items()}
        return data

    def emit(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


def _as_list(value, pointer: str) -> list:
    _require(isinstance(value, list) and len(value) > 0, pointer, "expected a non-empty list")
    return value


def load_config(path) -> ExperimentMatrix:
    """Parse and validate a matrix config; all defaults materialized."""
    p = Path(path)
    if not p.exists():
        raise ConfigError("/: config file %s does not exist" % path)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("/: invalid JSON (%s)" % exc) from exc
    return config_from_dict(raw)


def config_from_dict(raw: Dict) -> ExperimentMatrix:
    _require(isinstance(raw, dict), "/", "config root must be an object")
    known = {"dataset", "grid", "distance", "iterations", "lr_pixels",
             "group_batch", "eval", "eval_seeds_per_cell"}
    for key in raw:
        _require(key in known, "/%s" % key, "unknown key")

    draw = dict(raw.get("dataset", {}))
    _require(isinstance(draw, dict), "/dataset", "expected an object")
    dknown = {"num_classes", "num_groups", "mode", "per_class_count",
              "test_per_class_count", "resolution", "seed"}
    for key in draw:
        _require(key in dknown, "/dataset/%s" % key, "unknown key")
    if "resolution" in draw:
        res = draw["resolution"]
        _require(isinstance(res, list) and len(res) == 2, "/dataset/resolution",
                 "expected [H, W]")
        draw["resolution"] = (int(res[0]), int(res[1]))
    dataset = DatasetRecipe(**draw)
    _require(dataset.mode in MODES, "/dataset/mode", "must be one of %s" % (MODES,))
    _require(dataset.num_classes >= 2, "/dataset/num_classes", "need at least 2 classes")
    _require(dataset.num_groups >= 2, "/dataset/num_groups", "need at least 2 groups")

    graw = dict(raw.get("grid", {}))
    _require(isinstance(graw, dict), "/grid", "expected an object")
    gknown = {"weighting", "matcher", "ipc", "br", "init", "seeds"}
    for key in graw:
        _require(key in gknown, "/grid/%s" % key, "unknown key")
    defaults = GridAxes()
    axes = {}
    for key in gknown:
        values = graw.get(key, list(getattr(defaults, key)))
        values = _as_list(values, "/grid/%s" % key)
        axes[key] = tuple(values)
    for i, w in enumerate(axes["weighting"]):
        _require(w in WEIGHTINGS, "/grid/weighting/%d" % i, "must be one of %s" % (WEIGHTINGS,))
    for i, m in enumerate(axes["matcher"]):
        _require(m in MATCHERS, "/grid/matcher/%d" % i, "must be one of %s" % (MATCHERS,))
    for i, v in enumerate(axes["ipc"]):
        _require(isinstance(v, int) and v >= 1, "/grid/ipc/%d" % i, "must be a positive integer")
    for i, v in enumerate(axes["br"]):
        lo = 1.0 / dataset.num_groups
        _require(isinstance(v, (int, float)) and lo < v <= 1.0, "/grid/br/%d" % i,
                 "must lie in (1/%d, 1]" % dataset.num_groups)
    for i, v in enumerate(axes["init"]):
        _require(v in ("random_real", "noise", "hybrid"), "/grid/init/%d" % i,
                 "must be one of random_real/noise/hybrid")
    for i, v in enumerate(axes["seeds"]):
        _require(isinstance(v, int), "/grid/seeds/%d" % i, "must be an integer")
    grid = GridAxes(**axes)

    eraw = dict(raw.get("eval", {}))
    _require(isinstance(eraw, dict), "/eval", "expected an object")
    eknown = {"arch", "epochs", "lr", "batch"}
    for key in eraw:
        _require(key in eknown, "/eval/%s" % key, "unknown key")
    try:
        eval_cfg = EvalConfig(**eraw)
    except Exception as exc:
        raise ConfigError("/eval: %s" % exc) from exc

    matrix = ExperimentMatrix(
        dataset=dataset, grid=grid,
        distance=raw.get("distance", "mse"),
        iterations=int(raw.get("iterations", 500)),
        lr_pixels=float(raw.get("lr_pixels", 5.0)),
        group_batch=int(raw.get("group_batch", 64)),
        eval=eval_cfg,
        eval_seeds_per_cell=int(raw.get("eval_seeds_per_cell", 1)),
    )
    _require(matrix.distance in ("mse", "mae", "cosine"), "/distance",
             "must be one of mse/mae/cosine")
    _require(matrix.iterations >= 1, "/iterations", "must be >= 1")
    _require(matrix.lr_pixels > 0, "/lr_pixels", "must be positive")
    _require(matrix.eval_seeds_per_cell >= 1, "/eval_seeds_per_cell", "must be >= 1")
    return matrix


# ---------------------------------------------------------------------------
# dataset construction shared by the CLI and matrix cells
# ---------------------------------------------------------------------------

def make_training_set(recipe: DatasetRecipe, br: float,
                      minority_weights: Optional[Tuple[float, ...]] = None) -> LabeledDataset:
    spec = BiasSpec(recipe.num_classes, recipe.num_groups, br, mode=recipe.mode,
                    minority_weights=minority_weights, resolution=recipe.resolution,
                    per_class_count=recipe.per_class_count)
    palette = default_palette(recipe.num_groups)
    base = generate_glyph_dataset(spec, recipe.seed)
    if recipe.mode == "grayscale":
        colored = colorize_uniform(base, palette, recipe.seed + 1)
        return apply_grayscale_bias(colored, br, recipe.seed + 2)
    return apply_color_bias(base, spec, palette, recipe.seed + 2)


def make_test_set(recipe: DatasetRecipe) -> LabeledDataset:
    spec = BiasSpec(recipe.num_classes, recipe.num_groups, br=1.0 / recipe.num_groups,
                    mode=recipe.mode, resolution=recipe.resolution,
                    per_class_count=recipe.test_per_class_count)
    palette = default_palette(recipe.num_groups)
    return build_balanced_test(spec, palette, recipe.seed + 7919)


def eval_seeds_for_cell(cell_seed: int, count: int) -> List[int]:
    return [1009 * cell_seed + j for j in range(count)]


def run_cell(matrix: ExperimentMatrix, cell: Dict, out_dir) -> Dict:
    """Distill and evaluate one grid cell; writes artifacts, returns the row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = make_training_set(matrix.dataset, cell["br"])
    test = make_test_set(matrix.dataset)
    spec = MatchSpec(matcher=cell["matcher"], distance=matrix.distance,
                     weighting=cell["weighting"])
    config = DistillConfig(ipc=cell["ipc"], iterations=matrix.iterations,
                           lr_pixels=matrix.lr_pixels, theta_seed_stream=cell["seed"],
                           init=cell["init"], match=spec, group_batch=matrix.group_batch,
                           arch=matrix.eval.arch)
    synthetic, trace = distill(config, ds)
    stem = "cell%04d_%s_%s_ipc%d_br%g_%s_s%d" % (
        cell["grid_index"], cell["weighting"], cell["matcher"], cell["ipc"],
        cell["br"], cell["init"], cell["seed"])
    syn_path = out_dir / (stem + ".fdds")
    save_synthetic(syn_path, synthetic, config, trace)
    report = evaluate(synthetic, test, matrix.eval,
                      seeds=eval_seeds_for_cell(cell["seed"], matrix.eval_seeds_per_cell))
    report.to_json(out_dir / (stem + ".report.json"))
    row = {
        "grid_index": cell["grid_index"], "dataset": matrix.dataset.name(),
        "matcher": cell["matcher"], "weighting": cell["weighting"],
        "ipc": cell["ipc"], "br": cell["br"], "init": cell["init"], "seed": cell["seed"],
    }
    row.update(report.flat_row())
    row["synthetic"] = syn_path.name
    return row


def _cell_worker(args) -> Dict:
    matrix_dict, cell, out_dir = args
    return run_cell(config_from_dict(matrix_dict), cell, out_dir)


def run_matrix(matrix: ExperimentMatrix, out_dir, jobs: int = 1) -> List[Dict]:
    """Execute all cells (optionally in parallel) and aggregate ordered rows."""
    cells = matrix.cells()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix.emit(out_dir / "matrix.json")
    if jobs <= 1:
        rows = [run_cell(matrix, cell, out_dir) for cell in cells]
    else:
        work = [(matrix.to_dict(), cell, str(out_dir)) for cell in cells]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell_worker, work))
    rows.sort(key=lambda r: r["grid_index"])
    return rows
