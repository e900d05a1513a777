"""End-to-end orchestration shared by the CLI and the test suite.

Everything here is a thin composition of the library modules: generate or
read a world, fit bins on the training years, build cubes, train a model,
evaluate over cutoffs, and write reports. The in-memory variants skip the
file round-trip for test-scale runs.
"""

import json
import pathlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, ingest, model as model_mod, synth, train_eval
from .errors import YieldNetError
from .ingest import CROPS, CUTOFFS, BinningManifest, HistogramCube
from .parallel import parallel_map
from .svgplot import render_scatter_svg
from .train_eval import (
    Dataset,
    NetPredictor,
    Sample,
    TabularPredictor,
    TrainConfig,
    evaluate_in_season,
    export_report,
    loss_history_csv,
    split_by_year,
    train,
)

NET_MODELS = ("yieldnet", "yieldnet_corn", "yieldnet_soy")
TABULAR_MODELS = ("ridge", "lasso", "tree", "forest", "dfnn")
MODEL_CHOICES = NET_MODELS + TABULAR_MODELS

SINGLE_HEAD_CROP = {"yieldnet_corn": ingest.CORN, "yieldnet_soy": ingest.SOYBEAN}


@dataclass
class RunConfig:
    """Flat run configuration; JSON file plus --set overrides."""

    data_dir: str = "data"
    out_dir: str = "out"
    checkpoint: str = ""  # defaults to <out_dir>/model.ynm
    model: str = "yieldnet"
    test_years: list = field(default_factory=lambda: [2016, 2017, 2018])
    cutoffs: list = field(default_factory=lambda: list(CUTOFFS))
    bins: int = 32
    seed: int = 0
    jobs: int = 1
    # training
    lr: float = 5e-4
    batch_size: int = 32
    iterations: int = 4000
    cutoff_augmentation: bool = True
    bn_recalibration_batches: int = 500
    # baselines
    linear_penalty_weight: float = 0.05
    tree_max_depth: int = 12
    forest_trees: int = 150
    forest_max_depth: int = 20
    dfnn_iterations: int = 4000
    dfnn_width: int = 50
    dfnn_depth: int = 9
    # synthetic world
    synth_locations: int = 200
    synth_year_start: int = 2004
    synth_year_end: int = 2018
    synth_grid_h: int = 24
    synth_grid_w: int = 24

    def __post_init__(self):
        if self.model not in MODEL_CHOICES:
            raise ValueError(
                f"unknown model {self.model!r}; choose from {', '.join(MODEL_CHOICES)}")
        if not self.checkpoint:
            self.checkpoint = str(pathlib.Path(self.out_dir) / "model.ynm")

    @staticmethod
    def from_file(path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        doc.pop("schema_version", None)
        return RunConfig(**doc)

    def override(self, key: str, raw: str) -> "RunConfig":
        if not hasattr(self, key):
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(self, key)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if isinstance(current, bool) and isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        return replace(self, **{key: value})

    def world_params(self) -> synth.WorldParams:
        return synth.WorldParams(
            n_locations=self.synth_locations,
            years=tuple(range(self.synth_year_start, self.synth_year_end + 1)),
            grid_h=self.synth_grid_h,
            grid_w=self.synth_grid_w,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size,
                           iterations=self.iterations, seed=self.seed,
                           cutoff_augmentation=self.cutoff_augmentation,
                           bn_recalibration_batches=self.bn_recalibration_batches)


# ---------------------------------------------------------------------------
# Disk pipeline stages


def load_index(data_dir) -> dict:
    path = pathlib.Path(data_dir) / "index.json"
    with open(path, encoding="utf-8") as fh:
        index = json.load(fh)
    if index.get("schema_version") != 1:
        raise YieldNetError(f"unsupported dataset index schema in {path}")
    return index


def _train_pairs(data_dir, index, test_years):
    """Stream (raster, mask) pairs for every training-year image and crop."""
    root = pathlib.Path(data_dir)
    for sample in index["samples"]:
        if sample["year"] in test_years:
            continue
        masks = {
            crop: ingest.parse_mask((root / sample["masks"][crop]).read_bytes())
            for crop in CROPS
        }
        for rel in sample["rasters"]:
            raster = ingest.parse_raster((root / rel).read_bytes())
            for crop in CROPS:
                yield raster, masks[crop]


def fit_bins_from_dir(cfg: RunConfig) -> pathlib.Path:
    """Fit bin edges over masked training-year pixels: writes bins.json."""
    index = load_index(cfg.data_dir)
    manifest = ingest.fit_bins(
        _train_pairs(cfg.data_dir, index, set(cfg.test_years)),
        bins=cfg.bins,
        fit_meta={"seed": cfg.seed, "source": str(pathlib.Path(cfg.data_dir) / "index.json"),
                  "excluded_test_years": sorted(cfg.test_years)},
    )
    out = pathlib.Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bins.json"
    manifest.save(path)
    return path


def ingest_from_dir(cfg: RunConfig) -> pathlib.Path:
    """rasters + masks + manifest -> per-crop cube files and cubes.json."""
    index = load_index(cfg.data_dir)
    manifest = BinningManifest.load(pathlib.Path(cfg.out_dir) / "bins.json")
    root = pathlib.Path(cfg.data_dir)
    out = pathlib.Path(cfg.out_dir)
    (out / "cubes").mkdir(parents=True, exist_ok=True)

    def build(sample):
        rasters = [ingest.parse_raster((root / rel).read_bytes())
                   for rel in sample["rasters"]]
        stack = np.stack([r.pixels for r in rasters])
        entry = {"location_id": sample["location_id"], "year": sample["year"],
                 "yields": sample["yields"], "cubes": {}}
        blobs = {}
        for crop in CROPS:
            mask = ingest.parse_mask((root / sample["masks"][crop]).read_bytes())
            values, valid = ingest.histogram_series(stack, mask.values, manifest)
            cube = HistogramCube(values=values, timestep_valid=valid,
                                 location_id=sample["location_id"],
                                 year=sample["year"], crop=crop)
            rel = f"cubes/{sample['location_id']}_{sample['year']}_{crop}.hcb"
            blobs[rel] = ingest.write_cube(cube)
            entry["cubes"][crop] = rel
        return entry, blobs

    entries = []
    for entry, blobs in parallel_map(build, index["samples"], cfg.jobs):
        for rel, blob in blobs.items():
            (out / rel).write_bytes(blob)
        entries.append(entry)
    cubes_index = {
        "schema_version": 1,
        "bins": cfg.bins,
        "timesteps": index["timesteps"],
        "bands": index["bands"],
        "manifest": "bins.json",
        "samples": entries,
    }
    path = out / "cubes.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cubes_index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_cubes_dataset(out_dir) -> Dataset:
    out = pathlib.Path(out_dir)
    with open(out / "cubes.json", encoding="utf-8") as fh:
        index = json.load(fh)
    samples = []
    for entry in index["samples"]:
        cubes = {
            crop: ingest.parse_cube((out / rel).read_bytes())
            for crop, rel in entry["cubes"].items()
        }
        samples.append(Sample(
            location_id=entry["location_id"], year=entry["year"],
            cubes=cubes, yields={k: float(v) for k, v in entry["yields"].items()}))
    return Dataset(samples, manifest_meta={"manifest": index["manifest"]})


# ---------------------------------------------------------------------------
# In-memory pipeline (same math, no file round-trip)


def build_synthetic_dataset(params: synth.WorldParams, test_years,
                            bins: int = 32):
    """Generate, fit bins on training years, and cube the whole world.

    Single generation pass: float32 raster stacks stay in memory while the
    per-band min/max scan runs over training-year union masks, then cubes
    are histogrammed against the fitted edges. The scan computes exactly
    what fit_bins over per-crop (raster, mask) pairs would.

    Returns (dataset, manifest, fertility dict keyed by (location_id, year)).
    """
    test_years = set(test_years)
    held = []
    lowers = np.full(params.bands, np.inf)
    uppers = np.full(params.bands, -np.inf)
    for res in synth.iter_world(params):
        stack = np.stack([r.pixels for r in res.rasters])  # (T, H, W, d) float32
        if res.year not in test_years:
            union = (res.masks[ingest.CORN].values.astype(bool)
                     | res.masks[ingest.SOYBEAN].values.astype(bool))
            px = stack[:, union, :]
            if px.size:
                with np.errstate(invalid="ignore"):
                    lowers = np.fmin(lowers, np.nanmin(px, axis=(0, 1)))
                    uppers = np.fmax(uppers, np.nanmax(px, axis=(0, 1)))
        held.append((res.location_id, res.year,
                     {c: res.masks[c].values for c in CROPS},
                     dict(res.yields), res.fertility, stack))
    manifest = BinningManifest(lowers=lowers, uppers=uppers, bins=bins,
                               fit_meta={"bins": bins, "seed": params.seed})
    samples = []
    fertility = {}
    for loc_id, year, masks, yields, fert, stack in held:
        cubes = {}
        for crop in CROPS:
            values, valid = ingest.histogram_series(stack, masks[crop], manifest)
            cubes[crop] = HistogramCube(values=values, timestep_valid=valid,
                                        location_id=loc_id, year=year, crop=crop)
        samples.append(Sample(location_id=loc_id, year=year,
                              cubes=cubes, yields=yields))
        fertility[(loc_id, year)] = fert
    return Dataset(samples), manifest, fertility


# ---------------------------------------------------------------------------
# Training / evaluation dispatch


def build_net(kind: str, cfg: RunConfig, timesteps: int, bins: int, bands: int):
    net_cfg = model_mod.YieldNetConfig(timesteps=timesteps, bins=bins, bands=bands)
    if kind == "yieldnet":
        return model_mod.build_yieldnet(net_cfg, seed=cfg.seed)
    return model_mod.build_single_head(net_cfg, SINGLE_HEAD_CROP[kind], seed=cfg.seed)


def train_net(kind: str, train_set: Dataset, cfg: RunConfig):
    first = train_set.samples[0]
    cube = next(iter(first.cubes.values()))
    t, b, d = cube.values.shape
    net = build_net(kind, cfg, t, b, d)
    return train(net, train_set, cfg.train_config())


def _tabular_xy(train_set: Dataset, crop: str):
    rows = [s for s in train_set.samples if s.has(crop)]
    X = np.stack([baselines.flatten_features(s.cubes[crop]) for s in rows])
    y = np.array([s.yields[crop] for s in rows])
    return X, y


def train_tabular(kind: str, train_set: Dataset, cfg: RunConfig) -> dict:
    """Fit one flat-feature model per crop; returns crop -> model."""
    models = {}
    for crop in CROPS:
        X, y = _tabular_xy(train_set, crop)
        if kind == "ridge":
            models[crop] = baselines.linear_fit(X, y, "l2", cfg.linear_penalty_weight)
        elif kind == "lasso":
            models[crop] = baselines.linear_fit(X, y, "l1", cfg.linear_penalty_weight)
        elif kind == "tree":
            tree = baselines.tree_fit(X, y, max_depth=cfg.tree_max_depth)
            models[crop] = _TreeAdapter(tree)
        elif kind == "forest":
            models[crop] = baselines.forest_fit(
                X, y, n_trees=cfg.forest_trees, max_depth=cfg.forest_max_depth,
                seed=cfg.seed)
        elif kind == "dfnn":
            models[crop] = baselines.dfnn_fit(
                X, y, seed=cfg.seed, iterations=cfg.dfnn_iterations,
                batch_size=cfg.batch_size, lr=cfg.lr, width=cfg.dfnn_width,
                depth=cfg.dfnn_depth)
        else:
            raise ValueError(f"unknown tabular model {kind!r}")
    return models


@dataclass
class _TreeAdapter:
    root: baselines.TreeNode

    def predict(self, X):
        return baselines.tree_predict(self.root, X)


def tabular_checkpoint_paths(checkpoint: str) -> dict:
    base = pathlib.Path(checkpoint)
    return {crop: base.with_name(f"{base.stem}_{crop}.ybl") for crop in CROPS}


def run_train(cfg: RunConfig):
    """Train per config on the ingested cubes; writes checkpoint + loss history."""
    dataset = load_cubes_dataset(cfg.out_dir)
    train_set, _ = split_by_year(dataset, set(cfg.test_years))
    out = pathlib.Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.model in NET_MODELS:
        result = train_net(cfg.model, train_set, cfg)
        model_mod.save_checkpoint(
            cfg.checkpoint, result.model, adam=result.adam,
            extra={"loss_context": result.context.means, "seed": cfg.seed,
                   "iterations": cfg.iterations})
        (out / "loss_history.csv").write_text(
            loss_history_csv(result.loss_history), encoding="utf-8")
        return result
    models = train_tabular(cfg.model, train_set, cfg)
    for crop, path in tabular_checkpoint_paths(cfg.checkpoint).items():
        baselines.save_baseline(path, models[crop])
    return models


def load_predictor(cfg: RunConfig, timesteps: int):
    if cfg.model in NET_MODELS:
        net, _, _ = model_mod.load_checkpoint(cfg.checkpoint)
        return NetPredictor(net)
    models = {
        crop: baselines.load_baseline(path)
        for crop, path in tabular_checkpoint_paths(cfg.checkpoint).items()
    }
    models = {
        crop: (_TreeAdapter(m) if isinstance(m, baselines.TreeNode) else m)
        for crop, m in models.items()
    }
    return TabularPredictor(models=models, timesteps=timesteps)


def run_evaluate(cfg: RunConfig):
    """Evaluate the checkpoint on the test years; CSV + scatter SVG outputs."""
    dataset = load_cubes_dataset(cfg.out_dir)
    _, test_set = split_by_year(dataset, set(cfg.test_years))
    first = test_set.samples[0]
    timesteps = next(iter(first.cubes.values())).timesteps
    predictor = load_predictor(cfg, timesteps)
    rows = evaluate_in_season(predictor, test_set, tuple(cfg.cutoffs))
    report_dir = pathlib.Path(cfg.out_dir) / "report"
    export_report(rows, report_dir)
    for row in rows:
        if row.n == 0:
            continue
        pairs = [(a, p) for _, a, p, _ in row.per_location]
        svg = render_scatter_svg(
            pairs, mae=row.mae, r=row.r,
            title=f"{row.crop} {row.year} {row.month} cutoff")
        name = f"scatter_{row.year}_{row.cutoff}_{row.crop}.svg"
        (report_dir / name).write_bytes(svg)
    return rows


def run_ablation(cfg: RunConfig):
    """Train the joint net and both single-head variants; compare per cell."""
    dataset = load_cubes_dataset(cfg.out_dir)
    train_set, test_set = split_by_year(dataset, set(cfg.test_years))
    variants = {"yieldnet": "yieldnet",
                "yieldnet_corn": "yieldnet_corn",
                "yieldnet_soy": "yieldnet_soy"}
    all_rows = {}
    for name, kind in variants.items():
        result = train_net(kind, train_set, cfg)
        rows = evaluate_in_season(NetPredictor(result.model), test_set,
                                  tuple(cfg.cutoffs))
        all_rows[name] = rows
    out = pathlib.Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ablation.csv"
    lines = ["model,crop,year,month,rmse,mae,r,n"]
    for name, rows in all_rows.items():
        for row in rows:
            lines.append(",".join([
                name, row.crop, str(row.year), row.month,
                _csv_num(row.rmse), _csv_num(row.mae), _csv_num(row.r), str(row.n)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return all_rows, path


def _csv_num(v):
    return "" if v is None else f"{v:.6g}"
