"""Dataset splitting, the training loop, in-season evaluation and reports."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LossError, SplitError, TrainingDivergedError
from .ingest import CROPS, CUTOFFS, cutoff_zero_batch, last_timestep_for_cutoff
from .model import CropBatch, LossContext, forward, yieldnet_loss
from .tensor import AdamState, ModelGraph, adam_step

CUTOFF_MONTH = {"jul23": "Jul", "aug23": "Aug", "sep23": "Sep", "oct23": "Oct"}


@dataclass
class Sample:
    """One (location, year): per-crop optional cube and optional yield label."""

    location_id: str
    year: int
    cubes: dict = field(default_factory=dict)  # crop -> HistogramCube
    yields: dict = field(default_factory=dict)  # crop -> float (bushels/acre)

    def has(self, crop: str) -> bool:
        return crop in self.cubes and crop in self.yields


@dataclass
class Dataset:
    samples: list
    manifest_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            key = (s.location_id, s.year)
            if key in seen:
                raise ValueError(f"duplicate sample key {key}")
            seen.add(key)
            for crop, value in s.yields.items():
                if not value > 0:
                    raise ValueError(
                        f"{key} {crop}: yields must be positive, got {value}")

    def years(self):
        return sorted({s.year for s in self.samples})

    def __len__(self):
        return len(self.samples)


def split_by_year(ds: Dataset, test_years) -> tuple[Dataset, Dataset]:
    test_years = set(test_years)
    all_years = set(ds.years())
    unknown = test_years - all_years
    if unknown:
        raise SplitError(f"test years {sorted(unknown)} absent from dataset")
    train = [s for s in ds.samples if s.year not in test_years]
    test = [s for s in ds.samples if s.year in test_years]
    if not train or not test:
        raise SplitError(
            f"split produced {len(train)} train / {len(test)} test samples; "
            "both must be non-empty")
    return (Dataset(train, ds.manifest_meta), Dataset(test, ds.manifest_meta))


def loss_context_from(train: Dataset, crops=CROPS) -> LossContext:
    """Per-crop mean yields over the training split only."""
    means = {}
    for crop in crops:
        labels = [s.yields[crop] for s in train.samples if crop in s.yields]
        if not labels:
            raise LossError(f"training split has no labeled {crop} samples")
        means[crop] = float(np.mean(labels))
    return LossContext(means=means)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 32
    iterations: int = 4000
    seed: int = 0
    cutoff_augmentation: bool = True
    # Batches of train-mode forwards run after the optimizer loop, at frozen
    # weights, so batchnorm running statistics describe the final weights.
    # Adam keeps growing weight norms under batchnorm's scale invariance, so
    # the exponential stats otherwise lag the live ones and infer-mode
    # predictions drift off calibration.
    bn_recalibration_batches: int = 500

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.iterations < 0:
            raise ValueError("lr and batch_size must be positive, iterations >= 0")


class _CropPool:
    """Shuffled epoch queue over the labeled sample indices of one crop."""

    def __init__(self, indices, rng):
        self.indices = np.asarray(indices)
        self.rng = rng
        self.queue = []

    def draw(self, k):
        out = []
        while len(out) < k:
            if not self.queue:
                self.queue = list(self.rng.permutation(self.indices))
            out.append(self.queue.pop())
        return out


@dataclass
class TrainResult:
    model: ModelGraph
    loss_history: list
    adam: AdamState
    context: LossContext


def train(model: ModelGraph, train_set: Dataset, cfg: TrainConfig) -> TrainResult:
    """Adam over stratified mini-batches of the max-normalized joint loss.

    The batch is split evenly between the model's crops (a single-head model
    takes the whole batch from its crop). With cutoff augmentation on, each
    drawn cube independently receives one of {none, jul23, aug23, sep23,
    oct23} before the forward pass. Fully deterministic for a fixed seed.
    """
    crops = list(model.heads)
    context = loss_context_from(train_set, crops)
    pools = {}
    stacks = {}
    labels = {}
    for crop in crops:
        idx = [i for i, s in enumerate(train_set.samples) if s.has(crop)]
        if not idx:
            raise LossError(f"training split has no labeled {crop} samples")
        pools[crop] = idx
        stacks[crop] = np.stack(
            [train_set.samples[i].cubes[crop].values for i in idx])
        labels[crop] = np.array(
            [train_set.samples[i].yields[crop] for i in idx])
    rng = np.random.default_rng(cfg.seed)
    queues = {crop: _CropPool(np.arange(len(pools[crop])), rng) for crop in crops}
    timesteps = model.input_shape[0]
    cutoff_last = np.array(
        [timesteps] + [last_timestep_for_cutoff(c, timesteps) for c in CUTOFFS])
    per_crop = _batch_quota(cfg.batch_size, len(crops))
    adam = AdamState(model.param_blocks(), lr=cfg.lr)
    history = []

    def draw_batches():
        batches = {}
        for crop, quota in zip(crops, per_crop):
            take = queues[crop].draw(quota)
            cubes = stacks[crop][take]
            if cfg.cutoff_augmentation:
                choice = rng.integers(0, len(cutoff_last), size=quota)
                cubes = cutoff_zero_batch(cubes, cutoff_last[choice])
            batches[crop] = CropBatch(
                cubes=cubes, labels=labels[crop][take],
                label_mask=np.ones(quota, dtype=bool))
        return batches

    for it in range(cfg.iterations):
        batches = draw_batches()
        preds, fwd_ctx = forward(model, batches, mode="train", want_cache=True)
        loss, dpreds, _ = yieldnet_loss(preds, batches, context)
        if not math.isfinite(loss):
            raise TrainingDivergedError(it)
        grads, _ = model.backward(
            fwd_ctx, {crop: dpreds[crop][:, None] for crop in batches})
        adam_step(adam, grads)
        history.append(loss)
    if cfg.iterations > 0:
        for _ in range(cfg.bn_recalibration_batches):
            forward(model, draw_batches(), mode="train")
    return TrainResult(model=model, loss_history=history, adam=adam, context=context)


def _batch_quota(batch_size, n_crops):
    base = batch_size // n_crops
    quotas = [base] * n_crops
    quotas[0] += batch_size - base * n_crops
    if any(q < 1 for q in quotas):
        raise ValueError(f"batch size {batch_size} too small for {n_crops} crops")
    return quotas


# ---------------------------------------------------------------------------
# Metrics


def compute_metrics(y, yhat):
    """(RMSE, MAE, Pearson r); r is None when undefined (n<2 or zero variance)."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1 or y.shape[0] < 1:
        raise ValueError(f"need equal-length vectors, got {y.shape} and {yhat.shape}")
    err = y - yhat
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    r = None
    if y.shape[0] >= 2:
        sy = y - y.mean()
        sp = yhat - yhat.mean()
        denom = math.sqrt(float(sy @ sy) * float(sp @ sp))
        if denom > 0.0:
            r = float(sy @ sp) / denom
    return rmse, mae, r


@dataclass
class MetricsRow:
    year: int
    cutoff: str
    crop: str
    rmse: float | None
    mae: float | None
    r: float | None
    n: int
    per_location: list  # (location_id, actual, predicted, error_pct)

    @property
    def month(self):
        return CUTOFF_MONTH[self.cutoff]


def predict_crop(model: ModelGraph, cubes: np.ndarray, crop: str,
                 chunk: int = 128) -> np.ndarray:
    """Infer-mode predictions for a stack of cubes, chunked to bound memory."""
    outs = []
    for start in range(0, cubes.shape[0], chunk):
        ctx = model.forward({crop: cubes[start:start + chunk]}, mode="infer")
        outs.append(ctx.outputs[crop][:, 0])
    return np.concatenate(outs)


@dataclass
class NetPredictor:
    """Evaluation adapter over a frozen ModelGraph."""

    model: ModelGraph

    @property
    def crops(self):
        return list(self.model.heads)

    @property
    def timesteps(self):
        return self.model.input_shape[0]

    def predict(self, crop, cubes):
        return predict_crop(self.model, cubes, crop)


@dataclass
class TabularPredictor:
    """Evaluation adapter over per-crop flat-feature models (linear, tree, ...)."""

    models: dict  # crop -> object with .predict(X)
    timesteps: int

    @property
    def crops(self):
        return list(self.models)

    def predict(self, crop, cubes):
        return self.models[crop].predict(cubes.reshape(cubes.shape[0], -1))


def evaluate_in_season(predictor, test_set: Dataset,
                       cutoffs=CUTOFFS) -> list[MetricsRow]:
    """One MetricsRow per (test year, cutoff, crop) on cutoff-zeroed inputs."""
    rows = []
    crops = predictor.crops
    timesteps = predictor.timesteps
    for year in sorted({s.year for s in test_set.samples}):
        year_samples = [s for s in test_set.samples if s.year == year]
        for cutoff in cutoffs:
            last = last_timestep_for_cutoff(cutoff, timesteps)
            for crop in crops:
                samples = sorted((s for s in year_samples if s.has(crop)),
                                 key=lambda s: s.location_id)
                if not samples:
                    rows.append(MetricsRow(year, cutoff, crop, None, None, None,
                                           0, []))
                    continue
                cubes = np.stack([s.cubes[crop].values for s in samples])
                cubes = cutoff_zero_batch(
                    cubes, np.full(len(samples), last, dtype=int))
                preds = predictor.predict(crop, cubes)
                actual = np.array([s.yields[crop] for s in samples])
                rmse, mae, r = compute_metrics(actual, preds)
                per_loc = [
                    (s.location_id, float(a), float(p), float(abs(a - p) / a * 100.0))
                    for s, a, p in zip(samples, actual, preds)
                ]
                rows.append(MetricsRow(year, cutoff, crop, rmse, mae, r,
                                       len(samples), per_loc))
    return rows


# ---------------------------------------------------------------------------
# Report emission


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.6g}"


def summary_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["year", "month", "crop", "rmse", "mae", "r", "n"])
    for row in _sorted_rows(rows):
        w.writerow([row.year, row.month, row.crop, _fmt(row.rmse),
                    _fmt(row.mae), _fmt(row.r), row.n])
    return buf.getvalue()


def locations_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["year", "month", "crop", "location", "actual", "predicted",
                "error_pct"])
    for row in _sorted_rows(rows):
        for loc, actual, predicted, err in sorted(row.per_location):
            w.writerow([row.year, row.month, row.crop, loc, _fmt(actual),
                        _fmt(predicted), _fmt(err)])
    return buf.getvalue()


def _sorted_rows(rows):
    order = {c: i for i, c in enumerate(CUTOFFS)}
    return sorted(rows, key=lambda r: (r.year, order[r.cutoff], r.crop))


def export_report(rows: list, out_dir):
    """summary.csv + locations.csv under out_dir; byte-deterministic."""
    import pathlib

    if not rows:
        raise ValueError("cannot export an empty metrics table")
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_csv(rows), encoding="utf-8")
    (out / "locations.csv").write_text(locations_csv(rows), encoding="utf-8")
    return out / "summary.csv", out / "locations.csv"


def loss_history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "loss"])
    for i, loss in enumerate(history):
        w.writerow([i, repr(float(loss))])
    return buf.getvalue()
