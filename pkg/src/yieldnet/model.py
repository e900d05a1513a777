"""The two-crop yield network: shared conv backbone, one head per crop.

The backbone's five conv layers are single ParamBlocks referenced by both
crop paths. Each head runs two more convs, then FC-100, FC-50 and a linear
single-unit output. Every conv is followed by batchnorm and ReLU; the FC
hidden layers by ReLU only. Convs keep their bias even under batchnorm:
the parameter accounting depends on it.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import LossError, RasterFormatError
from .ingest import CROPS
from .tensor import (
    AdamState,
    LayerSpec,
    ModelGraph,
    conv_spec,
    dense_spec,
    sequential_from_specs,
)

CHECKPOINT_MAGIC = b"YNM1"

DEFAULT_BACKBONE = (
    conv_spec(7, 7, 2, "valid", 48),
    conv_spec(5, 5, 2, "valid", 64),
    conv_spec(5, 5, 2, "same", 96),
    conv_spec(3, 3, 1, "same", 128),
    conv_spec(3, 3, 1, "same", 128),
)
DEFAULT_HEAD_CONVS = (
    conv_spec(3, 3, 1, "same", 148),
    conv_spec(3, 3, 1, "same", 148),
)
DEFAULT_FC_UNITS = (100, 50)


@dataclass(frozen=True)
class YieldNetConfig:
    timesteps: int = 30
    bins: int = 32
    bands: int = 9
    backbone: tuple = DEFAULT_BACKBONE
    head_convs: tuple = DEFAULT_HEAD_CONVS
    fc_units: tuple = DEFAULT_FC_UNITS
    crops: tuple = CROPS

    @property
    def input_shape(self):
        return (self.timesteps, self.bins, self.bands)

    def to_json(self) -> dict:
        return {
            "timesteps": self.timesteps,
            "bins": self.bins,
            "bands": self.bands,
            "backbone": [s.to_json() for s in self.backbone],
            "head_convs": [s.to_json() for s in self.head_convs],
            "fc_units": list(self.fc_units),
            "crops": list(self.crops),
        }

    @staticmethod
    def from_json(d: dict) -> "YieldNetConfig":
        return YieldNetConfig(
            timesteps=d["timesteps"],
            bins=d["bins"],
            bands=d["bands"],
            backbone=tuple(LayerSpec.from_json(s) for s in d["backbone"]),
            head_convs=tuple(LayerSpec.from_json(s) for s in d["head_convs"]),
            fc_units=tuple(d["fc_units"]),
            crops=tuple(d["crops"]),
        )


@dataclass(frozen=True)
class LossContext:
    """Per-crop training-set average yields used to normalize the loss."""

    means: dict  # crop -> positive float

    def __post_init__(self):
        for crop, mean in self.means.items():
            if not mean > 0:
                raise ValueError(f"mean yield for {crop} must be positive, got {mean}")


@dataclass
class CropBatch:
    """Cubes and (optionally missing) labels for one crop."""

    cubes: np.ndarray  # (N, T, bins, bands)
    labels: np.ndarray  # (N,), value ignored where mask is False
    label_mask: np.ndarray  # (N,) bool

    def __post_init__(self):
        self.cubes = np.asarray(self.cubes, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.label_mask = np.asarray(self.label_mask, dtype=bool)
        n = self.cubes.shape[0]
        if n < 1:
            raise ValueError("a crop batch needs at least one sample")
        if self.labels.shape != (n,) or self.label_mask.shape != (n,):
            raise ValueError("labels and label_mask must be length-N vectors")
        if not np.isfinite(self.labels[self.label_mask]).all():
            raise ValueError("labeled entries must be finite")


def _conv_stack(specs) -> list[LayerSpec]:
    out = []
    for spec in specs:
        out.append(spec)
        out.append(LayerSpec(kind="batchnorm"))
        out.append(LayerSpec(kind="relu"))
    return out


def _head_specs(config: YieldNetConfig) -> list[LayerSpec]:
    specs = _conv_stack(config.head_convs)
    specs.append(LayerSpec(kind="flatten"))
    for units in config.fc_units:
        specs.append(dense_spec(units))
        specs.append(LayerSpec(kind="relu"))
    specs.append(dense_spec(1))  # linear output, bias included
    return specs


def build_yieldnet(config: YieldNetConfig = YieldNetConfig(), seed: int = 0) -> ModelGraph:
    """Joint model: shared backbone ParamBlocks feed every crop head."""
    trunk = sequential_from_specs(_conv_stack(config.backbone), "backbone")
    heads = {
        crop: sequential_from_specs(_head_specs(config), f"head_{crop}")
        for crop in config.crops
    }
    meta = {"kind": "yieldnet", "config": config.to_json()}
    return ModelGraph(trunk, heads, meta).build(config.input_shape, seed)


def build_single_head(config: YieldNetConfig, crop: str, seed: int = 0) -> ModelGraph:
    """Ablation variant: identical backbone, one crop head only."""
    if crop not in config.crops:
        raise ValueError(f"unknown crop {crop!r}")
    single = YieldNetConfig(
        timesteps=config.timesteps, bins=config.bins, bands=config.bands,
        backbone=config.backbone, head_convs=config.head_convs,
        fc_units=config.fc_units, crops=(crop,))
    trunk = sequential_from_specs(_conv_stack(single.backbone), "backbone")
    heads = {crop: sequential_from_specs(_head_specs(single), f"head_{crop}")}
    meta = {"kind": "single_head", "config": single.to_json()}
    return ModelGraph(trunk, heads, meta).build(single.input_shape, seed)


def count_parameters(model: ModelGraph) -> int:
    """Trainable element count; shared blocks once, running stats excluded."""
    return model.trainable_count()


def parameter_breakdown(model: ModelGraph) -> list[tuple[str, int]]:
    return [(b.name, b.trainable_count()) for b in model.param_blocks()]


def forward(model: ModelGraph, batches: dict[str, CropBatch], mode: str,
            want_cache: bool = False):
    """Predictions for every sample of every supplied crop batch.

    Returns (predictions dict crop -> (N,) array, ForwardContext).
    """
    inputs = {crop: cb.cubes for crop, cb in batches.items()}
    ctx = model.forward(inputs, mode, want_cache=want_cache)
    preds = {crop: ctx.outputs[crop][:, 0] for crop in batches}
    return preds, ctx


def yieldnet_loss(preds: dict[str, np.ndarray], batches: dict[str, CropBatch],
                  ctx: LossContext):
    """Max over crops of the mean squared relative error, Eq-style.

    Each crop term averages ((y - yhat) / mean_yield)^2 over its labeled
    samples. The gradient flows only through the achieving crop; on an
    exact tie the first crop in declaration order wins.

    Returns (loss, {crop: dL/dpred}, achieving crop).
    """
    terms = {}
    for crop, cb in batches.items():
        mask = cb.label_mask
        n = int(mask.sum())
        if n == 0:
            raise LossError(f"no labeled {crop} samples in batch")
        resid = (cb.labels[mask] - preds[crop][mask]) / ctx.means[crop]
        terms[crop] = float(resid @ resid) / n
    achieving = max(terms, key=lambda c: (terms[c], -_crop_rank(c, batches)))
    loss = terms[achieving]
    grads = {}
    for crop, cb in batches.items():
        g = np.zeros_like(preds[crop])
        if crop == achieving:
            mask = cb.label_mask
            n = int(mask.sum())
            g[mask] = -2.0 * (cb.labels[mask] - preds[crop][mask]) / (ctx.means[crop] ** 2 * n)
        grads[crop] = g
    return loss, grads, achieving


def _crop_rank(crop: str, batches: dict) -> int:
    for i, c in enumerate(batches):
        if c == crop:
            return i
    return len(batches)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, model: ModelGraph, adam: AdamState | None = None,
                    extra: dict | None = None):
    """YNM1 file: JSON header, then raw float64 arrays in declaration order."""
    blocks = model.param_blocks()
    header = {
        "format_version": 1,
        "meta": model.meta,
        "input_shape": list(model.input_shape),
        "blocks": [
            {
                "name": b.name,
                "arrays": [
                    {"key": k, "shape": list(b.arrays[k].shape),
                     "trainable": k in b.trainable_keys()}
                    for k in b.arrays
                ],
            }
            for b in blocks
        ],
        "adam": None if adam is None else {
            "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps, "step": adam.step,
        },
        "extra": extra or {},
    }
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(binio.u32(len(head_bytes)))
        fh.write(head_bytes)
        for b in blocks:
            for k in b.arrays:
                fh.write(binio.f64_bytes(b.arrays[k]))
        if adam is not None:
            for m, v in adam.moment_arrays():
                fh.write(binio.f64_bytes(m))
                fh.write(binio.f64_bytes(v))


def load_checkpoint(path):
    """Rebuild the model (and Adam state if saved); returns (model, adam, extra)."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = binio.Reader(data)
    r.expect_magic(CHECKPOINT_MAGIC)
    head_len = r.u32("header length")
    header = json.loads(r.utf8(head_len, "header"))
    if header.get("format_version") != 1:
        raise RasterFormatError(
            f"unsupported checkpoint version {header.get('format_version')!r}", 8)
    meta = header["meta"]
    config = YieldNetConfig.from_json(meta["config"])
    if meta["kind"] == "yieldnet":
        model = build_yieldnet(config, seed=0)
    elif meta["kind"] == "single_head":
        model = build_single_head(config, config.crops[0], seed=0)
    else:
        raise RasterFormatError(f"unknown model kind {meta['kind']!r}", 8)
    blocks = model.param_blocks()
    if len(blocks) != len(header["blocks"]):
        raise RasterFormatError("checkpoint block count mismatch", r.pos)
    for block, desc in zip(blocks, header["blocks"]):
        for arr_desc in desc["arrays"]:
            key = arr_desc["key"]
            shape = tuple(arr_desc["shape"])
            if key not in block.arrays or block.arrays[key].shape != shape:
                raise RasterFormatError(
                    f"checkpoint array {desc['name']}/{key} shape mismatch", r.pos)
            n = int(np.prod(shape)) if shape else 1
            block.arrays[key] = r.f64_array(n, f"{desc['name']}/{key}").reshape(shape)
    adam = None
    if header["adam"] is not None:
        a = header["adam"]
        adam = AdamState(blocks, lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                         eps=a["eps"])
        adam.step = a["step"]
        for i, (block, key, m, v) in enumerate(adam.slots):
            size = m.size
            adam.slots[i] = (
                block, key,
                r.f64_array(size, f"adam m {block.name}/{key}").reshape(m.shape),
                r.f64_array(size, f"adam v {block.name}/{key}").reshape(v.shape),
            )
    r.done()
    return model, adam, header["extra"]
