"""Comparison models over flattened histogram features.

Ridge and lasso solve the penalized least-squares problem on internally
standardized features (intercept unpenalized); the regression tree is
greedy CART on variance reduction; the forest bags CART trees with
per-split feature subsampling; the feed-forward net reuses the tensor
engine. Each model is fit separately per crop.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import ConvergenceError, RasterFormatError
from .ingest import HistogramCube
from .tensor import (
    AdamState,
    LayerSpec,
    ModelGraph,
    Sequential,
    adam_step,
    dense_spec,
    sequential_from_specs,
)

BASELINE_MAGIC = b"YBL1"


def flatten_features(cube: HistogramCube) -> np.ndarray:
    """Row-major (timestep, bin, band) flattening; invertible given (T, b, d)."""
    return cube.values.reshape(-1).copy()


def unflatten_features(row: np.ndarray, timesteps: int, bins: int, bands: int) -> np.ndarray:
    return np.asarray(row, dtype=np.float64).reshape(timesteps, bins, bands)


# ---------------------------------------------------------------------------
# Linear models


@dataclass
class LinearModel:
    weights: np.ndarray  # (F,) in the original feature space
    intercept: float
    penalty: str
    lam: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.intercept

    def parameter_count(self) -> int:
        return self.weights.size + 1


def _standardize(X: np.ndarray):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    return (X - mu) / sd, mu, sd


def linear_fit(X, y, penalty: str, lam: float,
               tol: float = 1e-8, max_sweeps: int = 10_000) -> LinearModel:
    """Penalized least squares, ½|y - Xw|² + penalty, on standardized features.

    l2 adds ½·lam·|w|² and solves the normal equations exactly; l1 adds
    lam·|w|₁ and runs cyclic coordinate descent with soft thresholding until
    the largest coefficient change drops below tol.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"need X (N,F) and y (N,), got {X.shape} and {y.shape}")
    if lam < 0:
        raise ValueError(f"penalty weight must be >= 0, got {lam}")
    n, f = X.shape
    Xs, mu, sd = _standardize(X)
    ybar = float(y.mean())
    yc = y - ybar
    if penalty == "l2":
        ws = _ridge_solve(Xs, yc, lam)
    elif penalty == "l1":
        ws = _lasso_cd(Xs, yc, lam, tol, max_sweeps)
    else:
        raise ValueError(f"penalty must be 'l1' or 'l2', got {penalty!r}")
    w = ws / sd
    intercept = ybar - float(mu @ w)
    return LinearModel(weights=w, intercept=intercept, penalty=penalty, lam=lam)


def _ridge_solve(Xs, yc, lam):
    n, f = Xs.shape
    if lam == 0.0:
        return np.linalg.lstsq(Xs, yc, rcond=None)[0]
    if f <= n:
        return np.linalg.solve(Xs.T @ Xs + lam * np.eye(f), Xs.T @ yc)
    # Dual form for wide matrices: w = Xᵀ(XXᵀ + lam·I)⁻¹ y, identical solution.
    alpha = np.linalg.solve(Xs @ Xs.T + lam * np.eye(n), yc)
    return Xs.T @ alpha


def _lasso_cd(Xs, yc, lam, tol, max_sweeps):
    n, f = Xs.shape
    w = np.zeros(f)
    col_sq = (Xs * Xs).sum(axis=0)
    resid = yc.copy()
    delta = math.inf
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(f):
            if col_sq[j] == 0.0:
                continue
            rho = Xs[:, j] @ resid + col_sq[j] * w[j]
            new = math.copysign(max(abs(rho) - lam, 0.0), rho) / col_sq[j]
            if new != w[j]:
                resid += Xs[:, j] * (w[j] - new)
                delta = max(delta, abs(new - w[j]))
                w[j] = new
        if delta < tol:
            return w
    raise ConvergenceError(
        f"lasso did not converge in {max_sweeps} sweeps", delta)


# ---------------------------------------------------------------------------
# CART and random forest


@dataclass
class TreeNode:
    value: float
    n: int
    depth: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self):
        return self.feature is None

    def to_json(self) -> dict:
        d = {"value": self.value, "n": self.n, "depth": self.depth}
        if not self.is_leaf:
            d.update(feature=self.feature, threshold=self.threshold,
                     left=self.left.to_json(), right=self.right.to_json())
        return d

    @staticmethod
    def from_json(d: dict) -> "TreeNode":
        node = TreeNode(value=d["value"], n=d["n"], depth=d["depth"])
        if "feature" in d:
            node.feature = d["feature"]
            node.threshold = d["threshold"]
            node.left = TreeNode.from_json(d["left"])
            node.right = TreeNode.from_json(d["right"])
        return node


def _best_split(X, y, feature_idx, min_leaf):
    """Exhaustive variance-reduction split over the given candidate features.

    Thresholds are midpoints between consecutive distinct sorted values.
    Returns (sse, feature, threshold) or None; ties break toward the lowest
    feature index, then the lowest threshold.
    """
    n = y.shape[0]
    Xc = X[:, feature_idx]
    order = np.argsort(Xc, axis=0, kind="stable")
    xs = np.take_along_axis(Xc, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    tot_sum = csum[-1]
    tot_sq = csq[-1]
    k = np.arange(1, n)[:, None].astype(np.float64)  # left counts per cut
    sse_l = csq[:-1] - csum[:-1] ** 2 / k
    sse_r = (tot_sq - csq[:-1]) - (tot_sum - csum[:-1]) ** 2 / (n - k)
    sse = np.maximum(sse_l, 0.0) + np.maximum(sse_r, 0.0)
    valid = xs[:-1] < xs[1:]  # only cuts between distinct values
    if min_leaf > 1:
        counts = np.arange(1, n)[:, None]
        valid = valid & (counts >= min_leaf) & (n - counts >= min_leaf)
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    best = sse.min()
    if not np.isfinite(best):
        return None
    cut_i, col_i = np.nonzero(sse == best)
    # Lowest feature index wins; within it, the lowest threshold (= first cut).
    j = np.argmin(col_i * n + cut_i)
    cut, col = int(cut_i[j]), int(col_i[j])
    threshold = 0.5 * (xs[cut, col] + xs[cut + 1, col])
    return float(best), int(feature_idx[col]), float(threshold)


def _grow(X, y, depth, max_depth, min_leaf, rng, n_candidates):
    node = TreeNode(value=float(y.mean()), n=y.shape[0], depth=depth)
    if max_depth is not None and depth >= max_depth:
        return node
    if y.shape[0] < 2 * min_leaf or y.shape[0] < 2 or np.all(y == y[0]):
        return node
    f = X.shape[1]
    if n_candidates is not None and n_candidates < f:
        feats = np.sort(rng.choice(f, size=n_candidates, replace=False))
    else:
        feats = np.arange(f)
    found = _best_split(X, y, feats, min_leaf)
    if found is None:
        return node
    _, node.feature, node.threshold = found
    go_left = X[:, node.feature] <= node.threshold
    node.left = _grow(X[go_left], y[go_left], depth + 1, max_depth, min_leaf,
                      rng, n_candidates)
    node.right = _grow(X[~go_left], y[~go_left], depth + 1, max_depth, min_leaf,
                       rng, n_candidates)
    return node


def tree_fit(X, y, max_depth: int | None = 12, min_leaf: int = 1) -> TreeNode:
    """Greedy CART regression tree; max_depth None grows until pure."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"need X (N,F) and y (N,), got {X.shape} and {y.shape}")
    if y.shape[0] < min_leaf:
        raise ValueError(f"need at least min_leaf={min_leaf} samples, got {y.shape[0]}")
    return _grow(X, y, 0, max_depth, min_leaf, None, None)


def tree_predict(node: TreeNode, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0])
    _tree_predict_into(node, X, np.arange(X.shape[0]), out)
    return out


def _tree_predict_into(node, X, idx, out):
    if node.is_leaf:
        out[idx] = node.value
        return
    go_left = X[idx, node.feature] <= node.threshold
    _tree_predict_into(node.left, X, idx[go_left], out)
    _tree_predict_into(node.right, X, idx[~go_left], out)


@dataclass
class ForestModel:
    trees: list
    seed: int

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree_predict(tree, X)
        return acc / len(self.trees)


def forest_fit(X, y, n_trees: int = 150, max_depth: int | None = 20,
               min_leaf: int = 1, seed: int = 0, bootstrap: bool = True,
               n_candidates: int | None = None) -> ForestModel:
    """Bagged CART trees with per-split feature subsampling.

    Each tree's RNG stream derives from (seed, tree index), so parallel and
    serial fits agree. n_candidates defaults to ceil(F/3).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError(f"forest needs at least 2 samples, got {X.shape[0]}")
    f = X.shape[1]
    if n_candidates is None:
        n_candidates = -(-f // 3)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        if bootstrap:
            idx = rng.integers(0, X.shape[0], size=X.shape[0])
            Xt, yt = X[idx], y[idx]
        else:
            Xt, yt = X, y
        subsample = None if n_candidates >= f else n_candidates
        trees.append(_grow(Xt, yt, 0, max_depth, min_leaf, rng, subsample))
    return ForestModel(trees=trees, seed=seed)


# ---------------------------------------------------------------------------
# Deep feed-forward net


@dataclass(frozen=True)
class DfnnConfig:
    features: int
    width: int = 50
    depth: int = 9

    def to_json(self):
        return {"features": self.features, "width": self.width, "depth": self.depth}

    @staticmethod
    def from_json(d):
        return DfnnConfig(**d)


def dfnn_build(features: int, seed: int = 0, width: int = 50, depth: int = 9) -> ModelGraph:
    """Stack of (dense -> batchnorm -> relu) blocks and a linear output unit."""
    if features < 1:
        raise ValueError(f"need at least one feature, got {features}")
    specs = []
    for _ in range(depth):
        specs.append(dense_spec(width))
        specs.append(LayerSpec(kind="batchnorm"))
        specs.append(LayerSpec(kind="relu"))
    specs.append(dense_spec(1))
    cfg = DfnnConfig(features=features, width=width, depth=depth)
    graph = ModelGraph(
        Sequential([]),
        {"yield": sequential_from_specs(specs, "dfnn")},
        meta={"kind": "dfnn", "config": cfg.to_json()},
    )
    return graph.build((features,), seed)


@dataclass
class DfnnModel:
    """A fitted net plus the feature/target scalers learned on training data."""

    graph: ModelGraph
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def predict(self, X) -> np.ndarray:
        Xs = (np.asarray(X, dtype=np.float64) - self.x_mean) / self.x_std
        ctx = self.graph.forward({"yield": Xs}, mode="infer")
        return ctx.outputs["yield"][:, 0] * self.y_std + self.y_mean


def dfnn_fit(X, y, seed: int = 0, iterations: int = 4000, batch_size: int = 32,
             lr: float = 5e-4, width: int = 50, depth: int = 9,
             bn_recalibration_batches: int = 500) -> DfnnModel:
    """Train with Adam on the mean squared error of standardized targets.

    Ends with train-mode forwards at frozen weights so the batchnorm running
    statistics describe the final weights rather than a lagged average.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xs, mu, sd = _standardize(X)
    y_mean = float(y.mean())
    y_std = float(y.std()) or 1.0
    ys = (y - y_mean) / y_std
    graph = dfnn_build(X.shape[1], seed=seed, width=width, depth=depth)
    adam = AdamState(graph.param_blocks(), lr=lr)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    batch_size = min(batch_size, n)
    for _ in range(iterations):
        idx = rng.choice(n, size=batch_size, replace=False)
        ctx = graph.forward({"yield": Xs[idx]}, mode="train", want_cache=True)
        pred = ctx.outputs["yield"][:, 0]
        grad = (2.0 / batch_size) * (pred - ys[idx])
        grads, _ = graph.backward(ctx, {"yield": grad[:, None]})
        adam_step(adam, grads)
    if iterations > 0:
        for _ in range(bn_recalibration_batches):
            idx = rng.choice(n, size=batch_size, replace=False)
            graph.forward({"yield": Xs[idx]}, mode="train")
    return DfnnModel(graph=graph, x_mean=mu, x_std=sd, y_mean=y_mean, y_std=y_std)


# ---------------------------------------------------------------------------
# Baseline model files: JSON header + float64 payload, tagged per kind.


def save_baseline(path, model):
    if isinstance(model, LinearModel):
        header = {"format": "linear-v1", "penalty": model.penalty, "lam": model.lam,
                  "intercept": model.intercept, "n_features": model.weights.size}
        payload = binio.f64_bytes(model.weights)
    elif isinstance(model, TreeNode):
        header = {"format": "tree-v1", "root": model.to_json()}
        payload = b""
    elif isinstance(model, ForestModel):
        header = {"format": "forest-v1", "seed": model.seed,
                  "trees": [t.to_json() for t in model.trees]}
        payload = b""
    elif isinstance(model, DfnnModel):
        blocks = model.graph.param_blocks()
        header = {
            "format": "dfnn-v1",
            "config": model.graph.meta["config"],
            "y_mean": model.y_mean,
            "y_std": model.y_std,
            "blocks": [
                {"name": b.name,
                 "arrays": [{"key": k, "shape": list(b.arrays[k].shape)}
                            for k in b.arrays]}
                for b in blocks
            ],
        }
        payload = b"".join(
            binio.f64_bytes(b.arrays[k]) for b in blocks for k in b.arrays)
        payload = binio.f64_bytes(model.x_mean) + binio.f64_bytes(model.x_std) + payload
    else:
        raise TypeError(f"cannot serialize baseline of type {type(model).__name__}")
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BASELINE_MAGIC)
        fh.write(binio.u32(len(head_bytes)))
        fh.write(head_bytes)
        fh.write(payload)


def load_baseline(path):
    with open(path, "rb") as fh:
        data = fh.read()
    r = binio.Reader(data)
    r.expect_magic(BASELINE_MAGIC)
    head_len = r.u32("header length")
    header = json.loads(r.utf8(head_len, "header"))
    fmt = header.get("format")
    if fmt == "linear-v1":
        w = r.f64_array(header["n_features"], "weights")
        r.done()
        return LinearModel(weights=w, intercept=header["intercept"],
                           penalty=header["penalty"], lam=header["lam"])
    if fmt == "tree-v1":
        r.done()
        return TreeNode.from_json(header["root"])
    if fmt == "forest-v1":
        r.done()
        return ForestModel(trees=[TreeNode.from_json(t) for t in header["trees"]],
                           seed=header["seed"])
    if fmt == "dfnn-v1":
        cfg = DfnnConfig.from_json(header["config"])
        graph = dfnn_build(cfg.features, seed=0, width=cfg.width, depth=cfg.depth)
        x_mean = r.f64_array(cfg.features, "x_mean")
        x_std = r.f64_array(cfg.features, "x_std")
        for block, desc in zip(graph.param_blocks(), header["blocks"]):
            for arr_desc in desc["arrays"]:
                shape = tuple(arr_desc["shape"])
                n = int(np.prod(shape)) if shape else 1
                block.arrays[arr_desc["key"]] = r.f64_array(
                    n, f"{desc['name']}/{arr_desc['key']}").reshape(shape)
        r.done()
        return DfnnModel(graph=graph, x_mean=x_mean, x_std=x_std,
                         y_mean=header["y_mean"], y_std=header["y_std"])
    raise RasterFormatError(f"unknown baseline format {fmt!r}", 8)
