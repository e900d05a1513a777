"""Model graphs: a shared trunk feeding one or more named heads.

A two-head crop model shares every trunk ParamBlock between heads; a plain
feed-forward net is an empty trunk with a single head. Forward returns an
explicit context object so backward never depends on hidden layer state.
"""

import numpy as np

from ..errors import GraphStateError
from .layers import GradStore, Layer, LayerSpec, make_layer


class Sequential:
    """A straight chain of layers built for one input shape."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers
        self.in_shape = None
        self.out_shape = None

    def build(self, in_shape: tuple, rng: np.random.Generator) -> tuple:
        self.in_shape = tuple(in_shape)
        shape = self.in_shape
        for layer in self.layers:
            shape = layer.build(shape, rng)
        self.out_shape = shape
        return shape

    def forward(self, x, mode, caches=None):
        for layer in self.layers:
            x = layer.forward(x, mode, caches)
        return x

    def backward(self, dy, caches, grads, skip_input_grad=False):
        for i, (layer, cache) in enumerate(
                zip(reversed(self.layers), reversed(caches))):
            is_first_layer = i == len(self.layers) - 1
            if skip_input_grad and is_first_layer and hasattr(layer, "backward_params"):
                layer.backward_params(dy, cache, grads)
                return None
            dy = layer.backward(dy, cache, grads)
        return dy

    def param_blocks(self):
        return [layer.params for layer in self.layers if layer.params is not None]


class ForwardContext:
    """Holds one forward pass: per-branch outputs and (optionally) caches."""

    def __init__(self, mode: str, cached: bool):
        self.mode = mode
        self.cached = cached
        self.outputs: dict[str, np.ndarray] = {}
        self.head_caches: dict[str, list] = {}
        self.trunk_caches: list | None = [] if cached else None
        self.batch_split: list[tuple[str, int]] = []


class ModelGraph:
    """Shared trunk + named heads over a common input shape.

    meta carries a JSON-serializable architecture description so
    checkpoints can rebuild the graph.
    """

    def __init__(self, trunk: Sequential, heads: dict[str, Sequential], meta: dict):
        self.trunk = trunk
        self.heads = dict(heads)
        self.meta = meta
        self.input_shape = None

    def build(self, input_shape: tuple, seed: int) -> "ModelGraph":
        rng = np.random.default_rng(seed)
        self.input_shape = tuple(input_shape)
        shape = self.trunk.build(input_shape, rng)
        for head in self.heads.values():
            head.build(shape, rng)
        return self

    def param_blocks(self):
        """All ParamBlocks in declaration order, shared blocks once."""
        seen = set()
        out = []
        for seq in [self.trunk, *self.heads.values()]:
            for block in seq.param_blocks():
                if id(block) not in seen:
                    seen.add(id(block))
                    out.append(block)
        return out

    def trainable_count(self) -> int:
        return sum(b.trainable_count() for b in self.param_blocks())

    def forward(self, inputs: dict[str, np.ndarray], mode: str,
                want_cache: bool = False) -> ForwardContext:
        """Run the trunk on the concatenated branch batches, then each head.

        inputs maps head name -> batch array; branch order follows head
        declaration order. Branches absent from inputs are skipped.
        """
        ctx = ForwardContext(mode, want_cache)
        names = [n for n in self.heads if n in inputs]
        if not names:
            raise ValueError("forward called with no recognized branch inputs")
        batches = [np.asarray(inputs[n], dtype=np.float64) for n in names]
        ctx.batch_split = [(n, b.shape[0]) for n, b in zip(names, batches)]
        x = np.concatenate(batches, axis=0) if len(batches) > 1 else batches[0]
        feats = self.trunk.forward(x, mode, ctx.trunk_caches)
        offset = 0
        for name, n in ctx.batch_split:
            head_cache = [] if want_cache else None
            ctx.outputs[name] = self.heads[name].forward(
                feats[offset:offset + n], mode, head_cache)
            if want_cache:
                ctx.head_caches[name] = head_cache
            offset += n
        return ctx

    def backward(self, ctx: ForwardContext, dout: dict[str, np.ndarray],
                 need_input_grad: bool = False):
        """Reverse-mode pass; returns (GradStore, input grads per branch).

        Training loops leave need_input_grad off to skip the first layer's
        input-gradient work; gradient checks turn it on.
        """
        if not ctx.cached:
            raise GraphStateError("backward requires a forward pass run with want_cache=True")
        grads = GradStore()
        has_trunk = bool(self.trunk.layers)
        dfeats = []
        for name, n in ctx.batch_split:
            dy = np.asarray(dout[name], dtype=np.float64)
            dfeats.append(self.heads[name].backward(
                dy, ctx.head_caches[name], grads,
                skip_input_grad=not need_input_grad and not has_trunk))
        if not has_trunk and not need_input_grad:
            return grads, None
        dfeat = np.concatenate(dfeats, axis=0) if len(dfeats) > 1 else dfeats[0]
        dx = self.trunk.backward(dfeat, ctx.trunk_caches, grads,
                                 skip_input_grad=not need_input_grad)
        if dx is None:
            return grads, None
        dinputs = {}
        offset = 0
        for name, n in ctx.batch_split:
            dinputs[name] = dx[offset:offset + n]
            offset += n
        return grads, dinputs


def sequential_from_specs(specs: list[LayerSpec], prefix: str) -> Sequential:
    layers = []
    counts: dict[str, int] = {}
    for spec in specs:
        counts[spec.kind] = counts.get(spec.kind, 0) + 1
        layers.append(make_layer(spec, f"{prefix}/{spec.kind}{counts[spec.kind]}"))
    return Sequential(layers)
