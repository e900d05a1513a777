"""Adam optimizer with bias correction."""

import numpy as np

from .layers import GradStore, ParamBlock


class AdamState:
    """First/second-moment accumulators for every trainable tensor of a model.

    Slots are kept in block declaration order so checkpoints serialize
    deterministically.
    """

    def __init__(self, blocks: list[ParamBlock], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError(f"betas must lie in (0,1), got ({beta1}, {beta2})")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.slots = []
        self._scratch = []
        for block in blocks:
            for key, arr in block.trainable_items():
                self.slots.append((block, key, np.zeros_like(arr), np.zeros_like(arr)))
                self._scratch.append(np.empty_like(arr))

    def moment_arrays(self):
        """(m, v) pairs in slot order, for serialization."""
        return [(m, v) for _, _, m, v in self.slots]


def adam_step(state: AdamState, grads: GradStore) -> None:
    """One in-place Adam update over every trainable tensor.

    theta -= lr * mhat / (sqrt(vhat) + eps) with mhat = m/(1-b1^t),
    vhat = v/(1-b2^t); written with the bias corrections folded into
    scalars so no per-tensor temporaries are allocated.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    sq_c2 = np.sqrt(1.0 - b2 ** state.step)
    alpha = state.lr * sq_c2 / c1
    eps_hat = state.eps * sq_c2
    for (block, key, m, v), scratch in zip(state.slots, state._scratch):
        g = grads.get(block, key)
        m *= b1
        np.multiply(g, 1.0 - b1, out=scratch)
        m += scratch
        v *= b2
        np.multiply(g, g, out=scratch)
        scratch *= 1.0 - b2
        v += scratch
        np.sqrt(v, out=scratch)
        scratch += eps_hat
        np.divide(m, scratch, out=scratch)
        scratch *= alpha
        block.arrays[key] -= scratch
