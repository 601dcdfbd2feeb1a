"""Dense policy/value network with hand-written backprop.

One parameter set serves both heads: the final layer emits n_actions logits
plus one value unit. The policy pass and the value pass feed different input
vectors (the baseline is allowed private information that the policy must
not see), so callers run two forwards and sum the two backward passes.

Parameters live in a plain dict {"W0", "b0", ..., "Wk", "bk"} in float64;
everything here is deterministic given the init seed.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -1e9  # added to illegal logits before any softmax


def init_params(layer_sizes: list[int], seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform init; layer_sizes = [d_in, h..., n_actions + 1]."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params: dict[str, np.ndarray] = {}
    for k, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{k}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"b{k}"] = np.zeros(fan_out)
    return params


def n_layers(params: dict[str, np.ndarray]) -> int:
    return sum(1 for k in params if k.startswith("W"))


def forward(params: dict[str, np.ndarray], x: np.ndarray):
    """Returns (logits (n, A), value (n,), cache). ReLU hidden layers."""
    depth = n_layers(params)
    acts = [np.asarray(x, dtype=np.float64)]
    pre = []
    h = acts[0]
    for k in range(depth):
        z = h @ params[f"W{k}"] + params[f"b{k}"]
        if k < depth - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            out = z
    return out[:, :-1], out[:, -1], (acts, pre)


def backward(params: dict[str, np.ndarray], cache, dlogits: np.ndarray,
             dvalue: np.ndarray, grads: dict[str, np.ndarray] | None = None):
    """Accumulate parameter gradients for one forward pass.

    dlogits (n, A) and dvalue (n,) are the loss derivatives at the output;
    pass grads to accumulate across multiple forwards (policy + value).
    """
    acts, pre = cache
    depth = n_layers(params)
    if grads is None:
        grads = {k: np.zeros_like(v) for k, v in params.items()}
    delta = np.concatenate([dlogits, dvalue[:, None]], axis=1)
    for k in range(depth - 1, -1, -1):
        grads[f"W{k}"] += acts[k].T @ delta
        grads[f"b{k}"] += delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params[f"W{k}"].T) * (pre[k - 1] > 0.0)
    return grads


def n_params(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


def pack(params: dict[str, np.ndarray]) -> np.ndarray:
    """Flatten to one vector in sorted-key order (for FD checks and clipping)."""
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unpack(vector: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for k in sorted(like):
        size = like[k].size
        out[k] = vector[pos:pos + size].reshape(like[k].shape).copy()
        pos += size
    return out


def masked_log_softmax(logits: np.ndarray, legal: np.ndarray,
                       inv_temp: float = 1.0) -> np.ndarray:
    """Log-probabilities with illegal entries pushed to NEG_INF before softmax."""
    legal = np.asarray(legal, dtype=bool)
    if not legal.any(axis=-1).all():
        raise ValueError("row with no legal actions")
    z = inv_temp * np.where(legal, logits, NEG_INF / inv_temp)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_softmax(logits: np.ndarray, legal: np.ndarray,
                   inv_temp: float = 1.0) -> np.ndarray:
    return np.exp(masked_log_softmax(logits, legal, inv_temp))
