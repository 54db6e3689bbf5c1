"""Stacked LSTM sequence classifier with a two-layer feed-forward head.

Parameters live in a flat dict of arrays. For LSTM layer ``l``:

- ``lstm{l}.W`` (4H, in_dim): input weights
- ``lstm{l}.U`` (4H, H): recurrent weights
- ``lstm{l}.b`` (4H,): bias

with gate blocks ordered input, forget, cell candidate, output along the
first axis. The head is ``head.W1`` (8, H), ``head.b1``, ``head.W2``
(n_classes, 8), ``head.b2``; ReLU follows the first head layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import get_backend

GATES = ("input", "forget", "cell", "output")


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class ModelParams:
    arrays: dict
    n_channels: int
    n_classes: int
    hidden_size: int = 16
    n_layers: int = 3
    head_size: int = 8
    relu_on_logits: bool = False

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        for name, shape in parameter_shapes(self.n_channels, self.n_classes, self.hidden_size,
                                            self.n_layers, self.head_size).items():
            if name not in self.arrays or self.arrays[name].shape != shape:
                raise ValueError(f"parameter {name} missing or not of shape {shape}")

    @property
    def dtype(self):
        return self.arrays["head.W1"].dtype

    @property
    def names(self) -> list:
        return list(self.arrays)

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def architecture(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "n_classes": self.n_classes,
            "hidden_size": self.hidden_size,
            "n_layers": self.n_layers,
            "head_size": self.head_size,
            "relu_on_logits": self.relu_on_logits,
        }

    def copy(self) -> ModelParams:
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, **self.architecture())

    def astype(self, dtype) -> ModelParams:
        return ModelParams({k: v.astype(dtype) for k, v in self.arrays.items()}, **self.architecture())

    def gate(self, layer: int, gate: str, kind: str = "W") -> np.ndarray:
        """View of one gate's block of ``W``, ``U`` or ``b`` for a layer."""
        k = GATES.index(gate)
        H = self.hidden_size
        return self.arrays[f"lstm{layer}.{kind}"][k * H:(k + 1) * H]


def parameter_shapes(n_channels, n_classes, hidden_size=16, n_layers=3, head_size=8) -> dict:
    shapes = {}
    H = hidden_size
    for l in range(n_layers):
        in_dim = n_channels if l == 0 else H
        shapes[f"lstm{l}.W"] = (4 * H, in_dim)
        shapes[f"lstm{l}.U"] = (4 * H, H)
        shapes[f"lstm{l}.b"] = (4 * H,)
    shapes["head.W1"] = (head_size, H)
    shapes["head.b1"] = (head_size,)
    shapes["head.W2"] = (n_classes, head_size)
    shapes["head.b2"] = (n_classes,)
    return shapes


def count_parameters(n_channels, n_classes, hidden_size=16, n_layers=3, head_size=8) -> int:
    shapes = parameter_shapes(n_channels, n_classes, hidden_size, n_layers, head_size)
    return int(sum(np.prod(s) for s in shapes.values()))


def init_params(n_channels, n_classes, rng=None, hidden_size=16, n_layers=3, head_size=8,
                dtype=np.float32, relu_on_logits=False, forget_bias=1.0) -> ModelParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero, forget gate bias 1."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    arrays = {}
    for name, shape in parameter_shapes(n_channels, n_classes, hidden_size, n_layers, head_size).items():
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[1])
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            arrays[name] = np.zeros(shape, dtype=dtype)
    for l in range(n_layers):
        arrays[f"lstm{l}.b"][hidden_size:2 * hidden_size] = forget_bias
    return ModelParams(arrays, n_channels, n_classes, hidden_size, n_layers, head_size, relu_on_logits)


def zero_params(n_channels, n_classes, **kw) -> ModelParams:
    shapes = parameter_shapes(n_channels, n_classes, kw.get("hidden_size", 16), kw.get("n_layers", 3),
                              kw.get("head_size", 8))
    dtype = kw.pop("dtype", np.float64)
    return ModelParams({k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}, n_channels, n_classes, **kw)


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_cell_forward(x_t, h_prev, c_prev, W, U, b):
    """One LSTM step for a single vector, written out gate by gate."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if not np.all(np.isfinite(x_t)):
        raise NonFiniteError("non-finite LSTM input")
    H = U.shape[1]
    z = W @ x_t + U @ h_prev + b
    i = _sigmoid(z[:H])
    f = _sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = _sigmoid(z[3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        frame = f", frame {bad[1]}" if arr.ndim == 3 else ""
        raise NonFiniteError(f"non-finite value in {what}{frame}")


def _locate_non_finite(named_arrays, fallback):
    """Raise for the first array holding a non-finite value, else for ``fallback``."""
    for what, arr in named_arrays:
        _check_finite(arr, what)
    raise NonFiniteError(f"non-finite value in {fallback}")


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    acts: list = field(default_factory=list)
    last: np.ndarray | None = None
    pre1: np.ndarray | None = None
    act1: np.ndarray | None = None
    pre2: np.ndarray | None = None


def forward_batch(X, params: ModelParams, backend=None, keep_cache=False):
    """Logits (B, n_classes) for a batch (B, T, n_channels) run from zero state."""
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[2] != params.n_channels:
        raise ValueError(f"expected (batch, frames, {params.n_channels}) input, got {X.shape}")
    dtype = params.dtype
    # compiled kernels cover float32/float64; extended precision runs on NumPy
    kern = get_backend(backend if dtype in (np.float32, np.float64) else "numpy")
    a = params.arrays
    inp = np.ascontiguousarray(X, dtype=dtype)
    _check_finite(inp, "input")
    cache = ForwardCache()
    layers = []
    for l in range(params.n_layers):
        W, U, b = a[f"lstm{l}.W"], a[f"lstm{l}.U"], a[f"lstm{l}.b"]
        xproj = (inp.reshape(-1, inp.shape[2]) @ W.T).reshape(inp.shape[0], inp.shape[1], -1)
        xproj += b
        gates, cell, tcell, hidden = kern.lstm_forward(xproj, U)
        layers.append(hidden)
        if keep_cache:
            cache.inputs.append(inp)
            cache.acts.append((gates, cell, tcell, hidden))
        inp = hidden
    last = inp[:, -1, :]
    pre1 = last @ a["head.W1"].T + a["head.b1"]
    act1 = np.maximum(pre1, 0)
    pre2 = act1 @ a["head.W2"].T + a["head.b2"]
    logits = np.maximum(pre2, 0) if params.relu_on_logits else pre2
    if not np.isfinite(logits).all():
        # non-finite values propagate upwards, so only a failure pays for the scan
        _locate_non_finite(((f"LSTM layer {l}", h) for l, h in enumerate(layers)), "logits")
    if keep_cache:
        cache.last, cache.pre1, cache.act1, cache.pre2 = last, pre1, act1, pre2
        return logits, cache
    return logits


def forward(sample, params: ModelParams, backend=None) -> np.ndarray:
    """Logit vector for one (frames, channels) sample."""
    sample = np.asarray(sample)
    if sample.ndim != 2:
        raise ValueError(f"expected (frames, channels) sample, got shape {sample.shape}")
    return forward_batch(sample[None], params, backend)[0]


def weighted_cross_entropy(x, cls, weight) -> float:
    """``weight[cls] * (-x[cls] + log(sum_j exp(x[j])))`` with a max-shifted log-sum-exp."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite logits")
    m = x.max()
    lse = m + np.log(np.sum(np.exp(x - m)))
    return float(weight[cls] * (lse - x[cls]))


def batch_loss(X, labels, params: ModelParams, weight, backend=None):
    """Mean weighted loss, evaluated in the parameters' own precision."""
    logits = forward_batch(X, params, backend)
    labels = np.asarray(labels, dtype=np.int64)
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    w = np.asarray(weight).astype(logits.dtype)[labels]
    return (w * (lse - logits[np.arange(len(labels)), labels])).mean()


def batch_loss_terms(logits, labels, weight):
    """Per-sample weighted losses and softmax probabilities for a batch."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(s[:, 0])
    w = np.asarray(weight, dtype=np.float64)[labels]
    losses = w * (lse - logits[np.arange(len(labels)), labels])
    return losses, e / s


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def class_weights(label_counts) -> np.ndarray:
    """``N / (n_classes * count[c])``: inverse class frequency, all ones when balanced."""
    counts = np.asarray(label_counts, dtype=np.float64)
    if np.any(counts <= 0):
        empty = [int(i) for i in np.flatnonzero(counts <= 0)]
        raise ValueError(
            f"class(es) {empty} have no training samples; re-split or change the labelling threshold"
        )
    return counts.sum() / (len(counts) * counts)


def loss_and_grads(X, labels, params: ModelParams, weight, backend=None):
    """Mean weighted loss over the batch and its gradient for every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(X):
        raise ValueError("one label per sample required")
    kern = get_backend(backend)
    a = params.arrays
    dtype = params.dtype
    logits, cache = forward_batch(X, params, backend, keep_cache=True)
    losses, probs = batch_loss_terms(logits, labels, weight)
    B = len(labels)
    w = np.asarray(weight, dtype=np.float64)[labels]
    dlogits = probs
    dlogits[np.arange(B), labels] -= 1.0
    dlogits *= (w / B)[:, None]
    if params.relu_on_logits:
        dlogits *= cache.pre2 > 0
    dlogits = dlogits.astype(dtype)

    grads = {}
    grads["head.W2"] = dlogits.T @ cache.act1
    grads["head.b2"] = dlogits.sum(axis=0)
    dpre1 = (dlogits @ a["head.W2"]) * (cache.pre1 > 0)
    grads["head.W1"] = dpre1.T @ cache.last
    grads["head.b1"] = dpre1.sum(axis=0)
    dlast = dpre1 @ a["head.W1"]

    H = params.hidden_size
    T = X.shape[1]
    dhidden = np.zeros((B, T, H), dtype=dtype)
    dhidden[:, -1, :] = dlast
    dzs = {}
    for l in range(params.n_layers - 1, -1, -1):
        gates, cell, tcell, hidden = cache.acts[l]
        dz = kern.lstm_backward(dhidden, gates, cell, tcell, a[f"lstm{l}.U"])
        dzs[l] = dz
        grads[f"lstm{l}.W"], grads[f"lstm{l}.U"], grads[f"lstm{l}.b"] = kern.lstm_weight_grads(
            dz, cache.inputs[l], hidden)
        if l > 0:
            dhidden = (dz.reshape(-1, 4 * H) @ a[f"lstm{l}.W"]).reshape(B, T, -1)
    if not all(np.isfinite(g).all() for g in grads.values()):
        _locate_non_finite(((f"LSTM layer {l} backward", dzs[l]) for l in sorted(dzs, reverse=True)),
                           "gradients")
    grads = {k: grads[k] for k in a}
    return float(losses.mean()), grads


def evaluate_loss(X, labels, params: ModelParams, weight, backend=None, batch_size=256):
    """Mean weighted loss and logits over a dataset, in fixed-size chunks."""
    logits = predict_logits(X, params, backend, batch_size)
    losses, _ = batch_loss_terms(logits, labels, weight)
    return float(losses.mean()) if len(losses) else float("nan"), logits


def predict_logits(X, params: ModelParams, backend=None, batch_size=256) -> np.ndarray:
    out = [forward_batch(X[i:i + batch_size], params, backend) for i in range(0, len(X), batch_size)]
    if not out:
        return np.zeros((0, params.n_classes))
    return np.concatenate(out).astype(np.float64)
