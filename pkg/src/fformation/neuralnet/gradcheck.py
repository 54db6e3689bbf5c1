"""Central finite-difference check of the analytic gradients.

The analytic side runs in float64 on the selected kernel backend. The
finite differences are evaluated in the widest float NumPy offers
(``longdouble``) so that round-off in the loss does not swamp small
gradients.
"""

from __future__ import annotations

import numpy as np

from .model import ModelParams, batch_loss, init_params, loss_and_grads

WIDE = np.longdouble

ABS_TOL = 1e-8


def relative_errors(analytic, numeric, atol=ABS_TOL) -> np.ndarray:
    """|a - n| / |n| against the numeric reference.

    Where both gradients are below ``atol`` in magnitude the pair is exact;
    where only the numeric one is, the error is measured against ``atol``.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(numeric), atol)
    both_tiny = (np.abs(analytic) <= atol) & (np.abs(numeric) <= atol)
    return np.where(both_tiny, 0.0, diff / scale)


def numeric_gradients(params: ModelParams, X, labels, weight, h=1e-5, dtype=WIDE) -> dict:
    """(L(p + h) - L(p - h)) / 2h for every parameter element."""
    params = params.astype(dtype)
    X = np.asarray(X, dtype=dtype)
    weight = np.asarray(weight, dtype=dtype)
    h = dtype(h)
    out = {}
    for name, arr in params.arrays.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = batch_loss(X, labels, params, weight, "numpy")
            flat[i] = old - h
            down = batch_loss(X, labels, params, weight, "numpy")
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def finite_diff_check(params: ModelParams, X, labels, weight=None, h=1e-5, backend=None,
                      analytic=None, per_parameter=False):
    """Worst relative error between analytic and central-difference gradients.

    ``analytic`` overrides the computed analytic gradients,
    which is how a planted bug is simulated in tests.
    """
    params = params.astype(np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    weight = np.ones(params.n_classes) if weight is None else np.asarray(weight, dtype=np.float64)
    if analytic is None:
        _, analytic = loss_and_grads(X, labels, params, weight, backend)
    numeric = numeric_gradients(params, X, labels, weight, h)
    errors = {k: float(relative_errors(analytic[k], numeric[k]).max()) for k in params.arrays}
    worst = max(errors.values())
    return (worst, errors) if per_parameter else worst


def tiny_problem(seed, n_classes=2, n_channels=7, hidden_size=3, frames=5, batch=3, n_layers=3,
                 head_size=8):
    """Random small model, batch and class weights for gradient checking."""
    rng = np.random.default_rng(seed)
    params = init_params(n_channels, n_classes, rng, hidden_size=hidden_size, n_layers=n_layers,
                         head_size=head_size, dtype=np.float64)
    # spread biases so no unit sits exactly at a ReLU kink or a saturated gate
    for k, a in params.arrays.items():
        a += rng.normal(0, 0.3, size=a.shape)
    X = rng.normal(size=(batch, frames, n_channels))
    labels = rng.integers(0, n_classes, size=batch)
    weight = rng.uniform(0.5, 2.0, size=n_classes)
    return params, X, labels, weight


def gradient_suite(n_seeds: int = 10, class_counts=(2, 4), backend=None, hidden_size: int = 3,
                   frames: int = 5) -> dict:
    """Finite-difference check over ``n_seeds`` tiny models per class count.

    Returns ``{"worst": float, "runs": [{"seed", "n_classes", "max_rel_error"}, ...]}``.
    """
    runs = []
    for n_classes in class_counts:
        for seed in range(n_seeds):
            params, X, labels, weight = tiny_problem(seed, n_classes=n_classes,
                                                     hidden_size=hidden_size, frames=frames)
            err = finite_diff_check(params, X, labels, weight, backend=backend)
            runs.append({"seed": seed, "n_classes": n_classes, "max_rel_error": float(err)})
    return {"worst": max(r["max_rel_error"] for r in runs), "runs": runs}
