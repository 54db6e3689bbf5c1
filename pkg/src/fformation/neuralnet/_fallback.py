"""Pure NumPy LSTM recurrence, same interface as the compiled kernels."""

import numpy as np

NAME = "numpy"


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(xproj, U):
    B, T, G = xproj.shape
    H = U.shape[1]
    if G != 4 * H or U.shape[0] != G:
        raise ValueError(f"gate axis {G} is not 4 x hidden size {H}")
    dtype = xproj.dtype
    UT = np.ascontiguousarray(U.T)
    gates = np.empty((B, T, G), dtype=dtype)
    cell = np.empty((B, T, H), dtype=dtype)
    tcell = np.empty((B, T, H), dtype=dtype)
    hidden = np.empty((B, T, H), dtype=dtype)
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    for t in range(T):
        z = xproj[:, t] + h @ UT
        g = gates[:, t]
        g[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        g[:, 2 * H: 3 * H] = np.tanh(z[:, 2 * H: 3 * H])
        g[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        c = g[:, H: 2 * H] * c + g[:, :H] * g[:, 2 * H: 3 * H]
        tc = np.tanh(c)
        h = g[:, 3 * H:] * tc
        cell[:, t] = c
        tcell[:, t] = tc
        hidden[:, t] = h
    return gates, cell, tcell, hidden


def lstm_backward(dhidden, gates, cell, tcell, U):
    B, T, G = gates.shape
    H = U.shape[1]
    dtype = gates.dtype
    dz = np.empty((B, T, G), dtype=dtype)
    dh_next = np.zeros((B, H), dtype=dtype)
    dc_next = np.zeros((B, H), dtype=dtype)
    zero = np.zeros((B, H), dtype=dtype)
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, gg, o = g[:, :H], g[:, H: 2 * H], g[:, 2 * H: 3 * H], g[:, 3 * H:]
        tc = tcell[:, t]
        cp = cell[:, t - 1] if t > 0 else zero
        dh = dhidden[:, t] + dh_next
        dc = dh * o * (1 - tc * tc) + dc_next
        d = dz[:, t]
        d[:, :H] = dc * gg * i * (1 - i)
        d[:, H: 2 * H] = dc * cp * f * (1 - f)
        d[:, 2 * H: 3 * H] = dc * i * (1 - gg * gg)
        d[:, 3 * H:] = dh * tc * o * (1 - o)
        dc_next = dc * f
        dh_next = d @ U
    return dz


def lstm_weight_grads(dz, inp, hidden):
    G = dz.shape[2]
    dz2 = dz.reshape(-1, G)
    dW = dz2.T @ inp.reshape(-1, inp.shape[2])
    dU = dz[:, 1:].reshape(-1, G).T @ hidden[:, :-1].reshape(-1, hidden.shape[2])
    return dW, dU, dz2.sum(axis=0)
