# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled LSTM recurrence kernels.

Only the sequential part of a layer lives here. The input projection
``x @ W.T + b`` and the input gradient ``dz @ W`` are plain matrix products
and stay in BLAS on the Python side. Weight gradients are tall, skinny
products that a register-tiled loop handles faster than BLAS.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from "lstm_core.h" nogil:
    int LSTM_MAX_HIDDEN
    void lstm_forward_f(const float *xproj, const float *UT, float *gates, float *cell,
                        float *tcell, float *hidden, long B, long T, long H)
    void lstm_forward_d(const double *xproj, const double *UT, double *gates, double *cell,
                        double *tcell, double *hidden, long B, long T, long H)
    void lstm_backward_f(const float *dhidden, const float *gates, const float *cell,
                         const float *tcell, const float *U, float *dz, long B, long T, long H)
    void lstm_backward_d(const double *dhidden, const double *gates, const double *cell,
                         const double *tcell, const double *U, double *dz, long B, long T, long H)
    void lstm_weight_grads_f(const float *dz, const float *inp, const float *hidden, float *dW,
                             float *dU, float *db, long B, long T, long C, long H)
    void lstm_weight_grads_d(const double *dz, const double *inp, const double *hidden, double *dW,
                             double *dU, double *db, long B, long T, long C, long H)

NAME = "cython"


cdef _check_dims(long G, long H):
    if G != 4 * H:
        raise ValueError(f"gate axis {G} is not 4 x hidden size {H}")
    if H > LSTM_MAX_HIDDEN:
        raise ValueError(f"hidden size {H} exceeds kernel limit {LSTM_MAX_HIDDEN}")


def lstm_forward(xproj, U):
    """Run the recurrence over ``xproj`` (B, T, 4H) with recurrent weights ``U`` (4H, H).

    Returns ``(gates, cell, tcell, hidden)`` where ``tcell = tanh(cell)``.
    """
    dtype = xproj.dtype
    if dtype not in (np.float32, np.float64) or U.dtype != dtype:
        raise TypeError("xproj and U must share a float32 or float64 dtype")
    cdef cnp.ndarray xp = np.ascontiguousarray(xproj)
    cdef cnp.ndarray ut = np.ascontiguousarray(U.T)
    cdef long B = xp.shape[0], T = xp.shape[1], G = xp.shape[2], H = ut.shape[0]
    _check_dims(G, H)
    if ut.shape[1] != G:
        raise ValueError("recurrent weights do not match the gate axis")
    cdef cnp.ndarray gates = np.empty((B, T, G), dtype=dtype)
    cdef cnp.ndarray cell = np.empty((B, T, H), dtype=dtype)
    cdef cnp.ndarray tcell = np.empty((B, T, H), dtype=dtype)
    cdef cnp.ndarray hidden = np.empty((B, T, H), dtype=dtype)
    if dtype == np.float32:
        with nogil:
            lstm_forward_f(<float *> xp.data, <float *> ut.data, <float *> gates.data,
                           <float *> cell.data, <float *> tcell.data, <float *> hidden.data,
                           B, T, H)
    else:
        with nogil:
            lstm_forward_d(<double *> xp.data, <double *> ut.data, <double *> gates.data,
                           <double *> cell.data, <double *> tcell.data, <double *> hidden.data,
                           B, T, H)
    return gates, cell, tcell, hidden


def lstm_backward(dhidden, gates, cell, tcell, U):
    """Backpropagate through time.

    Returns ``dz`` (B, T, 4H), the loss gradient w.r.t. the gate pre-activations.
    """
    dtype = gates.dtype
    cdef cnp.ndarray dh = np.ascontiguousarray(dhidden, dtype=dtype)
    cdef cnp.ndarray g = np.ascontiguousarray(gates)
    cdef cnp.ndarray c = np.ascontiguousarray(cell, dtype=dtype)
    cdef cnp.ndarray tc = np.ascontiguousarray(tcell, dtype=dtype)
    cdef cnp.ndarray u = np.ascontiguousarray(U, dtype=dtype)
    cdef long B = g.shape[0], T = g.shape[1], G = g.shape[2], H = u.shape[1]
    _check_dims(G, H)
    if dh.shape[0] != B or dh.shape[1] != T or dh.shape[2] != H:
        raise ValueError("dhidden shape does not match the cached activations")
    cdef cnp.ndarray dz = np.empty((B, T, G), dtype=dtype)
    if dtype == np.float32:
        with nogil:
            lstm_backward_f(<float *> dh.data, <float *> g.data, <float *> c.data,
                            <float *> tc.data, <float *> u.data, <float *> dz.data, B, T, H)
    elif dtype == np.float64:
        with nogil:
            lstm_backward_d(<double *> dh.data, <double *> g.data, <double *> c.data,
                            <double *> tc.data, <double *> u.data, <double *> dz.data, B, T, H)
    else:
        raise TypeError("activations must be float32 or float64")
    return dz


def lstm_weight_grads(dz, inp, hidden):
    """``(dW, dU, db)`` summed over batch and time for one layer.

    ``dz`` (B, T, 4H) are gate gradients, ``inp`` (B, T, C) the layer inputs
    and ``hidden`` (B, T, H) its outputs; ``dU`` pairs step t with h_{t-1}.
    """
    dtype = dz.dtype
    cdef cnp.ndarray d = np.ascontiguousarray(dz)
    cdef cnp.ndarray x = np.ascontiguousarray(inp, dtype=dtype)
    cdef cnp.ndarray h = np.ascontiguousarray(hidden, dtype=dtype)
    cdef long B = d.shape[0], T = d.shape[1], G = d.shape[2], C = x.shape[2], H = h.shape[2]
    _check_dims(G, H)
    if x.shape[0] != B or x.shape[1] != T or h.shape[0] != B or h.shape[1] != T:
        raise ValueError("dz, inputs and hidden states disagree on batch or time")
    cdef cnp.ndarray dW = np.zeros((G, C), dtype=dtype)
    cdef cnp.ndarray dU = np.zeros((G, H), dtype=dtype)
    cdef cnp.ndarray db = np.zeros(G, dtype=dtype)
    if dtype == np.float32:
        with nogil:
            lstm_weight_grads_f(<float *> d.data, <float *> x.data, <float *> h.data,
                                <float *> dW.data, <float *> dU.data, <float *> db.data, B, T, C, H)
    elif dtype == np.float64:
        with nogil:
            lstm_weight_grads_d(<double *> d.data, <double *> x.data, <double *> h.data,
                                <double *> dW.data, <double *> dU.data, <double *> db.data, B, T, C, H)
    else:
        raise TypeError("gradients must be float32 or float64")
    return dW, dU, db
