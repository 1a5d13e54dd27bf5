"""Pure-numpy implementations of the hot array kernels.

Valid (no padding) stride-1 cross-correlation and max pooling on
``(batch, channels, time)`` float64 arrays. The compiled extension in
``_convolve.pyx`` implements the same contracts; either backend can be
selected at import (see ``pqxplain.kernels``).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv1d_forward(x, w, b):
    """x: (B, C, T), w: (F, C, K), b: (F,) -> (B, F, T-K+1)."""
    batch, _, _ = x.shape
    n_filters, ch, k = w.shape
    win = sliding_window_view(x, k, axis=2)  # (B, C, To, K)
    t_out = win.shape[2]
    col = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(batch * t_out, ch * k)
    out = col @ w.reshape(n_filters, ch * k).T
    out += b
    return np.ascontiguousarray(out.reshape(batch, t_out, n_filters).transpose(0, 2, 1))


def conv1d_backward_input(grad_out, w, t_in):
    """grad_out: (B, F, To), w: (F, C, K) -> (B, C, t_in)."""
    batch, n_filters, t_out = grad_out.shape
    _, ch, k = w.shape
    # Full correlation with the kernel flipped along K.
    padded = np.zeros((batch, n_filters, t_out + 2 * (k - 1)), dtype=np.float64)
    padded[:, :, k - 1 : k - 1 + t_out] = grad_out
    win = sliding_window_view(padded, k, axis=2)  # (B, F, t_in, K)
    col = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(batch * t_in, n_filters * k)
    w_flip = np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2)).reshape(ch, n_filters * k)
    dx = col @ w_flip.T
    return np.ascontiguousarray(dx.reshape(batch, t_in, ch).transpose(0, 2, 1))


def conv1d_backward_weights(x, grad_out, k):
    """x: (B, C, T), grad_out: (B, F, To) -> (dw (F, C, K), db (F,))."""
    batch, ch, _ = x.shape
    _, n_filters, t_out = grad_out.shape
    win = sliding_window_view(x, k, axis=2)[:, :, :t_out, :]  # (B, C, To, K)
    col = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(batch * t_out, ch * k)
    go = np.ascontiguousarray(grad_out.transpose(0, 2, 1)).reshape(batch * t_out, n_filters)
    dw = (go.T @ col).reshape(n_filters, ch, k)
    db = grad_out.sum(axis=(0, 2))
    return dw, db


def maxpool1d_forward(x, k):
    """Stride-1 max pooling; ties resolve to the lowest time index.

    Returns (out (B, C, T-k+1), argmax int64 absolute time indices).
    """
    win = sliding_window_view(x, k, axis=2)  # (B, C, To, K)
    rel = np.argmax(win, axis=3)
    out = np.take_along_axis(win, rel[..., None], axis=3)[..., 0]
    idx = rel + np.arange(win.shape[2])[None, None, :]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool1d_backward(grad_out, idx, t_in):
    """Scatter-add pooled gradients back to input positions."""
    batch, ch, t_out = grad_out.shape
    dx = np.zeros((batch, ch, t_in), dtype=np.float64)
    flat_off = (np.arange(batch)[:, None, None] * ch + np.arange(ch)[None, :, None]) * t_in
    np.add.at(dx.reshape(-1), (flat_off + idx).ravel(), grad_out.ravel())
    return dx
