"""Numeric convolution kernels on channels-last arrays.

Activations are ``(B, H, W, C)``, weights ``(K, K, C_in, C_out)``. Convolution is
cross-correlation with "same" zero padding ``K // 2``. Patches are gathered in
row tiles so the im2col buffer stays in cache; this is several times faster
than materializing the whole patch matrix on large images.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# target number of output pixels per tile
_TILE_PIXELS = 2048


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def out_size(n: int, stride: int) -> int:
    return -(-n // stride)


def _patches(xp: np.ndarray, K: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    # view (Ho, Wo, K, K, C) of the K x K windows of a padded (Hp, Wp, C) image
    v = sliding_window_view(xp, (K, K), axis=(0, 1))
    v = v[::stride, ::stride][:Ho, :Wo]
    return v.transpose(0, 1, 3, 4, 2)


def _tile_rows(Wo: int) -> int:
    return max(1, _TILE_PIXELS // max(Wo, 1))


def _correlate(xp: np.ndarray, wmat: np.ndarray, K: int, stride: int, Ho: int, Wo: int,
               out: np.ndarray) -> None:
    """Valid correlation of one padded image, written into ``out`` (Ho, Wo, O)."""
    C = xp.shape[2]
    O = wmat.shape[1]
    view = _patches(xp, K, stride, Ho, Wo)
    T = _tile_rows(Wo)
    buf = np.empty((T, Wo, K, K, C), dtype=xp.dtype)
    for r in range(0, Ho, T):
        n = min(T, Ho - r)
        b = buf[:n]
        np.copyto(b, view[r:r + n])
        np.matmul(b.reshape(n * Wo, K * K * C), wmat, out=out[r:r + n].reshape(n * Wo, O))


def _pad(x: np.ndarray, before: int, after_h: int, after_w: int) -> np.ndarray:
    return np.pad(x, ((before, after_h), (before, after_w), (0, 0)))


def _check(x, w):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"expected 4-D input and weights, got {x.shape} and {w.shape}")
    K = w.shape[0]
    if w.shape[1] != K or K % 2 == 0:
        raise ShapeError(f"kernel must be square and odd, got {w.shape[:2]}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"input has {x.shape[3]} channels, kernel expects {w.shape[2]}")
    return K


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1) -> np.ndarray:
    """Same-padded 2-D cross-correlation. Output spatial size is ``ceil(n / stride)``."""
    K = _check(x, w)
    B, H, W, C = x.shape
    O = w.shape[3]
    p = K // 2
    Ho, Wo = out_size(H, stride), out_size(W, stride)
    # enough trailing padding for the last strided window
    ph = max(p, (Ho - 1) * stride + K - H - p)
    pw = max(p, (Wo - 1) * stride + K - W - p)
    wmat = w.reshape(K * K * C, O)
    out = np.empty((B, Ho, Wo, O), dtype=np.result_type(x, w))
    for i in range(B):
        _correlate(_pad(x[i], p, ph, pw), wmat, K, stride, Ho, Wo, out[i])
    if b is not None:
        out += b
    return out


def conv2d_grad_input(dout: np.ndarray, w: np.ndarray, stride: int, in_hw) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to its input (no bias)."""
    K = w.shape[0]
    B, Ho, Wo, O = dout.shape
    if w.shape[3] != O:
        raise ShapeError(f"gradient has {O} channels, kernel produces {w.shape[3]}")
    H, W = in_hw
    if out_size(H, stride) != Ho or out_size(W, stride) != Wo:
        raise ShapeError(f"input size {in_hw} does not map to {Ho}x{Wo} at stride {stride}")
    C = w.shape[2]
    p = K // 2
    # flipped kernel with swapped channel roles
    wf = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2)).reshape(K * K * O, C)
    dx = np.empty((B, H, W, C), dtype=np.result_type(dout, w))
    if stride == 1:
        for i in range(B):
            zp = np.pad(dout[i], ((p, p), (p, p), (0, 0)))
            _correlate(zp, wf, K, 1, H, W, dx[i])
        return dx
    # strided: each output phase (r_y, r_x) only sees the taps congruent to it,
    # which is a small stride-1 correlation of dout
    wt = w.transpose(0, 1, 3, 2)
    for ry in range(stride):
        ky, dy0, dy1 = _phase_taps(K, p, ry, stride)
        Hr = out_size(H - ry, stride)
        for rx in range(stride):
            kx, dx0, dx1 = _phase_taps(K, p, rx, stride)
            Wr = out_size(W - rx, stride)
            if Hr == 0 or Wr == 0:
                continue
            if not ky or not kx:
                dx[:, ry::stride, rx::stride] = 0
                continue
            sub = np.ascontiguousarray(wt[np.ix_(ky, kx)]).reshape(-1, C)
            tmp = np.empty((Hr, Wr, C), dtype=dx.dtype)
            (sy, ey), pady = _span(dy0, dy1, Hr, Ho)
            (sx, ex), padx = _span(dx0, dx1, Wr, Wo)
            for i in range(B):
                zp = np.pad(dout[i, sy:ey, sx:ex], (pady, padx, (0, 0)))
                _correlate_rect(zp, sub, len(ky), len(kx), Hr, Wr, tmp)
                dx[i, ry::stride, rx::stride] = tmp
    return dx


def _phase_taps(K, p, r, stride):
    """Kernel taps feeding outputs ``i = stride*m + r``, ordered by input offset.

    Output ``i`` receives ``w[k] * dout[m + d]`` with ``d = (r + p - k) / stride``.
    Returns the taps sorted by increasing ``d`` and the offset range.
    """
    pairs = sorted(((r + p - k) // stride, k) for k in range(K) if (r + p - k) % stride == 0)
    if not pairs:
        return [], 0, -1
    return [k for _, k in pairs], pairs[0][0], pairs[-1][0]


def _span(d0, d1, n_out, n_in):
    # rows of dout read by outputs m in [0, n_out) at offsets [d0, d1], and the
    # zero padding that makes them a plain valid correlation
    last = n_out - 1 + d1
    start, stop = max(0, d0), min(n_in, last + 1)
    return (start, stop), (max(0, -d0), max(0, last - (n_in - 1)))


def _correlate_rect(xp, wmat, KH, KW, Ho, Wo, out):
    # stride-1 valid correlation with a KH x KW kernel, without tiling
    C = xp.shape[2]
    v = sliding_window_view(xp, (KH, KW), axis=(0, 1))[:Ho, :Wo].transpose(0, 1, 3, 4, 2)
    cols = np.ascontiguousarray(v).reshape(Ho * Wo, KH * KW * C)
    np.matmul(cols, wmat, out=out.reshape(Ho * Wo, -1))


def conv2d_grad_weight(x: np.ndarray, dout: np.ndarray, K: int, stride: int) -> np.ndarray:
    """Gradient of :func:`conv2d` with respect to the kernel, summed over the batch."""
    B, H, W, C = x.shape
    _, Ho, Wo, O = dout.shape
    if out_size(H, stride) != Ho or out_size(W, stride) != Wo or dout.shape[0] != B:
        raise ShapeError(f"gradient shape {dout.shape} does not match input {x.shape}")
    p = K // 2
    ph = max(p, (Ho - 1) * stride + K - H - p)
    pw = max(p, (Wo - 1) * stride + K - W - p)
    g = np.zeros((K * K * C, O), dtype=np.result_type(x, dout))
    T = _tile_rows(Wo)
    buf = np.empty((T, Wo, K, K, C), dtype=x.dtype)
    for i in range(B):
        view = _patches(_pad(x[i], p, ph, pw), K, stride, Ho, Wo)
        for r in range(0, Ho, T):
            n = min(T, Ho - r)
            bt = buf[:n]
            np.copyto(bt, view[r:r + n])
            g += bt.reshape(n * Wo, -1).T @ dout[i, r:r + n].reshape(n * Wo, O)
    return g.reshape(K, K, C, O)


def conv_transpose2d(y: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
                     stride: int = 2) -> np.ndarray:
    """Transpose convolution: the exact adjoint of a same-padded strided conv.

    ``w`` has shape ``(K, K, C_out, C_in)``, i.e. it is the kernel of the
    strided conv that maps the output space back to the input space. Spatial
    dimensions are multiplied by ``stride``.
    """
    if y.ndim != 4 or w.ndim != 4 or y.shape[3] != w.shape[3]:
        raise ShapeError(f"cannot apply kernel {w.shape} to input {y.shape}")
    B, H, W, _ = y.shape
    out = conv2d_grad_input(y, w, stride, (H * stride, W * stride))
    if b is not None:
        out += b
    return out
