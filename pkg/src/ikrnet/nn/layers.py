"""Composite and fused operations used by the network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidArgumentError, ShapeError
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    flip,
    getitem,
    make_op,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    stack,
    tanh,
)

BCE_EPS = 1e-7
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def conv_out_len(length: int, k: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - k) // stride + 1


# -- convolution ----------------------------------------------------------
def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation over the last axis of ``x[B, C_in, L]``."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects 3-D input and weight, got {x.shape}, {weight.shape}")
    B, cin, L = x.shape
    cout, cin_g, k = weight.shape
    if k < 1 or stride < 1 or groups < 1 or padding < 0:
        raise InvalidArgumentError("conv1d needs k >= 1, stride >= 1, groups >= 1, padding >= 0")
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise ShapeError(f"conv1d channel mismatch: input {cin}, weight {weight.shape}, groups {groups}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
    lout = conv_out_len(L, k, stride, padding)
    if lout < 1:
        raise InvalidArgumentError(
            f"conv1d output length {lout} < 1 (L={L}, k={k}, stride={stride}, padding={padding})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    span = stride * (lout - 1) + 1
    w = weight.data

    if groups == 1:
        out, back = _conv_dense(xp, w, stride, lout, k)
    elif groups == cin and cout == cin:
        out, back = _conv_depthwise(xp, w, stride, lout, k, span)
    else:
        out, back = _conv_grouped(xp, w, stride, lout, k, groups)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        gxp, gw = back(g, x.requires_grad, weight.requires_grad)
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding:padding + L] if padding else gxp
        gb = g.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


def _conv_dense(xp, w, stride, lout, k):
    B, cin, Lp = xp.shape
    cout = w.shape[0]
    wmat = w.reshape(cout, cin * k)
    if k == 1 and stride == 1:
        out = np.matmul(wmat, xp)

        def back(g, need_x, need_w):
            gx = np.matmul(wmat.T, g) if need_x else None
            gw = np.tensordot(g, xp, axes=([0, 2], [0, 2])).reshape(w.shape) if need_w else None
            return gx, gw

        return out, back

    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :lout]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, lout, cin * k)
    out = np.ascontiguousarray((cols @ wmat.T).transpose(0, 2, 1))

    def back(g, need_x, need_w):
        gt = g.transpose(0, 2, 1)
        gw = None
        if need_w:
            gw = (gt.reshape(-1, cout).T @ cols.reshape(-1, cin * k)).reshape(w.shape)
        gx = None
        if need_x:
            gcols = (gt @ wmat).reshape(B, lout, cin, k)
            gx = np.zeros_like(xp)
            for j in range(k):
                gx[:, :, j:j + stride * (lout - 1) + 1:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        return gx, gw

    return out, back


def _conv_depthwise(xp, w, stride, lout, k, span):
    taps = [xp[:, :, j:j + span:stride] for j in range(k)]
    out = np.zeros((xp.shape[0], xp.shape[1], lout), dtype=np.result_type(xp, w))
    for j in range(k):
        out += taps[j] * w[None, :, 0, j, None]

    def back(g, need_x, need_w):
        gw = None
        if need_w:
            gw = np.empty_like(w)
            for j in range(k):
                gw[:, 0, j] = np.einsum("bcl,bcl->c", g, taps[j])
        gx = None
        if need_x:
            gx = np.zeros_like(xp)
            for j in range(k):
                gx[:, :, j:j + span:stride] += g * w[None, :, 0, j, None]
        return gx, gw

    return out, back


def _conv_grouped(xp, w, stride, lout, k, groups):
    cin_g = xp.shape[1] // groups
    cout_g = w.shape[0] // groups
    parts = [_conv_dense(xp[:, i * cin_g:(i + 1) * cin_g], w[i * cout_g:(i + 1) * cout_g],
                         stride, lout, k) for i in range(groups)]
    out = np.concatenate([p[0] for p in parts], axis=1)

    def back(g, need_x, need_w):
        gx = np.zeros_like(xp) if need_x else None
        gws = []
        for i, (_, b) in enumerate(parts):
            gxi, gwi = b(g[:, i * cout_g:(i + 1) * cout_g], need_x, need_w)
            if need_x:
                gx[:, i * cin_g:(i + 1) * cin_g] = gxi
            gws.append(gwi)
        return gx, (np.concatenate(gws, axis=0) if need_w else None)

    return out, back


# -- dense ----------------------------------------------------------------
def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[..., I] @ weight[O, I].T + bias[O]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear shapes {x.shape} and weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        g2 = g.reshape(-1, weight.shape[0])
        gw = g2.T @ x.data.reshape(-1, weight.shape[1]) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


# -- normalization and pooling -------------------------------------------
def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = BN_MOMENTUM,
                eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization of ``x[B, C, L]``.

    In training mode the running buffers are updated in place (unbiased
    variance, as is conventional for the running estimate).
    """
    if x.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm1d shapes {x.shape}, {gamma.shape}, {beta.shape}")
    n = x.shape[0] * x.shape[2]
    gam = gamma.data[None, :, None]
    if training:
        if n < 2:
            raise InvalidArgumentError("batchnorm1d in training mode needs B*L >= 2")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mu, var = running_mean, running_var
    invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu[None, :, None].astype(x.dtype)) * invstd[None, :, None]
    out = gam * xhat + beta.data[None, :, None]

    def backward(g):
        gxhat = g * gam
        gx = None
        if x.requires_grad:
            if training:
                s1 = gxhat.sum(axis=(0, 2), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
                gx = invstd[None, :, None] / n * (n * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * invstd[None, :, None]
        gg = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2)) if beta.requires_grad else None
        return gx, gg, gb

    return make_op(out, (x, gamma, beta), backward)


def adaptive_pool_matrix(length: int, out_len: int, dtype=np.float64) -> np.ndarray:
    """``[length, out_len]`` averaging matrix; bin i covers
    ``[floor(i*L/out), ceil((i+1)*L/out))``."""
    P = np.zeros((length, out_len), dtype=dtype)
    for i in range(out_len):
        lo = (i * length) // out_len
        hi = -((-(i + 1) * length) // out_len)
        P[lo:hi, i] = 1.0 / (hi - lo)
    return P


def adaptive_avg_pool1d(x: Tensor, out_len: int) -> Tensor:
    if out_len < 1:
        raise InvalidArgumentError("out_len must be >= 1")
    if x.ndim != 3:
        raise ShapeError(f"adaptive_avg_pool1d expects [B, C, L], got {x.shape}")
    P = adaptive_pool_matrix(x.shape[2], out_len, x.dtype)
    return make_op(x.data @ P, (x,), lambda g: (g @ P.T,))


# -- gating blocks --------------------------------------------------------
def squeeze_excite(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Channel recalibration: pool over L, FC, ReLU, FC, sigmoid, rescale."""
    if x.ndim != 3:
        raise ShapeError(f"squeeze_excite expects [B, C, L], got {x.shape}")
    B, C, _ = x.shape
    if w1.shape[1] != C or w2.shape[0] != C:
        raise ShapeError(f"squeeze_excite weights {w1.shape}, {w2.shape} for {C} channels")
    s = mean(x, axis=2)
    z = relu(linear(s, w1, b1))
    gate = sigmoid(linear(z, w2, b2))
    return mul(x, reshape(gate, (B, C, 1)))


@dataclass
class LSTMWeights:
    w_ih: Tensor  # [4H, I], gate order i, f, g, o
    w_hh: Tensor  # [4H, H]
    bias: Tensor  # [4H]

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]


def _lstm_gates(pre: Tensor, c_prev: Tensor, H: int) -> tuple[Tensor, Tensor]:
    i = sigmoid(getitem(pre, (slice(None), slice(0, H))))
    f = sigmoid(getitem(pre, (slice(None), slice(H, 2 * H))))
    g = tanh(getitem(pre, (slice(None), slice(2 * H, 3 * H))))
    o = sigmoid(getitem(pre, (slice(None), slice(3 * H, 4 * H))))
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
              weights: LSTMWeights) -> tuple[Tensor, Tensor]:
    H = weights.hidden
    if x_t.ndim != 2 or h_prev.shape != (x_t.shape[0], H) or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_cell shapes x={x_t.shape}, h={h_prev.shape}, c={c_prev.shape}")
    if weights.w_ih.shape != (4 * H, x_t.shape[1]):
        raise ShapeError(f"w_ih shape {weights.w_ih.shape} for input {x_t.shape}")
    pre = linear(x_t, weights.w_ih, weights.bias) + linear(h_prev, weights.w_hh)
    return _lstm_gates(pre, c_prev, H)


def lstm_direction(seq: Tensor, weights: LSTMWeights, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over ``seq[B, T, I]`` and return ``[B, T, H]``."""
    B, T, I = seq.shape
    H = weights.hidden
    if weights.w_ih.shape != (4 * H, I):
        raise ShapeError(f"w_ih shape {weights.w_ih.shape} for input size {I}")
    # input projection for all steps at once
    xw = linear(seq, weights.w_ih, weights.bias)
    h = Tensor(np.zeros((B, H), dtype=seq.dtype))
    c = Tensor(np.zeros((B, H), dtype=seq.dtype))
    outs: list[Tensor] = [None] * T  # type: ignore[list-item]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        pre = getitem(xw, (slice(None), t)) + linear(h, weights.w_hh)
        h, c = _lstm_gates(pre, c, H)
        outs[t] = h
    return stack(outs, axis=1)


def bilstm(seq: Tensor, layers: list[tuple[LSTMWeights, LSTMWeights]]) -> Tensor:
    """Stacked bidirectional LSTM: ``[B, T, I] -> [B, T, 2H]``."""
    if seq.ndim != 3 or seq.shape[1] < 1:
        raise ShapeError(f"bilstm expects [B, T>=1, I], got {seq.shape}")
    if not layers:
        raise InvalidArgumentError("bilstm needs at least one layer")
    out = seq
    for fwd, bwd in layers:
        out = concat([lstm_direction(out, fwd), lstm_direction(out, bwd, reverse=True)], axis=2)
    return out


def reverse_time(seq: Tensor) -> Tensor:
    return flip(seq, axis=1)


# -- loss -----------------------------------------------------------------
def bce_loss(scores: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy; scores are clamped to [eps, 1 - eps]."""
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=scores.dtype)
    if y.shape != scores.shape:
        raise ShapeError(f"scores {scores.shape} vs labels {y.shape}")
    p = np.clip(scores.data, BCE_EPS, 1 - BCE_EPS)
    inside = (scores.data >= BCE_EPS) & (scores.data <= 1 - BCE_EPS)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log1p(-p))

    def backward(g):
        dp = (-y / p + (1 - y) / (1 - p)) / n
        return (g * dp * inside,)

    return make_op(np.asarray(loss, dtype=scores.dtype), (scores,), backward)


__all__ = [
    "LSTMWeights",
    "adaptive_avg_pool1d",
    "adaptive_pool_matrix",
    "as_tensor",
    "batchnorm1d",
    "bce_loss",
    "bilstm",
    "conv1d",
    "conv_out_len",
    "linear",
    "lstm_cell",
    "lstm_direction",
    "reverse_time",
    "squeeze_excite",
]
