"""
VadKit Neural Network Core

Differentiable layer primitives on numpy arrays: valid 2-D convolution, 2x2 max
pooling, dense, LSTM/BiLSTM, softmax with cross-entropy, inverted dropout and
the Adam optimizer. Every forward function accepts an optional leading batch
axis; each backward function takes what its forward produced.

LSTM gate order is (i, f, g, o) along the last axis of W, U and b.
"""

from dataclasses import dataclass, field
from typing import Dict, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from vadkit.exceptions import ArgumentError, ShapeError, TrainingError

PROB_CLAMP = 1e-7


# Convolution

def conv2d_valid(x, kernels, bias):
    """Stride-1 unpadded convolution: [N,]H,W,Cin * kh,kw,Cin,Cout -> [N,]H-kh+1,W-kw+1,Cout"""
    single = x.ndim == 3
    xb = x[None] if single else x
    kh, kw, cin, cout = kernels.shape
    if xb.ndim != 4 or xb.shape[3] != cin:
        raise ShapeError(f"Input shape {x.shape} does not match kernel shape {kernels.shape}")
    if kh > xb.shape[1] or kw > xb.shape[2]:
        raise ShapeError(f"Kernel {kh}x{kw} is larger than the {xb.shape[1]}x{xb.shape[2]} input")
    if bias.shape != (cout,):
        raise ShapeError(f"Bias shape {bias.shape} does not match {cout} output channels")

    windows = sliding_window_view(xb, (kh, kw), axis=(1, 2))  # N,H',W',Cin,kh,kw
    out = np.tensordot(windows, kernels, axes=([3, 4, 5], [2, 0, 1])) + bias
    return out[0] if single else out


def conv2d_valid_backward(dout, x, kernels):
    """Gradients of conv2d_valid -> (dx, dkernels, dbias)"""
    single = x.ndim == 3
    xb = x[None] if single else x
    db = dout[None] if single else dout
    kh, kw, _, _ = kernels.shape

    windows = sliding_window_view(xb, (kh, kw), axis=(1, 2))
    dkernels = np.tensordot(windows, db, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
    dbias = db.sum(axis=(0, 1, 2))

    padded = np.pad(db, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
    dwindows = sliding_window_view(padded, (kh, kw), axis=(1, 2))  # N,H,W,Cout,kh,kw
    flipped = kernels[::-1, ::-1]
    dx = np.tensordot(dwindows, flipped, axes=([3, 4, 5], [3, 0, 1]))
    return (dx[0] if single else dx), dkernels, dbias


# Pooling

def maxpool2x2(x):
    """Non-overlapping 2x2 max pooling; odd trailing row/column dropped -> (out, argmax)"""
    single = x.ndim == 3
    xb = x[None] if single else x
    n, h, w, c = xb.shape
    if h < 2 or w < 2:
        raise ShapeError(f"Max pooling needs at least 2x2 input, got {h}x{w}")

    h2, w2 = h // 2, w // 2
    blocks = xb[:, :2 * h2, :2 * w2].reshape(n, h2, 2, w2, 2, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool2x2_backward(dout, argmax, input_shape):
    """Route each pooled gradient to its argmax position"""
    single = len(input_shape) == 3
    db = dout[None] if single else dout
    am = argmax[None] if single else argmax
    n, h2, w2, c = db.shape

    routed = (np.arange(4) == am[..., None]) * db[..., None]  # n,h2,w2,c,4
    routed = routed.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    routed = routed.reshape(n, 2 * h2, 2 * w2, c)

    full_shape = (n,) + tuple(input_shape[-3:])
    dx = np.zeros(full_shape, dtype=db.dtype)
    dx[:, :2 * h2, :2 * w2] = routed
    return dx[0] if single else dx


# Dense and activations

def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, out):
    return dout * (out > 0)


def dense(x, weights, bias, activation='none'):
    """act(x @ W + b) with act in {relu, none}"""
    if x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(
            f"Dense shapes disagree: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    out = x @ weights + bias
    if activation == 'relu':
        return relu(out)
    if activation != 'none':
        raise ArgumentError(f"Unknown activation '{activation}'")
    return out


def dense_backward(dout, x, weights, out, activation='none'):
    """Gradients of dense -> (dx, dweights, dbias)"""
    if activation == 'relu':
        dout = relu_backward(dout, out)
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dout @ weights.T, x2.T @ d2, d2.sum(axis=0)


# LSTM

class LstmParams(NamedTuple):
    W: np.ndarray  # n x 4m
    U: np.ndarray  # m x 4m
    b: np.ndarray  # 4m


def _gates(z, m):
    i = expit(z[..., :m])
    f = expit(z[..., m:2 * m])
    g = np.tanh(z[..., 2 * m:3 * m])
    o = expit(z[..., 3 * m:])
    return i, f, g, o


def _check_lstm(x, h_prev, params):
    n, four_m = params.W.shape
    m = four_m // 4
    if four_m != 4 * m or params.U.shape != (m, four_m) or params.b.shape != (four_m,):
        raise ShapeError(
            f"LSTM parameter shapes W{params.W.shape}, U{params.U.shape}, b{params.b.shape} disagree")
    if x.shape[-1] != n or h_prev.shape[-1] != m:
        raise ShapeError(f"LSTM input {x.shape} / state {h_prev.shape} do not match W{params.W.shape}")
    return m


def lstm_cell_step(x, h_prev, c_prev, params):
    """One LSTM step -> (h, c)"""
    m = _check_lstm(x, h_prev, params)
    i, f, g, o = _gates(x @ params.W + h_prev @ params.U + params.b, m)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def lstm_forward(xs, params, reverse=False):
    """Run an LSTM over [N,]T,n from zero state -> (hs [N,]T,m, cache)"""
    single = xs.ndim == 2
    xb = xs[None] if single else xs
    if xb.shape[1] == 0:
        raise ArgumentError("LSTM input sequence is empty")
    if reverse:
        xb = xb[:, ::-1]
    batch, steps, _ = xb.shape
    m = _check_lstm(xb[:, 0], np.zeros((batch, params.U.shape[0]), dtype=xb.dtype), params)

    h = np.zeros((batch, m), dtype=xb.dtype)
    c = np.zeros((batch, m), dtype=xb.dtype)
    hs = np.empty((batch, steps, m), dtype=xb.dtype)
    steps_cache = []
    for t in range(steps):
        i, f, g, o = _gates(xb[:, t] @ params.W + h @ params.U + params.b, m)
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        hs[:, t] = h
        steps_cache.append((i, f, g, o, c_prev, h_prev, tanh_c))

    cache = (xb, params, reverse, single, steps_cache)
    if reverse:
        hs = hs[:, ::-1]
    return (hs[0] if single else hs), cache


def lstm_backward(dhs, cache):
    """Backpropagation through time -> (dxs, LstmParams of gradients)"""
    xb, params, reverse, single, steps_cache = cache
    db_hs = dhs[None] if single else dhs
    if reverse:
        db_hs = db_hs[:, ::-1]
    batch, steps, _ = xb.shape
    m = params.U.shape[0]

    dW = np.zeros_like(params.W)
    dU = np.zeros_like(params.U)
    dbias = np.zeros_like(params.b)
    dxs = np.empty_like(xb)
    dh_next = np.zeros((batch, m), dtype=xb.dtype)
    dc_next = np.zeros((batch, m), dtype=xb.dtype)

    for t in reversed(range(steps)):
        i, f, g, o, c_prev, h_prev, tanh_c = steps_cache[t]
        dh = db_hs[:, t] + dh_next
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_next
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=-1)
        dW += xb[:, t].T @ dz
        dU += h_prev.T @ dz
        dbias += dz.sum(axis=0)
        dxs[:, t] = dz @ params.W.T
        dh_next = dz @ params.U.T
        dc_next = dc * f

    if reverse:
        dxs = dxs[:, ::-1]
    return (dxs[0] if single else dxs), LstmParams(dW, dU, dbias)


def bilstm_forward(seq, fwd_params, bwd_params):
    """Per-timestep concat(h_fwd[t], h_bwd[t]) for a list of input vectors"""
    if len(seq) == 0:
        raise ArgumentError("BiLSTM input sequence is empty")
    xs = np.stack([np.asarray(x) for x in seq])
    h_fwd, _ = lstm_forward(xs, fwd_params)
    h_bwd, _ = lstm_forward(xs, bwd_params, reverse=True)
    return list(np.concatenate([h_fwd, h_bwd], axis=-1))


# Output

def softmax(logits):
    """Max-shifted softmax along the last axis"""
    logits = np.asarray(logits)
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def bce_loss(posteriors, target):
    """-ln(posterior[target]) with clamping -> (loss, gradient w.r.t. the logits)"""
    posteriors = np.asarray(posteriors)
    p = np.clip(posteriors[..., target], PROB_CLAMP, 1.0 - PROB_CLAMP)
    grad = posteriors.copy()
    grad[..., target] -= 1.0
    return float(-np.log(p)), grad


def softmax_cross_entropy(logits, targets):
    """Mean clamped cross-entropy over all timesteps -> (loss, dlogits, posteriors)"""
    probs = softmax(logits)
    targets = np.asarray(targets, dtype=np.int64)
    picked = np.take_along_axis(probs, targets[..., None], axis=-1)[..., 0]
    loss = float(-np.log(np.clip(picked, PROB_CLAMP, 1.0 - PROB_CLAMP)).mean())
    dlogits = probs - np.eye(probs.shape[-1], dtype=probs.dtype)[targets]
    return loss, dlogits / targets.size, probs


# Dropout

def dropout_mask(shape, rate, rng, dtype=np.float32):
    """Inverted-dropout multiplier: 0 with probability rate, else 1/(1-rate)"""
    if not 0 <= rate < 1:
        raise ArgumentError(f"Dropout rate must be in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def dropout(x, rate, rng, training):
    if not 0 <= rate < 1:
        raise ArgumentError(f"Dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    return x * dropout_mask(x.shape, rate, rng, dtype=x.dtype)


# Initialization

def glorot_uniform(shape, fan_in, fan_out, rng, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(shape, rng, dtype=np.float32):
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols].astype(dtype)


def init_lstm(n, m, rng, dtype=np.float32):
    """Glorot input weights, orthogonal recurrent weights, forget bias 1.0"""
    b = np.zeros(4 * m, dtype=dtype)
    b[m:2 * m] = 1.0
    return LstmParams(glorot_uniform((n, 4 * m), n, 4 * m, rng, dtype),
                      orthogonal((m, 4 * m), rng, dtype), b)


# Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state):
    """Bias-corrected Adam update -> (new params dict, state)"""
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"Gradient for unknown parameter '{name}'")
        if g.shape != params[name].shape:
            raise ShapeError(f"Gradient shape {g.shape} does not match parameter '{name}' {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"Non-finite gradient for parameter '{name}'")

    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count

    updated = dict(params)
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        updated[name] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)
    return updated, state
