"""
VadKit CNN-BiLSTM Model

conv1 -> relu -> pool -> conv2 -> relu -> pool -> flatten -> dense(relu)
-> [dropout] -> (Bi)LSTM over the image sequence -> [dropout] -> per-timestep
two-way softmax. Class index 1 is speech, index 0 non-speech.

Model files (CBLV):
    magic 'CBLV', u32 version
    u32 conv1_kh, conv1_kw, conv1_width, conv2_kh, conv2_kw, conv2_width,
        dense_width, lstm_width, input_height, input_width
    f32 dropout_rate, u8 bidirectional
    tensors in TENSOR_ORDER: u32 ndims, u32 dims..., little-endian float32 data
    u8 has_norm [, u32 bands, f32 mean[bands], f32 std[bands]]
"""

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from vadkit.exceptions import ArgumentError, ConfigError, ModelCorruptionError, ModelFormatError, ShapeError
from vadkit.features import NormStats
from vadkit.logger import setup_logger
from vadkit.nn_core import (
    LstmParams,
    conv2d_valid,
    conv2d_valid_backward,
    dense,
    dense_backward,
    dropout_mask,
    glorot_uniform,
    init_lstm,
    lstm_backward,
    lstm_forward,
    maxpool2x2,
    maxpool2x2_backward,
    relu,
    relu_backward,
    softmax,
    softmax_cross_entropy,
)

logger = setup_logger(__name__)

MODEL_MAGIC = b'CBLV'
MODEL_VERSION = 1
SUPPORTED_VERSIONS = (1,)
SPEECH_CLASS = 1
NUM_CLASSES = 2


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the compact model's"""
    conv1_kernel: Tuple[int, int] = (5, 5)
    conv1_width: int = 32
    conv2_kernel: Tuple[int, int] = (3, 3)
    conv2_width: int = 32
    dense_width: int = 64
    lstm_width: int = 32
    bidirectional: bool = True
    dropout_rate: float = 0.1
    input_height: int = 32
    input_width: int = 32

    def __post_init__(self):
        object.__setattr__(self, 'conv1_kernel', _kernel(self.conv1_kernel, 'conv1_kernel'))
        object.__setattr__(self, 'conv2_kernel', _kernel(self.conv2_kernel, 'conv2_kernel'))
        for name in ('conv1_width', 'conv2_width', 'dense_width', 'lstm_width',
                     'input_height', 'input_width'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def directions(self):
        return 2 if self.bidirectional else 1

    def feature_shapes(self):
        """Spatial sizes after each conv/pool stage; raises ConfigError if a map vanishes"""
        (k1h, k1w), (k2h, k2w) = self.conv1_kernel, self.conv2_kernel
        c1 = (self.input_height - k1h + 1, self.input_width - k1w + 1)
        p1 = (c1[0] // 2, c1[1] // 2)
        c2 = (p1[0] - k2h + 1, p1[1] - k2w + 1)
        p2 = (c2[0] // 2, c2[1] // 2)
        if min(c1) < 2 or min(c2) < 2:
            raise ConfigError(
                f"Feature map vanishes: {self.input_height}x{self.input_width} input with kernels "
                f"{k1h}x{k1w} and {k2h}x{k2w} gives conv1 {c1[0]}x{c1[1]}, conv2 {c2[0]}x{c2[1]}")
        return {'conv1': c1, 'pool1': p1, 'conv2': c2, 'pool2': p2,
                'flat': p2[0] * p2[1] * self.conv2_width}


def _kernel(value, name):
    if isinstance(value, (int, np.integer)):
        value = (int(value), int(value))
    try:
        kh, kw = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an int or a pair of ints, got {value!r}")
    if kh < 1 or kw < 1:
        raise ConfigError(f"{name} must be positive, got {value!r}")
    return kh, kw


BEST_CONFIG = ModelConfig(conv1_kernel=(5, 5), conv1_width=32, conv2_kernel=(3, 3),
                          conv2_width=128, dense_width=64, lstm_width=128)
SMALL_CONFIG = ModelConfig(conv1_kernel=(5, 5), conv1_width=32, conv2_kernel=(3, 3),
                           conv2_width=32, dense_width=64, lstm_width=32)


def tensor_shapes(config) -> Dict[str, Tuple[int, ...]]:
    """Parameter tensor shapes in serialization order"""
    shapes = config.feature_shapes()
    (k1h, k1w), (k2h, k2w) = config.conv1_kernel, config.conv2_kernel
    c1, c2, d, m = config.conv1_width, config.conv2_width, config.dense_width, config.lstm_width
    out = {
        'conv1.W': (k1h, k1w, 1, c1),
        'conv1.b': (c1,),
        'conv2.W': (k2h, k2w, c1, c2),
        'conv2.b': (c2,),
        'dense.W': (shapes['flat'], d),
        'dense.b': (d,),
        'lstm_fwd.W': (d, 4 * m),
        'lstm_fwd.U': (m, 4 * m),
        'lstm_fwd.b': (4 * m,),
    }
    if config.bidirectional:
        out['lstm_bwd.W'] = (d, 4 * m)
        out['lstm_bwd.U'] = (m, 4 * m)
        out['lstm_bwd.b'] = (4 * m,)
    out['out.W'] = (config.directions * m, NUM_CLASSES)
    out['out.b'] = (NUM_CLASSES,)
    return out


def layer_breakdown(config):
    """[(layer, parameter count)] in network order"""
    shapes = tensor_shapes(config)
    layers = {}
    for name, shape in shapes.items():
        layer = name.split('.')[0]
        layers[layer] = layers.get(layer, 0) + int(np.prod(shape))
    return list(layers.items())


def count_params(config):
    """Closed-form trainable scalar count"""
    shapes = config.feature_shapes()
    (k1h, k1w), (k2h, k2w) = config.conv1_kernel, config.conv2_kernel
    c1, c2, d, m = config.conv1_width, config.conv2_width, config.dense_width, config.lstm_width
    conv1 = k1h * k1w * 1 * c1 + c1
    conv2 = k2h * k2w * c1 * c2 + c2
    dense_layer = shapes['flat'] * d + d
    lstm = config.directions * 4 * (d * m + m * m + m)
    output = config.directions * m * NUM_CLASSES + NUM_CLASSES
    return conv1 + conv2 + dense_layer + lstm + output


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: Dict[str, np.ndarray]
    norm: Optional[NormStats] = None

    @property
    def num_scalars(self):
        return sum(t.size for t in self.tensors.values())

    @property
    def dtype(self):
        return self.tensors['out.W'].dtype

    def astype(self, dtype):
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()},
                           self.norm)

    def with_tensors(self, tensors):
        return ModelParams(self.config, dict(tensors), self.norm)

    def lstm(self, direction):
        t = self.tensors
        return LstmParams(t[f'lstm_{direction}.W'], t[f'lstm_{direction}.U'], t[f'lstm_{direction}.b'])


@dataclass
class Posterior:
    p_speech: float
    image_index: int


def build_model(config, seed=0, dtype=np.float32):
    """Seeded initialization: Glorot conv/dense, orthogonal recurrent, forget bias 1"""
    rng = np.random.default_rng(seed)
    shapes = tensor_shapes(config)
    tensors = {}
    for name, shape in shapes.items():
        if name.endswith('.b'):
            continue
        if name.startswith('lstm_') and name.endswith('.W'):
            prefix = name[:-2]
            lstm = init_lstm(shape[0], config.lstm_width, rng, dtype)
            tensors[f'{prefix}.W'], tensors[f'{prefix}.U'], tensors[f'{prefix}.b'] = lstm
        elif name.startswith('lstm_'):
            continue
        elif name.startswith('conv'):
            kh, kw, cin, cout = shape
            tensors[name] = glorot_uniform(shape, kh * kw * cin, kh * kw * cout, rng, dtype)
        else:
            tensors[name] = glorot_uniform(shape, shape[0], shape[1], rng, dtype)
    for name, shape in shapes.items():
        if name.endswith('.b') and name not in tensors:
            tensors[name] = np.zeros(shape, dtype=dtype)
    return ModelParams(config, {name: tensors[name] for name in shapes})


def _check_images(params, images):
    cfg = params.config
    if images.ndim != 4:
        raise ShapeError(f"Expected [batch, time, height, width] images, got shape {images.shape}")
    if images.shape[1] == 0:
        raise ArgumentError("Image sequence is empty")
    if images.shape[2:] != (cfg.input_height, cfg.input_width):
        raise ShapeError(
            f"Images are {images.shape[2]}x{images.shape[3]}, model expects "
            f"{cfg.input_height}x{cfg.input_width}")


def forward_logits(params, images, training=False, rng=None):
    """Batched forward pass over [B, T, H, W] -> (logits [B, T, 2], cache)"""
    _check_images(params, images)
    cfg, t = params.config, params.tensors
    dtype = params.dtype
    rate = cfg.dropout_rate if training else 0.0
    if rate > 0 and rng is None:
        raise ArgumentError("Training with dropout needs an rng")

    batch, steps = images.shape[:2]
    x = np.asarray(images, dtype=dtype)
    if params.norm is not None:
        x = (x - params.norm.mean.astype(dtype)) / params.norm.std.astype(dtype)
    x = x.reshape(batch * steps, cfg.input_height, cfg.input_width, 1)

    a1 = relu(conv2d_valid(x, t['conv1.W'], t['conv1.b']))
    p1, am1 = maxpool2x2(a1)
    a2 = relu(conv2d_valid(p1, t['conv2.W'], t['conv2.b']))
    p2, am2 = maxpool2x2(a2)
    flat = p2.reshape(batch * steps, -1)
    d = dense(flat, t['dense.W'], t['dense.b'], 'relu')
    mask_dense = dropout_mask(d.shape, rate, rng, dtype) if rate > 0 else None
    e = d * mask_dense if mask_dense is not None else d
    seq = e.reshape(batch, steps, -1)

    h_fwd, cache_fwd = lstm_forward(seq, params.lstm('fwd'))
    if cfg.bidirectional:
        h_bwd, cache_bwd = lstm_forward(seq, params.lstm('bwd'), reverse=True)
        h = np.concatenate([h_fwd, h_bwd], axis=-1)
    else:
        cache_bwd = None
        h = h_fwd
    mask_lstm = dropout_mask(h.shape, rate, rng, dtype) if rate > 0 else None
    hd = h * mask_lstm if mask_lstm is not None else h
    logits = hd @ t['out.W'] + t['out.b']

    cache = (x, a1, p1, am1, a2, p2, am2, flat, d, mask_dense, cache_fwd, cache_bwd, mask_lstm, hd)
    return logits, cache


def backward(params, cache, dlogits):
    """Gradients of every tensor given d(loss)/d(logits)"""
    cfg, t = params.config, params.tensors
    x, a1, p1, am1, a2, p2, am2, flat, d, mask_dense, cache_fwd, cache_bwd, mask_lstm, hd = cache
    batch, steps = dlogits.shape[:2]
    m = cfg.lstm_width
    grads = {}

    grads['out.W'] = hd.reshape(-1, hd.shape[-1]).T @ dlogits.reshape(-1, NUM_CLASSES)
    grads['out.b'] = dlogits.reshape(-1, NUM_CLASSES).sum(axis=0)
    dh = dlogits @ t['out.W'].T
    if mask_lstm is not None:
        dh = dh * mask_lstm

    dseq, g_fwd = lstm_backward(dh[..., :m], cache_fwd)
    grads['lstm_fwd.W'], grads['lstm_fwd.U'], grads['lstm_fwd.b'] = g_fwd
    if cfg.bidirectional:
        dseq_bwd, g_bwd = lstm_backward(dh[..., m:], cache_bwd)
        dseq = dseq + dseq_bwd
        grads['lstm_bwd.W'], grads['lstm_bwd.U'], grads['lstm_bwd.b'] = g_bwd

    de = dseq.reshape(batch * steps, -1)
    if mask_dense is not None:
        de = de * mask_dense
    dflat, grads['dense.W'], grads['dense.b'] = dense_backward(de, flat, t['dense.W'], d, 'relu')

    da2 = maxpool2x2_backward(dflat.reshape(p2.shape), am2, a2.shape)
    dp1, grads['conv2.W'], grads['conv2.b'] = conv2d_valid_backward(
        relu_backward(da2, a2), p1, t['conv2.W'])
    da1 = maxpool2x2_backward(dp1, am1, a1.shape)
    _, grads['conv1.W'], grads['conv1.b'] = conv2d_valid_backward(
        relu_backward(da1, a1), x, t['conv1.W'])

    return {name: grads[name].astype(t[name].dtype, copy=False) for name in t}


def loss_and_grads(params, images, targets, rng=None, training=True):
    """Mean per-timestep cross-entropy and its gradients -> (loss, grads, posteriors)"""
    logits, cache = forward_logits(params, images, training=training, rng=rng)
    loss, dlogits, probs = softmax_cross_entropy(logits, targets)
    return loss, backward(params, cache, dlogits), probs


def predict_proba(params, images):
    """Inference posteriors [B, T, 2] for [B, T, H, W] images"""
    logits, _ = forward_logits(params, images, training=False)
    return softmax(logits)


def forward(params, seq, training=False, rng=None) -> List[Posterior]:
    """One speech posterior per image of an ImageSequence"""
    if len(seq) == 0:
        raise ArgumentError("Cannot run the model on an empty image sequence")
    logits, _ = forward_logits(params, np.asarray(seq.pixels)[None], training=training, rng=rng)
    probs = softmax(logits)[0]
    return [Posterior(float(p[SPEECH_CLASS]), j) for j, p in enumerate(probs)]


# Serialization

_CONFIG_STRUCT = struct.Struct('<10IfB')


def save_model(params, path):
    cfg = params.config
    with open(path, 'wb') as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack('<I', MODEL_VERSION))
        f.write(_CONFIG_STRUCT.pack(
            cfg.conv1_kernel[0], cfg.conv1_kernel[1], cfg.conv1_width,
            cfg.conv2_kernel[0], cfg.conv2_kernel[1], cfg.conv2_width,
            cfg.dense_width, cfg.lstm_width, cfg.input_height, cfg.input_width,
            cfg.dropout_rate, int(cfg.bidirectional)))
        for name in tensor_shapes(cfg):
            tensor = np.ascontiguousarray(params.tensors[name], dtype='<f4')
            f.write(struct.pack(f'<I{tensor.ndim}I', tensor.ndim, *tensor.shape))
            f.write(tensor.tobytes())
        if params.norm is None:
            f.write(struct.pack('<B', 0))
        else:
            mean = np.ascontiguousarray(params.norm.mean, dtype='<f4')
            std = np.ascontiguousarray(params.norm.std, dtype='<f4')
            f.write(struct.pack('<BI', 1, mean.size))
            f.write(mean.tobytes())
            f.write(std.tobytes())
    logger.debug(f"Saved model ({params.num_scalars} parameters) to {path}")


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.raw):
            raise ModelCorruptionError(
                f"{self.path}: truncated at byte {self.offset} (needed {size} more bytes)")
        chunk = self.raw[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def floats(self, count):
        return np.frombuffer(self.take(4 * count), dtype='<f4').astype(np.float32)


def load_model(path):
    raw = Path(path).read_bytes()
    reader = _Reader(raw, path)
    if len(raw) < 8 or raw[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a CBLV model file")
    reader.take(4)
    version, = reader.unpack('<I')
    if version not in SUPPORTED_VERSIONS:
        raise ModelFormatError(
            f"{path}: unsupported model version {version}; supported versions: "
            f"{', '.join(str(v) for v in SUPPORTED_VERSIONS)}")

    (k1h, k1w, c1, k2h, k2w, c2, d, m, ih, iw, rate, bidi) = reader.unpack(_CONFIG_STRUCT.format)
    try:
        config = ModelConfig(conv1_kernel=(k1h, k1w), conv1_width=c1, conv2_kernel=(k2h, k2w),
                             conv2_width=c2, dense_width=d, lstm_width=m, bidirectional=bool(bidi),
                             dropout_rate=float(str(np.float32(rate))), input_height=ih,
                             input_width=iw)
        shapes = tensor_shapes(config)
    except ConfigError as e:
        raise ModelCorruptionError(f"{path}: invalid stored configuration: {e}")

    tensors = {}
    for name, shape in shapes.items():
        ndims, = reader.unpack('<I')
        dims = reader.unpack(f'<{ndims}I') if ndims else ()
        if tuple(dims) != shape:
            raise ModelCorruptionError(
                f"{path}: tensor {name} has shape {tuple(dims)}, configuration implies {shape}")
        tensors[name] = reader.floats(int(np.prod(shape))).reshape(shape)

    has_norm, = reader.unpack('<B')
    norm = None
    if has_norm:
        bands, = reader.unpack('<I')
        norm = NormStats(mean=reader.floats(bands), std=reader.floats(bands))
    if reader.offset != len(raw):
        raise ModelCorruptionError(f"{path}: {len(raw) - reader.offset} unexpected trailing bytes")
    return ModelParams(config, tensors, norm)


def with_dropout(params, rate):
    """Copy of params whose config records a different dropout rate"""
    return ModelParams(replace(params.config, dropout_rate=rate), params.tensors, params.norm)
