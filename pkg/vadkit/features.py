"""
VadKit Feature Extraction

Turns audio into sequences of 32x32 log mel-filterbank spectrogram images:
25 ms periodic-Hann STFT frames every 10 ms, 32 HTK mel bands, natural log,
32 consecutive frames stacked per image.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
from scipy.signal import get_window

from vadkit.audio_io import FRAME_STEP_S, WORKING_RATE_HZ, resample
from vadkit.exceptions import ConfigError, ModelCorruptionError, ModelFormatError, ShapeError
from vadkit.logger import setup_logger

logger = setup_logger(__name__)

IMAGE_FRAMES = 32
NUM_BANDS = 32

FEATURE_MAGIC = b'VFEA'
FEATURE_VERSION = 1


@dataclass(frozen=True)
class FeatureSettings:
    """Front-end constants; the defaults are the values the models are trained with"""
    sample_rate_hz: int = WORKING_RATE_HZ
    window_s: float = 0.025
    step_s: float = FRAME_STEP_S
    fft_size: int = 512
    num_bands: int = NUM_BANDS
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-10
    hop_images: int = 1


def _triangles(edges_hz, freqs_hz):
    freqs = np.asarray(freqs_hz, dtype=np.float64)[None, :]
    lower, center, upper = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray
    band_edges_hz: np.ndarray
    fmin_hz: float
    fmax_hz: float
    sample_rate_hz: int
    fft_size: int

    @property
    def band_centers_hz(self):
        return self.band_edges_hz[1:-1]

    @property
    def num_bands(self):
        return self.weights.shape[0]

    def weights_at(self, freqs_hz):
        """Evaluate every band's triangle at arbitrary frequencies -> [bands x len(freqs)]"""
        return _triangles(self.band_edges_hz, freqs_hz)


@dataclass
class SpectrogramImage:
    pixels: np.ndarray
    start_time_s: float


@dataclass
class ImageSequence:
    """Consecutive spectrogram images; pixels are [image, time frame, mel band]"""
    pixels: np.ndarray
    hop_images: int = 1
    frame_step_s: float = FRAME_STEP_S
    start_time_s: float = 0.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.size == 0:
            self.pixels = self.pixels.reshape(0, IMAGE_FRAMES, NUM_BANDS)
        if self.pixels.ndim != 3:
            raise ShapeError(f"Image sequence must be 3-D, got shape {self.pixels.shape}")
        if self.hop_images < 1:
            raise ConfigError(f"hop_images must be positive, got {self.hop_images}")

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def image_span_s(self):
        """Time between consecutive image starts"""
        return self.pixels.shape[1] * self.frame_step_s * self.hop_images

    @property
    def images(self) -> List[SpectrogramImage]:
        return [SpectrogramImage(self.pixels[j], self.start_time_s + j * self.image_span_s)
                for j in range(len(self))]

    def slice(self, start, stop):
        return ImageSequence(self.pixels[start:stop], self.hop_images, self.frame_step_s,
                             self.start_time_s + start * self.image_span_s)


@dataclass(frozen=True)
class NormStats:
    """Per-band mean and standard deviation"""
    mean: np.ndarray
    std: np.ndarray


def frame_signal(buf, window_s=0.025, step_s=FRAME_STEP_S):
    """Slice audio into overlapping analysis frames without padding -> [frames x window]"""
    if not (step_s > 0 and window_s >= step_s):
        raise ConfigError(f"Need window_s >= step_s > 0, got window {window_s}, step {step_s}")

    rate = buf.sample_rate_hz
    window = int(round(window_s * rate))
    step = step_s * rate
    n = len(buf.samples)
    if n < window:
        return np.zeros((0, window), dtype=buf.samples.dtype)

    count = 1 + int(math.floor((n - window) / step + 1e-9))
    starts = np.round(np.arange(count) * step).astype(np.int64)
    starts = starts[starts + window <= n]
    return buf.samples[starts[:, None] + np.arange(window)[None, :]]


def stft_magnitude(frames, fft_size=512):
    """Periodic-Hann windowed magnitude spectra, bins 0..fft_size/2"""
    if fft_size < 1 or fft_size & (fft_size - 1):
        raise ConfigError(f"FFT size must be a power of two, got {fft_size}")
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    window_length = frames.shape[1]
    if fft_size < window_length:
        raise ConfigError(f"FFT size {fft_size} is shorter than the window ({window_length})")

    window = get_window('hann', window_length, fftbins=True)
    return np.abs(np.fft.rfft(frames * window, n=fft_size, axis=1))


def hz_to_mel(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_bands=NUM_BANDS, fft_size=512, sample_rate_hz=WORKING_RATE_HZ,
                   fmin_hz=0.0, fmax_hz=8000.0):
    """Peak-normalized triangular filters equally spaced on the HTK mel scale"""
    if not 0 <= fmin_hz < fmax_hz <= sample_rate_hz / 2:
        raise ConfigError(
            f"Need 0 <= fmin < fmax <= {sample_rate_hz / 2}, got fmin={fmin_hz}, fmax={fmax_hz}")
    if num_bands < 1:
        raise ConfigError(f"num_bands must be positive, got {num_bands}")

    edges_mel = np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), num_bands + 2)
    edges_hz = mel_to_hz(edges_mel)
    edges_hz[0], edges_hz[-1] = fmin_hz, fmax_hz
    bin_freqs = np.arange(fft_size // 2 + 1) * sample_rate_hz / fft_size

    return MelFilterbank(weights=_triangles(edges_hz, bin_freqs), band_edges_hz=edges_hz,
                         fmin_hz=fmin_hz, fmax_hz=fmax_hz, sample_rate_hz=sample_rate_hz,
                         fft_size=fft_size)


def log_mel(spectra, fb, floor=1e-10):
    """ln(max(filterbank energy, floor)) per frame and band"""
    spectra = np.atleast_2d(spectra)
    if spectra.shape[1] != fb.weights.shape[1]:
        raise ShapeError(
            f"Spectra have {spectra.shape[1]} bins but the filterbank expects {fb.weights.shape[1]}")
    return np.log(np.maximum(spectra @ fb.weights.T, floor))


def stack_images(mel, hop_images=1, frame_step_s=FRAME_STEP_S):
    """Cut [frames x bands] into 32-frame images starting every 32*hop frames"""
    mel = np.asarray(mel)
    if mel.ndim != 2:
        raise ShapeError(f"Mel matrix must be 2-D, got shape {mel.shape}")
    if hop_images < 1:
        raise ConfigError(f"hop_images must be positive, got {hop_images}")

    stride = IMAGE_FRAMES * hop_images
    rows = mel.shape[0]
    count = 0 if rows < IMAGE_FRAMES else (rows - IMAGE_FRAMES) // stride + 1
    starts = np.arange(count) * stride
    pixels = mel[starts[:, None] + np.arange(IMAGE_FRAMES)[None, :]] if count else \
        np.zeros((0, IMAGE_FRAMES, mel.shape[1]), dtype=mel.dtype)
    return ImageSequence(pixels=pixels, hop_images=hop_images, frame_step_s=frame_step_s)


def compute_norm_stats(sequences):
    """Per-band mean/std over every frame of every image of the given sequences"""
    stacks = [np.asarray(seq.pixels, dtype=np.float64).reshape(-1, seq.pixels.shape[-1])
              for seq in sequences if len(seq)]
    if not stacks:
        raise ShapeError("Cannot compute normalization statistics from no images")
    rows = np.concatenate(stacks, axis=0)
    return NormStats(mean=rows.mean(axis=0), std=rows.std(axis=0))


def normalize(seq, stats):
    """(pixel - mean[band]) / std[band]; zero std bands are left unscaled"""
    std = np.asarray(stats.std, dtype=np.float64)
    zero = std <= 0
    if np.any(zero):
        logger.warning(f"{int(zero.sum())} band(s) have zero std; using 1.0")
        std = np.where(zero, 1.0, std)
    pixels = (seq.pixels - np.asarray(stats.mean)) / std
    return ImageSequence(pixels.astype(seq.pixels.dtype, copy=False), seq.hop_images,
                         seq.frame_step_s, seq.start_time_s)


def extract_features(buf, settings=FeatureSettings(), filterbank=None):
    """Full front-end: resample, frame, STFT, log mel, stack into images (float32)"""
    if buf.sample_rate_hz != settings.sample_rate_hz:
        buf = resample(buf, settings.sample_rate_hz)
    fb = filterbank or mel_filterbank(settings.num_bands, settings.fft_size,
                                      settings.sample_rate_hz, settings.fmin_hz, settings.fmax_hz)

    frames = frame_signal(buf, settings.window_s, settings.step_s)
    if len(frames) == 0:
        mel = np.zeros((0, settings.num_bands))
    else:
        mel = log_mel(stft_magnitude(frames, settings.fft_size), fb, settings.log_floor)
    seq = stack_images(mel.astype(np.float32), settings.hop_images, settings.step_s)
    logger.debug(f"Extracted {len(seq)} images from {len(frames)} frames")
    return seq


def save_features(seq, path):
    """Write an ImageSequence in the VFEA binary format"""
    pixels = np.ascontiguousarray(seq.pixels, dtype='<f4')
    if pixels.shape[1:] != (IMAGE_FRAMES, NUM_BANDS):
        raise ShapeError(f"Feature images must be {IMAGE_FRAMES}x{NUM_BANDS}, got {pixels.shape[1:]}")
    with open(path, 'wb') as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack('<III', FEATURE_VERSION, len(seq), seq.hop_images))
        f.write(pixels.tobytes())


def load_features(path):
    """Read a VFEA feature file"""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != FEATURE_MAGIC:
        raise ModelFormatError(f"{path}: not a VFEA feature file")
    version, count, hop = struct.unpack('<III', raw[4:16])
    if version != FEATURE_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported feature file version {version}; supported versions: {FEATURE_VERSION}")
    expected = count * IMAGE_FRAMES * NUM_BANDS * 4
    if len(raw) - 16 != expected:
        raise ModelCorruptionError(
            f"{path}: expected {expected} bytes of image data, found {len(raw) - 16}")
    if hop < 1:
        raise ModelCorruptionError(f"{path}: stored image hop must be positive, got {hop}")
    pixels = np.frombuffer(raw, dtype='<f4', offset=16).reshape(count, IMAGE_FRAMES, NUM_BANDS)
    return ImageSequence(pixels=pixels.astype(np.float32), hop_images=hop)
