"""
VadKit Synthetic Corpora

Seeded toy audio where every 320 ms tile is either a tone burst ("speech")
or broadband noise ("non-speech"), pushed through the real feature front-end.
"""

from pathlib import Path

import numpy as np

from vadkit.audio_io import WORKING_RATE_HZ, AudioBuffer, Condition, LabelTrack, Segment, rasterize_labels, save_labels
from vadkit.features import IMAGE_FRAMES, FeatureSettings, extract_features, save_features
from vadkit.training import TrainingExample, make_examples

TILE_S = IMAGE_FRAMES * FeatureSettings.step_s
# Extra audio after the last tile so its final analysis window is complete
TAIL_S = 0.015


def tone_burst_audio(duration_s, rng, sample_rate_hz=WORKING_RATE_HZ):
    """A few harmonics of a random fundamental under a raised-cosine envelope"""
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    f0 = rng.uniform(120.0, 400.0)
    amplitude = rng.uniform(0.2, 0.5)
    signal = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 6))
    envelope = 0.6 + 0.4 * np.cos(2 * np.pi * rng.uniform(2.0, 6.0) * t)
    signal = amplitude * envelope * signal / 2.3
    return signal + 0.003 * rng.standard_normal(n)


def noise_audio(duration_s, rng, sample_rate_hz=WORKING_RATE_HZ):
    n = int(round(duration_s * sample_rate_hz))
    return rng.uniform(0.01, 0.3) * rng.standard_normal(n) / 3.0


def toy_recording(classes, rng, sample_rate_hz=WORKING_RATE_HZ):
    """Audio and labels for a tile-class sequence (1 = tone burst, 0 = noise)"""
    pieces, segments = [], []
    for j, cls in enumerate(classes):
        tail = TAIL_S if j == len(classes) - 1 else 0.0
        duration = TILE_S + tail
        generator = tone_burst_audio if cls else noise_audio
        pieces.append(generator(duration, rng, sample_rate_hz))
        condition = Condition.CLEAN_SPEECH if cls else Condition.NO_SPEECH
        segments.append(Segment(j * TILE_S, (j + 1) * TILE_S + tail, condition, f'tile{j}'))
    samples = np.clip(np.concatenate(pieces), -1.0, 1.0)
    return AudioBuffer(samples, sample_rate_hz), LabelTrack(segments)


def _sequence(seq_len, rng):
    classes = rng.integers(0, 2, size=seq_len)
    buf, track = toy_recording(classes, rng)
    seq = extract_features(buf)
    frames = rasterize_labels(track, seq_len * TILE_S)
    return seq, frames, classes


def toy_corpus(n_sequences, seq_len, seed):
    """Tone-vs-noise examples; image targets follow the tile classes"""
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n_sequences):
        seq, frames, _ = _sequence(seq_len, rng)
        examples.extend(make_examples(seq, frames, seq_len))
    return examples


def right_context_examples(n_sequences, seq_len, seed):
    """Target of image t is the class of image t+1; the last image keeps its own class"""
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n_sequences):
        seq, _, classes = _sequence(seq_len, rng)
        targets = np.append(classes[1:], classes[-1])
        examples.append(TrainingExample(seq, targets))
    return examples


def write_toy_dataset(directory, n_recordings, n_images, seed):
    """Write `<name>.vfea` + `<name>.csv` pairs for the file-based commands"""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_recordings):
        buf, track = toy_recording(rng.integers(0, 2, size=n_images), rng)
        save_features(extract_features(buf), root / f'rec{i:03d}.vfea')
        save_labels(track, root / f'rec{i:03d}.csv')
    return root
