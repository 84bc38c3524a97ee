"""
Shared pytest fixtures and helpers for the VadKit test suite
"""

import numpy as np
import pytest
import soundfile as sf

from vadkit.audio_io import rasterize_labels
from vadkit.dataset import Recording, covered_duration_s
from vadkit.features import extract_features
from vadkit.model import ModelConfig
from vadkit.synthetic import toy_recording

FD_STEP = 1e-3
FD_TOLERANCE = 1e-4
# forward/backward slopes further apart than this (relative) mark a kink
KINK_TOLERANCE = 1e-4
# entries below this magnitude are compared on absolute error
FD_FLOOR = 1e-4


def central_difference(f, x, idx, h=FD_STEP, kink_tol=KINK_TOLERANCE):
    """Central difference of scalar f at x[idx], Richardson-combined over steps h and h/2

    Returns None where a kink lies within h of x[idx]; kink_tol=None skips that test for
    smooth functions.
    """
    original = x[idx]

    def at(offset):
        x[idx] = original + offset
        return f()

    try:
        f_plus, f_minus = at(h), at(-h)
        half_plus, half_minus = at(h / 2), at(-h / 2)
        f_zero = at(0.0)
    finally:
        x[idx] = original
    if kink_tol is not None:
        forward = (f_plus - f_zero) / h
        backward = (f_zero - f_minus) / h
        if abs(forward - backward) > kink_tol * max(abs(forward), abs(backward), FD_FLOOR):
            return None
    wide = (f_plus - f_minus) / (2 * h)
    narrow = (half_plus - half_minus) / h
    return (4 * narrow - wide) / 3


def assert_gradient_matches(f, x, analytic, rng, max_checks=40, h=FD_STEP, tol=FD_TOLERANCE,
                            kink_tol=KINK_TOLERANCE):
    """Max elementwise relative error between analytic entries and central differences"""
    flat_indices = rng.choice(x.size, size=min(max_checks, x.size), replace=False)
    numeric, expected = [], []
    for flat in flat_indices:
        idx = np.unravel_index(flat, x.shape)
        value = central_difference(f, x, idx, h, kink_tol)
        if value is None:
            continue
        numeric.append(value)
        expected.append(analytic[idx])
    assert numeric, "every checked coordinate sat on a kink"
    numeric, expected = np.array(numeric), np.array(expected)
    error = np.abs(numeric - expected) / np.maximum(np.maximum(np.abs(numeric), np.abs(expected)), FD_FLOOR)
    worst = int(np.argmax(error))
    assert error[worst] < tol, (f"relative gradient error {error[worst]:.3e} "
                                f"(numeric {numeric[worst]:.6e}, analytic {expected[worst]:.6e})")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """12x12 inputs: conv 10x10 -> pool 5x5 -> conv 4x4 -> pool 2x2"""
    return ModelConfig(conv1_kernel=(3, 3), conv1_width=2, conv2_kernel=(2, 2), conv2_width=3,
                       dense_width=4, lstm_width=3, bidirectional=True, dropout_rate=0.0,
                       input_height=12, input_width=12)


@pytest.fixture
def toy_model_config():
    """Narrow network on the real 32x32 images"""
    return ModelConfig(conv1_kernel=(5, 5), conv1_width=4, conv2_kernel=(3, 3), conv2_width=4,
                       dense_width=8, lstm_width=4, bidirectional=True, dropout_rate=0.0)


@pytest.fixture
def write_pcm16(tmp_path):
    def _write(name, samples, rate=16000):
        path = tmp_path / name
        sf.write(str(path), np.asarray(samples), rate, subtype='PCM_16', format='WAV')
        return path
    return _write


@pytest.fixture
def write_label_csv(tmp_path):
    def _write(name, rows, header=True):
        path = tmp_path / name
        lines = ['segment_id,start_s,end_s,condition'] if header else []
        lines += [','.join(str(cell) for cell in row) for row in rows]
        path.write_text('\n'.join(lines) + ('\n' if lines else ''))
        return path
    return _write


def make_recordings(n_recordings, n_images, seed):
    """Tone/noise recordings in memory, named rec000, rec001, ..."""
    rng = np.random.default_rng(seed)
    recordings = []
    for i in range(n_recordings):
        buf, track = toy_recording(rng.integers(0, 2, size=n_images), rng)
        seq = extract_features(buf)
        frames = rasterize_labels(track, covered_duration_s(seq))
        recordings.append(Recording(f'rec{i:03d}', seq, frames, track))
    return recordings
