"""
VadKit Audio and Label I/O

Reads WAV audio and condition-labelled segment files, resamples audio to the
working rate and rasterizes labels onto the 10 ms scoring grid.
"""

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from pathlib import Path
from typing import List, NamedTuple, Sequence

import numpy as np
import soundfile as sf
from scipy.signal import resample_poly

from vadkit.exceptions import (
    ArgumentError,
    AudioFormatError,
    LabelParseError,
    LabelValidationError,
    UnsupportedCodecError,
)
from vadkit.logger import setup_logger

logger = setup_logger(__name__)

WORKING_RATE_HZ = 16000
FRAME_STEP_S = 0.01

# Tolerance for comparing frame midpoints against decimal segment boundaries
_TIME_EPS = 1e-9

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE
_CODEC_NAMES = {
    0x0002: 'MS ADPCM',
    0x0006: 'A-law',
    0x0007: 'mu-law',
    0x0011: 'IMA ADPCM',
    0x0055: 'MPEG layer 3',
}


class Condition(IntEnum):
    """Mutually exclusive speech activity condition of a labelled segment"""
    NO_SPEECH = 0
    CLEAN_SPEECH = 1
    SPEECH_MUSIC = 2
    SPEECH_NOISE = 3

    @property
    def is_speech(self):
        return self is not Condition.NO_SPEECH

    @property
    def display_name(self):
        return _DISPLAY_NAMES[self]


_DISPLAY_NAMES = {
    Condition.NO_SPEECH: 'NoSpeech',
    Condition.CLEAN_SPEECH: 'CleanSpeech',
    Condition.SPEECH_MUSIC: 'SpeechMusic',
    Condition.SPEECH_NOISE: 'SpeechNoise',
}

_FILE_NAMES = {
    Condition.NO_SPEECH: 'NO_SPEECH',
    Condition.CLEAN_SPEECH: 'CLEAN_SPEECH',
    Condition.SPEECH_MUSIC: 'SPEECH_WITH_MUSIC',
    Condition.SPEECH_NOISE: 'SPEECH_WITH_NOISE',
}

CONDITION_ALIASES = {
    'NO_SPEECH': Condition.NO_SPEECH,
    'CLEAN_SPEECH': Condition.CLEAN_SPEECH,
    'SPEECH_WITH_MUSIC': Condition.SPEECH_MUSIC,
    'SPEECH_WITH_NOISE': Condition.SPEECH_NOISE,
    'NoSpeech': Condition.NO_SPEECH,
    'CleanSpeech': Condition.CLEAN_SPEECH,
    'Speech+Music': Condition.SPEECH_MUSIC,
    'Speech+Noise': Condition.SPEECH_NOISE,
    'SpeechMusic': Condition.SPEECH_MUSIC,
    'SpeechNoise': Condition.SPEECH_NOISE,
}


def parse_condition(text):
    """Map a label-file condition string to a Condition, or None when unknown"""
    return CONDITION_ALIASES.get(text.strip())


@dataclass
class AudioBuffer:
    """Mono audio samples in [-1, 1] with their sample rate"""
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate_hz) <= 0:
            raise ArgumentError(f"Sample rate must be positive, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)
        if not np.all(np.isfinite(self.samples)):
            raise ArgumentError("Audio samples must be finite")

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


class Segment(NamedTuple):
    start_s: float
    end_s: float
    condition: Condition
    segment_id: str = ''


@dataclass
class LabelTrack:
    """Time-ordered, non-overlapping condition segments"""
    segments: List[Segment] = field(default_factory=list)

    def __post_init__(self):
        self.segments = sorted(self.segments, key=lambda s: s.start_s)
        _validate_segments(self.segments)


@dataclass
class FrameLabels:
    """Condition per scoring frame on a fixed step grid"""
    labels: np.ndarray
    frame_step_s: float = FRAME_STEP_S
    gap_frames: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)

    @property
    def speech_mask(self):
        return self.labels != Condition.NO_SPEECH

    def __len__(self):
        return len(self.labels)


def _validate_segments(segments):
    for seg in segments:
        if not seg.end_s > seg.start_s:
            raise LabelValidationError(
                f"Segment '{seg.segment_id}' has end {seg.end_s} not after start {seg.start_s}")
    for prev, cur in zip(segments, segments[1:]):
        if cur.start_s < prev.end_s:
            raise LabelValidationError(
                f"Segments '{prev.segment_id}' and '{cur.segment_id}' overlap "
                f"({prev.start_s}-{prev.end_s} and {cur.start_s}-{cur.end_s}); "
                "labels must be mutually exclusive")


def _check_wav_header(raw, path):
    """Walk the RIFF chunks and reject truncated files and unsupported codecs"""
    if len(raw) < 12 or raw[0:4] != b'RIFF' or raw[8:12] != b'WAVE':
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")

    offset = 12
    fmt = None
    data_found = False
    while offset + 8 <= len(raw):
        chunk_id = raw[offset:offset + 4]
        chunk_size, = struct.unpack('<I', raw[offset + 4:offset + 8])
        body = offset + 8
        if body + chunk_size > len(raw):
            raise AudioFormatError(
                f"{path}: chunk {chunk_id!r} declares {chunk_size} bytes "
                f"but only {len(raw) - body} remain")
        if chunk_id == b'fmt ':
            if chunk_size < 16:
                raise AudioFormatError(f"{path}: fmt chunk too short ({chunk_size} bytes)")
            fmt = struct.unpack('<HHIIHH', raw[body:body + 16])
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if chunk_size < 40:
                    raise AudioFormatError(f"{path}: extensible fmt chunk too short")
                sub_format, = struct.unpack('<H', raw[body + 24:body + 26])
                fmt = (sub_format,) + fmt[1:]
        elif chunk_id == b'data':
            data_found = True
        offset = body + chunk_size + (chunk_size & 1)

    if fmt is None or not data_found:
        raise AudioFormatError(f"{path}: missing fmt or data chunk")

    format_tag, channels, sample_rate, _, _, bits = fmt
    if channels < 1 or sample_rate < 1:
        raise AudioFormatError(f"{path}: invalid channel count or sample rate")
    supported = ((format_tag == _WAVE_FORMAT_PCM and bits == 16)
                 or (format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32))
    if not supported:
        codec = _CODEC_NAMES.get(format_tag, f"format tag 0x{format_tag:04x}")
        raise UnsupportedCodecError(
            f"{path}: unsupported encoding {codec} ({bits}-bit); "
            "expected PCM 16-bit or IEEE float 32-bit")


def read_wav(path):
    """Read a PCM16 or float32 WAV file, averaging channels to mono"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise AudioFormatError(f"Cannot read {path}: {e}")

    _check_wav_header(raw, path)
    try:
        data, rate = sf.read(io.BytesIO(raw), dtype='float64', always_2d=True)
    except RuntimeError as e:
        raise AudioFormatError(f"{path}: {e}")

    samples = data.mean(axis=1) if data.shape[1] > 1 else data[:, 0]
    logger.debug(f"Read {path}: {len(samples)} samples at {rate} Hz, {data.shape[1]} channel(s)")
    return AudioBuffer(samples=samples, sample_rate_hz=rate)


def write_wav(buf, path, subtype='PCM_16'):
    """Write a mono WAV file (PCM_16 or FLOAT)"""
    sf.write(str(path), buf.samples, buf.sample_rate_hz, subtype=subtype, format='WAV')


def resample(buf, target_hz=WORKING_RATE_HZ):
    """Polyphase resampling with an anti-aliasing low-pass"""
    if int(target_hz) <= 0:
        raise ArgumentError(f"Target rate must be positive, got {target_hz}")
    target_hz = int(target_hz)
    if target_hz == buf.sample_rate_hz:
        return AudioBuffer(samples=buf.samples.copy(), sample_rate_hz=target_hz)
    if len(buf.samples) == 0:
        return AudioBuffer(samples=np.zeros(0), sample_rate_hz=target_hz)

    ratio = Fraction(target_hz, buf.sample_rate_hz)
    out = resample_poly(buf.samples, ratio.numerator, ratio.denominator)
    return AudioBuffer(samples=out, sample_rate_hz=target_hz)


def load_labels(path):
    """Load a segment_id,start_s,end_s,condition CSV into a LabelTrack"""
    path = Path(path)
    segments = []
    with open(path, newline='', encoding='utf-8') as f:
        for row_number, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise LabelParseError(
                    f"{path}, row {row_number}: expected 4 columns, got {len(row)}")
            segment_id, start_text, end_text, condition_text = (cell.strip() for cell in row)
            try:
                start_s = float(start_text)
                end_s = float(end_text)
            except ValueError:
                if row_number == 1 and not segments:
                    continue  # header
                raise LabelParseError(f"{path}, row {row_number}: times must be decimal seconds")
            condition = parse_condition(condition_text)
            if condition is None:
                raise LabelParseError(
                    f"{path}, row {row_number}: unknown condition '{condition_text}'")
            segments.append(Segment(start_s, end_s, condition, segment_id))
    return LabelTrack(segments)


def save_labels(track, path):
    """Write a LabelTrack as a label CSV with a header row"""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['segment_id', 'start_s', 'end_s', 'condition'])
        for seg in track.segments:
            writer.writerow([seg.segment_id, repr(float(seg.start_s)), repr(float(seg.end_s)),
                             _FILE_NAMES[seg.condition]])


def frame_count(duration_s, frame_step_s=FRAME_STEP_S):
    """Number of whole frames of frame_step_s in duration_s"""
    return int(math.floor(duration_s / frame_step_s + _TIME_EPS))


def rasterize_labels(track, duration_s, frame_step_s=FRAME_STEP_S):
    """Label each frame with the segment containing its midpoint"""
    if frame_step_s <= 0:
        raise ArgumentError(f"Frame step must be positive, got {frame_step_s}")
    if duration_s < 0:
        raise ArgumentError(f"Duration must be non-negative, got {duration_s}")

    n_frames = frame_count(duration_s, frame_step_s)
    midpoints = (np.arange(n_frames) + 0.5) * frame_step_s + _TIME_EPS
    labels = np.full(n_frames, Condition.NO_SPEECH, dtype=np.int8)
    covered = np.zeros(n_frames, dtype=bool)

    if track.segments:
        starts = np.array([s.start_s for s in track.segments])
        ends = np.array([s.end_s for s in track.segments])
        conditions = np.array([int(s.condition) for s in track.segments], dtype=np.int8)
        idx = np.searchsorted(starts, midpoints, side='right') - 1
        valid = idx >= 0
        inside = np.zeros(n_frames, dtype=bool)
        inside[valid] = midpoints[valid] < ends[idx[valid]]
        labels[inside] = conditions[idx[inside]]
        covered = inside

    gaps = int(n_frames - np.count_nonzero(covered))
    if gaps:
        logger.warning(f"{gaps} of {n_frames} frames fall in unlabelled gaps; using NoSpeech")
    return FrameLabels(labels=labels, frame_step_s=frame_step_s, gap_frames=gaps)


def label_statistics(tracks: Sequence[LabelTrack]):
    """Per-condition share of time, share of segments and mean segment duration"""
    durations = {c: [] for c in Condition}
    for track in tracks:
        for seg in track.segments:
            durations[seg.condition].append(seg.end_s - seg.start_s)

    total_time = sum(sum(d) for d in durations.values())
    total_count = sum(len(d) for d in durations.values())
    stats = {}
    for condition, values in durations.items():
        stats[condition] = {
            'time_pct': 100.0 * sum(values) / total_time if total_time else 0.0,
            'segments_pct': 100.0 * len(values) / total_count if total_count else 0.0,
            'avg_duration_s': float(np.mean(values)) if values else 0.0,
        }
    return stats
