"""
VadKit Dataset

A data directory holds one `<name>.vfea` feature file and one `<name>.csv`
label file per recording.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from vadkit.audio_io import FRAME_STEP_S, FrameLabels, LabelTrack, load_labels, rasterize_labels
from vadkit.exceptions import DatasetError
from vadkit.features import IMAGE_FRAMES, ImageSequence, load_features
from vadkit.logger import setup_logger
from vadkit.training import make_examples

logger = setup_logger(__name__)

FEATURE_SUFFIX = '.vfea'
LABEL_SUFFIX = '.csv'


@dataclass
class Recording:
    """Fold unit of cross-validation"""
    name: str
    features: ImageSequence
    frames: FrameLabels
    track: Optional[LabelTrack] = None


def covered_duration_s(seq, frame_step_s=FRAME_STEP_S):
    if len(seq) == 0:
        return 0.0
    frames = (len(seq) - 1) * IMAGE_FRAMES * seq.hop_images + IMAGE_FRAMES
    return frames * frame_step_s


def load_dataset(directory, frame_step_s=FRAME_STEP_S) -> List[Recording]:
    """Pair feature and label files by basename, sorted by name"""
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"Data directory not found: {root}")

    features = {p.stem: p for p in root.glob(f'*{FEATURE_SUFFIX}')}
    labels = {p.stem: p for p in root.glob(f'*{LABEL_SUFFIX}')}
    orphans = sorted(features.keys() ^ labels.keys())
    if orphans:
        listed = ', '.join(
            (features.get(name) or labels.get(name)).name for name in orphans)
        raise DatasetError(f"Unpaired files in {root}: {listed}")
    if not features:
        raise DatasetError(f"No {FEATURE_SUFFIX}/{LABEL_SUFFIX} pairs in {root}")

    recordings = []
    for name in sorted(features):
        seq = load_features(features[name])
        track = load_labels(labels[name])
        frames = rasterize_labels(track, covered_duration_s(seq, frame_step_s), frame_step_s)
        recordings.append(Recording(name, seq, frames, track))
    logger.info(f"Loaded {len(recordings)} recordings from {root}")
    return recordings


def examples_for(recordings, seq_len):
    examples = []
    for rec in recordings:
        examples.extend(make_examples(rec.features, rec.frames, seq_len))
    return examples
