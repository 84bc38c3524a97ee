"""
VadKit Evaluation

Frame-level scoring on the 10 ms grid, ROC/AUC, true positive rate at a fixed
false positive rate, and the per-condition breakdown at one global threshold.
"""

import csv
import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from vadkit.audio_io import FRAME_STEP_S, Condition, FrameLabels
from vadkit.exceptions import AlignmentError, ArgumentError, MetricError, ShapeError
from vadkit.features import IMAGE_FRAMES
from vadkit.logger import setup_logger
from vadkit.model import forward

logger = setup_logger(__name__)

OPERATING_FPR = 0.315
LOG_FLOOR = 1e-10
# frame energies spanning less than this score as flat
FLAT_RANGE_DB = 1.0

REPORT_CONDITIONS = {
    'clean': Condition.CLEAN_SPEECH,
    'noise': Condition.SPEECH_NOISE,
    'music': Condition.SPEECH_MUSIC,
}


@dataclass
class ScoreTrack:
    """p_speech per 10 ms frame"""
    scores: np.ndarray
    frame_step_s: float = FRAME_STEP_S

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if np.any(~np.isfinite(self.scores)) or np.any((self.scores < 0) | (self.scores > 1)):
            raise ArgumentError("Scores must lie in [0, 1]")

    def __len__(self):
        return len(self.scores)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: Optional[float] = None

    def __post_init__(self):
        self.fpr = np.asarray(self.fpr, dtype=np.float64)
        self.tpr = np.asarray(self.tpr, dtype=np.float64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if not (self.fpr.shape == self.tpr.shape == self.thresholds.shape) or self.fpr.ndim != 1:
            raise ShapeError("ROC fpr, tpr and thresholds must be equal-length vectors")
        if self.auc is None:
            self.auc = _trapezoid(self.fpr, self.tpr)

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


@dataclass
class ConditionReport:
    operating_fpr: float
    threshold: float
    tpr_clean: float
    tpr_noise: float
    tpr_music: float
    tpr_all: float
    auc: Optional[float] = None

    def to_dict(self):
        return {
            'operating_fpr': self.operating_fpr,
            'threshold': self.threshold,
            'tpr': {'clean': self.tpr_clean, 'noise': self.tpr_noise,
                    'music': self.tpr_music, 'all': self.tpr_all},
            'auc': self.auc,
        }


@dataclass
class MeanRoc:
    """Mean curve across folds on a common FPR grid"""
    fpr: np.ndarray
    mean_tpr: np.ndarray
    std_tpr: np.ndarray
    mean_of_aucs: float
    auc_of_mean_curve: float


def _trapezoid(x, y):
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        return 0.0
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def _scores(scores):
    return scores.scores if isinstance(scores, ScoreTrack) else np.asarray(scores, dtype=np.float64)


def _conditions(frames):
    if isinstance(frames, FrameLabels):
        return frames.labels.astype(np.int64)
    return np.asarray(frames).astype(np.int64).reshape(-1)


def expand_posteriors(p_speech, num_frames=None, hop_images=1):
    """Replicate each image's posterior over its 32 frames; the tail repeats the last image"""
    p_speech = np.asarray(p_speech, dtype=np.float64)
    if len(p_speech) == 0:
        raise ArgumentError("No posteriors to expand")
    stride = IMAGE_FRAMES * hop_images
    if num_frames is None:
        num_frames = len(p_speech) * stride
    image = np.minimum(np.arange(num_frames) // stride, len(p_speech) - 1)
    return p_speech[image]


def score_frames(params, seq, num_frames=None) -> ScoreTrack:
    """Model posteriors on the 10 ms scoring grid"""
    posteriors = forward(params, seq, training=False)
    p = np.array([post.p_speech for post in posteriors])
    return ScoreTrack(expand_posteriors(p, num_frames, seq.hop_images), seq.frame_step_s)


def align_scores(scores, num_frames):
    """Pad with the last score or truncate so the track matches num_frames"""
    s = _scores(scores)
    if abs(len(s) - num_frames) > IMAGE_FRAMES:
        raise AlignmentError(f"{len(s)} scores do not match {num_frames} label frames within one image")
    if len(s) == 0:
        raise AlignmentError("Score track is empty")
    if len(s) < num_frames:
        s = np.concatenate([s, np.full(num_frames - len(s), s[-1])])
    return ScoreTrack(s[:num_frames])


def _threshold_counts(scores, masks):
    """Distinct thresholds (descending, +inf first) and cumulative mask counts with score >= threshold"""
    order = np.argsort(-scores, kind='mergesort')
    ordered = scores[order]
    ends = np.r_[np.flatnonzero(np.diff(ordered) != 0), len(ordered) - 1]
    thresholds = np.r_[np.inf, ordered[ends]]
    counts = [np.r_[0, np.cumsum(mask[order], dtype=np.int64)[ends]] for mask in masks]
    return thresholds, counts


def roc_curve(scores, frames, drop_intermediate=True) -> RocCurve:
    """ROC over every distinct score threshold with speech frames as positives"""
    s = _scores(scores)
    positive = _conditions(frames) != Condition.NO_SPEECH
    if len(s) != len(positive):
        raise ShapeError(f"{len(s)} scores for {len(positive)} labelled frames")
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0:
        raise MetricError("ROC is undefined: labels contain no speech (positive) frames")
    if n_neg == 0:
        raise MetricError("ROC is undefined: labels contain no NoSpeech (negative) frames")

    thresholds, (tps, fps) = _threshold_counts(s, [positive, ~positive])
    if drop_intermediate and len(thresholds) > 2:
        bend = np.logical_or(np.diff(fps, 2), np.diff(tps, 2))
        keep = np.flatnonzero(np.r_[True, bend, True])
        thresholds, tps, fps = thresholds[keep], tps[keep], fps[keep]
    return RocCurve(fps / n_neg, tps / n_pos, thresholds)


def _bracket(fpr, target):
    """Index of the last point with fpr <= target and the interpolation weight towards the next"""
    i = int(np.clip(np.searchsorted(fpr, target, side='right') - 1, 0, len(fpr) - 1))
    if i == len(fpr) - 1 or fpr[i + 1] == fpr[i]:
        return i, 0.0
    return i, float((target - fpr[i]) / (fpr[i + 1] - fpr[i]))


def _interp(values, i, alpha):
    if alpha == 0.0:
        return float(values[i])
    return float(values[i] + alpha * (values[i + 1] - values[i]))


def tpr_at_fpr(curve, target_fpr=OPERATING_FPR):
    """(tpr, threshold) at target_fpr by linear interpolation between bracketing points"""
    i, alpha = _bracket(curve.fpr, target_fpr)
    return _interp(curve.tpr, i, alpha), float(curve.thresholds[i])


def condition_breakdown(scores, frames, target_fpr=OPERATING_FPR) -> ConditionReport:
    """Per-condition TPR at the single threshold where NoSpeech FPR equals target_fpr"""
    s = _scores(scores)
    labels = _conditions(frames)
    if len(s) != len(labels):
        raise ShapeError(f"{len(s)} scores for {len(labels)} labelled frames")
    negative = labels == Condition.NO_SPEECH
    if not negative.any():
        raise MetricError("Condition breakdown needs NoSpeech frames to fix the false positive rate")

    groups = {name: labels == cond for name, cond in REPORT_CONDITIONS.items()}
    groups['all'] = ~negative
    thresholds, counts = _threshold_counts(s, [negative] + list(groups.values()))
    fpr = counts[0] / negative.sum()
    i, alpha = _bracket(fpr, target_fpr)

    tpr = {}
    for (name, mask), count in zip(groups.items(), counts[1:]):
        total = int(mask.sum())
        tpr[name] = _interp(count / total, i, alpha) if total else math.nan
        if not total:
            logger.warning(f"No {name} frames; TPR reported as NaN")
    return ConditionReport(target_fpr, float(thresholds[i]), tpr['clean'], tpr['noise'],
                           tpr['music'], tpr['all'])


def energy_baseline(buf, frame_step_s=FRAME_STEP_S) -> ScoreTrack:
    """Min-max normalized log RMS energy per non-overlapping frame

    All zeros when the frame energies span less than FLAT_RANGE_DB, as for a steady tone.
    """
    step = int(round(frame_step_s * buf.sample_rate_hz))
    count = len(buf.samples) // step if step > 0 else 0
    if count == 0:
        raise ArgumentError("Audio is shorter than one scoring frame")
    frames = buf.samples[:count * step].reshape(count, step)
    energy = np.log(np.maximum(np.sqrt(np.mean(frames * frames, axis=1)), LOG_FLOOR))
    lo, hi = energy.min(), energy.max()
    if 20.0 / np.log(10.0) * (hi - lo) < FLAT_RANGE_DB:
        return ScoreTrack(np.zeros(count), frame_step_s)
    return ScoreTrack((energy - lo) / (hi - lo), frame_step_s)


def mean_roc(curves: List[RocCurve], num_points=101) -> MeanRoc:
    if not curves:
        raise ArgumentError("mean_roc needs at least one curve")
    grid = np.linspace(0.0, 1.0, num_points)
    tprs = []
    for curve in curves:
        tprs.append([_interp(curve.tpr, *_bracket(curve.fpr, x)) for x in grid])
    tprs = np.array(tprs)
    mean = tprs.mean(axis=0)
    std = tprs.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros_like(mean)
    return MeanRoc(grid, mean, std, float(np.mean([c.auc for c in curves])), _trapezoid(grid, mean))


def aggregate_reports(reports: List[ConditionReport]) -> Dict[str, Dict[str, float]]:
    """Mean and sample std of each TPR column (and AUC when present) across folds"""
    if not reports:
        raise ArgumentError("No reports to aggregate")
    columns = {'clean': [r.tpr_clean for r in reports], 'noise': [r.tpr_noise for r in reports],
               'music': [r.tpr_music for r in reports], 'all': [r.tpr_all for r in reports]}
    aucs = [r.auc for r in reports if r.auc is not None]
    if aucs:
        columns['auc'] = aucs
    out = {}
    for name, values in columns.items():
        values = np.asarray(values, dtype=np.float64)
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        out[name] = {'mean': float(np.mean(values)), 'std': std}
    return out


# File formats

def write_scores(track, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['frame_index', 'time_s', 'p_speech'])
        for idx, p in enumerate(track.scores):
            writer.writerow([idx, f'{idx * track.frame_step_s:.3f}', repr(float(p))])


def read_scores(path) -> ScoreTrack:
    with open(path, newline='') as f:
        rows = [row for row in csv.reader(f) if row]
    if rows and rows[0][0] == 'frame_index':
        rows = rows[1:]
    try:
        values = [float(row[2]) for row in rows]
    except (IndexError, ValueError) as e:
        raise ArgumentError(f"{path}: malformed scores CSV ({e})")
    return ScoreTrack(values)


def export_roc(curve, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['fpr', 'tpr', 'threshold'])
        for fpr, tpr, threshold in curve.points:
            writer.writerow([repr(fpr), repr(tpr), repr(threshold)])
        f.write(f'# auc={curve.auc!r}\n')


def read_roc(path) -> RocCurve:
    fpr, tpr, thresholds, auc = [], [], [], None
    with open(path, newline='') as f:
        for line in f:
            line = line.strip()
            if line.startswith('# auc='):
                auc = float(line[len('# auc='):])
            elif line and not line.startswith('fpr'):
                a, b, c = line.split(',')
                fpr.append(float(a))
                tpr.append(float(b))
                thresholds.append(float(c))
    return RocCurve(np.array(fpr), np.array(tpr), np.array(thresholds), auc)


def write_report_json(report, path):
    with open(path, 'w') as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write('\n')
