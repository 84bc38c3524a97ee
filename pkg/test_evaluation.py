"""
Tests for frame scoring, ROC/AUC, TPR at fixed FPR and the condition breakdown
"""

import json
import math

import numpy as np
import pytest

from vadkit.audio_io import AudioBuffer, Condition, FrameLabels
from vadkit.exceptions import AlignmentError, ArgumentError, MetricError
from vadkit.evaluation import (
    OPERATING_FPR,
    ConditionReport,
    RocCurve,
    ScoreTrack,
    aggregate_reports,
    align_scores,
    condition_breakdown,
    energy_baseline,
    expand_posteriors,
    export_roc,
    mean_roc,
    read_roc,
    read_scores,
    roc_curve,
    score_frames,
    tpr_at_fpr,
    write_report_json,
    write_scores,
)
from vadkit.features import ImageSequence
from vadkit.model import build_model


def concordance(scores, positive):
    pos, neg = scores[positive], scores[~positive]
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


def labels_from_speech(speech):
    return FrameLabels(np.where(speech, Condition.CLEAN_SPEECH, Condition.NO_SPEECH))


class TestScoreFrames:
    def test_replication(self):
        out = expand_posteriors([0.1, 0.9, 0.5])
        np.testing.assert_array_equal(out, [0.1] * 32 + [0.9] * 32 + [0.5] * 32)

    def test_tail_copies_last_image(self):
        out = expand_posteriors([0.3], num_frames=35)
        np.testing.assert_array_equal(out, [0.3] * 35)

    def test_constant_model(self, rng, toy_model_config):
        params = build_model(toy_model_config)
        params.tensors['out.W'][:] = 0.0
        seq = ImageSequence(rng.standard_normal((3, 32, 32)).astype(np.float32))
        track = score_frames(params, seq, num_frames=100)
        assert len(track) == 100
        np.testing.assert_array_equal(track.scores, 0.5)

    def test_empty_posteriors(self):
        with pytest.raises(ArgumentError):
            expand_posteriors([])

    def test_scores_must_be_probabilities(self):
        with pytest.raises(ArgumentError):
            ScoreTrack([0.2, 1.5])

    def test_align_pads_and_truncates(self):
        np.testing.assert_array_equal(align_scores([0.1, 0.2], 4).scores, [0.1, 0.2, 0.2, 0.2])
        np.testing.assert_array_equal(align_scores([0.1, 0.2, 0.3], 2).scores, [0.1, 0.2])

    def test_align_rejects_large_mismatch(self):
        with pytest.raises(AlignmentError):
            align_scores(np.zeros(10), 100)


class TestRocCurve:
    def test_perfect_separation(self):
        curve = roc_curve([0.9, 0.8, 0.3, 0.2], labels_from_speech([1, 1, 0, 0]))
        assert curve.auc == 1.0
        assert [(f, t) for f, t, _ in curve.points] == [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]

    def test_interleaved(self):
        curve = roc_curve([0.9, 0.8, 0.3, 0.2], labels_from_speech([1, 0, 1, 0]))
        assert curve.auc == pytest.approx(0.75)

    def test_all_tied(self):
        curve = roc_curve([0.4] * 6, labels_from_speech([1, 0, 1, 0, 0, 1]))
        assert [(f, t) for f, t, _ in curve.points] == [(0.0, 0.0), (1.0, 1.0)]
        assert curve.auc == 0.5
        assert curve.thresholds[0] == math.inf

    def test_single_class(self):
        with pytest.raises(MetricError, match='positive'):
            roc_curve([0.1, 0.2], labels_from_speech([0, 0]))
        with pytest.raises(MetricError, match='negative'):
            roc_curve([0.1, 0.2], labels_from_speech([1, 1]))

    @pytest.mark.parametrize('seed', range(100))
    def test_auc_equals_concordance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 201))
        positive = rng.random(n) < rng.uniform(0.2, 0.8)
        positive[0], positive[1] = True, False
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        curve = roc_curve(scores, labels_from_speech(positive))
        assert curve.auc == pytest.approx(concordance(scores, positive), abs=1e-9)
        assert np.all(np.diff(curve.fpr) >= 0)
        assert np.all(np.diff(curve.tpr) >= 0)
        assert curve.points[0][:2] == (0.0, 0.0)
        assert curve.points[-1][:2] == (1.0, 1.0)

    def test_drop_intermediate_keeps_area(self, rng):
        scores = rng.random(300)
        labels = labels_from_speech(rng.random(300) < 0.5)
        full = roc_curve(scores, labels, drop_intermediate=False)
        reduced = roc_curve(scores, labels)
        assert len(reduced.fpr) <= len(full.fpr)
        assert reduced.auc == pytest.approx(full.auc, abs=1e-12)


class TestTprAtFpr:
    def test_perfect_curve(self):
        curve = roc_curve([0.9, 0.8, 0.3, 0.2], labels_from_speech([1, 1, 0, 0]))
        assert tpr_at_fpr(curve, 0.01)[0] == 1.0
        assert tpr_at_fpr(curve)[0] == 1.0

    def test_chance_curve(self):
        curve = roc_curve([0.5] * 4, labels_from_speech([1, 0, 1, 0]))
        assert tpr_at_fpr(curve, OPERATING_FPR)[0] == pytest.approx(0.315, abs=1e-12)

    def test_hand_interpolation(self):
        curve = RocCurve([0.0, 0.2, 0.4, 1.0], [0.0, 0.8, 0.9, 1.0], [math.inf, 0.7, 0.5, 0.1])
        tpr, threshold = tpr_at_fpr(curve, 0.315)
        assert tpr == pytest.approx(0.8575, abs=1e-12)
        assert threshold == 0.7

    def test_monotone_in_target(self, rng):
        curve = roc_curve(rng.random(200), labels_from_speech(rng.random(200) < 0.5))
        values = [tpr_at_fpr(curve, target)[0] for target in np.linspace(0, 1, 51)]
        assert np.all(np.diff(values) >= -1e-15)

    def test_increasing_transform_invariance(self, rng):
        scores = rng.random(150)
        conditions = rng.integers(0, 4, size=150)
        conditions[:4] = [0, 1, 2, 3]
        frames = FrameLabels(conditions)
        transformed = np.sqrt(scores) * 0.5 + 0.25
        a, b = roc_curve(scores, frames), roc_curve(transformed, frames)
        np.testing.assert_array_equal(a.fpr, b.fpr)
        np.testing.assert_array_equal(a.tpr, b.tpr)
        assert a.auc == b.auc
        assert tpr_at_fpr(a)[0] == tpr_at_fpr(b)[0]
        ra, rb = condition_breakdown(scores, frames), condition_breakdown(transformed, frames)
        assert (ra.tpr_clean, ra.tpr_noise, ra.tpr_music, ra.tpr_all) == \
            (rb.tpr_clean, rb.tpr_noise, rb.tpr_music, rb.tpr_all)


class TestConditionBreakdown:
    def test_perfect_scorer(self):
        conditions = np.array([0, 0, 1, 2, 3, 0, 1])
        scores = np.where(conditions == 0, 0.1, 0.9)
        report = condition_breakdown(scores, FrameLabels(conditions))
        assert (report.tpr_clean, report.tpr_noise, report.tpr_music, report.tpr_all) == (1.0, 1.0, 1.0, 1.0)
        assert report.operating_fpr == OPERATING_FPR

    def test_constant_scorer(self):
        conditions = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        report = condition_breakdown(np.full(8, 0.5), FrameLabels(conditions))
        for value in (report.tpr_clean, report.tpr_noise, report.tpr_music, report.tpr_all):
            assert value == pytest.approx(0.315, abs=1e-12)

    @pytest.mark.parametrize('seed', range(10))
    def test_all_between_conditions(self, seed):
        rng = np.random.default_rng(seed)
        conditions = rng.integers(0, 4, size=400)
        conditions[:4] = [0, 1, 2, 3]
        scores = np.clip(rng.random(400) * 0.5 + 0.15 * conditions, 0, 1)
        report = condition_breakdown(scores, FrameLabels(conditions))
        per_condition = [report.tpr_clean, report.tpr_noise, report.tpr_music]
        assert min(per_condition) - 1e-12 <= report.tpr_all <= max(per_condition) + 1e-12

    def test_needs_no_speech_frames(self):
        with pytest.raises(MetricError):
            condition_breakdown([0.2, 0.8], FrameLabels([1, 2]))

    def test_missing_condition_is_nan(self, caplog):
        report = condition_breakdown([0.1, 0.9, 0.8], FrameLabels([0, 1, 1]))
        assert math.isnan(report.tpr_music)
        assert math.isnan(report.tpr_noise)
        assert report.tpr_clean == 1.0
        assert 'music' in caplog.text

    def test_report_json(self, tmp_path):
        report = condition_breakdown([0.1, 0.9, 0.7, 0.6], FrameLabels([0, 1, 2, 3]))
        report.auc = 1.0
        write_report_json(report, tmp_path / 'report.json')
        data = json.loads((tmp_path / 'report.json').read_text())
        assert set(data) == {'operating_fpr', 'threshold', 'tpr', 'auc'}
        assert set(data['tpr']) == {'clean', 'noise', 'music', 'all'}
        assert data['auc'] == 1.0


class TestEnergyBaseline:
    def test_tone_versus_silence(self):
        t = np.arange(16000) / 16000
        samples = np.concatenate([0.5 * np.sin(2 * np.pi * 440 * t), np.zeros(16000)])
        track = energy_baseline(AudioBuffer(samples, 16000))
        assert len(track) == 200
        curve = roc_curve(track, labels_from_speech(np.r_[np.ones(100), np.zeros(100)].astype(bool)))
        assert curve.auc == 1.0

    def test_constant_amplitude(self):
        track = energy_baseline(AudioBuffer(np.full(1600, 0.3), 16000))
        assert len(np.unique(track.scores)) == 1

    def test_steady_sine(self):
        t = np.arange(16000) / 16000
        track = energy_baseline(AudioBuffer(0.5 * np.sin(2 * np.pi * 440 * t), 16000))
        assert len(track) == 100
        assert len(np.unique(track.scores)) == 1

    def test_two_level_sine(self):
        t = np.arange(16000) / 16000
        tone = np.sin(2 * np.pi * 440 * t)
        track = energy_baseline(AudioBuffer(np.concatenate([0.5 * tone, 0.4 * tone]), 16000))
        assert track.scores.min() == 0.0 and track.scores.max() == 1.0
        assert track.scores[:100].mean() > 0.8 and track.scores[100:].mean() < 0.2

    def test_silence(self):
        np.testing.assert_array_equal(energy_baseline(AudioBuffer(np.zeros(800), 16000)).scores, 0.0)

    def test_tone_versus_noise(self, rng):
        t = np.arange(160000) / 16000
        samples = np.concatenate([0.5 * np.sin(2 * np.pi * 300 * t), 0.05 * rng.standard_normal(160000)])
        track = energy_baseline(AudioBuffer(samples, 16000))
        curve = roc_curve(track, labels_from_speech(np.r_[np.ones(1000), np.zeros(1000)].astype(bool)))
        assert curve.auc > 0.95

    def test_too_short(self):
        with pytest.raises(ArgumentError):
            energy_baseline(AudioBuffer(np.zeros(10), 16000))


class TestAggregation:
    def test_mean_roc_of_identical_curves(self, rng):
        curve = roc_curve(rng.random(100), labels_from_speech(rng.random(100) < 0.5))
        mean = mean_roc([curve, curve])
        np.testing.assert_array_equal(mean.std_tpr, 0.0)
        assert mean.mean_of_aucs == pytest.approx(curve.auc)
        assert mean.fpr[0] == 0.0 and mean.fpr[-1] == 1.0
        assert len(mean.fpr) == 101

    def test_mean_roc_chance(self):
        curve = roc_curve([0.5] * 4, labels_from_speech([1, 0, 1, 0]))
        assert mean_roc([curve]).auc_of_mean_curve == pytest.approx(0.5)

    def test_aggregate_reports(self):
        reports = [ConditionReport(0.315, 0.5, 0.9, 0.8, 0.7, 0.8, auc=0.9),
                   ConditionReport(0.315, 0.4, 1.0, 0.6, 0.5, 0.7, auc=0.95)]
        summary = aggregate_reports(reports)
        assert summary['clean']['mean'] == pytest.approx(0.95)
        assert summary['clean']['std'] == pytest.approx(np.std([0.9, 1.0], ddof=1))
        assert summary['auc']['mean'] == pytest.approx(0.925)

    def test_aggregate_needs_reports(self):
        with pytest.raises(ArgumentError):
            aggregate_reports([])


class TestFiles:
    def test_scores_round_trip(self, tmp_path):
        track = ScoreTrack([0.25, 0.5, 1.0 / 3.0])
        write_scores(track, tmp_path / 's.csv')
        lines = (tmp_path / 's.csv').read_text().splitlines()
        assert lines[0] == 'frame_index,time_s,p_speech'
        assert lines[2].startswith('1,0.010,')
        np.testing.assert_array_equal(read_scores(tmp_path / 's.csv').scores, track.scores)

    def test_malformed_scores(self, tmp_path):
        (tmp_path / 's.csv').write_text('frame_index,time_s,p_speech\n0,0.000,high\n')
        with pytest.raises(ArgumentError):
            read_scores(tmp_path / 's.csv')

    def test_export_perfect_curve(self, tmp_path):
        curve = roc_curve([0.9, 0.8, 0.3, 0.2], labels_from_speech([1, 1, 0, 0]))
        export_roc(curve, tmp_path / 'roc.csv')
        lines = (tmp_path / 'roc.csv').read_text().splitlines()
        assert lines[0] == 'fpr,tpr,threshold'
        assert len(lines) == 5
        assert lines[-1] == '# auc=1.0'

    def test_export_round_trip(self, tmp_path, rng):
        curve = roc_curve(rng.random(80), labels_from_speech(rng.random(80) < 0.4))
        export_roc(curve, tmp_path / 'roc.csv')
        loaded = read_roc(tmp_path / 'roc.csv')
        assert loaded.points == curve.points
        assert round(loaded.auc, 6) == round(curve.auc, 6)
