"""
Tests for image targets, example construction and the training loop
"""

import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from vadkit.audio_io import Condition, FrameLabels
from vadkit.exceptions import AlignmentError, ArgumentError, ConfigError, DivergedTrainingError, ShapeError
from vadkit.features import ImageSequence
from vadkit.model import SMALL_CONFIG, build_model
from vadkit.synthetic import right_context_examples, toy_corpus
from vadkit.training import (
    TrainConfig,
    TrainingExample,
    accuracy,
    image_targets,
    make_examples,
    save_history,
    train,
)


def blank_sequence(n_images):
    return ImageSequence(np.zeros((n_images, 32, 32), dtype=np.float32))


def frame_labels(*runs):
    """FrameLabels from (condition, count) runs"""
    return FrameLabels(np.concatenate([np.full(count, condition) for condition, count in runs]))


def random_examples(rng, n_examples, seq_len=4, balanced=True):
    examples = []
    for _ in range(n_examples):
        pixels = rng.standard_normal((seq_len, 32, 32)).astype(np.float32)
        targets = rng.integers(0, 2, size=seq_len) if balanced else np.ones(seq_len)
        examples.append(TrainingExample(ImageSequence(pixels), targets))
    return examples


class TestImageTargets:
    def test_all_speech(self):
        assert image_targets(blank_sequence(1), frame_labels((Condition.CLEAN_SPEECH, 32))).tolist() == [1]

    def test_all_non_speech(self):
        assert image_targets(blank_sequence(1), frame_labels((Condition.NO_SPEECH, 32))).tolist() == [0]

    def test_tie_counts_as_speech(self):
        frames = frame_labels((Condition.SPEECH_MUSIC, 16), (Condition.NO_SPEECH, 16))
        assert image_targets(blank_sequence(1), frames).tolist() == [1]

    def test_minority_speech(self):
        frames = frame_labels((Condition.SPEECH_NOISE, 15), (Condition.NO_SPEECH, 17))
        assert image_targets(blank_sequence(1), frames).tolist() == [0]

    def test_per_image_votes(self):
        frames = frame_labels((Condition.NO_SPEECH, 32), (Condition.CLEAN_SPEECH, 40), (Condition.NO_SPEECH, 24))
        assert image_targets(blank_sequence(3), frames).tolist() == [0, 1, 0]

    def test_short_labels_use_available_frames(self):
        frames = frame_labels((Condition.NO_SPEECH, 32), (Condition.CLEAN_SPEECH, 10))
        assert image_targets(blank_sequence(2), frames).tolist() == [0, 1]

    def test_misaligned(self):
        with pytest.raises(AlignmentError):
            image_targets(blank_sequence(1), frame_labels((Condition.NO_SPEECH, 200)))
        with pytest.raises(AlignmentError):
            image_targets(blank_sequence(10), frame_labels((Condition.NO_SPEECH, 100)))

    def test_one_image_of_slack(self):
        # 10 images cover 320 frames
        assert len(image_targets(blank_sequence(10), frame_labels((Condition.NO_SPEECH, 352)))) == 10
        assert len(image_targets(blank_sequence(10), frame_labels((Condition.NO_SPEECH, 288)))) == 10
        with pytest.raises(AlignmentError):
            image_targets(blank_sequence(10), frame_labels((Condition.NO_SPEECH, 353)))
        with pytest.raises(AlignmentError):
            image_targets(blank_sequence(10), frame_labels((Condition.NO_SPEECH, 383)))
        with pytest.raises(AlignmentError):
            image_targets(blank_sequence(10), frame_labels((Condition.NO_SPEECH, 287)))


class TestMakeExamples:
    def test_every_image_once(self):
        pixels = np.arange(10, dtype=np.float32)[:, None, None] * np.ones((1, 32, 32), dtype=np.float32)
        seq = ImageSequence(pixels)
        examples = make_examples(seq, frame_labels((Condition.CLEAN_SPEECH, 320)), 3)
        assert len(examples) == 3
        used = np.concatenate([ex.images.pixels[:, 0, 0] for ex in examples])
        assert used.tolist() == list(range(9))
        assert all(len(ex) == 3 for ex in examples)
        assert examples[1].images.start_time_s == pytest.approx(0.96)

    def test_too_short(self):
        assert make_examples(blank_sequence(2), frame_labels((Condition.NO_SPEECH, 64)), 3) == []

    def test_bad_seq_len(self):
        with pytest.raises(ArgumentError):
            make_examples(blank_sequence(2), frame_labels((Condition.NO_SPEECH, 64)), 0)

    def test_target_length_checked(self):
        with pytest.raises(ShapeError):
            TrainingExample(blank_sequence(3), [1, 0])


class TestTrainConfig:
    @pytest.mark.parametrize('changes', [
        {'batch_size': 0}, {'seq_len': -1}, {'epochs': 0}, {'learning_rate': -1e-3},
        {'learning_rate': math.inf}, {'dropout_rate': 1.0}, {'seed': -5},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            TrainConfig(**changes)

    def test_seed_must_be_non_negative(self):
        assert TrainConfig(seed=0).seed == 0
        assert TrainConfig(seed=2**40).seed == 2**40
        with pytest.raises(ConfigError, match='seed must be non-negative, got -1'):
            TrainConfig(seed=-1)


class TestAccuracy:
    def test_confident_and_correct(self, rng, toy_model_config):
        params = build_model(toy_model_config)
        params.tensors['out.W'][:] = 0.0
        params.tensors['out.b'][:] = [-5.0, 5.0]
        assert accuracy(params, random_examples(rng, 3, balanced=False)) == 1.0

    def test_half_posterior_predicts_non_speech(self, rng, toy_model_config):
        params = build_model(toy_model_config)
        params.tensors['out.W'][:] = 0.0
        assert accuracy(params, random_examples(rng, 3, balanced=False)) == 0.0

    def test_random_params_near_chance(self, toy_model_config):
        rng = np.random.default_rng(42)
        params = build_model(toy_model_config, seed=42)
        assert 0.4 <= accuracy(params, random_examples(rng, 125, seq_len=8)) <= 0.6

    def test_empty(self, toy_model_config):
        with pytest.raises(ArgumentError):
            accuracy(build_model(toy_model_config), [])


class TestTrain:
    def test_zero_learning_rate(self, rng, toy_model_config):
        tc = TrainConfig(batch_size=2, seq_len=4, epochs=2, learning_rate=0.0, seed=3)
        params, history = train(random_examples(rng, 5), toy_model_config, tc)
        initial = build_model(replace(toy_model_config, dropout_rate=tc.dropout_rate), tc.seed)
        for name, tensor in initial.tensors.items():
            np.testing.assert_array_equal(params.tensors[name], tensor)
        assert len(history) == 2

    def test_same_seed_identical(self, rng, toy_model_config):
        examples = random_examples(rng, 6)
        tc = TrainConfig(batch_size=4, seq_len=4, epochs=2, seed=8)
        first_params, first = train(examples, toy_model_config, tc)
        second_params, second = train(examples, toy_model_config, tc)
        assert first.train_loss == second.train_loss
        assert first.train_acc == second.train_acc
        assert first.best_epoch == second.best_epoch
        for name in first_params.tensors:
            np.testing.assert_array_equal(first_params.tensors[name], second_params.tensors[name])

    def test_dropout_comes_from_train_config(self, rng, toy_model_config):
        tc = TrainConfig(batch_size=4, seq_len=4, epochs=1, dropout_rate=0.25)
        params, _ = train(random_examples(rng, 2), toy_model_config, tc)
        assert params.config.dropout_rate == 0.25

    def test_norm_from_training_examples(self, rng, toy_model_config):
        examples = random_examples(rng, 3)
        for ex in examples:
            ex.images.pixels += 4.0
        params, _ = train(examples, toy_model_config, TrainConfig(batch_size=4, seq_len=4, epochs=1))
        pixels = np.concatenate([ex.images.pixels.reshape(-1, 32) for ex in examples]).astype(np.float64)
        np.testing.assert_allclose(params.norm.mean, pixels.mean(axis=0), rtol=1e-5)
        assert params.norm.mean.dtype == np.float32

    def test_best_validation_epoch_kept(self, rng, toy_model_config):
        examples, val = random_examples(rng, 6), random_examples(rng, 3)
        params, history = train(examples, toy_model_config, TrainConfig(batch_size=2, seq_len=4, epochs=4), val)
        assert len(history.val_acc) == 4
        assert history.best_epoch == int(np.argmax(history.val_acc))
        assert accuracy(params, val) == pytest.approx(max(history.val_acc))

    def test_without_validation(self, rng, toy_model_config):
        _, history = train(random_examples(rng, 3), toy_model_config, TrainConfig(batch_size=2, seq_len=4, epochs=3))
        assert history.best_epoch == 2
        assert all(math.isnan(v) for v in history.val_acc)
        assert all(0.0 <= a <= 1.0 for a in history.train_acc)

    def test_diverged(self, rng, toy_model_config, monkeypatch):
        def exploding(params, images, targets, rng=None, training=True):
            return math.nan, {}, None

        monkeypatch.setattr('vadkit.training.loss_and_grads', exploding)
        with pytest.raises(DivergedTrainingError) as excinfo:
            train(random_examples(rng, 3), toy_model_config, TrainConfig(batch_size=2, seq_len=4, epochs=2))
        assert excinfo.value.epoch == 0
        assert excinfo.value.batch == 0

    def test_empty(self, toy_model_config):
        with pytest.raises(ArgumentError):
            train([], toy_model_config, TrainConfig())

    def test_mixed_lengths(self, rng, toy_model_config):
        examples = random_examples(rng, 2, seq_len=4) + random_examples(rng, 2, seq_len=3)
        with pytest.raises(ShapeError):
            train(examples, toy_model_config, TrainConfig(seq_len=4, epochs=1))

    def test_history_csv(self, rng, tmp_path, toy_model_config):
        _, history = train(random_examples(rng, 3), toy_model_config, TrainConfig(batch_size=2, seq_len=4, epochs=2))
        save_history(history, tmp_path / 'history.csv')
        with open(tmp_path / 'history.csv', newline='') as f:
            rows = list(csv.reader(f))
        assert rows[0] == ['epoch', 'train_loss', 'train_acc', 'val_acc']
        assert [row[0] for row in rows[1:]] == ['0', '1']
        assert float(rows[1][1]) == history.train_loss[0]


@pytest.mark.slow
class TestToyBenchmarks:
    def test_tone_versus_noise(self):
        examples = toy_corpus(200, 8, seed=0)
        held_out = toy_corpus(50, 8, seed=1)
        tc = TrainConfig(batch_size=16, seq_len=8, epochs=30, learning_rate=1e-3, seed=0)
        params, history = train(examples, SMALL_CONFIG, tc)
        assert len(examples) == 200
        assert max(history.train_acc) >= 0.99
        assert history.train_loss[4] < history.train_loss[0]
        assert accuracy(params, held_out) >= 0.95

    def test_bidirectional_uses_right_context(self, toy_model_config):
        config = replace(toy_model_config, dense_width=16, lstm_width=8)
        gaps = []
        for seed in range(5):
            examples = right_context_examples(80, 8, seed=100 + seed)
            held_out = right_context_examples(30, 8, seed=200 + seed)
            tc = TrainConfig(batch_size=8, seq_len=8, epochs=30, learning_rate=3e-3, seed=seed, dropout_rate=0.0)
            bidi, _ = train(examples, config, tc)
            uni, _ = train(examples, replace(config, bidirectional=False), tc)
            gaps.append(accuracy(bidi, held_out) - accuracy(uni, held_out))
        assert float(np.median(gaps)) >= 0.05
