#!/usr/bin/env python3
"""
VadKit Command Line Interface

Feature extraction, training, scoring, evaluation and nested cross-validation
for the CNN-BiLSTM voice activity detector.
"""

import argparse
import sys
from pathlib import Path

from vadkit.audio_io import WORKING_RATE_HZ, frame_count, label_statistics, load_labels, rasterize_labels, read_wav
from vadkit.config_manager import ConfigManager
from vadkit.crossval import run_nested_cv, write_boxplot_csv, write_report_csv, write_sweeps_json
from vadkit.dataset import examples_for, load_dataset
from vadkit.evaluation import (
    OPERATING_FPR,
    align_scores,
    condition_breakdown,
    export_roc,
    read_scores,
    roc_curve,
    score_frames,
    write_report_json,
    write_scores,
)
from vadkit.exceptions import ArgumentError, VadKitError
from vadkit.features import FeatureSettings, extract_features, save_features
from vadkit.logger import log_operation, setup_logger
from vadkit.model import count_params, layer_breakdown, load_model, save_model
from vadkit.training import accuracy, save_history, train


def create_cli_logger(args=None):
    """Create logger for CLI"""
    verbose = bool(getattr(args, 'verbose', False))
    debug = bool(getattr(args, 'debug', False))
    return setup_logger('cli', verbose=verbose, debug=debug)


def cmd_features(args):
    """Extract spectrogram images from a WAV file"""
    logger = create_cli_logger(args)
    buf = read_wav(args.input)
    settings = FeatureSettings(sample_rate_hz=args.rate,
                               fmax_hz=min(FeatureSettings.fmax_hz, args.rate / 2))
    seq = extract_features(buf, settings)
    save_features(seq, args.out)
    if len(seq) == 0:
        logger.warning(f"{args.input} is too short for a single image; wrote an empty feature file")
    print(f"{len(seq)} images from {buf.duration_s:.2f} s of audio -> {args.out}")
    return 0


def cmd_train(args):
    """Train a model on a data directory"""
    logger = create_cli_logger(args)
    config = ConfigManager()
    model_config = config.load_model_config(args.model_config)
    train_config = config.load_train_config(args.train_config)

    recordings = load_dataset(args.data)
    stats = label_statistics([rec.track for rec in recordings if rec.track is not None])
    for condition, row in stats.items():
        logger.info(f"{condition.display_name}: {row['time_pct']:.1f}% of time, "
                    f"{row['segments_pct']:.1f}% of segments, {row['avg_duration_s']:.2f} s average")

    examples = examples_for(recordings, train_config.seq_len)
    if not examples:
        raise ArgumentError(f"No recording in {args.data} holds {train_config.seq_len} images")
    val_examples = examples_for(load_dataset(args.val_data), train_config.seq_len) if args.val_data else None

    params, history = train(examples, model_config, train_config, val_examples)
    save_model(params, args.out)
    history_path = args.history or str(Path(args.out).with_suffix('.history.csv'))
    save_history(history, history_path)

    print(f"Model: {args.out} ({count_params(params.config)} parameters)")
    print(f"Train accuracy: {accuracy(params, examples):.4f}")
    if val_examples:
        print(f"Validation accuracy: {accuracy(params, val_examples):.4f}")
    log_operation(logger, 'Training', 'success', f"history written to {history_path}")
    return 0


def cmd_predict(args):
    """Score a WAV file on the 10 ms grid"""
    params = load_model(args.model)
    buf = read_wav(args.input)
    seq = extract_features(buf)
    if len(seq) == 0:
        raise ArgumentError(f"{args.input} is too short for a single image")
    track = score_frames(params, seq, frame_count(buf.duration_s))
    write_scores(track, args.out)
    print(f"{len(track)} frame scores -> {args.out}")
    return 0


def _scored_frames(args):
    scores = read_scores(args.scores)
    labels = load_labels(args.labels)
    duration = labels.segments[-1].end_s if labels.segments else 0.0
    frames = rasterize_labels(labels, duration)
    return align_scores(scores, len(frames)), frames


def _table_row(name, tpr):
    cells = ''.join(f"{tpr[key]:>8.3f}" for key in ('clean', 'noise', 'music', 'all'))
    return f"{name:<24}{cells}"


def cmd_eval(args):
    """Per-condition TPR at a fixed FPR"""
    scores, frames = _scored_frames(args)
    curve = roc_curve(scores, frames)
    report = condition_breakdown(scores, frames, args.fpr)
    report.auc = curve.auc
    if args.report:
        write_report_json(report, args.report)
    if args.roc:
        export_roc(curve, args.roc)

    print(f"TPR at FPR {args.fpr} (threshold {report.threshold:.4f}), AUC {curve.auc:.4f}")
    print(f"{'Model':<24}{'Clean':>8}{'Noise':>8}{'Music':>8}{'All':>8}")
    print(_table_row('this run', report.to_dict()['tpr']))
    if args.with_baselines:
        reference = ConfigManager().load_reference_results()
        for name, tpr in reference['tpr'].items():
            print(_table_row(name, tpr) + f"  [{reference['label']}]")
    return 0


def cmd_roc_export(args):
    """Write plot-ready ROC points"""
    scores, frames = _scored_frames(args)
    curve = roc_curve(scores, frames)
    export_roc(curve, args.out)
    print(f"{len(curve.fpr)} ROC points, AUC {curve.auc:.6f} -> {args.out}")
    return 0


def cmd_cv(args):
    """Nested cross-validation with best/small model selection"""
    logger = create_cli_logger(args)
    config = ConfigManager()
    grid = config.load_grid(args.grid)
    if args.threshold is not None:
        grid.threshold = args.threshold
    threads = config.resolve_threads(args.threads)
    recordings = load_dataset(args.data)

    report = run_nested_cv(recordings, grid, args.outer, args.inner, args.seed, threads)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / 'report.csv')
    write_sweeps_json(report, out / 'sweeps.json')
    write_boxplot_csv(report, out / 'boxplot.csv')
    for fold in report.folds:
        save_model(fold.best_params_model, out / f'fold{fold.fold}_best.cblv')
        save_model(fold.small_params_model, out / f'fold{fold.fold}_small.cblv')

    print(f"{'Fold':<6}{'Best params':>12}{'Best acc':>10}{'Small params':>14}{'Small acc':>10}")
    for fold, best_params, best_acc, small_params, small_acc in report.rows():
        print(f"{fold:<6}{best_params:>12.0f}{best_acc:>10.4f}{small_params:>14.0f}{small_acc:>10.4f}")
    log_operation(logger, 'Cross-validation', 'success', f"results written to {out}")
    return 0


def cmd_params(args):
    """Parameter count and per-layer breakdown"""
    model_config = ConfigManager().load_model_config(args.model_config)
    for layer, count in layer_breakdown(model_config):
        print(f"  {layer:<10}{count:>10,}")
    print(f"Total: {count_params(model_config):,}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog='vadkit',
        description='VadKit - CNN-BiLSTM voice activity detection',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  vadkit features --in clip.wav --out clip.vfea
  vadkit train --data data/ --model-config model.yaml --train-config train.yaml --out vad.cblv
  vadkit predict --model vad.cblv --in clip.wav --out scores.csv
  vadkit eval --scores scores.csv --labels clip.csv --report report.json --with-baselines
  vadkit cv --data data/ --grid grid.yaml --out cv/
  vadkit params --model-config model.yaml
        """
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Log progress')
    parser.add_argument('--debug', action='store_true', help='Log debugging detail')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    features_parser = subparsers.add_parser('features', help='Extract a feature file from WAV audio')
    features_parser.add_argument('--in', dest='input', required=True, help='Input WAV file')
    features_parser.add_argument('--out', required=True, help='Output feature file')
    features_parser.add_argument('--rate', type=int, default=WORKING_RATE_HZ,
                                 help='Working sample rate (Hz); mel bands stop at half of it')

    train_parser = subparsers.add_parser('train', help='Train a model')
    train_parser.add_argument('--data', required=True, help='Directory of paired .vfea/.csv files')
    train_parser.add_argument('--model-config', required=True, help='Model configuration (YAML/JSON)')
    train_parser.add_argument('--train-config', required=True, help='Training configuration (YAML/JSON)')
    train_parser.add_argument('--out', required=True, help='Output model file')
    train_parser.add_argument('--val-data', help='Validation data directory')
    train_parser.add_argument('--history', help='History CSV (default: <out>.history.csv)')

    predict_parser = subparsers.add_parser('predict', help='Score audio with a trained model')
    predict_parser.add_argument('--model', required=True, help='Model file')
    predict_parser.add_argument('--in', dest='input', required=True, help='Input WAV file')
    predict_parser.add_argument('--out', required=True, help='Output scores CSV')

    eval_parser = subparsers.add_parser('eval', help='Evaluate frame scores against labels')
    eval_parser.add_argument('--scores', required=True, help='Scores CSV')
    eval_parser.add_argument('--labels', required=True, help='Label CSV')
    eval_parser.add_argument('--fpr', type=float, default=OPERATING_FPR, help='Operating false positive rate')
    eval_parser.add_argument('--report', help='Report JSON output')
    eval_parser.add_argument('--roc', help='ROC CSV output')
    eval_parser.add_argument('--with-baselines', action='store_true', help='Show published reference rows')

    cv_parser = subparsers.add_parser('cv', help='Nested cross-validation')
    cv_parser.add_argument('--data', required=True, help='Directory of paired .vfea/.csv files')
    cv_parser.add_argument('--grid', required=True, help='Sweep grid (YAML/JSON)')
    cv_parser.add_argument('--outer', type=int, default=10, help='Outer folds')
    cv_parser.add_argument('--inner', type=int, default=9, help='Inner folds')
    cv_parser.add_argument('--seed', type=int, default=0, help='Fold and training seed')
    cv_parser.add_argument('--out', required=True, help='Output directory')
    cv_parser.add_argument('--threshold', type=float, help='Accuracy gap that marks a high-impact axis')
    cv_parser.add_argument('--threads', type=int, help='Worker threads (default: $VADKIT_THREADS or CPU count)')

    params_parser = subparsers.add_parser('params', help='Count model parameters')
    params_parser.add_argument('--model-config', required=True, help='Model configuration (YAML/JSON)')

    roc_parser = subparsers.add_parser('roc-export', help='Export ROC points')
    roc_parser.add_argument('--scores', required=True, help='Scores CSV')
    roc_parser.add_argument('--labels', required=True, help='Label CSV')
    roc_parser.add_argument('--out', required=True, help='Output ROC CSV')

    return parser


COMMANDS = {
    'features': cmd_features,
    'train': cmd_train,
    'predict': cmd_predict,
    'eval': cmd_eval,
    'cv': cmd_cv,
    'params': cmd_params,
    'roc-export': cmd_roc_export,
}


def main(argv=None):
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 2

    logger = create_cli_logger(args)
    try:
        return COMMANDS[args.command](args)
    except VadKitError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{e}")
        return 2


if __name__ == '__main__':
    sys.exit(main())
