"""
VadKit Nested Cross-Validation

Outer folds give test estimates; inner folds, drawn only from each outer-train
set, score one-axis-at-a-time sweeps around a base configuration. Each outer
fold then trains a best and a small model on its full training set.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from vadkit.exceptions import ArgumentError, ConfigError, LeakageError, SelectionError, TrainingError, VadKitError
from vadkit.logger import log_operation, setup_logger
from vadkit.model import SMALL_CONFIG, ModelConfig, count_params
from vadkit.training import TrainConfig, accuracy, make_examples, train

logger = setup_logger(__name__)

SIZE_AXES = ('conv1_kernel', 'conv1_width', 'conv2_kernel', 'conv2_width',
             'dense_width', 'lstm_width', 'bidirectional')
TRAIN_AXES = ('dropout', 'batch_size', 'seq_len')
AXES = SIZE_AXES + TRAIN_AXES
KERNEL_AXES = ('conv1_kernel', 'conv2_kernel')
DEFAULT_THRESHOLD = 0.01


def normalize_value(axis, value):
    if axis in KERNEL_AXES:
        if isinstance(value, (int, np.integer)):
            return int(value), int(value)
        return tuple(int(v) for v in value)
    if axis == 'bidirectional':
        if not isinstance(value, (bool, np.bool_)):
            raise ConfigError(f"bidirectional values must be true/false, got {value!r}")
        return bool(value)
    if axis == 'dropout':
        return float(value)
    return int(value)


def value_label(value):
    if isinstance(value, tuple):
        return 'x'.join(str(v) for v in value)
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return str(value)


def _literal_key(value):
    if isinstance(value, tuple):
        return (int(np.prod(value)),) + value
    return (value,)


@dataclass
class SweepGrid:
    axes: Dict[str, list]
    base_model: ModelConfig = SMALL_CONFIG
    base_train: TrainConfig = TrainConfig()
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        unknown = set(self.axes) - set(AXES)
        if unknown:
            raise ConfigError(f"Unknown sweep axes: {', '.join(sorted(unknown))}")
        normalized = {}
        for axis in AXES:
            if axis not in self.axes:
                continue
            values = self.axes[axis]
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigError(f"Sweep axis '{axis}' needs a non-empty list of values")
            normalized[axis] = [normalize_value(axis, v) for v in values]
        self.axes = normalized
        if not self.axes:
            raise ConfigError("Sweep grid has no axes")
        if self.threshold < 0:
            raise ConfigError(f"threshold must be non-negative, got {self.threshold}")


def apply_axis(model_cfg, train_cfg, axis, value):
    """Configs with one axis set to value"""
    if axis == 'dropout':
        return model_cfg, replace(train_cfg, dropout_rate=value)
    if axis in ('batch_size', 'seq_len'):
        return model_cfg, replace(train_cfg, **{axis: value})
    return replace(model_cfg, **{axis: value}), train_cfg


@dataclass
class FoldPlan:
    k_outer: int
    k_inner: int
    seed: int
    outer: np.ndarray
    inner: List[np.ndarray]

    @property
    def n_items(self):
        return len(self.outer)

    def outer_test(self, fold):
        return np.flatnonzero(self.outer == fold)

    def outer_train(self, fold):
        return np.flatnonzero(self.outer != fold)

    def inner_split(self, fold, inner_fold):
        """(inner-train, inner-val) item indices of one outer fold"""
        train_items = self.outer_train(fold)
        assignment = self.inner[fold]
        return train_items[assignment != inner_fold], train_items[assignment == inner_fold]


def make_folds(n_items, k_outer, k_inner, seed) -> FoldPlan:
    """Seeded shuffle then round-robin fold assignment"""
    if k_outer < 2 or n_items < k_outer:
        raise ArgumentError(f"Need n_items >= k_outer >= 2, got n_items={n_items}, k_outer={k_outer}")
    if k_inner < 2:
        raise ArgumentError(f"k_inner must be at least 2, got {k_inner}")

    rng = np.random.default_rng(seed)
    outer = np.empty(n_items, dtype=np.int64)
    outer[rng.permutation(n_items)] = np.arange(n_items) % k_outer

    inner = []
    for fold in range(k_outer):
        train_items = np.flatnonzero(outer != fold)
        if k_inner > len(train_items):
            raise ArgumentError(
                f"k_inner={k_inner} exceeds the {len(train_items)} training items of outer fold {fold}")
        if k_inner == k_outer - 1:
            remaining = [g for g in range(k_outer) if g != fold]
            assignment = np.array([remaining.index(g) for g in outer[train_items]], dtype=np.int64)
        else:
            inner_rng = np.random.default_rng([seed, fold])
            assignment = np.empty(len(train_items), dtype=np.int64)
            assignment[inner_rng.permutation(len(train_items))] = np.arange(len(train_items)) % k_inner
        inner.append(assignment)
    return FoldPlan(k_outer, k_inner, seed, outer, inner)


def assert_no_leakage(plan):
    """Inner splits must partition exactly the outer-train items of their fold"""
    for fold in range(plan.k_outer):
        test = set(plan.outer_test(fold).tolist())
        train_items = set(plan.outer_train(fold).tolist())
        seen = set()
        for inner_fold in range(plan.k_inner):
            inner_train, inner_val = plan.inner_split(fold, inner_fold)
            leaked = test & (set(inner_train.tolist()) | set(inner_val.tolist()))
            if leaked:
                raise LeakageError(
                    f"Outer fold {fold}: test items {sorted(leaked)} appear in inner fold {inner_fold}")
            seen |= set(inner_val.tolist())
        if seen != train_items:
            raise LeakageError(f"Outer fold {fold}: inner folds do not partition the outer-train items")


def derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class ValueResult:
    axis: str
    value: object
    folds: List[int] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)
    failed: int = 0

    def _quantile(self, q):
        return float(np.percentile(self.accuracies, q)) if self.accuracies else float('nan')

    @property
    def median(self):
        return self._quantile(50)

    @property
    def q1(self):
        return self._quantile(25)

    @property
    def q3(self):
        return self._quantile(75)


@dataclass
class SweepResult:
    outer_fold: int
    base_model: ModelConfig
    base_train: TrainConfig
    axes: Dict[str, List[ValueResult]] = field(default_factory=dict)

    def cell(self, axis, value):
        for result in self.axes.get(axis, []):
            if result.value == value:
                return result
        raise KeyError((axis, value))


class _ExampleCache:
    """make_examples per (recording, seq_len), built once before cells run"""

    def __init__(self, recordings):
        self.recordings = recordings
        self._cache = {}

    def prepare(self, seq_len):
        for idx, rec in enumerate(self.recordings):
            if (idx, seq_len) not in self._cache:
                self._cache[idx, seq_len] = make_examples(rec.features, rec.frames, seq_len)

    def examples(self, indices, seq_len):
        out = []
        for idx in indices:
            out.extend(self._cache[int(idx), seq_len])
        return out


def _run_cell(plan, cache, outer_fold, inner_fold, model_cfg, train_cfg):
    inner_train, inner_val = plan.inner_split(outer_fold, inner_fold)
    train_examples = cache.examples(inner_train, train_cfg.seq_len)
    val_examples = cache.examples(inner_val, train_cfg.seq_len)
    params, _ = train(train_examples, model_cfg, train_cfg)
    return accuracy(params, val_examples)


def _sweep(outer_fold, axes, base_model, base_train, cache, plan, seed, threads):
    jobs = []
    for axis, values in axes.items():
        axis_idx = AXES.index(axis)
        for value_idx, value in enumerate(values):
            model_cfg, train_cfg = apply_axis(base_model, base_train, axis, value)
            model_cfg.feature_shapes()
            cache.prepare(train_cfg.seq_len)
            for inner_fold in range(plan.k_inner):
                cell_train = replace(train_cfg, seed=derive_seed(seed, outer_fold, axis_idx, value_idx, inner_fold))
                jobs.append((axis, value_idx, inner_fold, model_cfg, cell_train))

    def run(job):
        axis, value_idx, inner_fold, model_cfg, train_cfg = job
        try:
            acc = _run_cell(plan, cache, outer_fold, inner_fold, model_cfg, train_cfg)
            logger.info(f"Fold {outer_fold}.{inner_fold} {axis}={value_label(axes[axis][value_idx])}: acc={acc:.4f}")
            return acc
        except (TrainingError, ArgumentError) as e:
            log_operation(logger, f"Sweep cell fold {outer_fold}.{inner_fold} {axis}="
                                  f"{value_label(axes[axis][value_idx])}", 'warning', e)
            return None

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(run, jobs))

    result = SweepResult(outer_fold, base_model, base_train,
                         {axis: [ValueResult(axis, v) for v in values] for axis, values in axes.items()})
    for (axis, value_idx, inner_fold, _, _), acc in zip(jobs, outcomes):
        cell = result.axes[axis][value_idx]
        if acc is None:
            cell.failed += 1
        else:
            cell.folds.append(inner_fold)
            cell.accuracies.append(acc)
    failed = sum(c.failed for cells in result.axes.values() for c in cells)
    if failed:
        logger.warning(f"Outer fold {outer_fold}: {failed} sweep cell(s) failed and were excluded")
    return result


def sweep_axis(outer_fold, axis, values, base_model, base_train, recordings, plan, seed=0, threads=1):
    """Inner-fold validation accuracies for each value of one axis, other axes at base"""
    if axis not in AXES:
        raise ConfigError(f"Unknown sweep axis '{axis}'")
    values = [normalize_value(axis, v) for v in values]
    result = _sweep(outer_fold, {axis: values}, base_model, base_train,
                    _ExampleCache(recordings), plan, seed, threads)
    return result.axes[axis]


def run_sweep(outer_fold, grid, recordings, plan, seed=0, threads=1) -> SweepResult:
    return _sweep(outer_fold, grid.axes, grid.base_model, grid.base_train,
                  _ExampleCache(recordings), plan, seed, threads)


def _valid_cells(results, axis):
    cells = [c for c in results.axes[axis] if c.accuracies]
    if not cells:
        raise SelectionError(f"Axis '{axis}' has no successful sweep cells")
    return cells


def _params_with(model_cfg, train_cfg, axis, value):
    return count_params(apply_axis(model_cfg, train_cfg, axis, value)[0])


def select_best(results: SweepResult) -> Tuple[ModelConfig, TrainConfig]:
    """Highest median per axis; ties go to fewer parameters, then the smaller value"""
    model_cfg, train_cfg = results.base_model, results.base_train
    chosen = {}
    for axis in results.axes:
        cells = _valid_cells(results, axis)
        best = min(cells, key=lambda c: (-c.median,
                                         _params_with(results.base_model, results.base_train, axis, c.value),
                                         _literal_key(c.value)))
        chosen[axis] = best.value
    for axis, value in chosen.items():
        model_cfg, train_cfg = apply_axis(model_cfg, train_cfg, axis, value)
    return model_cfg, train_cfg


def select_small(results: SweepResult, threshold=DEFAULT_THRESHOLD) -> Tuple[ModelConfig, TrainConfig]:
    """Best values on high-impact axes, smallest-model values on the other size axes"""
    model_cfg, train_cfg = select_best(results)
    for axis in results.axes:
        if axis not in SIZE_AXES:
            continue
        cells = _valid_cells(results, axis)
        medians = [c.median for c in cells]
        if max(medians) - min(medians) > threshold:
            continue
        smallest = min(cells, key=lambda c: (_params_with(model_cfg, train_cfg, axis, c.value),
                                             _literal_key(c.value)))
        model_cfg, train_cfg = apply_axis(model_cfg, train_cfg, axis, smallest.value)
    return model_cfg, train_cfg


def direction_comparison(results: SweepResult):
    """Paired per-inner-fold accuracies of unidirectional vs bidirectional LSTMs"""
    if 'bidirectional' not in results.axes:
        raise SelectionError("Sweep has no 'bidirectional' axis")
    try:
        uni, bi = results.cell('bidirectional', False), results.cell('bidirectional', True)
    except KeyError:
        raise SelectionError("The 'bidirectional' axis must sweep both false and true")
    uni_by_fold = dict(zip(uni.folds, uni.accuracies))
    bi_by_fold = dict(zip(bi.folds, bi.accuracies))
    folds = sorted(uni_by_fold.keys() & bi_by_fold.keys())
    unidirectional = [uni_by_fold[f] for f in folds]
    bidirectional = [bi_by_fold[f] for f in folds]
    gap = float(np.median(np.subtract(bidirectional, unidirectional))) if folds else float('nan')
    return {'folds': folds, 'unidirectional': unidirectional, 'bidirectional': bidirectional,
            'median_gap': gap}


@dataclass
class FoldResult:
    fold: int
    sweep: SweepResult
    best_model: ModelConfig
    best_train: TrainConfig
    small_model: ModelConfig
    small_train: TrainConfig
    best_acc: float
    small_acc: float
    best_params_model: object = None
    small_params_model: object = None

    @property
    def best_params(self):
        return count_params(self.best_model)

    @property
    def small_params(self):
        return count_params(self.small_model)


@dataclass
class NestedCvReport:
    plan: FoldPlan
    folds: List[FoldResult]

    def rows(self):
        """Per-fold rows followed by the mean and sample standard deviation rows"""
        table = np.array([[f.best_params, f.best_acc, f.small_params, f.small_acc] for f in self.folds],
                         dtype=np.float64)
        rows = [[str(f.fold), f.best_params, f.best_acc, f.small_params, f.small_acc] for f in self.folds]
        std = table.std(axis=0, ddof=1) if len(table) > 1 else np.zeros(4)
        rows.append(['mean', *table.mean(axis=0).tolist()])
        rows.append(['std', *std.tolist()])
        return rows


def _train_and_test(plan, cache, fold, model_cfg, train_cfg, seed, tag):
    cache.prepare(train_cfg.seq_len)
    train_examples = cache.examples(plan.outer_train(fold), train_cfg.seq_len)
    test_examples = cache.examples(plan.outer_test(fold), train_cfg.seq_len)
    try:
        params, _ = train(train_examples, model_cfg, replace(train_cfg, seed=derive_seed(seed, fold, tag)))
        return params, accuracy(params, test_examples)
    except VadKitError as e:
        raise TrainingError(f"Outer fold {fold}: {e}") from e


def run_nested_cv(recordings, grid, k_outer=10, k_inner=9, seed=0, threads=1) -> NestedCvReport:
    plan = make_folds(len(recordings), k_outer, k_inner, seed)
    assert_no_leakage(plan)
    cache = _ExampleCache(recordings)

    folds = []
    for fold in range(k_outer):
        sweep = _sweep(fold, grid.axes, grid.base_model, grid.base_train, cache, plan, seed, threads)
        best_model, best_train = select_best(sweep)
        small_model, small_train = select_small(sweep, grid.threshold)
        best_params, best_acc = _train_and_test(plan, cache, fold, best_model, best_train, seed, 1)
        small_params, small_acc = _train_and_test(plan, cache, fold, small_model, small_train, seed, 2)
        folds.append(FoldResult(fold, sweep, best_params.config, best_train, small_params.config,
                                small_train, best_acc, small_acc, best_params, small_params))
        log_operation(logger, f"Outer fold {fold}", 'info',
                      f"best {count_params(best_model)} params acc={best_acc:.4f}, "
                      f"small {count_params(small_model)} params acc={small_acc:.4f}")
    return NestedCvReport(plan, folds)


# Report files

def write_report_csv(report, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['fold', 'best_params', 'best_acc', 'small_params', 'small_acc'])
        for fold, best_params, best_acc, small_params, small_acc in report.rows():
            writer.writerow([fold, best_params, repr(float(best_acc)), small_params, repr(float(small_acc))])


def _config_dict(model_cfg, train_cfg):
    out = {axis: value_label(getattr(model_cfg, axis)) for axis in SIZE_AXES}
    out.update(dropout=train_cfg.dropout_rate, batch_size=train_cfg.batch_size, seq_len=train_cfg.seq_len)
    return out


def write_sweeps_json(report, path):
    data = []
    for fold in report.folds:
        data.append({
            'fold': fold.fold,
            'best': _config_dict(fold.best_model, fold.best_train),
            'small': _config_dict(fold.small_model, fold.small_train),
            'axes': {axis: [{'value': value_label(c.value), 'folds': c.folds, 'accuracies': c.accuracies,
                             'failed': c.failed, 'median': c.median, 'q1': c.q1, 'q3': c.q3}
                            for c in cells]
                     for axis, cells in fold.sweep.axes.items()},
        })
    with open(path, 'w') as f:
        json.dump({'k_outer': report.plan.k_outer, 'k_inner': report.plan.k_inner,
                   'seed': report.plan.seed, 'folds': data}, f, indent=2)
        f.write('\n')


def write_boxplot_csv(report, path):
    """One row per successful inner-fold cell"""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['outer_fold', 'axis', 'value', 'fold', 'accuracy'])
        for fold in report.folds:
            for axis, cells in fold.sweep.axes.items():
                for cell in cells:
                    for inner_fold, acc in zip(cell.folds, cell.accuracies):
                        writer.writerow([fold.fold, axis, value_label(cell.value), inner_fold, repr(float(acc))])
