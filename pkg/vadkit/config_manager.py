"""
VadKit Configuration Manager

Handles YAML/JSON configuration files for models, training runs and
cross-validation grids.
"""

import os
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from vadkit.crossval import AXES, DEFAULT_THRESHOLD, SweepGrid
from vadkit.exceptions import ConfigError
from vadkit.logger import setup_logger
from vadkit.model import SMALL_CONFIG, ModelConfig
from vadkit.training import TrainConfig

THREADS_ENV = 'VADKIT_THREADS'
REFERENCE_FILE = Path(__file__).parent / 'reference_results.yaml'

_INT_KEYS = {'conv1_width', 'conv2_width', 'dense_width', 'lstm_width', 'input_height',
             'input_width', 'batch_size', 'seq_len', 'epochs', 'seed'}
_FLOAT_KEYS = {'dropout_rate', 'learning_rate'}
_KERNEL_KEYS = {'conv1_kernel', 'conv2_kernel'}


class ConfigManager:
    """Reads and writes VadKit configuration files"""

    def __init__(self):
        self.logger = setup_logger(__name__)

    def _read(self, path):
        """Parse a YAML or JSON mapping"""
        try:
            with open(path, 'r') as f:
                data = yaml.safe_load(f)
        except FileNotFoundError:
            raise ConfigError(f"Configuration file not found: {path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse {path}: {e}")
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at the top level")
        return data

    def _write(self, data, path):
        try:
            with open(path, 'w') as f:
                yaml.safe_dump(data, f, sort_keys=False)
        except OSError as e:
            raise ConfigError(f"Failed to save {path}: {e}")
        self.logger.debug(f"Saved configuration to {path}")

    @staticmethod
    def _coerce(key, value):
        try:
            if key in _KERNEL_KEYS:
                if isinstance(value, (list, tuple)):
                    if len(value) != 2:
                        raise ValueError("expected two values")
                    return tuple(int(v) for v in value)
                return int(value), int(value)
            if key == 'bidirectional':
                if not isinstance(value, bool):
                    raise ValueError("expected true or false")
                return value
            if key in _INT_KEYS:
                if isinstance(value, bool) or int(value) != value:
                    raise ValueError("expected an integer")
                return int(value)
            if key in _FLOAT_KEYS:
                return float(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid value for '{key}': {value!r} ({e})")
        return value

    def _build(self, cls, data, defaults=None, source=''):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"{source}: unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
        values = asdict(defaults) if defaults is not None else {}
        values.update({key: self._coerce(key, value) for key, value in data.items()})
        return cls(**values)

    def load_model_config(self, path):
        return self._build(ModelConfig, self._read(path), source=str(path))

    def load_train_config(self, path):
        return self._build(TrainConfig, self._read(path), source=str(path))

    def save_model_config(self, config, path):
        data = asdict(config)
        for key in _KERNEL_KEYS:
            data[key] = list(data[key])
        self._write(data, path)

    def save_train_config(self, config, path):
        self._write(asdict(config), path)

    def load_grid(self, path):
        """Sweep axes plus the optional 'base' and 'threshold' entries"""
        data = dict(self._read(path))
        base = data.pop('base', None) or {}
        threshold = data.pop('threshold', DEFAULT_THRESHOLD)
        if not isinstance(base, dict):
            raise ConfigError(f"{path}: 'base' must be a mapping")

        model_keys = {f.name for f in fields(ModelConfig)}
        model_part = {k: v for k, v in base.items() if k in model_keys and k != 'dropout_rate'}
        train_part = {k: v for k, v in base.items() if k not in model_part}
        base_model = self._build(ModelConfig, model_part, SMALL_CONFIG, str(path))
        base_train = self._build(TrainConfig, train_part, TrainConfig(), str(path))

        unknown = set(data) - set(AXES)
        if unknown:
            raise ConfigError(f"{path}: unknown sweep axes: {', '.join(sorted(unknown))}")
        try:
            threshold = float(threshold)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: threshold must be a number, got {threshold!r}")
        return SweepGrid(data, base_model, base_train, threshold)

    def resolve_threads(self, override=None):
        """Worker cap from the override, VADKIT_THREADS, or the processor count"""
        raw = override if override is not None else os.environ.get(THREADS_ENV)
        if raw is None or raw == '':
            return os.cpu_count() or 1
        try:
            threads = int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        if threads < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        return threads

    def load_reference_results(self):
        """Shipped published reference numbers"""
        with open(REFERENCE_FILE, 'r') as f:
            return yaml.safe_load(f)
