"""
VadKit Exceptions

Custom exceptions for VadKit operations. Each class carries the exit code the
command line interface reports for it.
"""


class VadKitError(Exception):
    """Base exception for VadKit operations"""
    exit_code = 2


class AudioFormatError(VadKitError):
    """Malformed WAV container"""
    pass


class UnsupportedCodecError(VadKitError):
    """WAV encoding other than PCM16 or float32"""
    pass


class LabelParseError(VadKitError):
    """Label CSV row could not be parsed"""
    pass


class LabelValidationError(VadKitError):
    """Label track violates mutual exclusivity or ordering"""
    pass


class ConfigError(VadKitError):
    """Configuration operations error"""
    pass


class ShapeError(VadKitError, ValueError):
    """Tensor shapes do not agree"""
    pass


class ArgumentError(VadKitError, ValueError):
    """Invalid argument (empty sequence, bad fold counts, ...)"""
    pass


class AlignmentError(VadKitError):
    """Frame labels do not cover the feature timeline"""
    pass


class TrainingError(VadKitError):
    """Non-finite gradient or other optimizer failure"""
    pass


class DivergedTrainingError(TrainingError):
    """Training loss became non-finite"""

    def __init__(self, epoch, batch, loss):
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch} (loss={loss})")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ModelFormatError(VadKitError):
    """Binary file has the wrong magic or an unsupported version"""
    pass


class ModelCorruptionError(VadKitError):
    """Binary file payload is truncated or inconsistent"""
    pass


class SelectionError(VadKitError):
    """Hyperparameter selection had nothing to choose from"""
    pass


class DatasetError(VadKitError):
    """Data directory is empty or holds unpaired files"""
    pass


class MetricError(VadKitError):
    """Metric is undefined for the given labels"""
    exit_code = 3


class LeakageError(VadKitError):
    """Outer-test items leaked into an inner split"""
    exit_code = 4
