"""Exception types raised by the toolkit. Each one also derives from the closest builtin, so callers can catch
either."""


class AmcError(Exception):
    """Base class of every error raised on purpose by this package."""


class ShapeError(AmcError, ValueError):
    """An input has the wrong length or dimensions."""


class ConfigError(AmcError, ValueError):
    """A configuration value, command flag or layer specification is invalid."""


class SignalError(AmcError, ValueError):
    """A signal cannot be processed, e.g. it carries no power."""


class SingularChannelError(AmcError, ArithmeticError):
    """The channel response is (nearly) zero in a frequency bin."""

    def __init__(self, bin_index: int, magnitude: float):
        super().__init__('Channel response in bin %i is singular (|H| = %.3g)' % (bin_index, magnitude))
        self.bin = bin_index
        self.magnitude = magnitude


class SnrFloorError(AmcError, RuntimeError):
    """No channel/noise draw satisfied the per-subcarrier SNR floor."""

    def __init__(self, index: int, redraws: int, floor_db: float):
        super().__init__('Capture %i: no draw kept every subcarrier above %.1f dB after %i redraws'
                         % (index, floor_db, redraws))
        self.index = index
        self.redraws = redraws
        self.floor_db = floor_db


class DatasetError(AmcError, OSError):
    """A dataset archive or manifest is missing, truncated or inconsistent."""


class CheckpointError(AmcError, OSError):
    """A checkpoint file is not in the expected format."""


class NumericError(AmcError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, msg: str, epoch: int = -1, batch: int = -1):
        super().__init__('%s (epoch %i, batch %i)' % (msg, epoch, batch))
        self.epoch = epoch
        self.batch = batch


__all__ = ['AmcError', 'ShapeError', 'ConfigError', 'SignalError', 'SingularChannelError', 'SnrFloorError',
           'DatasetError', 'CheckpointError', 'NumericError']
