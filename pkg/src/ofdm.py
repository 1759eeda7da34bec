"""CP-OFDM modulation and demodulation.

A frequency-domain frame is a complex array of shape `(n_symbols, n_subcarriers)`; entry `(m, k)` is the symbol on
subcarrier `k` of OFDM symbol `m`. A time signal is a flat complex array of whole CP-OFDM symbols. Synthesis is the
plain sum over subcarriers, so the 1/N factor sits on the analysis side and the pair is exactly inverse."""

from dataclasses import dataclass

import numpy as np

from src.errors import ConfigError, ShapeError


@dataclass(frozen=True)
class OfdmConfig:
    """Frame arithmetic of an OFDM system."""

    n_subcarriers: int = 64
    cp_len: int = 16
    n_symbols: int = 1024  # OFDM symbols per capture, i.e. symbols carried by each subcarrier
    bandwidth_hz: float = 20e6

    def __post_init__(self):
        n = self.n_subcarriers
        if n < 2 or n & (n - 1):
            raise ConfigError('Number of subcarriers must be a power of two, got %i' % n)
        if not 0 <= self.cp_len < n:
            raise ConfigError('Cyclic prefix length %i must be in [0, %i)' % (self.cp_len, n))
        if self.n_symbols < 1:
            raise ConfigError('A capture needs at least one OFDM symbol')
        if self.bandwidth_hz <= 0:
            raise ConfigError('Bandwidth must be positive')

    @property
    def symbol_len_samples(self) -> int:
        return self.n_subcarriers + self.cp_len

    @property
    def frame_shape(self) -> tuple:
        return self.n_symbols, self.n_subcarriers

    @property
    def signal_len_samples(self) -> int:
        return self.n_symbols * self.symbol_len_samples

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.n_subcarriers


def _check_frame(frame: np.ndarray, cfg: OfdmConfig):
    if frame.shape != cfg.frame_shape:
        raise ShapeError('Frame has shape %s, config expects %s' % (frame.shape, cfg.frame_shape))


def ofdm_modulate(frame, cfg: OfdmConfig) -> np.ndarray:
    """Synthesizes each OFDM symbol, prepends its cyclic prefix and concatenates the symbols."""

    frame = np.asarray(frame, dtype=complex)
    _check_frame(frame, cfg)

    # numpy's inverse FFT carries 1/N, the synthesis sum does not.
    body = cfg.n_subcarriers * np.fft.ifft(frame, axis=1)
    cp = body[:, body.shape[1] - cfg.cp_len:]
    return np.concatenate((cp, body), axis=1).ravel()


def ofdm_demodulate(sig, cfg: OfdmConfig) -> np.ndarray:
    """Strips the cyclic prefixes and analyses each symbol back into a frame."""

    sig = np.asarray(sig, dtype=complex)
    if sig.ndim != 1 or sig.size != cfg.signal_len_samples:
        raise ShapeError('Signal of %i samples does not hold %i symbols of %i samples'
                         % (sig.size, cfg.n_symbols, cfg.symbol_len_samples))

    body = sig.reshape(cfg.n_symbols, cfg.symbol_len_samples)[:, cfg.cp_len:]
    return np.fft.fft(body, axis=1) / cfg.n_subcarriers


def extract_subcarrier(frame, k: int) -> np.ndarray:
    """Returns the symbol sequence carried by subcarrier `k`."""

    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ShapeError('Expected a 2-D frame, got %i dimensions' % frame.ndim)
    if not 0 <= k < frame.shape[1]:
        raise ShapeError('Subcarrier %i out of range [0, %i)' % (k, frame.shape[1]))
    return frame[:, k].copy()


def assemble_frame(columns) -> np.ndarray:
    """Stacks per-subcarrier sequences back into a frame; the inverse of `extract_subcarrier` over all `k`."""

    return np.column_stack([np.asarray(c, dtype=complex) for c in columns])


__all__ = ['OfdmConfig', 'ofdm_modulate', 'ofdm_demodulate', 'extract_subcarrier', 'assemble_frame']
