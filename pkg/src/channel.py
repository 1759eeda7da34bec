"""Rayleigh multipath channel, AWGN, carrier frequency/timing offsets and genie zero-forcing equalization."""

from dataclasses import dataclass, field

import numpy as np

from src.errors import ConfigError, ShapeError, SignalError, SingularChannelError
from src.ofdm import OfdmConfig

MIN_TAPS = 2
MAX_TAPS = 10
# |H(k)| at or below this makes zero-forcing refuse the bin.
SINGULAR_THRESHOLD = 1e-6


@dataclass(frozen=True)
class ChannelRealization:
    """A multipath channel: complex tap gains at integer sample delays, plus its response on the subcarrier grid."""

    taps: np.ndarray
    delays: np.ndarray
    n_subcarriers: int
    freq_response: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=complex).ravel()
        delays = np.asarray(self.delays, dtype=np.int64).ravel()
        if taps.size != delays.size or not taps.size:
            raise ShapeError('Got %i taps for %i delays' % (taps.size, delays.size))
        if delays.min() < 0 or np.unique(delays).size != delays.size:
            raise ConfigError('Tap delays must be distinct and non-negative')
        if delays.max() >= self.n_subcarriers:
            raise ConfigError('Tap delay %i does not fit a %i-point DFT' % (delays.max(), self.n_subcarriers))

        object.__setattr__(self, 'taps', taps)
        object.__setattr__(self, 'delays', delays)
        object.__setattr__(self, 'freq_response', np.fft.fft(self.impulse_response(), self.n_subcarriers))

    @classmethod
    def flat(cls, n_subcarriers: int, gain: complex = 1.0) -> 'ChannelRealization':
        return cls(np.array([gain]), np.array([0]), n_subcarriers)

    @property
    def n_taps(self) -> int:
        return self.taps.size

    @property
    def max_delay(self) -> int:
        return int(self.delays.max())

    def impulse_response(self) -> np.ndarray:
        """Taps laid out on the sample grid, zeros between them."""

        h = np.zeros(self.max_delay + 1, dtype=complex)
        h[self.delays] = self.taps
        return h


@dataclass(frozen=True)
class ImpairmentConfig:
    """Receiver-side impairments: normalized CFO (cycles per N samples), timing offset in samples and noise variance
    per complex time-domain sample."""

    cfo_normalized: float = 0.0
    timing_offset: int = 0
    noise_psd: float = 0.0

    def __post_init__(self):
        if abs(self.cfo_normalized) >= 0.5:
            raise ConfigError('Normalized CFO %g outside (-0.5, 0.5)' % self.cfo_normalized)
        if self.timing_offset < 0:
            raise ConfigError('Timing offset must be non-negative')
        if self.noise_psd < 0:
            raise ConfigError('Noise variance must be non-negative')


def rayleigh_gains(rng: np.random.Generator, delays, decay: float) -> np.ndarray:
    """Draws circular complex Gaussian tap gains whose power decays exponentially with delay. Not normalized."""

    power = np.exp(-np.asarray(delays, dtype=float) / decay)
    return np.sqrt(power / 2) * (rng.standard_normal(power.size) + 1j * rng.standard_normal(power.size))


def sample_channel(rng: np.random.Generator, cfg: OfdmConfig, n_taps: int = None) -> ChannelRealization:
    """Draws a unit-energy Rayleigh channel whose delay spread fits inside the cyclic prefix. The tap count is
    uniform over `MIN_TAPS..MAX_TAPS` unless `n_taps` fixes it."""

    if cfg.cp_len < 2:
        raise ConfigError('A multipath channel needs a cyclic prefix of at least 2 samples')
    if n_taps is None:
        n_taps = int(rng.integers(MIN_TAPS, MAX_TAPS + 1))
    elif n_taps < 1:
        raise ConfigError('A channel needs at least one tap')
    # Distinct delays below cp_len leave room for at most cp_len taps.
    n_taps = min(n_taps, cfg.cp_len)

    delays = np.concatenate(([0], np.sort(rng.choice(np.arange(1, cfg.cp_len), n_taps - 1, replace=False))))
    gains = rayleigh_gains(rng, delays, cfg.cp_len / 4)
    gains /= np.sqrt(np.sum(np.abs(gains) ** 2))
    return ChannelRealization(gains, delays, cfg.n_subcarriers)


def apply_channel(sig, ch: ChannelRealization) -> np.ndarray:
    """Linear convolution with the channel, truncated to the input length."""

    sig = np.asarray(sig, dtype=complex)
    return np.convolve(sig, ch.impulse_response())[:sig.size]


def awgn(sig, noise_psd: float, rng: np.random.Generator) -> np.ndarray:
    """Adds circular complex Gaussian noise of variance `noise_psd` per sample."""

    sig = np.asarray(sig, dtype=complex)
    noise = rng.standard_normal(sig.size) + 1j * rng.standard_normal(sig.size)
    return sig + np.sqrt(noise_psd / 2) * noise.reshape(sig.shape)


def add_awgn(sig, target_snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Adds noise so that the input's measured power over the noise variance equals `target_snr_db`."""

    sig = np.asarray(sig, dtype=complex)
    power = np.mean(np.abs(sig) ** 2) if sig.size else 0.0
    if power == 0:
        raise SignalError('Cannot set an SNR against a signal with zero power')
    return awgn(sig, power / 10 ** (target_snr_db / 10), rng)


def measured_snr_db(clean, noisy) -> float:
    """Power of `clean` over the power of `noisy - clean`, in dB."""

    clean = np.asarray(clean)
    return float(10 * np.log10(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(np.asarray(noisy) - clean) ** 2)))


def _check_timing(imp: ImpairmentConfig, cfg: OfdmConfig):
    if imp.timing_offset >= max(cfg.cp_len, 1):
        raise ConfigError('Timing offset %i must stay inside the %i-sample cyclic prefix'
                          % (imp.timing_offset, cfg.cp_len))


def apply_cfo(sig, imp: ImpairmentConfig, cfg: OfdmConfig) -> np.ndarray:
    """Delays the signal by the timing offset (zero-filled head) and rotates sample `n` by
    `exp(j 2 pi eps n / N)`."""

    _check_timing(imp, cfg)
    sig = np.asarray(sig, dtype=complex)
    delayed = np.zeros_like(sig)
    delayed[imp.timing_offset:] = sig[:sig.size - imp.timing_offset]
    n = np.arange(sig.size)
    return delayed * np.exp(2j * np.pi * imp.cfo_normalized * n / cfg.n_subcarriers)


def correct_common_phase(frame, imp: ImpairmentConfig, cfg: OfdmConfig) -> np.ndarray:
    """Removes the phase a known CFO accumulates up to the centre of each FFT window from a demodulated frame
    `[n_symbols, N]`. The leakage between subcarriers and the amplitude loss stay in the frame."""

    frame = np.asarray(frame, dtype=complex)
    if frame.ndim != 2 or frame.shape[1] != cfg.n_subcarriers:
        raise ShapeError('Expected a frame of %i subcarriers, got shape %s' % (cfg.n_subcarriers, frame.shape))
    centre = np.arange(frame.shape[0]) * cfg.symbol_len_samples + cfg.cp_len + (cfg.n_subcarriers - 1) / 2
    return frame * np.exp(-2j * np.pi * imp.cfo_normalized * centre / cfg.n_subcarriers)[:, None]


def per_subcarrier_snr(ch: ChannelRealization, imp: ImpairmentConfig, signal_power: float) -> np.ndarray:
    """SNR of every subcarrier in dB. `signal_power` is the mean time-domain transmit power per sample, so with the
    unnormalized synthesis it equals N times the symbol energy of a fully loaded frame."""

    if imp.noise_psd <= 0:
        raise ConfigError('Per-subcarrier SNR needs a positive noise variance')
    with np.errstate(divide='ignore'):
        return 10 * np.log10(signal_power * np.abs(ch.freq_response) ** 2 / imp.noise_psd)


def noise_for_mean_snr(ch: ChannelRealization, target_db: float, signal_power: float) -> float:
    """Noise variance that puts the mean per-subcarrier SNR (averaged in dB) at `target_db`. A channel with a
    spectral null yields an infinite variance."""

    with np.errstate(divide='ignore'):
        gain_db = 10 * np.log10(signal_power * np.abs(ch.freq_response) ** 2)
    mean_db = np.mean(gain_db)
    if not np.isfinite(mean_db):
        return np.inf
    return float(10 ** ((mean_db - target_db) / 10))


def equalize(frame, ch: ChannelRealization) -> np.ndarray:
    """Genie zero-forcing: divides every bin by the true channel response."""

    frame = np.asarray(frame, dtype=complex)
    h = ch.freq_response
    if frame.shape[-1] != h.size:
        raise ShapeError('Frame has %i subcarriers, channel has %i' % (frame.shape[-1], h.size))

    weak = np.flatnonzero(np.abs(h) <= SINGULAR_THRESHOLD)
    if weak.size:
        raise SingularChannelError(int(weak[0]), float(np.abs(h[weak[0]])))
    return frame / h


__all__ = ['ChannelRealization', 'ImpairmentConfig', 'MIN_TAPS', 'MAX_TAPS', 'rayleigh_gains', 'sample_channel',
           'apply_channel', 'awgn', 'add_awgn', 'measured_snr_db', 'apply_cfo', 'correct_common_phase', 'per_subcarrier_snr',
           'noise_for_mean_snr', 'equalize']
