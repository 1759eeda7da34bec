"""Greedy (Hughes-Hartogs) bit loading under the SNR-gap approximation.

Loading `b` bits on a subcarrier with channel SNR `g` (at unit power) costs `P(b) = gap * (2**b - 1) / g`. The
greedy loop repeatedly grants one bit to the subcarrier whose next bit is cheapest, which is what correlates the
scheme of a subcarrier with the schemes of its neighbours."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from src.constellation import ModScheme
from src.errors import ConfigError, ShapeError

MAX_BITS = 6
MIN_DATASET_BITS = 2
TARGET_SER = 1e-3


def snr_gap(target_ser: float = TARGET_SER) -> float:
    """SNR gap of uncoded QAM at a target symbol error rate."""

    if not 0 < target_ser < 1:
        raise ConfigError('Target SER must lie in (0, 1)')
    return float(norm.isf(target_ser / 4) ** 2 / 3)


@dataclass(frozen=True)
class Allocation:
    """Per-subcarrier schemes and linear powers chosen by the bit loader."""

    schemes: tuple
    powers: np.ndarray
    bits: np.ndarray
    total_bits: int

    @property
    def labels(self) -> np.ndarray:
        """Class indices of the schemes; fails on `NULL` subcarriers."""

        return np.array([s.label for s in self.schemes], dtype=np.uint8)


def incremental_power(bits: int, snr_linear: float, gap: float) -> float:
    """Extra power needed to go from `bits - 1` to `bits` bits on a subcarrier."""

    if not 1 <= bits <= MAX_BITS:
        raise ConfigError('Bit count %i outside 1..%i' % (bits, MAX_BITS))
    if snr_linear <= 0:
        raise ConfigError('SNR must be positive')
    if gap < 1:
        raise ConfigError('SNR gap must be at least 1')
    return gap * ((2 ** bits - 1) - (2 ** (bits - 1) - 1)) / snr_linear


def greedy_allocate(snrs, power_budget: float, gap: float, max_bits: int = MAX_BITS,
                    dataset_mode: bool = False) -> Allocation:
    """Grants bits one at a time to the subcarrier with the cheapest next bit until the budget cannot pay for it or
    every subcarrier holds `max_bits`. Ties go to the lowest subcarrier index.

    A subcarrier left with a single bit has no QAM scheme: outside dataset mode it is rolled back to `NULL`; in
    dataset mode every subcarrier below 2 bits is raised to QAM4 and its power added, so the budget is only
    advisory there."""

    snrs = np.asarray(snrs, dtype=float).ravel()
    if not snrs.size:
        raise ShapeError('Cannot allocate bits over zero subcarriers')
    if np.any(snrs <= 0):
        raise ConfigError('Subcarrier SNRs must be positive')
    if power_budget <= 0:
        raise ConfigError('Power budget must be positive')
    if not 1 <= max_bits <= MAX_BITS:
        raise ConfigError('max_bits must lie in 1..%i' % MAX_BITS)
    if gap < 1:
        raise ConfigError('SNR gap must be at least 1')

    bits = np.zeros(snrs.size, dtype=np.int64)
    powers = np.zeros(snrs.size)
    remaining = power_budget
    while True:
        # Cost of the next bit is gap * 2**bits / snr.
        cost = np.where(bits < max_bits, gap * np.exp2(bits) / snrs, np.inf)
        k = int(np.argmin(cost))
        if not np.isfinite(cost[k]) or cost[k] > remaining:
            break
        bits[k] += 1
        powers[k] += cost[k]
        remaining -= cost[k]

    if dataset_mode:
        low = bits < MIN_DATASET_BITS
        bits[low] = MIN_DATASET_BITS
        powers[low] = gap * (2 ** MIN_DATASET_BITS - 1) / snrs[low]
    else:
        single = bits == 1
        bits[single] = 0
        powers[single] = 0.0

    schemes = tuple(ModScheme.from_bits(int(b)) for b in bits)
    return Allocation(schemes, powers, bits, int(sum(s.bits_per_symbol for s in schemes)))


__all__ = ['Allocation', 'MAX_BITS', 'TARGET_SER', 'snr_gap', 'incremental_power', 'greedy_allocate']
