"""Gray-coded QAM constellations and the bit mapper/demapper built on them."""

from enum import Enum
from functools import lru_cache

import numpy as np

from src.errors import ConfigError, ShapeError

# Bounds the size of the distance matrix built while demapping.
DEMAP_CHUNK = 1 << 15


class ModScheme(Enum):
    """Modulation schemes a subcarrier may carry. The value is the number of bits per symbol; `NULL` marks a
    subcarrier the bit-loading left unused."""

    NULL = 0
    QAM4 = 2
    QAM8 = 3
    QAM16 = 4
    QAM32 = 5
    QAM64 = 6

    @property
    def bits_per_symbol(self) -> int:
        return self.value

    @property
    def order(self) -> int:
        return 1 << self.value if self.value else 0

    @property
    def label(self) -> int:
        """Class index used by the classifiers (QAM4 -> 0 ... QAM64 -> 4)."""

        if self is ModScheme.NULL:
            raise ConfigError('The null scheme has no class index')
        return self.value - 2

    @classmethod
    def from_label(cls, label: int) -> 'ModScheme':
        if not 0 <= label < len(CLASSES):
            raise ConfigError('Class index %i out of range' % label)
        return CLASSES[label]

    @classmethod
    def from_bits(cls, bits: int) -> 'ModScheme':
        """Maps an allocated bit count to its scheme; anything below 2 bits is `NULL`."""

        if bits < 2:
            return cls.NULL
        if bits > 6:
            raise ConfigError('No scheme carries %i bits' % bits)
        return cls(bits)


CLASSES = (ModScheme.QAM4, ModScheme.QAM8, ModScheme.QAM16, ModScheme.QAM32, ModScheme.QAM64)
N_CLASSES = len(CLASSES)
CLASS_NAMES = [s.name for s in CLASSES]


def _axis_levels(n_bits: int) -> np.ndarray:
    """Amplitude of every bit word on one axis. Levels are counted from the most negative one, and level `i` carries
    the complement of the reflected Gray code of `i`."""

    n_levels = 1 << n_bits
    amps = np.empty(n_levels)
    for i in range(n_levels):
        word = ~(i ^ (i >> 1)) & (n_levels - 1)
        amps[word] = 2 * i - (n_levels - 1)
    return amps


def _split_bits(scheme: ModScheme):
    """Number of I and Q bits; I gets the extra bit of odd-order schemes."""

    n_i = (scheme.bits_per_symbol + 1) // 2
    return n_i, scheme.bits_per_symbol - n_i


def _check_scheme(scheme: ModScheme):
    if scheme is ModScheme.NULL:
        raise ConfigError('The null scheme carries no symbols')


@lru_cache(maxsize=None)
def _points(scheme: ModScheme) -> np.ndarray:
    n_i, n_q = _split_bits(scheme)
    words = np.arange(scheme.order)
    re = _axis_levels(n_i)[words >> n_q]
    im = _axis_levels(n_q)[words & ((1 << n_q) - 1)]

    if scheme is ModScheme.QAM32:
        # Fold the |I| = 7 columns of the 8x4 rectangle into the Q = +-5 arms of the cross.
        outer = np.abs(re) == 7
        re[outer], im[outer] = np.sign(re[outer]) * np.abs(im[outer]), np.sign(im[outer]) * 5

    pts = re + 1j * im
    pts /= np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.flags.writeable = False
    return pts


def constellation(scheme: ModScheme) -> np.ndarray:
    """Returns the unit-energy constellation of `scheme`, indexed by the integer value of the symbol's bits (MSB
    first, I bits before Q bits)."""

    _check_scheme(scheme)
    return _points(scheme)


@lru_cache(maxsize=None)
def _bit_table(scheme: ModScheme) -> np.ndarray:
    b = scheme.bits_per_symbol
    table = (np.arange(scheme.order)[:, None] >> np.arange(b - 1, -1, -1)) & 1
    table = table.astype(np.uint8)
    table.flags.writeable = False
    return table


def min_distance(scheme: ModScheme) -> float:
    """Smallest distance between two points of the unit-energy constellation."""

    pts = constellation(scheme)
    d = np.abs(pts[:, None] - pts[None, :])
    return float(d[~np.eye(len(pts), dtype=bool)].min())


def map_bits(bits, scheme: ModScheme) -> np.ndarray:
    """Maps a bit vector onto complex symbols of `scheme`."""

    _check_scheme(scheme)
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ShapeError('Bits must be 0 or 1')
    b = scheme.bits_per_symbol
    if bits.size % b:
        raise ShapeError('%i bits cannot be split into %s symbols of %i bits' % (bits.size, scheme.name, b))

    weights = 1 << np.arange(b - 1, -1, -1)
    return constellation(scheme)[bits.reshape(-1, b) @ weights]


def demap_symbols(symbols, scheme: ModScheme) -> np.ndarray:
    """Hard-decides each symbol to the nearest constellation point and returns the bits of those points. Ties go to
    the lowest point index."""

    pts = constellation(scheme)
    symbols = np.asarray(symbols, dtype=complex).ravel()
    idx = np.empty(symbols.size, dtype=np.int64)
    for start in range(0, symbols.size, DEMAP_CHUNK):
        chunk = symbols[start:start + DEMAP_CHUNK]
        idx[start:start + DEMAP_CHUNK] = np.argmin(np.abs(chunk[:, None] - pts[None, :]) ** 2, axis=1)
    return _bit_table(scheme)[idx].ravel()


__all__ = ['ModScheme', 'CLASSES', 'N_CLASSES', 'CLASS_NAMES', 'constellation', 'min_distance', 'map_bits',
           'demap_symbols']
