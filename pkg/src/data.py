"""Seeded capture generation and the on-disk dataset archive.

An archive is a directory holding `manifest.json` and `records.bin`. Every record is, little-endian: u32 N, u32 S,
f32 I/Q interleaved `[N, S, 2]`, u8 class labels `[N]`, f32 per-subcarrier SNRs in dB `[N]`. Sequence splits carry
no symbols, so their records have S = 0 and no I/Q block."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from os import cpu_count
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed
from torch.utils.data import Dataset

from src.bitloading import TARGET_SER, greedy_allocate, snr_gap
from src.channel import (MAX_TAPS, MIN_TAPS, ImpairmentConfig, apply_cfo, apply_channel, awgn,
                         correct_common_phase, equalize, noise_for_mean_snr, per_subcarrier_snr, sample_channel)
from src.common import MANIFEST_FILE, RECORDS_FILE, SPLIT_CODES, SPLITS
from src.constellation import CLASS_NAMES, ModScheme, map_bits
from src.errors import ConfigError, DatasetError, SnrFloorError
from src.models import iq_to_input
from src.ofdm import OfdmConfig, ofdm_demodulate, ofdm_modulate

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
JOBS = cpu_count() or 1
PROGRESS_STEPS = 10


@dataclass(frozen=True)
class DatasetConfig:
    """Everything that determines the bytes of an archive besides its seed, split and size."""

    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    snr_low_db: float = 5.0  # Range of the mean subcarrier SNR
    snr_high_db: float = 25.0
    snr_floor_db: float = 5.0  # Every subcarrier must reach this
    max_redraws: int = 100
    cfo_max: float = 0.01
    target_ser: float = TARGET_SER
    power_loading: bool = True

    def __post_init__(self):
        if not self.snr_low_db <= self.snr_high_db:
            raise ConfigError('SNR range [%g, %g] is empty' % (self.snr_low_db, self.snr_high_db))
        if self.max_redraws < 1:
            raise ConfigError('At least one channel draw per capture is required')
        if not 0 <= self.cfo_max < 0.5:
            raise ConfigError('CFO bound must lie in [0, 0.5)')

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> 'DatasetConfig':
        d = dict(d)
        ofdm = OfdmConfig(**d.pop('ofdm', {}))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError('Unknown dataset settings: %s' % ', '.join(sorted(unknown)))
        return cls(ofdm=ofdm, **d)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(blob.encode('utf-8')).hexdigest()


def symbols_per_capture(cfg: DatasetConfig, split: str) -> int:
    """Symbols stored per subcarrier: the configured count for CNN splits, none for sequence splits."""

    return cfg.ofdm.n_symbols if split.startswith('lwnn') else 0


@dataclass(frozen=True)
class Capture:
    """One simulated frame: equalized symbols `[N, S]`, class labels and channel SNRs per subcarrier."""

    index: int
    iq: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    n_taps: int = 0
    cfo_normalized: float = 0.0
    redraws: int = 0

    @property
    def n_subcarriers(self) -> int:
        return self.labels.size

    @property
    def schemes(self) -> list:
        return [ModScheme.from_label(int(i)) for i in self.labels]


def _check_split(split: str):
    if split not in SPLITS:
        raise ConfigError('Unknown split %r, expected one of %s' % (split, ', '.join(SPLITS)))


def allocate_from_snr(snr_db, cfg: DatasetConfig):
    """Dataset-mode bit loading over the stored per-subcarrier SNRs, with the whole frame's power as budget."""

    snr_lin = 10 ** (np.asarray(snr_db, dtype=np.float32).astype(np.float64) / 10)
    return greedy_allocate(snr_lin, float(cfg.ofdm.n_subcarriers), snr_gap(cfg.target_ser), dataset_mode=True)


def generate_capture(cfg: DatasetConfig, seed: int, split: str, index: int) -> Capture:
    """Simulates capture `index` of a split. The result depends only on `(cfg, seed, split, index)`."""

    _check_split(split)
    ofdm = cfg.ofdm
    rng = np.random.default_rng(np.random.SeedSequence([seed, SPLIT_CODES[split], index]))
    # A frame of unit-energy symbols on every subcarrier has this mean sample power.
    signal_power = float(ofdm.n_subcarriers)

    n_taps = int(rng.integers(MIN_TAPS, MAX_TAPS + 1))
    for redraw in range(cfg.max_redraws):
        ch = sample_channel(rng, ofdm, n_taps)
        noise_psd = noise_for_mean_snr(ch, rng.uniform(cfg.snr_low_db, cfg.snr_high_db), signal_power)
        cfo = rng.uniform(-cfg.cfo_max, cfg.cfo_max)
        if np.isfinite(noise_psd):
            imp = ImpairmentConfig(cfo_normalized=cfo, noise_psd=noise_psd)
            snr_db = per_subcarrier_snr(ch, imp, signal_power).astype(np.float32)
            if snr_db.min() >= cfg.snr_floor_db:
                break
        logger.debug('Capture %i: draw %i violates the %.1f dB floor, redrawing', index, redraw, cfg.snr_floor_db)
    else:
        raise SnrFloorError(index, cfg.max_redraws, cfg.snr_floor_db)

    alloc = allocate_from_snr(snr_db, cfg)
    n_symbols = symbols_per_capture(cfg, split)
    if not n_symbols:
        return Capture(index, np.zeros((ofdm.n_subcarriers, 0), dtype=complex), alloc.labels, snr_db, n_taps, cfo,
                       redraw)

    frame = np.empty(ofdm.frame_shape, dtype=complex)
    for k, scheme in enumerate(alloc.schemes):
        frame[:, k] = map_bits(rng.integers(0, 2, n_symbols * scheme.bits_per_symbol), scheme)
    if cfg.power_loading:
        frame *= np.sqrt(alloc.powers)

    sig = apply_channel(ofdm_modulate(frame, ofdm), ch)
    sig = awgn(sig, noise_psd, rng)
    # The receiver tracks the common phase per OFDM symbol; leakage from the residual CFO stays.
    rx = correct_common_phase(ofdm_demodulate(apply_cfo(sig, imp, ofdm), ofdm), imp, ofdm)
    rx = equalize(rx, ch)
    return Capture(index, rx.T.copy(), alloc.labels, snr_db, n_taps, cfo, redraw)


def record_dtype(n_subcarriers: int, n_symbols: int) -> np.dtype:
    """Structured dtype of one archive record."""

    cols = [('n', '<u4'), ('s', '<u4')]
    if n_symbols:
        cols.append(('iq', '<f4', (n_subcarriers, n_symbols, 2)))
    cols += [('labels', 'u1', (n_subcarriers,)), ('snr', '<f4', (n_subcarriers,))]
    return np.dtype(cols)


def encode_capture(capture: Capture) -> bytes:
    n, s = capture.iq.shape
    rec = np.zeros(1, dtype=record_dtype(n, s))
    rec['n'], rec['s'] = n, s
    if s:
        rec['iq'][0, ..., 0] = capture.iq.real
        rec['iq'][0, ..., 1] = capture.iq.imag
    rec['labels'][0] = capture.labels
    rec['snr'][0] = capture.snr_db
    return rec.tobytes()


def _capture_record(cfg: DatasetConfig, seed: int, split: str, index: int) -> bytes:
    return encode_capture(generate_capture(cfg, seed, split, index))


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    count: int
    seed: int
    config_hash: str
    config: dict
    format_version: int = FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + '\n'

    def write(self, out_dir: Path):
        (Path(out_dir) / MANIFEST_FILE).write_text(self.to_json())

    @classmethod
    def read(cls, out_dir) -> 'DatasetManifest':
        path = Path(out_dir) / MANIFEST_FILE
        try:
            manifest = cls(**json.loads(path.read_text()))
        except FileNotFoundError:
            raise DatasetError('No dataset manifest at %s' % path)
        except (json.JSONDecodeError, TypeError) as e:
            raise DatasetError('Corrupt dataset manifest %s: %s' % (path, e))
        if manifest.format_version != FORMAT_VERSION:
            raise DatasetError('%s has unsupported format version %i' % (path, manifest.format_version))
        return manifest

    @property
    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig.from_dict(self.config)

    def summary(self) -> str:
        return '%s: %i captures, seed %i, config %s' % (self.split, self.count, self.seed, self.config_hash[:12])


def generate_dataset(cfg: DatasetConfig, count: int, seed: int, split: str, out_dir, jobs: int = JOBS) \
        -> DatasetManifest:
    """Generates `count` captures into an archive at `out_dir`. Captures are simulated in parallel but written in
    index order, so the bytes do not depend on `jobs`."""

    _check_split(split)
    if count < 1:
        raise ConfigError('A dataset needs at least one capture, got %i' % count)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = Parallel(n_jobs=jobs, return_as='generator')(
        delayed(_capture_record)(cfg, seed, split, i) for i in range(count))
    step = max(1, count // PROGRESS_STEPS)
    with open(out_dir / RECORDS_FILE, 'wb') as fp:
        for i, rec in enumerate(records):
            fp.write(rec)
            if (i + 1) % step == 0 or i + 1 == count:
                logger.info('%s: %i/%i captures', split, i + 1, count)

    manifest = DatasetManifest(split, count, seed, cfg.config_hash, cfg.to_dict())
    manifest.write(out_dir)
    return manifest


def verify_manifest(out_dir, cfg: DatasetConfig = None) -> DatasetManifest:
    """Checks that the records on disk match the manifest's count and, when `cfg` is given, that the archive was
    generated from it."""

    manifest = DatasetManifest.read(out_dir)
    ds_cfg = manifest.dataset_config
    if ds_cfg.config_hash != manifest.config_hash:
        raise DatasetError('Manifest config does not match its hash')
    if cfg is not None and cfg.config_hash != manifest.config_hash:
        raise DatasetError('Archive was generated from a different configuration')

    dtype = record_dtype(ds_cfg.ofdm.n_subcarriers, symbols_per_capture(ds_cfg, manifest.split))
    path = Path(out_dir) / RECORDS_FILE
    if not path.is_file():
        raise DatasetError('Missing records file %s' % path)
    size = path.stat().st_size
    if size != manifest.count * dtype.itemsize:
        raise DatasetError('%s holds %i bytes, manifest promises %i records of %i bytes'
                           % (path, size, manifest.count, dtype.itemsize))
    return manifest


class CaptureStore:
    """Read-only, memory-mapped view of an archive."""

    manifest: DatasetManifest
    config: DatasetConfig
    __records: np.ndarray

    def __init__(self, path):
        self.path = Path(path)
        self.manifest = verify_manifest(self.path)
        self.config = self.manifest.dataset_config
        dtype = record_dtype(self.n_subcarriers, self.input_len)
        self.__records = np.memmap(self.path / RECORDS_FILE, dtype=dtype, mode='r', shape=(self.manifest.count,))

        bad = (self.__records['n'] != self.n_subcarriers) | (self.__records['s'] != self.input_len)
        if bad.any():
            raise DatasetError('Record %i of %s has an unexpected header' % (int(np.argmax(bad)), self.path))

    def __len__(self) -> int:
        return self.manifest.count

    @property
    def split(self) -> str:
        return self.manifest.split

    @property
    def n_subcarriers(self) -> int:
        return self.config.ofdm.n_subcarriers

    @property
    def input_len(self) -> int:
        return symbols_per_capture(self.config, self.manifest.split)

    @property
    def labels(self) -> np.ndarray:
        """Class labels of every capture, `[count, N]`."""

        return np.asarray(self.__records['labels'])

    @property
    def snr_db(self) -> np.ndarray:
        return np.asarray(self.__records['snr'])

    def iq(self, index: int, subcarriers=slice(None)) -> np.ndarray:
        """Complex symbols of a capture, `[N, S]` or the selected subcarriers."""

        if not self.input_len:
            raise DatasetError('%s split stores no symbols' % self.split)
        block = self.__records['iq'][index][subcarriers]
        return block[..., 0].astype(np.float64) + 1j * block[..., 1]

    def capture(self, index: int) -> Capture:
        iq = self.iq(index) if self.input_len else np.zeros((self.n_subcarriers, 0), dtype=complex)
        return Capture(index, iq, self.labels[index].copy(), self.snr_db[index].copy())

    def subcarrier_table(self) -> pd.DataFrame:
        """One row per (capture, subcarrier) with its label, scheme name and SNR."""

        count, n = len(self), self.n_subcarriers
        labels = self.labels.ravel()
        return pd.DataFrame({
            'capture': np.repeat(np.arange(count), n),
            'subcarrier': np.tile(np.arange(n), count),
            'label': labels,
            'scheme': pd.Categorical.from_codes(labels, CLASS_NAMES),
            'snr_db': self.snr_db.ravel(),
        })


class SubcarrierDataset(Dataset):
    """(I/Q input, label) pairs, one per subcarrier of the selected captures."""

    def __init__(self, store: CaptureStore, captures=None, subcarriers=None):
        if not store.input_len:
            raise DatasetError('%s split cannot feed the CNN' % store.split)
        self.store = store
        captures = np.arange(len(store)) if captures is None else np.asarray(captures)
        subcarriers = np.arange(store.n_subcarriers) if subcarriers is None else np.asarray(subcarriers)
        self.__index = np.stack(np.meshgrid(captures, subcarriers, indexing='ij'), axis=-1).reshape(-1, 2)

    @property
    def input_len(self) -> int:
        return self.store.input_len

    def __len__(self):
        return len(self.__index)

    def __getitem__(self, i):
        c, k = self.__index[i]
        x = iq_to_input(self.store.iq(int(c), int(k)))
        return torch.from_numpy(x), torch.tensor(int(self.store.labels[c, k]), dtype=torch.long)


class SequenceDataset(Dataset):
    """(even-subcarrier classes, odd-subcarrier classes) pairs, one per capture."""

    def __init__(self, store: CaptureStore, captures=None):
        if store.n_subcarriers % 2:
            raise DatasetError('Scheme sequences need an even number of subcarriers')
        labels = store.labels.astype(np.int64)
        if captures is not None:
            labels = labels[np.asarray(captures)]
        self.n_subcarriers = store.n_subcarriers
        self.__even = torch.from_numpy(np.ascontiguousarray(labels[:, 0::2]))
        self.__odd = torch.from_numpy(np.ascontiguousarray(labels[:, 1::2]))

    def __len__(self):
        return len(self.__even)

    def __getitem__(self, i):
        return self.__even[i], self.__odd[i]


__all__ = ['DatasetConfig', 'DatasetManifest', 'Capture', 'CaptureStore', 'SubcarrierDataset', 'SequenceDataset',
           'FORMAT_VERSION', 'JOBS', 'symbols_per_capture', 'allocate_from_snr', 'generate_capture', 'record_dtype',
           'encode_capture', 'generate_dataset', 'verify_manifest']
