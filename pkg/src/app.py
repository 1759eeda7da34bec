import filecmp
import json
import logging
import os
import tempfile
import time
from functools import wraps
from pathlib import Path

import pandas as pd
import torch

from src.common import *
from src.data import CaptureStore, DatasetConfig, SequenceDataset, SubcarrierDataset, generate_dataset
from src.errors import ConfigError, DatasetError
from src.metrics import (complexity_table, confusion_by_snr, confusion_table, flops_reduction_report, pcc,
                         pcc_by_snr, predict_store, reduction_from_costs)
from src.models import TrainConfig, build_lwnn, build_rnnbc, load_model, save_model, train_lwnn, train_rnnbc
from src.nn import count_flops
from src.ofdm import OfdmConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    'ofdm': {
        'n_subcarriers': 64,
        'cp_len': 16,
        'n_symbols': 1024,
        'bandwidth_hz': 20e6
    },
    'channel': {
        'snr_low_db': 5.0,
        'snr_high_db': 25.0,
        'snr_floor_db': 5.0,
        'max_redraws': 100,
        'cfo_max': 0.01
    },
    'bitloading': {
        'target_ser': 1e-3,
        'power_loading': True
    },
    'dataset': {
        'lwnn-train': 50_000,
        'lwnn-test': 10_000,
        'rnnbc-train': 10_000,
        'rnnbc-test': 2_500
    },
    MODEL_LWNN: {
        'lr': 1e-3,
        'batch_size': 64,
        'epochs': 10,
        'patience': 5
    },
    MODEL_RNNBC: {
        'lr': 1e-5,
        'batch_size': 32,
        'epochs': 10,
        'patience': 5
    },
    'run': {
        'seed': 0,
        'val_fraction': 0.1
    }
}

STATUS_MSGS = {
    STATUS_READY: 'Ready.',
    STATUS_GENERATE: 'Generating dataset...',
    STATUS_VERIFY: 'Regenerating dataset for comparison...',
    STATUS_TRAIN: 'Training...',
    STATUS_EVAL: 'Evaluating...',
    STATUS_FLOPS: 'Counting FLOPs...'
}

RUNS_DIR = 'runs'
PREDICTIONS_FILE = 'predictions.csv'
SUMMARY_FILE = 'summary.csv'
PCC_FILE = 'pcc_by_snr.csv'
CONFUSION_FILE = 'confusion.csv'
COMPLEXITY_FILE = 'complexity.csv'
REDUCTION_FILE = 'flops_reduction.csv'


def flatten(nested: dict) -> dict:
    """Turns `{'section': {'key': v}}` into `{'section.key': v}`."""

    return {'%s.%s' % (section, key): value for section, keys in nested.items() for key, value in keys.items()}


def coerce(key: str, value, default):
    """Converts `value` to the type of the default setting of `key`. Strings are read as JSON first, so command-line
    overrides may be written bare."""

    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError('Setting %s: cannot parse %r' % (key, value))

    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(value, type(default)):
        return value
    raise ConfigError('Setting %s expects a %s, got %r' % (key, type(default).__name__, value))


def parse_override(item: str) -> tuple:
    key, sep, value = item.partition('=')
    if not sep or not key.strip():
        raise ConfigError('Override %r is not of the form key=value' % item)
    return key.strip(), value.strip()


def resolve_config(path=None, overrides=()) -> dict:
    """Defaults, overlaid by the flat JSON file at `path`, overlaid by `(key, value)` overrides."""

    defaults = flatten(DEFAULT_CONFIG)
    config = dict(defaults)
    layers = []
    if path is not None:
        try:
            with open(path, 'r') as f:
                from_file = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError('Config file %s is not valid JSON: %s' % (path, e))
        if not isinstance(from_file, dict):
            raise ConfigError('Config file %s must hold an object of dotted keys' % path)
        layers.append(from_file.items())
    layers.append(overrides)

    for layer in layers:
        for key, value in layer:
            if key not in defaults:
                raise ConfigError('Unknown setting %r' % key)
            config[key] = coerce(key, value, defaults[key])
    return config


def runs(status):
    """Wrapper for methods that make up a command run: they report `status`, and their output directory receives
    the resolved configuration before any other output."""

    def wrap(func):
        @wraps(func)
        def inner(self, *args, **kwargs):
            self.status(status)
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.write_config()
            ret = func(self, *args, **kwargs)
            self.status(STATUS_READY)
            return ret

        return inner

    return wrap


class App:
    """Implements the program's controller."""

    config: dict  # Flat, resolved settings
    out_dir: Path
    seed: int
    threads: int
    state: str = STATUS_READY

    def __init__(self, config_path=None, overrides=(), seed: int = None, out_dir=None, threads: int = None):
        """Resolves the settings of a run. The seed comes from `seed`, else the `AMC_SEED` environment variable,
        else the configuration."""

        self.config = resolve_config(config_path, [parse_override(o) if isinstance(o, str) else o
                                                   for o in overrides])
        if seed is None and os.environ.get(SEED_ENV):
            try:
                seed = int(os.environ[SEED_ENV])
            except ValueError:
                raise ConfigError('%s must be an integer, got %r' % (SEED_ENV, os.environ[SEED_ENV]))
        if seed is not None:
            self.config['run.seed'] = int(seed)
        self.seed = self.config['run.seed']

        if out_dir is None:
            out_dir = Path(RUNS_DIR) / time.strftime('%Y%m%d-%H%M%S')
        self.out_dir = Path(out_dir)

        if threads is not None and threads < 1:
            raise ConfigError('Thread count must be positive, got %i' % threads)
        self.threads = threads or os.cpu_count() or 1
        torch.set_num_threads(self.threads)

        self.ofdm_config()
        self.status(STATUS_READY)

    def info(self, msg: str):
        """Shows a notice to the user."""

        print(msg)

    def status(self, msg):
        self.state = msg
        logger.info(STATUS_MSGS[msg])

    def write_config(self):
        with open(self.out_dir / CONFIG_FILE, 'w') as f:
            json.dump(self.config, f, sort_keys=True, indent=2)
            f.write('\n')

    def ofdm_config(self) -> OfdmConfig:
        c = self.config
        return OfdmConfig(c['ofdm.n_subcarriers'], c['ofdm.cp_len'], c['ofdm.n_symbols'], c['ofdm.bandwidth_hz'])

    def dataset_config(self) -> DatasetConfig:
        c = self.config
        return DatasetConfig(self.ofdm_config(), c['channel.snr_low_db'], c['channel.snr_high_db'],
                             c['channel.snr_floor_db'], c['channel.max_redraws'], c['channel.cfo_max'],
                             c['bitloading.target_ser'], c['bitloading.power_loading'])

    def train_config(self, model: str, epochs: int = None) -> TrainConfig:
        c = self.config
        return TrainConfig(lr=c['%s.lr' % model], batch_size=c['%s.batch_size' % model],
                           epochs=c['%s.epochs' % model] if epochs is None else epochs, seed=self.seed,
                           patience=c['%s.patience' % model])

    @runs(STATUS_GENERATE)
    def generate(self, split: str, count: int = None, verify: bool = False):
        """Generates a dataset split into the output directory. With `verify`, the split is generated a second time
        into a scratch directory and the two archives are compared byte for byte."""

        if split not in SPLITS:
            raise ConfigError('Unknown split %r, expected one of %s' % (split, ', '.join(SPLITS)))
        if count is None:
            count = self.config['dataset.%s' % split]
        cfg = self.dataset_config()
        manifest = generate_dataset(cfg, count, self.seed, split, self.out_dir, self.threads)
        self.info(manifest.summary())

        if verify:
            self.status(STATUS_VERIFY)
            with tempfile.TemporaryDirectory() as scratch:
                generate_dataset(cfg, count, self.seed, split, scratch, self.threads)
                for name in (MANIFEST_FILE, RECORDS_FILE):
                    if not filecmp.cmp(self.out_dir / name, Path(scratch) / name, shallow=False):
                        raise DatasetError('Regenerated %s differs from %s' % (name, self.out_dir / name))
            self.info('Verified: regeneration is byte-identical.')
        return manifest

    def __splits(self, store: CaptureStore) -> tuple:
        """Training and validation capture indexes; the last `run.val_fraction` of the captures validate."""

        n_val = max(1, round(len(store) * self.config['run.val_fraction']))
        if len(store) - n_val < 1:
            raise DatasetError('%s holds %i captures, too few to hold out a validation set'
                               % (store.path, len(store)))
        return range(len(store) - n_val), range(len(store) - n_val, len(store))

    @runs(STATUS_TRAIN)
    def train(self, model: str, data_dir, epochs: int = None) -> tuple:
        """Trains `model` on the archive at `data_dir`; writes the best checkpoint and the history."""

        store = CaptureStore(data_dir)
        cfg = self.train_config(model, epochs)
        train_idx, val_idx = self.__splits(store)

        if model == MODEL_LWNN:
            if not store.input_len:
                raise ConfigError('%s is a %s archive without symbols' % (data_dir, store.split))
            net, history = train_lwnn(SubcarrierDataset(store, train_idx), SubcarrierDataset(store, val_idx), cfg)
        elif model == MODEL_RNNBC:
            net, history = train_rnnbc(SequenceDataset(store, train_idx), SequenceDataset(store, val_idx), cfg,
                                       self.config['ofdm.n_subcarriers'])
        else:
            raise ConfigError('Unknown model %r' % model)

        ckpt = self.out_dir / ('%s.%s' % (model, CHECKPOINT_EXT))
        save_model(net, ckpt)
        history.to_csv(self.out_dir / HISTORY_FILE, index=False)
        self.info('Wrote %s after %i epochs' % (ckpt, len(history)))
        return ckpt, history

    @runs(STATUS_EVAL)
    def evaluate(self, data_dir, lwnn_path, rnnbc_path=None, mode: str = MODE_LWNN_ONLY) -> pd.DataFrame:
        """Evaluates the classifiers on the archive at `data_dir` and writes predictions, a metric summary, PCC
        against SNR and confusion matrices per SNR bin."""

        store = CaptureStore(data_dir)
        lwnn = load_model(lwnn_path, MODEL_LWNN)
        if lwnn.input_len != store.input_len:
            raise ConfigError('%s expects %i symbols per subcarrier, %s holds %i'
                              % (lwnn_path, lwnn.input_len, data_dir, store.input_len))
        rnnbc = None
        if mode == MODE_COMBINED:
            if rnnbc_path is None:
                raise ConfigError('Combined evaluation needs an RNN-BC checkpoint')
            rnnbc = load_model(rnnbc_path, MODEL_RNNBC)
            if 2 * rnnbc.seq_len != store.n_subcarriers:
                raise ConfigError('%s expects %i subcarriers, %s has %i'
                                  % (rnnbc_path, 2 * rnnbc.seq_len, data_dir, store.n_subcarriers))

        preds = predict_store(store, lwnn, rnnbc, mode)
        truth = preds['truth']
        summary = [('captures', len(store)), ('pcc_lwnn', pcc(preds['pred_lwnn'], truth))]
        main = preds['pred_lwnn']
        if mode == MODE_COMBINED:
            odd = preds['subcarrier'] % 2 == 1
            main = preds['pred_combined']
            summary += [
                ('pcc_combined', pcc(main, truth)),
                ('pcc_rnnbc', pcc(main[odd], truth[odd])),
                ('pcc_rnnbc_oracle', pcc(preds.loc[odd, 'pred_rnnbc_oracle'], truth[odd])),
                ('pcc_baseline', pcc(preds.loc[odd, 'pred_baseline'], truth[odd])),
                ('lwnn_calls_per_capture', float(preds.groupby('capture')['lwnn_calls'].first().mean())),
            ]
        summary = pd.DataFrame(summary, columns=['metric', 'value'])

        preds.to_csv(self.out_dir / PREDICTIONS_FILE, index=False)
        summary.to_csv(self.out_dir / SUMMARY_FILE, index=False)
        pcc_by_snr(main, truth, preds['snr_db']).to_csv(self.out_dir / PCC_FILE, index=False)
        confusion_table(confusion_by_snr(main, truth, preds['snr_db'])).to_csv(self.out_dir / CONFUSION_FILE,
                                                                               index=False)
        self.info(summary.to_string(index=False))
        return summary

    @runs(STATUS_FLOPS)
    def flops(self, model: str = None, table: bool = False) -> dict:
        """Counts the FLOPs of the default builds, per layer. With `table`, adds the comparison against the
        literature models and the two-stage reduction."""

        n = self.config['ofdm.n_subcarriers']
        nets = {MODEL_LWNN: build_lwnn(self.config['ofdm.n_symbols'], self.seed),
                MODEL_RNNBC: build_rnnbc(n // 2, self.seed)}
        if model is not None and model not in nets:
            raise ConfigError('Unknown model %r' % model)

        reports = {}
        for name in [model] if model else list(nets):
            report = count_flops(nets[name].specs, nets[name].input_shape)
            reports[name] = report.table
            report.table.to_csv(self.out_dir / ('flops_%s.csv' % name), index=False)
            self.info('%s, input %s: %i FLOPs\n%s' % (name, nets[name].input_shape, report.total,
                                                      report.table.to_string(index=False)))

        if table:
            complexity = complexity_table(LITERATURE_MODELS, PUBLISHED_RNNBC_FLOPS, n)
            counted = flops_reduction_report(nets[MODEL_LWNN], nets[MODEL_RNNBC], n)
            published = reduction_from_costs(PUBLISHED_LWNN_FLOPS, PUBLISHED_RNNBC_FLOPS, n)
            reduction = pd.DataFrame([counted._asdict(), published._asdict()], index=['counted', 'published'])
            reduction.index.name = 'source'
            complexity.to_csv(self.out_dir / COMPLEXITY_FILE, index=False)
            reduction.to_csv(self.out_dir / REDUCTION_FILE)
            reports['complexity'] = complexity
            reports['reduction'] = reduction
            self.info('%s\n\n%s' % (complexity.to_string(index=False), reduction.to_string()))
        return reports


__all__ = ['App', 'DEFAULT_CONFIG', 'STATUS_MSGS', 'flatten', 'coerce', 'parse_override', 'resolve_config']
