"""Classification metrics, the two-stage classifier and the complexity comparisons."""

import logging
from collections import namedtuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from src.common import LITERATURE_MODELS, MODE_COMBINED, MODE_LWNN_ONLY, MODEL_LWNN, MODEL_RNNBC, PUBLISHED_RNNBC_FLOPS
from src.constellation import CLASS_NAMES, N_CLASSES
from src.errors import ConfigError, ShapeError
from src.nn import count_flops

logger = logging.getLogger(__name__)

SNR_BINS = ((5, 8), (8, 12), (12, 16), (16, 20))
OVERFLOW_BIN = 'other'
ALL_SCHEMES = 'ALL'
NO_PREDICTION = -1

Confusion = namedtuple('Confusion', ('counts', 'rates'))
FlopsReduction = namedtuple('FlopsReduction', ('lwnn_flops', 'rnnbc_flops', 'n_subcarriers', 'alone', 'combined',
                                               'ratio'))

PREDICTION_COLUMNS = ['capture', 'subcarrier', 'truth', 'snr_db', 'pred_lwnn', 'pred_combined', 'pred_rnnbc_oracle',
                      'pred_baseline', 'lwnn_calls']


def _aligned(*arrays) -> list:
    arrays = [np.asarray(a).ravel() for a in arrays]
    if len({a.size for a in arrays}) > 1:
        raise ShapeError('Inputs have different lengths: %s' % [a.size for a in arrays])
    return arrays


def pcc(pred, truth) -> float:
    """Probability of correct classification: the share of positions where `pred` equals `truth`."""

    pred, truth = _aligned(pred, truth)
    if not pred.size:
        raise ShapeError('PCC of an empty prediction')
    return float(np.mean(pred == truth))


def bin_name(low, high) -> str:
    return '%g-%g dB' % (low, high)


def snr_bins(snrs, bins=SNR_BINS) -> np.ndarray:
    """Names the half-open bin `[low, high)` each SNR falls in, or `OVERFLOW_BIN`."""

    snrs = np.asarray(snrs, dtype=float).ravel()
    names = np.full(snrs.size, OVERFLOW_BIN, dtype=object)
    for low, high in bins:
        names[(snrs >= low) & (snrs < high)] = bin_name(low, high)
    return names


def _confusion(pred, truth) -> Confusion:
    labels = list(range(N_CLASSES))
    if pred.size:
        counts = confusion_matrix(truth, pred, labels=labels)
    else:
        counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    rows = counts.sum(axis=1, keepdims=True)
    rates = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
    frame = dict(index=pd.Index(CLASS_NAMES, name='truth'), columns=pd.Index(CLASS_NAMES, name='predicted'))
    return Confusion(pd.DataFrame(counts, **frame), pd.DataFrame(rates, **frame))


def confusion_by_snr(preds, truths, snrs, bins=SNR_BINS) -> dict:
    """5x5 confusion matrices (rows are the truth) for every SNR bin plus the overflow bin, in bin order."""

    preds, truths, snrs = _aligned(preds, truths, snrs)
    names = snr_bins(snrs, bins)
    return {name: _confusion(preds[names == name], truths[names == name])
            for name in [bin_name(lo, hi) for lo, hi in bins] + [OVERFLOW_BIN]}


def confusion_table(matrices: dict) -> pd.DataFrame:
    """Flattens `confusion_by_snr` output into one long table with count and rate rows per bin."""

    parts = []
    for name, conf in matrices.items():
        for kind, frame in (('count', conf.counts), ('rate', conf.rates)):
            part = frame.reset_index()
            part.insert(0, 'value', kind)
            part.insert(0, 'snr_bin', name)
            parts.append(part)
    return pd.concat(parts, ignore_index=True)


def pcc_by_snr(preds, truths, snrs, step: float = 1.0) -> pd.DataFrame:
    """PCC per SNR step (rows keyed by the step's lower edge) for every scheme and for all schemes together."""

    preds, truths, snrs = _aligned(preds, truths, snrs)
    df = pd.DataFrame({
        'snr_db': np.floor(snrs.astype(float) / step) * step,
        'scheme': [CLASS_NAMES[i] for i in truths],
        'correct': preds == truths,
    })
    per_scheme = df.groupby(['snr_db', 'scheme'])['correct'].agg(n='size', pcc='mean').reset_index()
    overall = df.groupby('snr_db')['correct'].agg(n='size', pcc='mean').reset_index()
    overall.insert(1, 'scheme', ALL_SCHEMES)
    return pd.concat([per_scheme, overall], ignore_index=True).sort_values(['snr_db', 'scheme'], ignore_index=True)


def combined_classify(lwnn, rnnbc, capture, hook=None) -> np.ndarray:
    """Classifies every subcarrier of `capture`: the CNN labels subcarriers 0, 2, ..., N - 2 and the sequence
    classifier fills in 1, 3, ..., N - 1 from those labels. `hook(stage, items)` is called after each stage."""

    iq = np.asarray(capture.iq)
    n = iq.shape[0]
    if n % 2:
        raise ShapeError('Two-stage classification needs an even number of subcarriers, got %i' % n)

    even, _ = lwnn.classify_many(iq[0::2])
    if hook is not None:
        hook(MODEL_LWNN, n // 2)
    odd, _ = rnnbc.predict_many(np.asarray(even)[None])
    if hook is not None:
        hook(MODEL_RNNBC, 1)

    out = np.empty(n, dtype=np.int64)
    out[0::2] = even
    out[1::2] = odd[0]
    return out


def predict_store(store, lwnn, rnnbc=None, mode: str = MODE_LWNN_ONLY) -> pd.DataFrame:
    """Runs the classifiers over every capture of `store` and returns one row per subcarrier.

    `pred_lwnn` is the CNN alone on every subcarrier. In combined mode `pred_combined` is the two-stage output,
    `lwnn_calls` the CNN invocations the two-stage pass made, and on odd subcarriers `pred_rnnbc_oracle` and
    `pred_baseline` are the sequence classifier and the copy-neighbour predictor fed with the true even classes.
    Columns a mode does not produce hold `NO_PREDICTION`."""

    if mode not in (MODE_LWNN_ONLY, MODE_COMBINED):
        raise ConfigError('Unknown evaluation mode %r' % mode)
    if mode == MODE_COMBINED and rnnbc is None:
        raise ConfigError('Combined evaluation needs a sequence classifier')

    n = store.n_subcarriers
    frames = []
    for c in range(len(store)):
        capture = store.capture(c)
        truth = capture.labels.astype(np.int64)
        cols = {col: np.full(n, NO_PREDICTION, dtype=np.int64) for col in PREDICTION_COLUMNS[4:]}
        if mode == MODE_COMBINED:
            calls = []
            cols['pred_combined'] = combined_classify(
                lwnn, rnnbc, capture, hook=lambda stage, items: calls.append(items) if stage == MODEL_LWNN else None)
            cols['lwnn_calls'][:] = sum(calls)
            cols['pred_lwnn'][0::2] = cols['pred_combined'][0::2]
            cols['pred_lwnn'][1::2] = lwnn.classify_many(capture.iq[1::2])[0]
            cols['pred_rnnbc_oracle'][1::2] = rnnbc.predict_many(truth[None, 0::2])[0][0]
            cols['pred_baseline'][1::2] = truth[0::2]
        else:
            cols['pred_lwnn'] = lwnn.classify_many(capture.iq)[0]
        frames.append(pd.DataFrame({'capture': c, 'subcarrier': np.arange(n), 'truth': truth,
                                    'snr_db': capture.snr_db, **cols}, columns=PREDICTION_COLUMNS))
        logger.debug('Capture %i classified', c)
    return pd.concat(frames, ignore_index=True)


def complexity_table(models=LITERATURE_MODELS, rnnbc_cost: int = PUBLISHED_RNNBC_FLOPS,
                     n_subcarriers: int = 64) -> pd.DataFrame:
    """Per-frame cost of classifying every subcarrier with a model alone versus on half of them followed by the
    sequence classifier, taking one operation per parameter per inference."""

    if rnnbc_cost <= 0 or n_subcarriers <= 0 or n_subcarriers % 2:
        raise ConfigError('Costs must be positive and the subcarrier count even')
    rows = []
    for name, params in models:
        if params <= 0:
            raise ConfigError('Model %s has a non-positive parameter count' % name)
        alone = n_subcarriers * params
        combined = n_subcarriers // 2 * params + rnnbc_cost
        rows.append((name, params, alone, combined, combined / alone))
    return pd.DataFrame(rows, columns=['model', 'params', 'alone', 'combined', 'ratio'])


def reduction_from_costs(lwnn_flops: int, rnnbc_flops: int, n_subcarriers: int = 64) -> FlopsReduction:
    if n_subcarriers % 2:
        raise ConfigError('The subcarrier count must be even')
    alone = n_subcarriers * lwnn_flops
    combined = n_subcarriers // 2 * lwnn_flops + rnnbc_flops
    return FlopsReduction(lwnn_flops, rnnbc_flops, n_subcarriers, alone, combined, combined / alone)


def flops_reduction_report(lwnn, rnnbc, n_subcarriers: int = 64) -> FlopsReduction:
    """Counted FLOPs of one frame classified by the CNN alone versus by the two-stage pipeline."""

    lwnn_flops = count_flops(lwnn.specs, lwnn.input_shape).total
    rnnbc_flops = count_flops(rnnbc.specs, (n_subcarriers // 2,)).total
    return reduction_from_costs(lwnn_flops, rnnbc_flops, n_subcarriers)


__all__ = ['Confusion', 'FlopsReduction', 'SNR_BINS', 'OVERFLOW_BIN', 'ALL_SCHEMES', 'NO_PREDICTION',
           'PREDICTION_COLUMNS', 'pcc', 'bin_name', 'snr_bins', 'confusion_by_snr', 'confusion_table', 'pcc_by_snr',
           'combined_classify', 'predict_store', 'complexity_table', 'reduction_from_costs',
           'flops_reduction_report']
