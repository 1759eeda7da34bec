"""The two classifiers and their training loop.

`Lwnn` labels one subcarrier from its equalized symbol sequence. `RnnBc` reads the classes of the even subcarriers
0, 2, ..., N - 2 and predicts the odd ones; output position `t` belongs to subcarrier `2t + 1`."""

import copy
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
from torch.utils.data import DataLoader

from src.checkpoint import Checkpoint, load_tensors, module_tensors, read_checkpoint, write_checkpoint
from src.common import MODEL_LWNN, MODEL_RNNBC
from src.constellation import N_CLASSES, ModScheme
from src.errors import CheckpointError, ConfigError, DatasetError, NumericError, ShapeError
from src.nn import BatchNorm, LayerSpec, Network, cross_entropy, dcnn, inception, make_adam, seed_everything

logger = logging.getLogger(__name__)

LWNN_MIN_INPUT = 64
LWNN_INPUT = 1024
EMBED_DIM = 32
GRU_HIDDEN = (64, 128)
RNNBC_SUBCARRIERS = 64

HISTORY_COLUMNS = ['epoch', 'train_loss', 'val_loss', 'train_acc', 'val_acc']


def lwnn_specs(input_len: int) -> tuple:
    """Layer graph of the CNN for inputs of `[2, input_len]`."""

    return (
        dcnn('dcnn1', 2, 32, kernel=7, stride=2),
        LayerSpec('batchnorm', 'bn1', {'channels': 32}),
        LayerSpec('maxpool1d', 'pool1', {'kernel': 2, 'stride': 2, 'padding': 'valid'}),
        inception('inception1', 32, 64),
        LayerSpec('batchnorm', 'bn2', {'channels': 64}),
        dcnn('dcnn2', 64, 64, kernel=5, stride=2),
        LayerSpec('batchnorm', 'bn3', {'channels': 64}),
        inception('inception2', 64, 96),
        LayerSpec('batchnorm', 'bn4', {'channels': 96}),
        LayerSpec('globalavgpool', 'gap'),
        LayerSpec('dense', 'head', {'in_features': 96, 'out_features': N_CLASSES}),
        LayerSpec('softmax', 'softmax'),
    )


def rnnbc_specs() -> tuple:
    h1, h2 = GRU_HIDDEN
    return (
        LayerSpec('embedding', 'embed', {'vocab': N_CLASSES, 'dim': EMBED_DIM}),
        LayerSpec('bidirectional_gru', 'bigru1', {'input_size': EMBED_DIM, 'hidden_size': h1}),
        LayerSpec('bidirectional_gru', 'bigru2', {'input_size': 2 * h1, 'hidden_size': h2}),
        LayerSpec('dense', 'head', {'in_features': 2 * h2, 'out_features': N_CLASSES}),
        LayerSpec('softmax', 'softmax'),
    )


def iq_to_input(iq) -> np.ndarray:
    """Turns complex sequences `[..., S]` into `[..., 2, S]` float32 I/Q channels scaled to unit RMS each."""

    iq = np.asarray(iq, dtype=complex)
    rms = np.sqrt(np.mean(np.abs(iq) ** 2, axis=-1, keepdims=True))
    iq = iq / np.where(rms > 0, rms, 1.0)
    return np.stack((iq.real, iq.imag), axis=-2).astype(np.float32)


def _labels_of(schemes) -> np.ndarray:
    return np.array([s.label if isinstance(s, ModScheme) else int(s) for s in schemes], dtype=np.int64)


class Lwnn(Network):
    """Lightweight CNN classifying the modulation of one subcarrier."""

    kind = MODEL_LWNN

    def __init__(self, input_len: int = LWNN_INPUT):
        if input_len < LWNN_MIN_INPUT:
            raise ConfigError('The CNN needs at least %i symbols per input, got %i' % (LWNN_MIN_INPUT, input_len))
        super().__init__(lwnn_specs(input_len))
        self.input_len = input_len

    @property
    def config(self) -> dict:
        return {'input_len': self.input_len}

    @property
    def input_shape(self) -> tuple:
        return 2, self.input_len

    def classify_many(self, iq) -> tuple:
        """Classifies a batch of complex sequences `[B, S]`. Returns class indices and `[B, 5]` probabilities;
        ties go to the lower class index."""

        iq = np.asarray(iq)
        if iq.ndim != 2 or iq.shape[1] != self.input_len:
            raise ShapeError('Expected sequences of %i symbols, got shape %s' % (self.input_len, iq.shape))

        self.eval()
        with torch.no_grad():
            logits = self.logits(torch.from_numpy(iq_to_input(iq)))
            probs = torch.softmax(logits.double(), dim=-1).numpy()
        return np.argmax(probs, axis=1), probs

    def classify(self, iq) -> tuple:
        """Classifies one subcarrier's symbol sequence. Returns the scheme and its class probabilities."""

        labels, probs = self.classify_many(np.asarray(iq)[None])
        return ModScheme.from_label(int(labels[0])), probs[0]


class RnnBc(Network):
    """Bidirectional GRU tagger predicting odd-subcarrier classes from the even ones."""

    kind = MODEL_RNNBC

    def __init__(self, seq_len: int = RNNBC_SUBCARRIERS // 2):
        if seq_len < 1:
            raise ConfigError('Sequence length must be positive')
        super().__init__(rnnbc_specs())
        self.seq_len = seq_len

    @property
    def config(self) -> dict:
        return {'seq_len': self.seq_len}

    @property
    def input_shape(self) -> tuple:
        return self.seq_len,

    def predict_many(self, even_labels) -> tuple:
        """Predicts `[B, T]` odd-subcarrier class indices from `[B, T]` even ones; also returns the per-position
        probabilities."""

        even_labels = np.asarray(even_labels, dtype=np.int64)
        if even_labels.ndim != 2 or even_labels.shape[1] != self.seq_len:
            raise ShapeError('Expected %i even-subcarrier classes, got shape %s' % (self.seq_len, even_labels.shape))
        if even_labels.size and (even_labels.min() < 0 or even_labels.max() >= N_CLASSES):
            raise ShapeError('Class indices must lie in [0, %i)' % N_CLASSES)

        self.eval()
        with torch.no_grad():
            logits = self.logits(torch.from_numpy(even_labels))
            probs = torch.softmax(logits.double(), dim=-1).numpy()
        return np.argmax(probs, axis=-1), probs

    def predict_odd(self, even_schemes) -> list:
        """Predicts the schemes of subcarriers 1, 3, ..., N - 1 from those of 0, 2, ..., N - 2."""

        labels, _ = self.predict_many(_labels_of(even_schemes)[None])
        return [ModScheme.from_label(int(i)) for i in labels[0]]


MODELS = {Lwnn.kind: Lwnn, RnnBc.kind: RnnBc}


def build_lwnn(input_len: int = LWNN_INPUT, seed: int = 0) -> Lwnn:
    torch.manual_seed(seed)
    return Lwnn(input_len)


def build_rnnbc(seq_len: int = RNNBC_SUBCARRIERS // 2, seed: int = 0) -> RnnBc:
    torch.manual_seed(seed)
    return RnnBc(seq_len)


def nearest_even_baseline(even_labels) -> np.ndarray:
    """Reference predictor for the odd subcarriers: subcarrier `2t + 1` copies the class of subcarrier `2t`."""

    return np.array(even_labels, copy=True)


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    batch_size: int
    epochs: int = 10
    seed: int = 0
    patience: int = 5

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError('Learning rate must be positive')
        if self.batch_size < 2:
            raise ConfigError('Batch size must be at least 2')
        if self.epochs < 0:
            raise ConfigError('Epoch count must be non-negative')
        if self.patience < 1:
            raise ConfigError('Early-stopping patience must be at least 1')

    @classmethod
    def for_lwnn(cls, **kwargs) -> 'TrainConfig':
        return cls(**{'lr': 1e-3, 'batch_size': 64, **kwargs})

    @classmethod
    def for_rnnbc(cls, **kwargs) -> 'TrainConfig':
        return cls(**{'lr': 1e-5, 'batch_size': 32, **kwargs})


def _run_epoch(model: Network, loader, optimizer=None, epoch: int = -1) -> tuple:
    """One pass over `loader`; trains when an optimizer is given. Returns the sample-weighted loss and accuracy."""

    model.train(optimizer is not None)
    total_loss = total_correct = total_positions = samples = 0
    for i, (x, y) in enumerate(loader):
        with torch.set_grad_enabled(optimizer is not None):
            logits = model.logits(x)
            loss = cross_entropy(logits, y)
        if not torch.isfinite(loss):
            raise NumericError('Non-finite loss %r' % loss.item(), epoch, i)
        if optimizer is not None:
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        total_loss += loss.item() * x.shape[0]
        total_correct += (logits.argmax(dim=-1) == y).sum().item()
        total_positions += y.numel()
        samples += x.shape[0]
    if not samples:
        raise DatasetError('No batches to run in epoch %i' % epoch)
    return total_loss / samples, total_correct / total_positions


def fit(model: Network, train, val, cfg: TrainConfig) -> pd.DataFrame:
    """Trains `model` on the `train` dataset with Adam, keeping the weights with the lowest validation loss and
    stopping after `cfg.patience` epochs without improvement. Returns the per-epoch history."""

    if not len(train) or not len(val):
        raise DatasetError('Training needs non-empty training and validation sets')
    seed_everything(cfg.seed)

    generator = torch.Generator().manual_seed(cfg.seed)
    # A trailing batch of one sample cannot be batch-normalized.
    has_batchnorm = any(isinstance(m, BatchNorm) for m in model.modules())
    train_loader = DataLoader(train, batch_size=cfg.batch_size, shuffle=True, generator=generator, num_workers=0,
                              drop_last=has_batchnorm and len(train) % cfg.batch_size == 1)
    val_loader = DataLoader(val, batch_size=cfg.batch_size, shuffle=False, num_workers=0)
    optimizer = make_adam(model.parameters(), cfg.lr)

    history = []
    best_loss = float('inf')
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    for epoch in range(cfg.epochs):
        train_loss, train_acc = _run_epoch(model, train_loader, optimizer, epoch)
        val_loss, val_acc = _run_epoch(model, val_loader, epoch=epoch)
        history.append((epoch, train_loss, val_loss, train_acc, val_acc))
        logger.info('Epoch %i: train loss %.4f acc %.4f, val loss %.4f acc %.4f',
                    epoch, train_loss, train_acc, val_loss, val_acc)

        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info('No validation improvement for %i epochs, stopping', stale)
                break

    model.load_state_dict(best_state)
    model.eval()
    return pd.DataFrame(history, columns=HISTORY_COLUMNS)


def train_lwnn(train, val, cfg: TrainConfig) -> tuple:
    """Builds a CNN for the input length of `train` and fits it. Returns the model and its history."""

    model = build_lwnn(train.input_len, cfg.seed)
    return model, fit(model, train, val, cfg)


def train_rnnbc(train, val, cfg: TrainConfig, n_subcarriers: int = RNNBC_SUBCARRIERS) -> tuple:
    """Builds the sequence classifier for `n_subcarriers`-long scheme sequences and fits it."""

    for ds in (train, val):
        if ds.n_subcarriers != n_subcarriers:
            raise ShapeError('Scheme sequences have length %i, expected %i' % (ds.n_subcarriers, n_subcarriers))
    model = build_rnnbc(n_subcarriers // 2, cfg.seed)
    return model, fit(model, train, val, cfg)


def save_model(model: Network, path):
    write_checkpoint(Checkpoint(model.kind, model.config, module_tensors(model)), path)


def load_model(path, kind: str = None) -> Network:
    """Rebuilds a model from its checkpoint. `kind` optionally asserts which classifier the file must hold."""

    ckpt = read_checkpoint(path)
    if ckpt.model not in MODELS:
        raise CheckpointError('%s holds an unknown model kind %r' % (path, ckpt.model))
    if kind is not None and ckpt.model != kind:
        raise ConfigError('%s holds a %s model, expected %s' % (path, ckpt.model, kind))

    try:
        model = MODELS[ckpt.model](**ckpt.config)
    except TypeError as e:
        raise CheckpointError('%s holds unusable %s settings: %s' % (path, ckpt.model, e))
    load_tensors(model, ckpt.tensors)
    model.eval()
    return model


__all__ = ['Lwnn', 'RnnBc', 'TrainConfig', 'MODELS', 'LWNN_INPUT', 'LWNN_MIN_INPUT', 'RNNBC_SUBCARRIERS',
           'HISTORY_COLUMNS', 'lwnn_specs', 'rnnbc_specs', 'iq_to_input', 'build_lwnn', 'build_rnnbc',
           'nearest_even_baseline', 'fit', 'train_lwnn', 'train_rnnbc', 'save_model', 'load_model']
