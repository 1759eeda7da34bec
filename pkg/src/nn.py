"""Layer graph, layers and FLOPs accounting shared by both classifiers.

A network is described by a tuple of `LayerSpec`s. The same description builds the torch modules (`Network`) and
drives the FLOPs counter, so the two cannot drift apart. Tensors, autodiff and Adam come from torch; the layer kinds,
gate equations, shape resolution and cost convention are defined here."""

import logging
import random
from collections import OrderedDict, namedtuple
from dataclasses import dataclass, field
from math import prod

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn

from src.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
# Running statistics keep this share of their previous value on every training batch.
BN_RUNNING_DECAY = 0.9

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

PADDINGS = ('same', 'valid')

# Required hyperparameters of every layer kind.
KIND_PARAMS = {
    'conv1d': ('in_channels', 'out_channels', 'kernel'),
    'depthwise_conv1d': ('channels', 'kernel'),
    'pointwise_conv1d': ('in_channels', 'out_channels'),
    'dense': ('in_features', 'out_features'),
    'batchnorm': ('channels',),
    'relu': (),
    'maxpool1d': ('kernel',),
    'globalavgpool': (),
    'embedding': ('vocab', 'dim'),
    'gru': ('input_size', 'hidden_size'),
    'bidirectional_gru': ('input_size', 'hidden_size'),
    'softmax': (),
    'concat': (),
    # Composite blocks, expanded into the primitive kinds above.
    'dcnn': ('in_channels', 'out_channels', 'kernel'),
    'inception': ('in_channels', 'out_channels'),
}

INCEPTION_EXPANSION = 4

FlopsReport = namedtuple('FlopsReport', ('total', 'table'))


@dataclass(frozen=True)
class LayerSpec:
    """One node of a network description. `branches` is only used by `concat`."""

    kind: str
    name: str
    params: dict = field(default_factory=dict)
    branches: tuple = ()

    def get(self, key, default=None):
        return self.params.get(key, default)

    def validate(self):
        """Checks the hyperparameters of this kind, recursing into branches and composite expansions."""

        if self.kind not in KIND_PARAMS:
            raise ConfigError('Unknown layer kind %r' % self.kind)
        if not self.name or '.' in self.name:
            raise ConfigError('Layer name %r must be non-empty and contain no dots' % self.name)
        for key in KIND_PARAMS[self.kind]:
            value = self.params.get(key)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError('Layer %s (%s) needs a positive integer %r, got %r'
                                  % (self.name, self.kind, key, value))
        if self.get('stride', 1) < 1:
            raise ConfigError('Layer %s has a non-positive stride' % self.name)
        if self.get('padding', 'same') not in PADDINGS:
            raise ConfigError('Layer %s padding must be one of %s' % (self.name, PADDINGS))

        if self.kind == 'concat':
            if not self.branches:
                raise ConfigError('Concat layer %s has no branches' % self.name)
            for branch in self.branches:
                for spec in branch:
                    spec.validate()
        elif self.kind == 'inception':
            if self.params['out_channels'] % 4:
                raise ConfigError('Inception block %s needs output channels divisible by 4, got %i'
                                  % (self.name, self.params['out_channels']))
            if self.get('expansion', INCEPTION_EXPANSION) < 1:
                raise ConfigError('Inception block %s needs a positive expansion' % self.name)
        if self.kind in ('dcnn', 'inception'):
            for spec in self.expand():
                spec.validate()

    def expand(self) -> tuple:
        """Primitive layers making up a composite block."""

        p = self.params
        if self.kind == 'dcnn':
            stride = p.get('stride', 1)
            return (LayerSpec('depthwise_conv1d', 'depthwise',
                              {'channels': p['in_channels'], 'kernel': p['kernel'], 'stride': stride}),
                    LayerSpec('relu', 'relu1'),
                    LayerSpec('pointwise_conv1d', 'pointwise',
                              {'in_channels': p['in_channels'], 'out_channels': p['out_channels']}),
                    LayerSpec('relu', 'relu2'))
        if self.kind == 'inception':
            c_in, width = p['in_channels'], p['out_channels'] // 4
            wide = p.get('expansion', INCEPTION_EXPANSION) * c_in

            def reduce():
                return (LayerSpec('pointwise_conv1d', 'reduce', {'in_channels': c_in, 'out_channels': wide}),
                        LayerSpec('relu', 'relu_reduce'))

            def conv(kernel):
                return (LayerSpec('conv1d', 'conv%i' % kernel,
                                  {'in_channels': wide, 'out_channels': width, 'kernel': kernel}),
                        LayerSpec('relu', 'relu'))

            branches = (
                (LayerSpec('pointwise_conv1d', 'conv1', {'in_channels': c_in, 'out_channels': width}),
                 LayerSpec('relu', 'relu')),
                reduce() + conv(3),
                reduce() + conv(5),
                (LayerSpec('maxpool1d', 'pool', {'kernel': 3, 'stride': 1}),
                 LayerSpec('pointwise_conv1d', 'proj', {'in_channels': c_in, 'out_channels': width}),
                 LayerSpec('relu', 'relu')),
            )
            return (LayerSpec('concat', 'branches', branches=branches),)
        return (self,)


def dcnn(name: str, in_channels: int, out_channels: int, kernel: int, stride: int = 1) -> LayerSpec:
    return LayerSpec('dcnn', name, {'in_channels': in_channels, 'out_channels': out_channels, 'kernel': kernel,
                                    'stride': stride})


def inception(name: str, in_channels: int, out_channels: int, expansion: int = INCEPTION_EXPANSION) -> LayerSpec:
    return LayerSpec('inception', name, {'in_channels': in_channels, 'out_channels': out_channels,
                                         'expansion': expansion})


def resolve_padding(kernel: int, padding) -> int:
    """Symmetric padding for "same" (`(K - 1) // 2`), none for "valid", or an explicit integer."""

    if padding == 'same':
        return (kernel - 1) // 2
    if padding == 'valid':
        return 0
    if isinstance(padding, int) and padding >= 0:
        return padding
    raise ConfigError('Padding must be "same", "valid" or a non-negative integer, got %r' % (padding,))


def conv_length(length: int, kernel: int, stride: int, pad: int) -> int:
    return (length + 2 * pad - kernel) // stride + 1


def conv1d(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor = None, stride: int = 1, padding='valid',
           groups: int = 1) -> torch.Tensor:
    """Cross-correlation of `x` (`[C_in, L]` or `[B, C_in, L]`) with `w` (`[C_out, C_in / groups, K]`)."""

    unbatched = x.dim() == 2
    if unbatched:
        x = x.unsqueeze(0)
    if x.dim() != 3 or w.dim() != 3:
        raise ShapeError('conv1d expects a [C, L] or [B, C, L] input and a [C_out, C_in, K] kernel')
    if x.shape[1] != w.shape[1] * groups:
        raise ShapeError('Input has %i channels, kernel expects %i' % (x.shape[1], w.shape[1] * groups))
    pad = resolve_padding(w.shape[2], padding)
    if conv_length(x.shape[2], w.shape[2], stride, pad) < 1:
        raise ShapeError('Input of length %i is shorter than the kernel' % x.shape[2])

    y = F.conv1d(x, w, b, stride=stride, padding=pad, groups=groups)
    return y.squeeze(0) if unbatched else y


class Conv1d(nn.Conv1d):
    """`nn.Conv1d` taking "same"/"valid" padding at any stride and running through `conv1d`."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1, padding='same',
                 groups: int = 1, bias: bool = True):
        super().__init__(in_channels, out_channels, kernel, stride=stride, padding=resolve_padding(kernel, padding),
                         groups=groups, bias=bias)

    def forward(self, x):
        return conv1d(x, self.weight, self.bias, self.stride[0], self.padding[0], self.groups)


def batchnorm(x: torch.Tensor, gamma, beta, running_mean, running_var, training: bool) -> torch.Tensor:
    """Per-channel batch normalization of `[B, C]` or `[B, C, L]`. Training mode normalizes by the batch statistics
    and updates the running ones in place; inference mode is a fixed affine map."""

    if training and x.shape[0] < 2:
        raise ShapeError('Batch normalization needs at least 2 samples per batch in training mode')
    return F.batch_norm(x, running_mean, running_var, gamma, beta, training, 1 - BN_RUNNING_DECAY, BN_EPS)


class BatchNorm(nn.BatchNorm1d):

    def __init__(self, channels: int):
        super().__init__(channels, eps=BN_EPS, momentum=1 - BN_RUNNING_DECAY)

    def forward(self, x):
        return batchnorm(x, self.weight, self.bias, self.running_mean, self.running_var, self.training)


class GlobalAvgPool(nn.Module):

    def forward(self, x):
        return x.mean(dim=-1)


class GruCell(nn.Module):
    """Gated recurrent unit.

    z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    c = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * h + z * c
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        # Gate order z, r, h along the first axis.
        self.weight_ih = nn.Parameter(torch.empty(3 * hidden_size, input_size))
        self.weight_hh = nn.Parameter(torch.empty(3 * hidden_size, hidden_size))
        self.bias = nn.Parameter(torch.empty(3 * hidden_size))
        self.reset_parameters()

    def reset_parameters(self):
        h = self.hidden_size
        with torch.no_grad():
            for gate in range(3):
                nn.init.xavier_uniform_(self.weight_ih[gate * h:(gate + 1) * h])
                nn.init.orthogonal_(self.weight_hh[gate * h:(gate + 1) * h])
            self.bias.zero_()

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_size or h.shape[-1] != self.hidden_size:
            raise ShapeError('GRU cell expects input %i / state %i, got %i / %i'
                             % (self.input_size, self.hidden_size, x.shape[-1], h.shape[-1]))
        hs = self.hidden_size
        wz, wr, wh = F.linear(x, self.weight_ih, self.bias).chunk(3, dim=-1)
        uz, ur = F.linear(h, self.weight_hh[:2 * hs]).chunk(2, dim=-1)
        z = torch.sigmoid(wz + uz)
        r = torch.sigmoid(wr + ur)
        cand = torch.tanh(wh + F.linear(r * h, self.weight_hh[2 * hs:]))
        return (1 - z) * h + z * cand


def run_gru(cell: GruCell, x: torch.Tensor, reverse: bool = False) -> torch.Tensor:
    """Unrolls `cell` over `[B, T, D]` from a zero state; outputs stay in input time order."""

    if x.shape[1] < 1:
        raise ShapeError('A recurrent layer needs at least one time step')
    h = x.new_zeros(x.shape[0], cell.hidden_size)
    steps = range(x.shape[1] - 1, -1, -1) if reverse else range(x.shape[1])
    out = [None] * x.shape[1]
    for t in steps:
        h = cell(x[:, t], h)
        out[t] = h
    return torch.stack(out, dim=1)


class Gru(nn.Module):
    """Single-direction recurrent layer over `[B, T, D]` (or unbatched `[T, D]`)."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.cell = GruCell(input_size, hidden_size)

    def forward(self, x):
        if x.dim() == 2:
            return run_gru(self.cell, x.unsqueeze(0)).squeeze(0)
        return run_gru(self.cell, x)


class BiGru(nn.Module):
    """Forward and backward passes with independent cells, concatenated per time step into `[..., T, 2H]`."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.forward_cell = GruCell(input_size, hidden_size)
        self.backward_cell = GruCell(input_size, hidden_size)

    def forward(self, x):
        unbatched = x.dim() == 2
        if unbatched:
            x = x.unsqueeze(0)
        y = torch.cat((run_gru(self.forward_cell, x), run_gru(self.backward_cell, x, reverse=True)), dim=-1)
        return y.squeeze(0) if unbatched else y


class Concat(nn.Module):
    """Runs every branch on the same input and concatenates the results along the channel axis."""

    def __init__(self, branches):
        super().__init__()
        self.branches = nn.ModuleList(branches)

    def forward(self, x):
        return torch.cat([branch(x) for branch in self.branches], dim=-2)


class DcnnBlock(nn.Sequential):
    """Depthwise convolution, ReLU, pointwise convolution, ReLU."""

    def __init__(self, spec: LayerSpec):
        super().__init__(_sequence(spec.expand()))
        self.spec = spec


class InceptionBlock(Concat):
    """Four parallel branches (1x1; 1x1 -> 3; 1x1 -> 5; maxpool -> 1x1), each producing a quarter of the output
    channels."""

    def __init__(self, spec: LayerSpec):
        concat, = spec.expand()
        super().__init__([nn.Sequential(_sequence(branch)) for branch in concat.branches])
        self.spec = spec


def _sequence(specs) -> OrderedDict:
    return OrderedDict((spec.name, build_layer(spec)) for spec in specs)


def build_layer(spec: LayerSpec) -> nn.Module:
    """Builds the torch module of one spec."""

    spec.validate()
    p, kind = spec.params, spec.kind
    if kind == 'conv1d':
        return Conv1d(p['in_channels'], p['out_channels'], p['kernel'], p.get('stride', 1), p.get('padding', 'same'),
                      bias=p.get('bias', True))
    if kind == 'depthwise_conv1d':
        return Conv1d(p['channels'], p['channels'] * p.get('multiplier', 1), p['kernel'], p.get('stride', 1),
                      p.get('padding', 'same'), groups=p['channels'], bias=p.get('bias', True))
    if kind == 'pointwise_conv1d':
        return Conv1d(p['in_channels'], p['out_channels'], 1, bias=p.get('bias', True))
    if kind == 'dense':
        return nn.Linear(p['in_features'], p['out_features'])
    if kind == 'batchnorm':
        return BatchNorm(p['channels'])
    if kind == 'relu':
        return nn.ReLU()
    if kind == 'maxpool1d':
        k = p['kernel']
        return nn.MaxPool1d(k, p.get('stride', k), resolve_padding(k, p.get('padding', 'same')))
    if kind == 'globalavgpool':
        return GlobalAvgPool()
    if kind == 'embedding':
        return nn.Embedding(p['vocab'], p['dim'])
    if kind == 'gru':
        return Gru(p['input_size'], p['hidden_size'])
    if kind == 'bidirectional_gru':
        return BiGru(p['input_size'], p['hidden_size'])
    if kind == 'softmax':
        return nn.Softmax(dim=-1)
    if kind == 'concat':
        return Concat([nn.Sequential(_sequence(branch)) for branch in spec.branches])
    if kind == 'dcnn':
        return DcnnBlock(spec)
    if kind == 'inception':
        return InceptionBlock(spec)
    raise ConfigError('Unknown layer kind %r' % kind)


def init_weights(module: nn.Module):
    """Xavier-uniform convolution/dense weights with zero biases; GRU cells reset themselves."""

    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, GruCell):
            m.reset_parameters()


class Network(nn.Module):
    """A feed-forward stack built from `LayerSpec`s. A trailing softmax is applied by `forward` only, so training
    works on `logits`."""

    def __init__(self, specs):
        super().__init__()
        specs = tuple(specs)
        if not specs:
            raise ConfigError('A network needs at least one layer')
        for i, spec in enumerate(specs):
            spec.validate()
            if spec.kind == 'softmax' and i != len(specs) - 1:
                raise ConfigError('Softmax may only close a network')
        self.specs = specs
        self.normalize = specs[-1].kind == 'softmax'
        self.body = nn.Sequential(_sequence(s for s in specs if s.kind != 'softmax'))
        init_weights(self)

    def logits(self, x):
        return self.body(x)

    def forward(self, x):
        y = self.logits(x)
        return torch.softmax(y, dim=-1) if self.normalize else y


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean categorical cross-entropy over every leading position of `[..., C]` logits."""

    n_classes = logits.shape[-1]
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError('Labels of shape %s do not match logits %s' % (tuple(labels.shape), tuple(logits.shape)))
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ShapeError('Labels must lie in [0, %i)' % n_classes)
    return F.cross_entropy(logits.reshape(-1, n_classes), labels.reshape(-1))


def softmax_cross_entropy(logits: torch.Tensor, labels) -> tuple:
    """Returns the loss and its gradient with respect to the logits, `(softmax - onehot) / B`."""

    logits = logits.detach().requires_grad_()
    loss = cross_entropy(logits, labels)
    grad, = torch.autograd.grad(loss, logits)
    return loss.item(), grad


def make_adam(params, lr: float) -> torch.optim.Adam:
    if lr <= 0:
        raise ConfigError('Learning rate must be positive')
    return torch.optim.Adam(params, lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def adam_step(params, grads, optimizer: torch.optim.Adam):
    """Applies one bias-corrected Adam update of `params` with explicitly supplied `grads`."""

    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ShapeError('Got %i gradients for %i parameters' % (len(grads), len(params)))
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError('Gradient of shape %s for parameter of shape %s' % (tuple(g.shape), tuple(p.shape)))
        p.grad = g.detach().clone().to(p.dtype)
    optimizer.step()


def adam_steps_taken(optimizer: torch.optim.Adam) -> int:
    steps = [int(s['step']) for s in optimizer.state.values() if 'step' in s]
    return max(steps, default=0)


def seed_everything(seed: int):
    """Seeds every generator training touches and pins deterministic kernels."""

    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def _trace(spec: LayerSpec, shape: tuple, prefix: str, rows: list) -> tuple:
    """Resolves the output shape of `spec` and appends its cost rows. Shapes exclude the batch axis."""

    name = prefix + spec.name
    p, kind = spec.params, spec.kind

    if kind in ('dcnn', 'inception'):
        for child in spec.expand():
            shape = _trace(child, shape, name + '.', rows)
        return shape
    if kind == 'concat':
        outs = []
        for i, branch in enumerate(spec.branches):
            s = shape
            for child in branch:
                s = _trace(child, s, '%s.b%i.' % (name, i + 1), rows)
            outs.append(s)
        if any(len(o) != 2 or o[1:] != outs[0][1:] for o in outs):
            raise ShapeError('Branches of %s disagree on length: %s' % (name, outs))
        return (sum(o[0] for o in outs),) + tuple(outs[0][1:])

    flops = 0
    if kind in ('conv1d', 'depthwise_conv1d', 'pointwise_conv1d', 'maxpool1d', 'batchnorm'):
        if len(shape) != 2:
            raise ShapeError('%s expects a [C, L] input, got %s' % (name, shape))
        channels, length = shape
        expected = p.get('channels', p.get('in_channels'))
        if expected is not None and channels != expected:
            raise ShapeError('%s expects %i channels, got %i' % (name, expected, channels))

    if kind in ('conv1d', 'depthwise_conv1d', 'pointwise_conv1d'):
        kernel = 1 if kind == 'pointwise_conv1d' else p['kernel']
        stride = 1 if kind == 'pointwise_conv1d' else p.get('stride', 1)
        out_len = conv_length(length, kernel, stride, resolve_padding(kernel, p.get('padding', 'same')))
        if out_len < 1:
            raise ShapeError('%s: input of length %i is too short' % (name, length))
        if kind == 'depthwise_conv1d':
            c_out = channels * p.get('multiplier', 1)
            fan_in = kernel
        else:
            c_out = p['out_channels']
            fan_in = channels * kernel
        out = (c_out, out_len)
        flops = 2 * fan_in * c_out * out_len + (c_out * out_len if p.get('bias', True) else 0)
    elif kind == 'maxpool1d':
        k = p['kernel']
        out_len = conv_length(length, k, p.get('stride', k), resolve_padding(k, p.get('padding', 'same')))
        if out_len < 1:
            raise ShapeError('%s: input of length %i is too short' % (name, length))
        out = (channels, out_len)
        flops = (k - 1) * channels * out_len
    elif kind == 'batchnorm':
        out = shape
        flops = 2 * prod(shape)
    elif kind in ('relu', 'softmax'):
        out = shape
        flops = prod(shape)
    elif kind == 'globalavgpool':
        if len(shape) != 2:
            raise ShapeError('%s expects a [C, L] input, got %s' % (name, shape))
        out = shape[:1]
        flops = prod(shape)
    elif kind == 'dense':
        if not shape or shape[-1] != p['in_features']:
            raise ShapeError('%s expects %i features, got shape %s' % (name, p['in_features'], shape))
        positions = prod(shape[:-1])
        out = tuple(shape[:-1]) + (p['out_features'],)
        flops = positions * (2 * p['in_features'] * p['out_features'] + p['out_features'])
    elif kind == 'embedding':
        if len(shape) != 1:
            raise ShapeError('%s expects a [T] index sequence, got %s' % (name, shape))
        out = (shape[0], p['dim'])
    elif kind in ('gru', 'bidirectional_gru'):
        if len(shape) != 2 or shape[1] != p['input_size']:
            raise ShapeError('%s expects a [T, %i] input, got %s' % (name, p['input_size'], shape))
        d, h = p['input_size'], p['hidden_size']
        directions = 2 if kind == 'bidirectional_gru' else 1
        out = (shape[0], directions * h)
        flops = directions * shape[0] * gru_step_flops(d, h)
    else:
        raise ConfigError('Unknown layer kind %r' % kind)

    rows.append((name, kind, out, flops))
    return out


def gru_step_flops(input_size: int, hidden_size: int) -> int:
    """Cost of one GRU cell update: each of the three gates takes two matrix-vector products (2 FLOPs per MAC),
    two additions and its activation per unit; the reset product and the (1 - z) blend add 5 per unit."""

    d, h = input_size, hidden_size
    return 3 * (2 * (d * h + h * h) + 3 * h) + 5 * h


def count_flops(specs, input_shape) -> FlopsReport:
    """FLOPs of one inference on an input of `input_shape` (batch axis excluded), with one multiply-accumulate
    counted as 2 FLOPs, 1 per bias add and activation element and 2 per batch-normalized element. Returns the total
    and a per-layer table whose `flops` column sums to it."""

    rows = []
    shape = tuple(int(s) for s in input_shape)
    for spec in specs:
        spec.validate()
        shape = _trace(spec, shape, '', rows)
    table = pd.DataFrame(rows, columns=['layer', 'kind', 'output_shape', 'flops'])
    table['flops'] = table['flops'].astype('int64')
    return FlopsReport(int(table['flops'].sum()), table)


__all__ = ['LayerSpec', 'FlopsReport', 'KIND_PARAMS', 'INCEPTION_EXPANSION', 'dcnn',
           'inception', 'resolve_padding', 'conv1d', 'Conv1d', 'batchnorm', 'BatchNorm', 'GlobalAvgPool', 'GruCell',
           'run_gru', 'Gru', 'BiGru', 'Concat', 'DcnnBlock', 'InceptionBlock', 'build_layer', 'init_weights',
           'Network', 'cross_entropy', 'softmax_cross_entropy', 'make_adam', 'adam_step', 'adam_steps_taken',
           'seed_everything', 'gru_step_flops', 'count_flops']
