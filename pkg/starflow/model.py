# -*- coding: utf-8 -*-
"""The crowd-flow network: configuration, construction, forward pass and
checkpoints.

The network embeds the external feature vector with two fully-connected
layers into a ``2 × I × J`` map, concatenates it to the keyframe stack, and
runs one convolution, a number of pre-activation residual blocks and a
two-filter convolution with a Tanh output::

    external ─ FC1 ─ ReLU ─ FC2 ─ reshape ─┐
    keyframes ─────────────────────────────┴─ concat ─ conv1
        ─ [ReLU ─ conv] × l_w + shortcut (× L_rb) ─ head conv ─ tanh

Every convolution uses the same odd kernel size and zero padding, so the
spatial size never changes.

"""

import collections
import dataclasses
import logging

import numpy as np

from starflow.errors import ConfigError, FormatError, ShapeError
from starflow.formats import read_checkpoint, write_checkpoint
from starflow.tensor import (ConvParams, Tensor, activation, add,
                             as_tensor, concat_channels, conv2d,
                             fully_connected, l2_penalty, reshape,
                             residual_add)

logger = logging.getLogger(__name__)

#: Default width of the external embedding.
DEFAULT_EMBED_DIM = 10


@dataclasses.dataclass(frozen=True)
class StarConfig(object):
    """Architecture hyperparameters.

    :param int rows: Grid rows ``I``.
    :param int cols: Grid columns ``J``.
    :param int input_channels: Keyframe channels ``2L``.
    :param int num_residual_blocks: Number of residual blocks.
    :param int weight_layers_per_block: Convolutions per block (1 or 2).
    :param int filters: Filters of every hidden convolution.
    :param int kernel_size: The odd kernel size of every convolution.
    :param int embed_dim: Hidden width of the external component.
    :param int external_dim: Length of the external feature vector; 0
        removes the external component.
    :param float l2_coeff: L2 coefficient of every convolution kernel.

    """

    rows: int
    cols: int
    input_channels: int = 18
    num_residual_blocks: int = 6
    weight_layers_per_block: int = 2
    filters: int = 64
    kernel_size: int = 3
    embed_dim: int = DEFAULT_EMBED_DIM
    external_dim: int = 57
    l2_coeff: float = 0.0

    def __post_init__(self):
        checks = (
            ('rows', self.rows >= 1, "must be positive"),
            ('cols', self.cols >= 1, "must be positive"),
            ('input_channels', self.input_channels >= 1, "must be positive"),
            ('num_residual_blocks', self.num_residual_blocks >= 0,
             "must be non-negative"),
            ('weight_layers_per_block', self.weight_layers_per_block in (1, 2),
             "must be 1 or 2"),
            ('filters', self.filters >= 1, "must be positive"),
            ('kernel_size', self.kernel_size >= 1 and self.kernel_size % 2,
             "must be a positive odd number"),
            ('embed_dim', self.embed_dim >= 1 or not self.external_dim,
             "must be positive when the external component is used"),
            ('external_dim', self.external_dim >= 0, "must be non-negative"),
            ('l2_coeff', self.l2_coeff >= 0, "must be non-negative"),
        )
        for name, ok, problem in checks:
            if not ok:
                raise ConfigError("%s %s (got %r)" %
                                  (name, problem, getattr(self, name)),
                                  key='model.' + name)

    @classmethod
    def taxibj(cls, **kwargs):
        """The 32×32 half-hourly setting: 6 blocks of 2 convolutions."""
        settings = dict(rows=32, cols=32, input_channels=18,
                        num_residual_blocks=6, weight_layers_per_block=2,
                        filters=64, kernel_size=3, external_dim=57)
        settings.update(kwargs)
        return cls(**settings)

    @classmethod
    def bikenyc(cls, **kwargs):
        """The 16×8 hourly setting: 2 blocks of 1 wide convolution."""
        settings = dict(rows=16, cols=8, input_channels=18,
                        num_residual_blocks=2, weight_layers_per_block=1,
                        filters=256, kernel_size=3, external_dim=33,
                        l2_coeff=1e-4)
        settings.update(kwargs)
        return cls(**settings)

    @classmethod
    def for_grid(cls, rows, cols, keyframes, external, **kwargs):
        """Derives the input sizes from a keyframe config and feature spec."""
        return cls(rows=rows, cols=cols,
                   input_channels=2 * keyframes.num_frames,
                   external_dim=external.width, **kwargs)

    @property
    def conv_input_channels(self):
        """Channels entering the first convolution."""
        return self.input_channels + (2 if self.external_dim else 0)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError("invalid model config: %s" % e, key='model')


def parameter_shapes(cfg):
    """Returns the ordered ``{name: shape}`` of every parameter."""
    k, f = cfg.kernel_size, cfg.filters
    shapes = collections.OrderedDict()
    if cfg.external_dim:
        frame = 2 * cfg.rows * cfg.cols
        shapes['external.fc1.weight'] = (cfg.embed_dim, cfg.external_dim)
        shapes['external.fc1.bias'] = (cfg.embed_dim,)
        shapes['external.fc2.weight'] = (frame, cfg.embed_dim)
        shapes['external.fc2.bias'] = (frame,)
    shapes['conv1.kernel'] = (f, cfg.conv_input_channels, k, k)
    shapes['conv1.bias'] = (f,)
    for b in range(cfg.num_residual_blocks):
        for w in range(cfg.weight_layers_per_block):
            prefix = 'block%d.conv%d' % (b + 1, w + 1)
            shapes[prefix + '.kernel'] = (f, f, k, k)
            shapes[prefix + '.bias'] = (f,)
    shapes['head.kernel'] = (2, f, k, k)
    shapes['head.bias'] = (2,)
    return shapes


def param_count(cfg):
    """Returns the number of trainable values of a network built from *cfg*.

    >>> param_count(StarConfig(rows=1, cols=1, input_channels=2,
    ...                        num_residual_blocks=0, filters=1,
    ...                        kernel_size=1, external_dim=0))
    7

    """
    k2, f = cfg.kernel_size ** 2, cfg.filters
    frame = 2 * cfg.rows * cfg.cols
    external = 0
    if cfg.external_dim:
        external = (cfg.external_dim * cfg.embed_dim + cfg.embed_dim +
                    cfg.embed_dim * frame + frame)
    first = f * cfg.conv_input_channels * k2 + f
    blocks = (cfg.num_residual_blocks * cfg.weight_layers_per_block *
              (f * f * k2 + f))
    head = 2 * f * k2 + 2
    return external + first + blocks + head


def _glorot_limit(shape):
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    else:
        fan_in, fan_out = shape[1], shape[0]
    return np.sqrt(6.0 / (fan_in + fan_out))


class StarModel(object):
    """The network's named parameters, grouped by layer.

    :param StarConfig cfg: The architecture.
    :param dict params: ``{name: Tensor}`` for every name of
        :func:`parameter_shapes`.

    """

    def __init__(self, cfg, params):
        shapes = parameter_shapes(cfg)
        for name, shape in shapes.items():
            if name not in params:
                raise ShapeError('StarModel', (name,), shape, None)
            if params[name].shape != tuple(shape):
                raise ShapeError('StarModel', (name,), shape,
                                 params[name].shape)
        self.cfg = cfg
        self._params = collections.OrderedDict(
            (name, params[name]) for name in shapes)

        #: ``(weight, bias)`` pairs of the external component, or ``None``.
        self.external = None
        if cfg.external_dim:
            self.external = [(params['external.fc%d.weight' % n],
                              params['external.fc%d.bias' % n])
                             for n in (1, 2)]
        self.conv1 = self._conv('conv1')

        #: One list of :class:`~starflow.tensor.ConvParams` per block.
        self.blocks = [[self._conv('block%d.conv%d' % (b + 1, w + 1))
                        for w in range(cfg.weight_layers_per_block)]
                       for b in range(cfg.num_residual_blocks)]
        self.head = self._conv('head')

        #: JSON-serialisable data stored with the weights in checkpoints
        #: (scaler, keyframe config, external feature spec).
        self.metadata = {}

    def _conv(self, prefix):
        return ConvParams(self._params[prefix + '.kernel'],
                          self._params[prefix + '.bias'], self.cfg.l2_coeff)

    def named_parameters(self):
        return list(self._params.items())

    def parameters(self):
        return list(self._params.values())

    def conv_layers(self):
        hidden = [conv for block in self.blocks for conv in block]
        return [self.conv1] + hidden + [self.head]

    def l2_penalty(self):
        """Returns the summed kernel L2 penalty, or ``None`` if it is 0."""
        if not self.cfg.l2_coeff:
            return None
        total = None
        for conv in self.conv_layers():
            term = l2_penalty(conv.kernel, conv.l2_coeff)
            total = term if total is None else add(total, term)
        return total

    def state_dict(self):
        """Returns a copy of every parameter's values by name."""
        return collections.OrderedDict((name, p.data.copy())
                                       for name, p in self._params.items())

    def load_state_dict(self, state):
        """Copies values from :meth:`state_dict` output into the model."""
        for name, param in self._params.items():
            values = state[name]
            if values.shape != param.shape:
                raise ShapeError('load_state_dict', (name,), param.shape,
                                 values.shape)
            param.data[...] = values

    def __repr__(self):
        return 'StarModel(%d blocks, %d parameters)' % (
            len(self.blocks), count_parameters(self))


def count_parameters(model):
    """Returns the actual number of values held by *model*'s parameters."""
    return sum(p.size for p in model.parameters())


def build_model(cfg, seed=0):
    """Builds a network with Glorot-uniform weights and zero biases.

    The same *cfg* and *seed* always give bitwise-identical parameters.

    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith('.bias'):
            values = np.zeros(shape)
        else:
            limit = _glorot_limit(shape)
            values = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor.parameter(values, name=name)
    model = StarModel(cfg, params)
    logger.debug("Built model: %r." % model)
    return model


def forward(model, input, external=None):
    """Runs the network.

    :param StarModel model: The network.
    :param input: The ``B × 2L × I × J`` keyframe stacks.
    :param external: The ``B × D_ext`` feature vectors (ignored when the
        external component is disabled).
    :return: The ``B × 2 × I × J`` prediction, every value in ``(-1, 1)``.
    :rtype: :class:`~starflow.tensor.Tensor`

    """
    cfg = model.cfg
    x = as_tensor(input)
    if x.ndim != 4:
        raise ShapeError('forward', ('rank',), 4, x.ndim)
    expected = (cfg.input_channels, cfg.rows, cfg.cols)
    if x.shape[1:] != expected:
        axes = [name for name, a, b in zip(('channels', 'rows', 'cols'),
                                           x.shape[1:], expected) if a != b]
        raise ShapeError('forward', axes, expected, x.shape[1:])
    batch = x.shape[0]

    if model.external is not None:
        e = as_tensor(external)
        if e.shape != (batch, cfg.external_dim):
            raise ShapeError('forward', ('external',),
                             (batch, cfg.external_dim), e.shape)
        (w1, b1), (w2, b2) = model.external
        hidden = activation(fully_connected(e, w1, b1), 'relu')
        x_ext = reshape(fully_connected(hidden, w2, b2),
                        (batch, 2, cfg.rows, cfg.cols))
        x = concat_channels(x, x_ext)

    out = conv2d(x, model.conv1)
    for block in model.blocks:
        branch = out
        for conv in block:
            branch = conv2d(activation(branch, 'relu'), conv)
        out = residual_add(out, branch)
    return activation(conv2d(out, model.head), 'tanh')


def save_checkpoint(model, cfg, sink):
    """Writes *model* and its metadata to a ``.stck`` checkpoint.

    :return: The number of bytes written.

    """
    config = {'model': cfg.to_dict(), 'metadata': model.metadata}
    written = write_checkpoint(sink, config, [(name, p.data) for name, p in
                                              model.named_parameters()])
    logger.info("Saved checkpoint (%d bytes)." % written)
    return written


def _checkpoint_shapes(config):
    try:
        return parameter_shapes(StarConfig.from_dict(config['model']))
    except (KeyError, TypeError, ConfigError) as e:
        raise FormatError("checkpoint holds no valid model config: %s" % e)


def load_checkpoint(source):
    """Rebuilds a network from a ``.stck`` checkpoint.

    The stored config is enough to reconstruct the network; no other
    configuration is needed.

    :return: ``(model, cfg)``

    """
    config, arrays = read_checkpoint(source, _checkpoint_shapes)
    cfg = StarConfig.from_dict(config['model'])
    params = {name: Tensor.parameter(values, name=name)
              for name, values in arrays.items()}
    model = StarModel(cfg, params)
    model.metadata = config.get('metadata', {})
    logger.debug("Loaded model: %r." % model)
    return model, cfg
