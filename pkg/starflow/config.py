# -*- coding: utf-8 -*-
"""Run configuration and packaged presets.

A run configuration is one JSON document::

    {
        "grid": {"rows": 8, "cols": 8, ...},
        "keyframes": {"l_c": 3, "l_p": 1, "l_q": 1, "l_r": 2, ...},
        "external": {"intervals_per_day": 48, ...},
        "model": {"num_residual_blocks": 2, "filters": 32, ...},
        "train": {"batch_size": 16, "seed": 0, ...},
        "io": {"series": "flows.stf", "checkpoint": "model.stck", ...}
    }

Every section is optional; missing values take their defaults and unknown
keys are errors. Relative paths in ``io`` are relative to the directory of
the configuration file.

"""

import copy
import json
import logging
import os
import pkgutil

from starflow.errors import ConfigError
from starflow.grid import GridSpec
from starflow.keyframes import ExternalFeatureSpec, KeyframeConfig
from starflow.model import StarConfig
from starflow.synth import DEFAULT_EPOCH_START, SynthSpec
from starflow.training import TrainConfig
from starflow.utils import check_input_path, check_output_path, update_dict

logger = logging.getLogger(__name__)

PACKAGE = __name__.split('.')[0]

#: Keys of the ``io`` section.
IO_KEYS = ('series', 'checkpoint', 'report', 'rollout', 'predictions')

#: Architecture keys of the ``model`` section; the grid, keyframe and
#: external sections fix the remaining :class:`~starflow.model.StarConfig`
#: fields.
MODEL_KEYS = ('num_residual_blocks', 'weight_layers_per_block', 'filters',
              'kernel_size', 'embed_dim', 'l2_coeff')


def defaults():
    """Returns the default run configuration as a nested dict."""
    grid = GridSpec(rows=8, cols=8, lat_min=39.8, lat_max=40.0,
                    lon_min=116.2, lon_max=116.5, interval_seconds=1800,
                    epoch_start=DEFAULT_EPOCH_START)
    model = StarConfig(rows=grid.rows, cols=grid.cols).to_dict()
    return {
        'grid': grid.to_dict(),
        'keyframes': KeyframeConfig().to_dict(),
        'external': ExternalFeatureSpec().to_dict(),
        'model': {key: model[key] for key in MODEL_KEYS},
        'train': TrainConfig().to_dict(),
        'io': dict.fromkeys(IO_KEYS),
    }


class RunConfig(object):
    """A validated run configuration.

    :param dict d: The configuration; merged over :func:`defaults`.
    :param str base_dir: The directory relative ``io`` paths start from.

    """

    def __init__(self, d=None, base_dir=None):
        merged = update_dict(defaults(), copy.deepcopy(d or {}))

        #: The :class:`~starflow.grid.GridSpec`.
        self.grid = _section(GridSpec, merged, 'grid')

        #: The :class:`~starflow.keyframes.KeyframeConfig`.
        self.keyframes = _section(KeyframeConfig, merged, 'keyframes')

        #: The :class:`~starflow.keyframes.ExternalFeatureSpec`.
        self.external = _section(ExternalFeatureSpec, merged, 'external')

        #: The :class:`~starflow.training.TrainConfig`.
        self.train = _section(TrainConfig, merged, 'train')

        #: Architecture settings (see :data:`MODEL_KEYS`).
        self.model = merged['model']

        #: Paths by :data:`IO_KEYS` key, as written in the configuration.
        self.io = merged['io']

        self.base_dir = base_dir or os.getcwd()
        self.model_config()

    @classmethod
    def load(cls, path):
        """Reads a configuration file."""
        logger.debug("Opening file for reading: '%s'." % path)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                d = json.load(f)
        except ValueError as e:
            raise ConfigError("invalid JSON in '%s': %s" % (path, e))
        return cls(d, base_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def preset(cls, name):
        """Returns a packaged run configuration (e.g. ``'taxibj-mini'``)."""
        return cls(load_resource(name))

    def model_config(self):
        """Returns the :class:`~starflow.model.StarConfig` of this run."""
        return StarConfig.for_grid(self.grid.rows, self.grid.cols,
                                   self.keyframes, self.external,
                                   **self.model)

    def with_seed(self, seed):
        """Returns a copy whose training seed is *seed*."""
        d = self.to_dict()
        d['train']['seed'] = seed
        return RunConfig(d, base_dir=self.base_dir)

    def path(self, key):
        """Returns the ``io`` path *key* resolved against :attr:`base_dir`,
        or ``None`` if it is not set."""
        value = self.io[key]
        if value is None:
            return None
        return os.path.join(self.base_dir, value)

    def check_paths(self, inputs=(), outputs=()):
        """Validates the ``io`` paths a command reads and writes."""
        for key in inputs:
            check_input_path(self.path(key), key='io.' + key)
        for key in outputs:
            check_output_path(self.path(key), key='io.' + key)

    def to_dict(self):
        return {
            'grid': self.grid.to_dict(),
            'keyframes': self.keyframes.to_dict(),
            'external': self.external.to_dict(),
            'model': dict(self.model),
            'train': self.train.to_dict(),
            'io': dict(self.io),
        }

    def dumps(self):
        """Returns the normalized configuration as JSON text."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def __eq__(self, other):
        return (isinstance(other, RunConfig) and
                self.to_dict() == other.to_dict())

    def __ne__(self, other):
        return not self == other


def _section(cls, merged, name):
    try:
        return cls.from_dict(merged[name])
    except TypeError as e:
        raise ConfigError("invalid '%s' section: %s" % (name, e), key=name)


def load_resource(name):
    """Reads the packaged JSON resource ``data/<name>.json``."""
    resource = 'data/%s.json' % name
    logger.debug("Opening package resource for reading: '%s'." % resource)
    try:
        contents = pkgutil.get_data(PACKAGE, resource)
    except (IOError, OSError):
        raise ConfigError("unknown preset '%s'" % name)
    return json.loads(contents.decode('utf-8'))


def load_synth_spec(path=None, preset=None):
    """Reads a :class:`~starflow.synth.SynthSpec` from a file or a packaged
    preset (``data/<preset>-synth.json``)."""
    if preset is not None:
        return SynthSpec.from_dict(load_resource(preset + '-synth'))
    check_input_path(path, key='--spec')
    logger.debug("Opening file for reading: '%s'." % path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            d = json.load(f)
    except ValueError as e:
        raise ConfigError("invalid JSON in '%s': %s" % (path, e))
    return SynthSpec.from_dict(d)
