# -*- coding: utf-8 -*-
"""Utility functions for starflow."""

import contextlib
import os

import numpy as np

from starflow.errors import ConfigError


def update_dict(d, other, allow_unknown=False, path=''):
    """Updates a nested dict *d* with the key/value pairs from *other*.

    *d* holds the defaults. Nested dictionaries are merged recursively, every
    other value in *other* replaces the value in *d*. Keys of *other* that
    are missing from *d* raise :exc:`~starflow.errors.ConfigError` unless
    *allow_unknown* is ``True``, which catches misspelled configuration keys
    early.

    :param dict d: A base dictionary that should be updated.
    :param dict other: A dictionary whose key/value pairs should be merged
        into *d*.
    :param bool allow_unknown: Whether or not to accept keys that *d* does
        not already have.
    :param str path: The dotted path of *d*, used in error messages.
    :return: *d*
    :rtype: :class:`dict`

    """
    if not isinstance(other, dict):
        raise ConfigError("expected an object for '%s'" % (path or '<root>'),
                          key=path or None)
    for key, value in other.items():
        dotted = path + '.' + key if path else key
        if key not in d:
            if not allow_unknown:
                raise ConfigError("unknown key '%s'" % dotted, key=dotted)
            d[key] = value
            continue
        if isinstance(d[key], dict) and not isinstance(value, dict):
            raise ConfigError("expected an object for '%s'" % dotted,
                              key=dotted)
        if isinstance(d[key], dict):
            update_dict(d[key], value, allow_unknown=allow_unknown,
                        path=dotted)
        else:
            d[key] = value
    return d


def one_hot(index, width, dtype=np.float32):
    """Returns a vector of *width* zeros with a one at *index*."""
    if not 0 <= index < width:
        raise ValueError("one-hot index %d out of range [0, %d)" % (index,
                                                                    width))
    vector = np.zeros(width, dtype=dtype)
    vector[index] = 1
    return vector


@contextlib.contextmanager
def open_binary(target, mode):
    """Yields a binary file object for *target*.

    *target* may be a filename or an already opened binary file object; file
    objects are not closed on exit.

    """
    if hasattr(target, 'read') or hasattr(target, 'write'):
        yield target
        return
    with open(target, mode) as f:
        yield f


def check_input_path(path, key=None):
    """Raises :exc:`~starflow.errors.ConfigError` if *path* is not a file."""
    if not path or not os.path.isfile(path):
        raise ConfigError("input file not found: '%s'" % path, key=key)


def check_output_path(path, key=None):
    """Raises :exc:`~starflow.errors.ConfigError` if *path* can't be created.

    Only the parent directory is checked; the file itself may not exist yet.

    """
    if not path:
        raise ConfigError("missing output path", key=key)
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ConfigError("output directory does not exist: '%s'" % parent,
                          key=key)
