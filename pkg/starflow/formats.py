# -*- coding: utf-8 -*-
"""Binary file formats: frame series, checkpoints and PGM images.

Frame series (``.stf``)::

    magic 'STFR' | version u32 | rows u32 | cols u32 | T u32 |
    interval_seconds u32 | epoch_start i64 |
    lat_min f64 | lat_max f64 | lon_min f64 | lon_max f64 |
    T·2·rows·cols f32 in (t, channel, row, col) order

Checkpoints (``.stck``)::

    magic 'STCK' | version u32 | config length u32 | config JSON (UTF-8) |
    records until end of file, each:
        name length u16 | name (UTF-8) | rank u8 | dims u32[rank] |
        f32 data

All numbers are little-endian.

"""

import json
import logging
import struct

import numpy as np

from starflow.errors import (BadMagicError, CheckpointShapeError, FormatError,
                             NameCollisionError, TruncationError,
                             VersionMismatchError)
from starflow.grid import FrameSeries, GridSpec
from starflow.utils import open_binary

logger = logging.getLogger(__name__)

SERIES_MAGIC = b'STFR'
SERIES_VERSION = 1
CHECKPOINT_MAGIC = b'STCK'
CHECKPOINT_VERSION = 1

_PREAMBLE = struct.Struct('<4sI')
_SERIES_HEADER = struct.Struct('<IIIIq4d')
_U32 = struct.Struct('<I')
_U16 = struct.Struct('<H')
_U8 = struct.Struct('<B')


def sniff_magic(path):
    """Returns the first four bytes of the file at *path*."""
    with open(path, 'rb') as f:
        return f.read(4)


class _Reader(object):
    """Reads fixed-size fields from a byte string, reporting truncation."""

    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    @property
    def remaining(self):
        return len(self.payload) - self.offset

    def take(self, size, what):
        if self.remaining < size:
            raise TruncationError(what, size, self.remaining)
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, what):
        return fmt.unpack(self.take(fmt.size, what))


def _check_preamble(reader, magic, version):
    if reader.remaining < len(magic):
        raise TruncationError('magic', len(magic), reader.remaining)
    found = reader.take(len(magic), 'magic')
    if found != magic:
        raise BadMagicError(magic, found)
    found_version, = reader.unpack(_U32, 'version')
    if found_version != version:
        raise VersionMismatchError(version, found_version)


def write_series(series, sink):
    """Writes *series* in the ``.stf`` format.

    :param FrameSeries series: The series to write.
    :param sink: A filename or a binary file object.
    :return: The number of bytes written.
    :rtype: int

    """
    grid = series.grid
    header = (_PREAMBLE.pack(SERIES_MAGIC, SERIES_VERSION) +
              _SERIES_HEADER.pack(grid.rows, grid.cols, len(series),
                                  grid.interval_seconds, grid.epoch_start,
                                  grid.lat_min, grid.lat_max, grid.lon_min,
                                  grid.lon_max))
    payload = series.data.astype('<f4').tobytes()
    with open_binary(sink, 'wb') as f:
        logger.debug("Writing frame series: %r." % series)
        f.write(header)
        f.write(payload)
    return len(header) + len(payload)


def read_series(source):
    """Reads a ``.stf`` frame series.

    :param source: A filename or a binary file object.
    :rtype: :class:`~starflow.grid.FrameSeries`
    :raises BadMagicError: If the file is not a frame series.
    :raises VersionMismatchError: If the format version is unsupported.
    :raises TruncationError: If the file ends early.

    """
    with open_binary(source, 'rb') as f:
        reader = _Reader(f.read())
    _check_preamble(reader, SERIES_MAGIC, SERIES_VERSION)
    (rows, cols, count, interval, epoch_start, lat_min, lat_max, lon_min,
     lon_max) = reader.unpack(_SERIES_HEADER, 'series header')
    grid = GridSpec(rows=rows, cols=cols, lat_min=lat_min, lat_max=lat_max,
                    lon_min=lon_min, lon_max=lon_max,
                    interval_seconds=interval, epoch_start=epoch_start)
    size = count * 2 * rows * cols * 4
    data = np.frombuffer(reader.take(size, 'series payload'), dtype='<f4')
    if reader.remaining:
        raise FormatError("%d unexpected trailing bytes" % reader.remaining)
    data = data.astype(np.float32).reshape((count,) + grid.shape)
    return FrameSeries(grid, data)


def write_checkpoint(sink, config, params):
    """Writes a checkpoint container.

    :param sink: A filename or a binary file object.
    :param dict config: JSON-serialisable configuration.
    :param list params: ``(name, array)`` pairs in record order.
    :return: The number of bytes written.

    """
    config_bytes = json.dumps(config, sort_keys=True).encode('utf-8')
    chunks = [_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION),
              _U32.pack(len(config_bytes)), config_bytes]
    for name, array in params:
        encoded = name.encode('utf-8')
        chunks.append(_U16.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U8.pack(array.ndim))
        chunks.append(struct.pack('<%dI' % array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array).astype('<f4').tobytes())
    with open_binary(sink, 'wb') as f:
        for chunk in chunks:
            f.write(chunk)
    return sum(len(c) for c in chunks)


def read_checkpoint(source, expected_shapes):
    """Reads a checkpoint container.

    Records are validated against the shapes the stored config implies as
    they are read, so tampered dimensions are reported as shape errors rather
    than as garbled later records.

    :param source: A filename or a binary file object.
    :param expected_shapes: A callable mapping the decoded config to an
        ordered ``{name: shape}`` mapping.
    :return: ``(config, {name: array})``

    """
    with open_binary(source, 'rb') as f:
        reader = _Reader(f.read())
    _check_preamble(reader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    length, = reader.unpack(_U32, 'config length')
    try:
        config = json.loads(reader.take(length, 'config').decode('utf-8'))
    except ValueError as e:
        raise FormatError("unreadable checkpoint config: %s" % e)
    expected = expected_shapes(config)

    arrays = {}
    while reader.remaining:
        name_length, = reader.unpack(_U16, 'record name length')
        raw_name = reader.take(name_length, 'record name')
        try:
            name = raw_name.decode('utf-8')
        except UnicodeDecodeError as e:
            raise FormatError("unreadable record name %r: %s" % (raw_name, e))
        if name in arrays:
            raise NameCollisionError(name)
        if name not in expected:
            raise FormatError("unexpected parameter record '%s'" % name)
        rank, = reader.unpack(_U8, 'record rank')
        dims = struct.unpack('<%dI' % rank,
                             reader.take(4 * rank, 'record dims'))
        if tuple(dims) != tuple(expected[name]):
            raise CheckpointShapeError(name, tuple(expected[name]), dims)
        size = int(np.prod(dims)) * 4
        data = np.frombuffer(reader.take(size, 'record %s' % name),
                             dtype='<f4')
        arrays[name] = data.astype(np.float32).reshape(dims)
    missing = [name for name in expected if name not in arrays]
    if missing:
        raise TruncationError('checkpoint records', len(expected),
                              len(arrays))
    return config, arrays


def write_pgm(path, pixels):
    """Writes an 8-bit grayscale binary PGM (P5) image.

    :param str path: The output filename.
    :param pixels: A 2-D ``uint8`` array; rows become image rows.

    """
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    height, width = pixels.shape
    header = ('P5\n%d %d\n255\n' % (width, height)).encode('ascii')
    with open(path, 'wb') as f:
        logger.debug("Writing image: '%s'." % path)
        f.write(header)
        f.write(pixels.tobytes())
    return len(header) + pixels.size
