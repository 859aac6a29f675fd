# -*- coding: utf-8 -*-
"""Trajectory data source classes and methods.

A trajectory source reads one or more trajectory CSV files, merges their
points by trajectory id and counts them into a
:class:`~starflow.grid.FrameSeries`. The CSV format is::

    traj_id,timestamp,lat,lon
    # comment lines start with '#'
    taxi-17,1420070400,39.91,116.39

``timestamp`` is an integer number of epoch seconds.

"""

import csv
import hashlib
import io
import json
import logging
import os
import shutil
import tempfile

from fcache.cache import FileCache
import numpy as np

from starflow.errors import ParseError
from starflow.formats import read_series, write_series
from starflow.grid import Trajectory, count_flows

logger = logging.getLogger(__name__)

#: The header every trajectory CSV file starts with.
HEADERS = ('traj_id', 'timestamp', 'lat', 'lon')

#: The default cache name for processed frame series.
DEFAULT_CACHE_NAME = 'starflow'


class TrajectoryList(list):
    """A list of trajectories that remembers how many lines were skipped."""

    #: The number of malformed lines that were skipped while parsing.
    skipped = 0


def _lines(stream):
    if isinstance(stream, str):
        return stream.splitlines()
    return stream


def _parse_row(row):
    """Returns ``(traj_id, timestamp, lat, lon)`` or raises ValueError."""
    if len(row) != len(HEADERS):
        raise ValueError("expected %d fields, got %d" % (len(HEADERS),
                                                         len(row)))
    traj_id = row[0].strip()
    if not traj_id:
        raise ValueError("empty traj_id")
    timestamp = int(row[1])
    lat, lon = float(row[2]), float(row[3])
    if not (np.isfinite(lat) and np.isfinite(lon)):
        raise ValueError("non-finite coordinate")
    return traj_id, timestamp, lat, lon


def parse_trajectories(stream, strict=False):
    """Parses trajectory CSV text into :class:`~starflow.grid.Trajectory`
    objects.

    Points are grouped by ``traj_id`` (in order of first appearance) and
    sorted by timestamp within each trajectory. Blank lines and lines
    starting with ``#`` are ignored. Malformed lines are logged and skipped,
    or raise :exc:`~starflow.errors.ParseError` if *strict* is ``True``.

    :param stream: A text file object, an iterable of lines or a string.
    :param bool strict: Whether or not malformed lines are errors.
    :rtype: :class:`TrajectoryList`

    """
    points = {}
    skipped = 0
    header_seen = False
    for line_number, line in enumerate(_lines(stream), start=1):
        line = line.rstrip('\r\n')
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        row = next(csv.reader([line]))
        if not header_seen:
            header_seen = True
            if tuple(field.strip() for field in row) == HEADERS:
                continue
            if strict:
                raise ParseError(line_number, line, "missing header")
            logger.warning("Trajectory data has no header; reading line %d "
                           "as data." % line_number)
        try:
            traj_id, timestamp, lat, lon = _parse_row(row)
        except ValueError as e:
            if strict:
                raise ParseError(line_number, line, str(e))
            logger.warning("Skipping line %d: '%s' (%s)." % (line_number,
                                                            line, e))
            skipped += 1
            continue
        points.setdefault(traj_id, []).append((timestamp, lat, lon))

    trajectories = TrajectoryList(Trajectory.from_points(traj_id, p)
                                  for traj_id, p in points.items())
    trajectories.skipped = skipped
    if skipped:
        logger.info("Skipped %d malformed line(s)." % skipped)
    return trajectories


def merge_trajectories(*groups):
    """Merges trajectory lists, joining trajectories that share an id."""
    points = {}
    for group in groups:
        for trajectory in group:
            points.setdefault(trajectory.traj_id, []).extend(
                zip(trajectory.timestamps, trajectory.lats, trajectory.lons))
    return TrajectoryList(Trajectory.from_points(traj_id, p)
                          for traj_id, p in points.items())


class BaseTrajectorySource(object):
    """Base class for trajectory data sources.

    If *cache_data* is ``True``, the counted frame series is stored in a file
    cache keyed by the contents of the source files and the grid, so later
    instances reading the same data skip parsing and counting.

    :param grid: The :class:`~starflow.grid.GridSpec` to count flows on.
    :param tuple t_range: Optional ``(start, stop)`` interval range passed to
        :func:`~starflow.grid.count_flows`.
    :param bool strict: Whether or not malformed lines are errors.
    :param str encoding: The file encoding to use when opening the source's
        files.
    :param bool cache_data: Whether or not to cache the counted series.
    :param str cache_name: The cache's name.
    :param str cache_dir: An explicit cache directory (defaults to the
        platform's user cache directory).
    :param int workers: Threads used to count flows.

    """

    def __init__(self, grid, t_range=None, strict=False, encoding='utf-8',
                 cache_data=False, cache_name=DEFAULT_CACHE_NAME,
                 cache_dir=None, workers=1):
        #: The grid flows are counted on.
        self.grid = grid

        #: The interval range to count.
        self.t_range = t_range

        #: Whether or not malformed lines raise errors.
        self.strict = strict

        #: Threads used by :func:`~starflow.grid.count_flows`.
        self.workers = workers

        #: The file encoding to use when opening the source's files.
        self.encoding = encoding

        #: The counted :class:`~starflow.grid.FrameSeries` (after
        #: :meth:`read`).
        self.series = None

        #: The number of malformed lines skipped by the last :meth:`read`.
        self.skipped = 0

        #: A tuple containing the paths to the source's files.
        self.files = self.files if hasattr(self, 'files') else None

        #: Whether or not to cache the counted series.
        self.cache_data = cache_data
        if self.cache_data:
            self._init_cache(cache_name, cache_dir)

    def _init_cache(self, cache_name, cache_dir):
        """Opens a cache for counted frame series."""
        self.cache = FileCache(cache_name, serialize=False,
                               app_cache_dir=cache_dir)

    def cache_key(self):
        """Returns the cache key of this source's current files and grid."""
        digest = hashlib.sha1()
        for filename in self.files:
            with open(filename, 'rb') as f:
                digest.update(f.read())
        settings = {'grid': self.grid.to_dict(), 'strict': self.strict,
                    't_range': self.t_range}
        digest.update(json.dumps(settings, sort_keys=True).encode('utf-8'))
        return digest.hexdigest()

    @property
    def has_data(self):
        """Boolean value indicating if the flows are already counted."""
        return self.series is not None

    def read(self):
        """Reads the source's files and counts their flows.

        The result is stored in :attr:`series`. If caching is on and the cache
        holds a series for the same files and grid, it is used instead of
        calling :meth:`count`.

        """
        if not self.files:
            raise OSError("No files to read.")
        key = self.cache_key() if self.cache_data else None
        if key is not None and key in self.cache:
            logger.info("Source has cached data. Skipping counting.")
            self.series = read_series(io.BytesIO(self.cache[key]))
            return self.series

        self.series = self.count()

        if key is not None:
            logger.debug("Writing counted series to cache.")
            buffer = io.BytesIO()
            write_series(self.series, buffer)
            self.cache[key] = buffer.getvalue()
            self.cache.sync()
        return self.series

    def members(self):
        """Returns the paths of the files to parse."""
        return self.files

    def count(self):
        """Parses every member file and counts the merged trajectories.

        For each file, this method calls :meth:`read_file` and
        :meth:`process_file`.

        """
        groups = []
        self.skipped = 0
        for filename in self.members():
            contents = self.read_file(filename)
            if contents is None:
                continue
            trajectories = self.process_file(filename, contents)
            self.skipped += trajectories.skipped
            groups.append(trajectories)
        return count_flows(merge_trajectories(*groups), self.grid,
                           t_range=self.t_range, workers=self.workers)

    def read_file(self, filename):
        """Reads a source file's contents.

        .. NOTE:: This method is not implemented in this class and should be
            implemented in child classes.

        :param str filename: The filename of the file to be read.
        :return: The file's contents, or ``None`` to ignore the file.
        :rtype: :class:`str`

        """
        raise NotImplementedError

    def process_file(self, filename, contents):
        """Parses a trajectory file's contents.

        :param str filename: The filename of the file to be processed.
        :param str contents: The contents to be processed.
        :rtype: :class:`TrajectoryList`

        """
        logger.debug("Processing file: '%s'." % filename)
        return parse_trajectories(contents, strict=self.strict)


class TrajectoryFileSource(BaseTrajectorySource):
    """A trajectory source backed by one local CSV file.

    See parent class :class:`BaseTrajectorySource` for the remaining
    parameters.

    :param str filename: The CSV file to read.

    """

    def __init__(self, filename, grid, **kwargs):
        self.files = (filename,)
        super(TrajectoryFileSource, self).__init__(grid, **kwargs)

    def read_file(self, filename):
        logger.debug("Opening file for reading: '%s'." % filename)
        with open(filename, 'r', encoding=self.encoding) as f:
            return f.read()


class TrajectoryArchiveSource(BaseTrajectorySource):
    """A trajectory source backed by a zip or tar archive of CSV files.

    The archive is extracted into a temporary directory that is removed
    again once :meth:`read` finishes.

    :param str archive: The archive file (``.zip``, ``.tar``, ``.tar.gz``,
        ``.tgz``).
    :param tuple whitelist: Basenames of the files to process. If empty,
        every ``.csv`` file in the archive is processed.

    """

    def __init__(self, archive, grid, whitelist=(), **kwargs):
        #: The archive's filename.
        self.archive = archive

        #: A tuple containing names of files that should be processed.
        self.whitelist = tuple(whitelist)

        #: A string indicating the path to the temporary directory.
        self.temp_dir = None

        self.files = (archive,)
        super(TrajectoryArchiveSource, self).__init__(grid, **kwargs)

    def extract(self):
        """Extracts the archive into a new temporary directory."""
        self.temp_dir = tempfile.mkdtemp()
        logger.debug("Unpacking archive file: '%s'." % self.archive)
        shutil.unpack_archive(self.archive, self.temp_dir)

    def members(self):
        files = []
        for root, _, names in os.walk(self.temp_dir):
            files.extend(os.path.join(root, n) for n in names)
        return sorted(files)

    def count(self):
        """Extracts the archive, then parses and counts its CSV files."""
        self.extract()
        try:
            return super(TrajectoryArchiveSource, self).count()
        finally:
            self._cleanup()

    def read_file(self, filename):
        basename = os.path.basename(filename)
        if self.whitelist and basename not in self.whitelist:
            logger.debug("Ignoring file: '%s'." % filename)
            return None
        if not self.whitelist and not basename.endswith('.csv'):
            logger.debug("Ignoring file: '%s'." % filename)
            return None
        logger.debug("Opening file for reading: '%s'." % filename)
        with open(filename, 'r', encoding=self.encoding) as f:
            return f.read()

    def _cleanup(self):
        """Deletes the extracted files and the temporary directory."""
        logger.debug("Cleaning up temporary files.")
        shutil.rmtree(self.temp_dir)
        self.temp_dir = None


def open_source(path, grid, **kwargs):
    """Returns a trajectory source suited to *path* (CSV file or archive)."""
    lowered = path.lower()
    if lowered.endswith(('.zip', '.tar', '.tar.gz', '.tgz')):
        return TrajectoryArchiveSource(path, grid, **kwargs)
    return TrajectoryFileSource(path, grid, **kwargs)
