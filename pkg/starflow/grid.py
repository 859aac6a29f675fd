# -*- coding: utf-8 -*-
"""City grids, trajectories and inflow/outflow counting.

A city's bounding box is split uniformly into ``rows × cols`` cells. Every
consecutive pair of trajectory points that lies in different cells is one
transition: it adds one to the outflow of the cell it leaves and one to the
inflow of the cell it enters, in the interval containing the timestamp of the
earlier point. Points outside the bounding box belong to no cell, so a
transition across the border only counts on its in-grid side.

"""

import collections
import concurrent.futures
import dataclasses
import datetime
import logging

import numpy as np

from starflow.errors import ConfigError, ContractError, ShapeError

logger = logging.getLogger(__name__)

#: Index of the inflow channel in a frame.
INFLOW = 0

#: Index of the outflow channel in a frame.
OUTFLOW = 1

#: Returned by :func:`assign_cell` for points outside the bounding box.
OUTSIDE = None

TrajectoryPoint = collections.namedtuple(
    'TrajectoryPoint', ('traj_id', 'timestamp', 'lat', 'lon'))


@dataclasses.dataclass(frozen=True)
class GridSpec(object):
    """The spatial and temporal layout of a city grid.

    Row ``i`` grows with latitude and column ``j`` with longitude, so cell
    ``(0, 0)`` is the south-west corner. Cells are half-open
    ``[low, high)`` except the last row and column, which also contain the
    maximum bound.

    """

    rows: int
    cols: int
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    #: Length of one time interval in seconds.
    interval_seconds: int = 1800
    #: Absolute timestamp (epoch seconds, UTC) of the start of interval 0.
    epoch_start: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid needs at least one row and one column",
                              key='grid')
        if not self.lat_min < self.lat_max:
            raise ConfigError("lat_min must be below lat_max",
                              key='grid.lat_min')
        if not self.lon_min < self.lon_max:
            raise ConfigError("lon_min must be below lon_max",
                              key='grid.lon_min')
        if self.interval_seconds < 1:
            raise ConfigError("interval_seconds must be positive",
                              key='grid.interval_seconds')

    @property
    def shape(self):
        """The shape ``(2, rows, cols)`` of one flow frame."""
        return (2, self.rows, self.cols)

    @property
    def intervals_per_day(self):
        return 86400 // self.interval_seconds

    def interval_of(self, timestamp):
        """Returns the interval index containing *timestamp*."""
        return (int(timestamp) - self.epoch_start) // self.interval_seconds

    def interval_start(self, t):
        """Returns the UTC :class:`datetime.datetime` at which *t* starts."""
        seconds = self.epoch_start + t * self.interval_seconds
        return datetime.datetime.fromtimestamp(seconds, datetime.timezone.utc)

    def shifted(self, t):
        """Returns a copy whose interval 0 is this grid's interval *t*."""
        return dataclasses.replace(
            self, epoch_start=self.epoch_start + t * self.interval_seconds)

    def cell_bounds(self, i, j):
        """Returns ``(lat_low, lat_high, lon_low, lon_high)`` of a cell."""
        dlat = (self.lat_max - self.lat_min) / self.rows
        dlon = (self.lon_max - self.lon_min) / self.cols
        return (self.lat_min + i * dlat, self.lat_min + (i + 1) * dlat,
                self.lon_min + j * dlon, self.lon_min + (j + 1) * dlon)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Trajectory(object):
    """The time-ordered points of one moving object.

    :param traj_id: An opaque identifier.
    :param timestamps: Epoch seconds, non-decreasing.
    :param lats: Latitudes in degrees.
    :param lons: Longitudes in degrees.

    """

    def __init__(self, traj_id, timestamps, lats, lons):
        self.traj_id = traj_id
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.lats = np.asarray(lats, dtype=np.float64)
        self.lons = np.asarray(lons, dtype=np.float64)
        if not (len(self.timestamps) == len(self.lats) == len(self.lons)):
            raise ShapeError('Trajectory', ('points',), len(self.timestamps),
                             (len(self.lats), len(self.lons)))

    @classmethod
    def from_points(cls, traj_id, points):
        """Builds a trajectory from ``(timestamp, lat, lon)`` triples.

        The points are sorted by timestamp (stable for equal timestamps).

        """
        points = sorted(points, key=lambda p: p[0])
        if not points:
            return cls(traj_id, [], [], [])
        timestamps, lats, lons = zip(*points)
        return cls(traj_id, timestamps, lats, lons)

    @property
    def points(self):
        for ts, lat, lon in zip(self.timestamps, self.lats, self.lons):
            yield TrajectoryPoint(self.traj_id, int(ts), float(lat),
                                  float(lon))

    def is_sorted(self):
        return bool(np.all(np.diff(self.timestamps) >= 0))

    def __len__(self):
        return len(self.timestamps)

    def __repr__(self):
        return 'Trajectory(%r, %d points)' % (self.traj_id, len(self))


def assign_cell(point, grid):
    """Returns the ``(i, j)`` cell of *point* or :data:`OUTSIDE`.

    :param point: A :class:`TrajectoryPoint` (or anything with ``lat`` and
        ``lon`` attributes).
    :param GridSpec grid: The city grid.

    """
    rows, cols = _cell_indices(np.array([point.lat]), np.array([point.lon]),
                               grid)
    if rows[0] < 0:
        return OUTSIDE
    return int(rows[0]), int(cols[0])


def _cell_indices(lats, lons, grid):
    """Vectorised :func:`assign_cell`; outside points get row/col ``-1``."""
    inside = ((lats >= grid.lat_min) & (lats <= grid.lat_max) &
              (lons >= grid.lon_min) & (lons <= grid.lon_max))
    with np.errstate(invalid='ignore'):
        rows = np.floor((lats - grid.lat_min) / (grid.lat_max - grid.lat_min) *
                        grid.rows)
        cols = np.floor((lons - grid.lon_min) / (grid.lon_max - grid.lon_min) *
                        grid.cols)
    rows = np.clip(np.nan_to_num(rows), 0, grid.rows - 1).astype(np.int64)
    cols = np.clip(np.nan_to_num(cols), 0, grid.cols - 1).astype(np.int64)
    rows[~inside] = -1
    cols[~inside] = -1
    return rows, cols


class FlowFrame(object):
    """One ``2 × rows × cols`` inflow/outflow snapshot.

    :param data: The flows; channel 0 is inflow, channel 1 outflow.
    :param int t: The interval index of the frame.

    """

    def __init__(self, data, t):
        self.data = np.asarray(data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 2:
            raise ShapeError('FlowFrame', ('channel',), '2×I×J',
                             self.data.shape)
        self.t = t

    @property
    def inflow(self):
        return self.data[INFLOW]

    @property
    def outflow(self):
        return self.data[OUTFLOW]

    def __repr__(self):
        return 'FlowFrame(t=%d, shape=%s)' % (self.t, self.data.shape)


class FrameSeries(object):
    """The contiguous sequence of flow frames of one city grid.

    The frames are stored as one float32 array of shape
    ``(T, 2, rows, cols)``; indexing returns :class:`FlowFrame` views.

    :param GridSpec grid: The grid the frames were counted on.
    :param data: An array of shape ``(T, 2, rows, cols)``.

    """

    def __init__(self, grid, data):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 4 or data.shape[1:] != grid.shape:
            raise ShapeError('FrameSeries', ('frame',), grid.shape,
                             data.shape[1:])
        self.grid = grid
        self.data = data

    @classmethod
    def from_frames(cls, grid, frames):
        """Builds a series from :class:`FlowFrame` objects.

        The frames must be numbered consecutively from 0.

        """
        for expected, frame in enumerate(frames):
            if frame.t != expected:
                raise ContractError("frame indices must be consecutive from "
                                    "0; found %d at position %d" %
                                    (frame.t, expected))
        if not frames:
            return cls(grid, np.zeros((0,) + grid.shape, dtype=np.float32))
        return cls(grid, np.stack([f.data for f in frames]))

    @property
    def frames(self):
        return [self[t] for t in range(len(self))]

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, t):
        if not 0 <= t < len(self):
            raise IndexError("frame %d outside series of length %d" %
                             (t, len(self)))
        return FlowFrame(self.data[t], t)

    def __eq__(self, other):
        return (isinstance(other, FrameSeries) and self.grid == other.grid and
                self.data.shape == other.data.shape and
                np.array_equal(self.data, other.data))

    def __ne__(self, other):
        return not self == other

    def slice(self, start, stop):
        """Returns frames ``start..stop-1`` as a new series starting at 0."""
        return FrameSeries(self.grid.shifted(start), self.data[start:stop])

    def is_integral(self):
        """Whether or not every flow is a whole number."""
        return bool(np.all(self.data == np.round(self.data)))

    def __repr__(self):
        return 'FrameSeries(T=%d, grid=%dx%d)' % (len(self), self.grid.rows,
                                                   self.grid.cols)


def _transitions(trajectory, grid):
    """Returns ``(intervals, out_cells, in_cells)`` of one trajectory.

    Cells are flattened indices ``i·cols + j``; ``-1`` marks the outside of
    the grid.

    """
    rows, cols = _cell_indices(trajectory.lats, trajectory.lons, grid)
    cells = np.where(rows >= 0, rows * grid.cols + cols, -1)
    moved = cells[:-1] != cells[1:]
    intervals = ((trajectory.timestamps[:-1][moved] - grid.epoch_start) //
                 grid.interval_seconds)
    return intervals, cells[:-1][moved], cells[1:][moved]


def _count_chunk(trajectories, grid, start, stop):
    """Counts the transitions of *trajectories* into a fresh accumulator."""
    counts = np.zeros((stop - start, 2, grid.rows * grid.cols),
                      dtype=np.float64)
    ignored = 0
    for trajectory in trajectories:
        if len(trajectory) < 2:
            continue
        intervals, out_cells, in_cells = _transitions(trajectory, grid)
        in_range = (intervals >= start) & (intervals < stop)
        ignored += int(np.count_nonzero(~in_range))
        offsets = intervals[in_range] - start
        out_cells, in_cells = out_cells[in_range], in_cells[in_range]
        leaving = out_cells >= 0
        np.add.at(counts, (offsets[leaving], OUTFLOW, out_cells[leaving]), 1)
        entering = in_cells >= 0
        np.add.at(counts, (offsets[entering], INFLOW, in_cells[entering]), 1)
    return counts, ignored


def _last_interval(trajectories, grid):
    last = -1
    for trajectory in trajectories:
        if len(trajectory) >= 2:
            last = max(last, grid.interval_of(trajectory.timestamps[-2]))
    return last


def count_flows(trajectories, grid, t_range=None, workers=1):
    """Counts the inflow and outflow of every cell and interval.

    :param list trajectories: Time-sorted :class:`Trajectory` objects.
    :param GridSpec grid: The city grid.
    :param tuple t_range: ``(start, stop)`` absolute interval indices to count
        (``stop`` exclusive). Defaults to interval 0 through the last
        interval holding a transition, or the single interval 0 if there is
        no transition at all. The result is re-based so its frame 0
        is interval ``start``.
    :param int workers: Number of threads counting trajectory chunks; the
        per-thread counts are added, so the result does not depend on it.
    :return: The counted flows.
    :rtype: :class:`FrameSeries`

    """
    trajectories = list(trajectories)
    for trajectory in trajectories:
        if not trajectory.is_sorted():
            raise ContractError("trajectory %r is not sorted by time" %
                                (trajectory.traj_id,))
    if t_range is None:
        t_range = (0, max(_last_interval(trajectories, grid), 0) + 1)
    start, stop = int(t_range[0]), int(t_range[1])
    if stop <= start:
        raise ContractError("empty t_range (%d, %d)" % (start, stop))

    if workers > 1 and len(trajectories) > 1:
        chunks = [trajectories[k::workers] for k in range(workers)]
        with concurrent.futures.ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(
                lambda chunk: _count_chunk(chunk, grid, start, stop), chunks))
        counts = sum(r[0] for r in results)
        ignored = sum(r[1] for r in results)
    else:
        counts, ignored = _count_chunk(trajectories, grid, start, stop)
    if ignored:
        logger.debug("Ignored %d transition(s) outside intervals [%d, %d)." %
                     (ignored, start, stop))
    data = counts.reshape((stop - start,) + grid.shape).astype(np.float32)
    logger.info("Counted %d trajectories into %d frames." %
                (len(trajectories), stop - start))
    return FrameSeries(grid.shifted(start), data)
