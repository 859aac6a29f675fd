# -*- coding: utf-8 -*-
"""Synthetic crowd-flow data with daily and weekly seasonality.

Two generators are available:

* ``frame`` mode writes flows directly: a base intensity plus a daily and a
  weekly sinusoid (each cell and channel with its own phase) plus
  exponential noise, clamped at 0.
* ``trajectory`` mode simulates agents taking short trips between
  neighbouring cells. The number of trips per interval follows the same
  seasonal intensity, so the counted flows show the same periodicity, and
  every point stays inside the grid's bounding box.

Both are deterministic for a given seed.

"""

import dataclasses
import io
import logging

import numpy as np

from starflow.errors import ConfigError
from starflow.grid import FrameSeries, GridSpec, Trajectory, count_flows
from starflow.sources import HEADERS, TrajectoryList
from starflow.utils import update_dict

logger = logging.getLogger(__name__)

#: Monday, 5 January 2015, 00:00 UTC.
DEFAULT_EPOCH_START = 1420416000

#: Row and column steps of the four moves an agent can make.
_MOVES = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)])

#: Longest trip, in cell changes.
MAX_TRIP_STEPS = 3


@dataclasses.dataclass(frozen=True)
class SynthSpec(object):
    """Settings of :func:`synth_generate`.

    In ``frame`` mode ``base_intensity`` and the amplitudes are flows per
    cell; in ``trajectory`` mode they are trips per interval over the whole
    grid. The series covers ``weeks`` weeks plus ``extra_days`` days.

    """

    rows: int = 8
    cols: int = 8
    weeks: int = 4
    extra_days: int = 0
    intervals_per_day: int = 48
    base_intensity: float = 10.0
    daily_amplitude: float = 5.0
    weekly_amplitude: float = 2.0
    noise: float = 1.0
    mode: str = 'frame'
    seed: int = 0
    epoch_start: int = DEFAULT_EPOCH_START
    agents: int = 1000
    lat_min: float = 39.8
    lat_max: float = 40.0
    lon_min: float = 116.2
    lon_max: float = 116.5

    def __post_init__(self):
        checks = (
            ('weeks', self.weeks >= 1, "must be at least 1"),
            ('extra_days', self.extra_days >= 0, "must be non-negative"),
            ('intervals_per_day', self.intervals_per_day >= 1 and
             86400 % self.intervals_per_day == 0, "must divide 86400"),
            ('base_intensity', self.base_intensity >= 0,
             "must be non-negative"),
            ('daily_amplitude', self.daily_amplitude >= 0,
             "must be non-negative"),
            ('weekly_amplitude', self.weekly_amplitude >= 0,
             "must be non-negative"),
            ('noise', self.noise >= 0, "must be non-negative"),
            ('mode', self.mode in ('frame', 'trajectory'),
             "must be 'frame' or 'trajectory'"),
            ('agents', self.agents >= 1, "must be positive"),
        )
        for name, ok, problem in checks:
            if not ok:
                raise ConfigError("%s %s (got %r)" %
                                  (name, problem, getattr(self, name)),
                                  key='synth.' + name)
        self.grid  # validates the grid fields

    @property
    def num_intervals(self):
        return (7 * self.weeks + self.extra_days) * self.intervals_per_day

    @property
    def grid(self):
        return GridSpec(rows=self.rows, cols=self.cols, lat_min=self.lat_min,
                        lat_max=self.lat_max, lon_min=self.lon_min,
                        lon_max=self.lon_max,
                        interval_seconds=86400 // self.intervals_per_day,
                        epoch_start=self.epoch_start)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        """Builds a spec from *d*, rejecting unknown keys."""
        return cls(**update_dict(cls().to_dict(), d, path='synth'))


def _seasonal(spec, t, daily_phase=0.0, weekly_phase=0.0):
    day = spec.intervals_per_day
    return (spec.daily_amplitude *
            np.sin(2 * np.pi * t / day + daily_phase) +
            spec.weekly_amplitude *
            np.sin(2 * np.pi * t / (7 * day) + weekly_phase))


def _frame_series(spec, rng):
    shape = (2, spec.rows, spec.cols)
    daily_phase = rng.uniform(0, 2 * np.pi, size=shape)
    weekly_phase = rng.uniform(0, 2 * np.pi, size=shape)
    t = np.arange(spec.num_intervals, dtype=np.float64).reshape(-1, 1, 1, 1)
    flows = spec.base_intensity + _seasonal(spec, t, daily_phase,
                                            weekly_phase)
    if spec.noise > 0:
        flows = flows + rng.exponential(spec.noise, size=flows.shape)
    return FrameSeries(spec.grid, np.maximum(flows, 0).astype(np.float32))


def _neighbour_table(rows, cols, attractiveness):
    """Returns cumulative move weights per cell and each cell's last legal
    move (``-1`` if the cell has no neighbour)."""
    weights = np.zeros((rows * cols, len(_MOVES)))
    for i in range(rows):
        for j in range(cols):
            for d, (di, dj) in enumerate(_MOVES):
                if 0 <= i + di < rows and 0 <= j + dj < cols:
                    weights[i * cols + j, d] = attractiveness[i + di, j + dj]
    last = np.array([np.flatnonzero(w).max() if w.any() else -1
                     for w in weights])
    return np.cumsum(weights, axis=1), last


def _walk(start, steps, table, cols, rng):
    """Returns the cell path (``(MAX_TRIP_STEPS + 1) × n``) of every trip."""
    cumulative, last = table
    current = start.copy()
    path = [current]
    for step in range(MAX_TRIP_STEPS):
        u = rng.random(len(current)) * cumulative[current, -1]
        direction = (cumulative[current] <= u[:, np.newaxis]).sum(axis=1)
        direction = np.minimum(direction, np.maximum(last[current], 0))
        di, dj = _MOVES[direction].T
        moved = (current // cols + di) * cols + current % cols + dj
        active = (step < steps) & (last[current] >= 0)
        current = np.where(active, moved, current)
        path.append(current)
    return np.stack(path)


def _trajectories(spec, rng):
    grid = spec.grid
    rows, cols = spec.rows, spec.cols
    dlat = (spec.lat_max - spec.lat_min) / rows
    dlon = (spec.lon_max - spec.lon_min) / cols
    table = _neighbour_table(rows, cols, rng.gamma(2.0, 1.0, (rows, cols)))
    positions = rng.integers(rows * cols, size=spec.agents)
    trajectories = TrajectoryList()
    for t in range(spec.num_intervals):
        rate = max(spec.base_intensity + _seasonal(spec, t), 0.0)
        if spec.noise > 0:
            rate += rng.exponential(spec.noise)
        count = min(int(rng.poisson(rate)), spec.agents)
        agents = rng.choice(spec.agents, size=count, replace=False)
        steps = rng.integers(1, MAX_TRIP_STEPS + 1, size=count)
        path = _walk(positions[agents], steps, table, cols, rng)
        positions[agents] = path[-1]

        start = grid.epoch_start + t * grid.interval_seconds
        offsets = np.sort(rng.integers(0, grid.interval_seconds,
                                       size=(count, MAX_TRIP_STEPS + 1)),
                          axis=1)
        jitter = rng.uniform(0.1, 0.9, size=(2, count, MAX_TRIP_STEPS + 1))
        cells = path.T
        lats = spec.lat_min + (cells // cols + jitter[0]) * dlat
        lons = spec.lon_min + (cells % cols + jitter[1]) * dlon
        for k in range(count):
            n = steps[k] + 1
            trajectories.append(Trajectory(
                'trip-%d' % len(trajectories), start + offsets[k, :n],
                lats[k, :n], lons[k, :n]))
    logger.info("Generated %d trips over %d intervals." %
                (len(trajectories), spec.num_intervals))
    return trajectories


def synth_generate(spec):
    """Generates synthetic data.

    :param SynthSpec spec: The settings.
    :return: A :class:`~starflow.grid.FrameSeries` in ``frame`` mode, a
        :class:`~starflow.sources.TrajectoryList` in ``trajectory`` mode.

    """
    rng = np.random.default_rng(spec.seed)
    if spec.mode == 'frame':
        return _frame_series(spec, rng)
    return _trajectories(spec, rng)


def synth_series(spec):
    """Generates synthetic data and returns its flows as a frame series."""
    data = synth_generate(spec)
    if isinstance(data, FrameSeries):
        return data
    return count_flows(data, spec.grid, t_range=(0, spec.num_intervals))


def write_trajectories(trajectories, sink):
    """Writes trajectories in the CSV format :mod:`starflow.sources` reads.

    :param sink: A filename or a text file object.
    :return: The number of points written.

    """
    if isinstance(sink, str):
        logger.debug("Opening file for writing: '%s'." % sink)
        with open(sink, 'w', encoding='utf-8', newline='') as f:
            return write_trajectories(trajectories, f)
    sink.write(','.join(HEADERS) + '\n')
    written = 0
    for trajectory in trajectories:
        for point in trajectory.points:
            sink.write('%s,%d,%r,%r\n' % (point.traj_id, point.timestamp,
                                          point.lat, point.lon))
            written += 1
    return written


def trajectories_csv(trajectories):
    """Returns the CSV text of *trajectories*."""
    buffer = io.StringIO()
    write_trajectories(trajectories, buffer)
    return buffer.getvalue()
