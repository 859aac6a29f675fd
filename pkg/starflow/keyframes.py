# -*- coding: utf-8 -*-
"""Keyframe selection, input stacking, scaling and external features.

The model input for target interval ``t`` is a stack of earlier frames
chosen by three kinds of offsets: closeness (the last few intervals), period
(the same time on previous days) and trend (the same time in previous
weeks). Each period and trend keyframe also brings ``l_r`` frames right
before it::

    >>> KeyframeConfig.worked_example().offsets()
    [1, 2, 48, 49, 336, 337]

"""

import dataclasses
import logging

import numpy as np

from starflow.errors import ConfigError, ContractError, OutOfHistoryError
from starflow.utils import one_hot

logger = logging.getLogger(__name__)

#: Number of seconds in a day.
SECONDS_PER_DAY = 86400


@dataclasses.dataclass(frozen=True)
class KeyframeConfig(object):
    """Fragment lengths and spans that drive :func:`select_keyframes`.

    :param int l_c: Number of closeness frames.
    :param int l_p: Number of period keyframes.
    :param int l_q: Number of trend keyframes.
    :param int l_r: Number of extra frames taken after every period and
        trend keyframe.
    :param int p: The period span in intervals (one day).
    :param int q: The trend span in intervals (one week).

    """

    l_c: int = 3
    l_p: int = 1
    l_q: int = 1
    l_r: int = 2
    p: int = 48
    q: int = 336

    def __post_init__(self):
        for name in ('l_c', 'l_p', 'l_q', 'l_r'):
            if getattr(self, name) < 0:
                raise ConfigError("%s must be non-negative" % name,
                                  key='keyframes.' + name)
        for name in ('p', 'q'):
            if getattr(self, name) < 1:
                raise ConfigError("%s must be positive" % name,
                                  key='keyframes.' + name)
        if self.l_p and self.l_q and not self.p < self.q:
            raise ConfigError("the period span must be shorter than the "
                              "trend span", key='keyframes.p')
        for length, span, name in ((self.l_p, self.p, 'period'),
                                   (self.l_q, self.q, 'trend')):
            if length > 1 and self.l_r >= span:
                raise ConfigError("l_r must be below the %s span when "
                                  "several %s keyframes are taken" %
                                  (name, name), key='keyframes.l_r')
        if self.num_frames < 1:
            raise ConfigError("at least one keyframe is required",
                              key='keyframes')

    @classmethod
    def star(cls):
        """Closeness 3, one period and one trend keyframe, two extras."""
        return cls(3, 1, 1, 2, 48, 336)

    @classmethod
    def worked_example(cls):
        return cls(2, 1, 1, 1, 48, 336)

    @classmethod
    def st311(cls):
        """Three closeness frames plus one frame a day and a week back."""
        return cls(3, 1, 1, 0, 48, 336)

    @classmethod
    def for_intervals(cls, intervals_per_day, **kwargs):
        """Returns the default lengths with ``p`` one day and ``q`` one week
        of *intervals_per_day*-long intervals."""
        kwargs.setdefault('p', intervals_per_day)
        kwargs.setdefault('q', 7 * intervals_per_day)
        return cls(**kwargs)

    @property
    def num_frames(self):
        """The number ``L`` of stacked frames."""
        return self.l_c + (self.l_p + self.l_q) * (self.l_r + 1)

    @property
    def max_offset(self):
        return max(self.offsets())

    def offsets(self):
        """Returns the keyframe offsets in queue order."""
        queue = list(range(1, self.l_c + 1))
        for length, span in ((self.l_p, self.p), (self.l_q, self.q)):
            for i in range(1, length + 1):
                for r in range(self.l_r + 1):
                    queue.append(i * span + r)
        return queue

    def long_offsets(self):
        """Returns the period and trend offsets (those read far back)."""
        return self.offsets()[self.l_c:]

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def select_keyframes(t, cfg):
    """Returns the offsets of the keyframes for target interval *t*.

    The frame read for offset ``o`` is ``t − o``.

    :param int t: The target interval.
    :param KeyframeConfig cfg: The selection settings.
    :raises OutOfHistoryError: If ``t`` is smaller than the largest offset.

    """
    offsets = cfg.offsets()
    if t - max(offsets) < 0:
        raise OutOfHistoryError(t, max(offsets))
    return offsets


def build_input_tensor(series, t, offsets):
    """Stacks the frames ``t − offset`` into a ``2L × I × J`` array.

    Channel ``2k`` holds the inflow and channel ``2k + 1`` the outflow of the
    ``k``-th offset's frame.

    :param series: A :class:`~starflow.grid.FrameSeries`.
    :param int t: The target interval; it may equal ``len(series)``.
    :param list offsets: Offsets as returned by :func:`select_keyframes`.
    :rtype: :class:`numpy.ndarray`

    """
    indices = t - np.asarray(offsets, dtype=np.int64)
    if indices.min() < 0:
        raise OutOfHistoryError(t, max(offsets))
    if indices.max() >= len(series):
        raise OutOfHistoryError(t, max(offsets),
                                "frame %d is past the end of a series of "
                                "length %d" % (indices.max(), len(series)))
    frames = series.data[indices]
    return frames.reshape((-1,) + frames.shape[2:])


def _float_dtype(x):
    return np.float32 if np.asarray(x).dtype == np.float32 else np.float64


@dataclasses.dataclass(frozen=True)
class MinMaxScaler(object):
    """Maps ``[min_val, max_val]`` linearly onto ``[-1, 1]``.

    If ``min_val == max_val`` every value scales to 0 and unscales to
    ``min_val``. Values outside the fitted range are not clipped.

    """

    min_val: float
    max_val: float

    def __post_init__(self):
        if self.max_val < self.min_val:
            raise ContractError("max_val %r is below min_val %r" %
                                (self.max_val, self.min_val))

    @classmethod
    def fit(cls, data):
        """Fits the scaler to every value of *data*."""
        data = np.asarray(data)
        if not data.size:
            raise ContractError("cannot fit a scaler to no data")
        return cls(float(data.min()), float(data.max()))

    @property
    def span(self):
        return self.max_val - self.min_val

    def scale(self, x):
        dtype = _float_dtype(x)
        x = np.asarray(x, dtype=np.float64)
        if self.span == 0:
            return np.zeros_like(x, dtype=dtype)
        return (2.0 * (x - self.min_val) / self.span - 1.0).astype(dtype)

    def unscale(self, y):
        dtype = _float_dtype(y)
        y = np.asarray(y, dtype=np.float64)
        if self.span == 0:
            return np.full_like(y, self.min_val, dtype=dtype)
        return ((y + 1.0) / 2.0 * self.span + self.min_val).astype(dtype)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def fit_scaler(train_frames):
    """Fits a :class:`MinMaxScaler` on a training series or array."""
    data = getattr(train_frames, 'data', train_frames)
    scaler = MinMaxScaler.fit(data)
    logger.debug("Fitted scaler: %r." % (scaler,))
    return scaler


def scale(x, scaler):
    return scaler.scale(x)


def unscale(y, scaler):
    return scaler.unscale(y)


@dataclasses.dataclass(frozen=True)
class ExternalFeatureSpec(object):
    """Which calendar features describe an interval.

    The feature vector concatenates, in this order and when enabled: a
    time-of-day one-hot, a day-of-week one-hot (Monday first), a weekend
    flag, a holiday flag and one one-hot per extra slot.

    :param int intervals_per_day: Width of the time-of-day one-hot.
    :param tuple holidays: ISO dates (``'2015-01-01'``) flagged as holidays.
    :param tuple extra_slots: ``(name, cardinality)`` pairs of additional
        categorical features such as weather.

    """

    intervals_per_day: int = 48
    time_of_day: bool = True
    day_of_week: bool = True
    weekend: bool = True
    holiday: bool = True
    holidays: tuple = ()
    extra_slots: tuple = ()

    def __post_init__(self):
        if self.intervals_per_day < 1:
            raise ConfigError("intervals_per_day must be positive",
                              key='external.intervals_per_day')
        object.__setattr__(self, 'holidays', tuple(self.holidays))
        slots = tuple((str(name), int(cardinality))
                      for name, cardinality in self.extra_slots)
        for name, cardinality in slots:
            if cardinality < 1:
                raise ConfigError("slot '%s' needs a positive cardinality" %
                                  name, key='external.extra_slots')
        object.__setattr__(self, 'extra_slots', slots)

    @classmethod
    def disabled(cls):
        """A spec without any features; the external component is skipped."""
        return cls(time_of_day=False, day_of_week=False, weekend=False,
                   holiday=False)

    @property
    def width(self):
        return ((self.intervals_per_day if self.time_of_day else 0) +
                (7 if self.day_of_week else 0) + int(self.weekend) +
                int(self.holiday) +
                sum(cardinality for _, cardinality in self.extra_slots))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d['holidays'] = list(self.holidays)
        d['extra_slots'] = [list(slot) for slot in self.extra_slots]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def external_features(t, grid, spec, extra=None):
    """Returns the calendar feature vector of interval *t*.

    :param int t: The interval index (relative to ``grid.epoch_start``).
    :param grid: The :class:`~starflow.grid.GridSpec` fixing the calendar.
    :param ExternalFeatureSpec spec: The enabled features.
    :param dict extra: Category indices of the extra slots by name; missing
        slots use category 0.
    :rtype: :class:`numpy.ndarray`

    """
    start = grid.interval_start(t)
    blocks = []
    if spec.time_of_day:
        seconds = start.hour * 3600 + start.minute * 60 + start.second
        blocks.append(one_hot(seconds * spec.intervals_per_day //
                              SECONDS_PER_DAY, spec.intervals_per_day))
    if spec.day_of_week:
        blocks.append(one_hot(start.weekday(), 7))
    if spec.weekend:
        blocks.append(np.array([start.weekday() >= 5], dtype=np.float32))
    if spec.holiday:
        blocks.append(np.array([start.date().isoformat() in spec.holidays],
                               dtype=np.float32))
    extra = extra or {}
    for name, cardinality in spec.extra_slots:
        try:
            blocks.append(one_hot(int(extra.get(name, 0)), cardinality))
        except ValueError as e:
            raise ContractError("slot '%s': %s" % (name, e))
    if not blocks:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate(blocks).astype(np.float32)


class TrainingInstance(object):
    """One ``(input, external, target)`` example on the normalized scale.

    :param input: The ``2L × I × J`` keyframe stack.
    :param external: The feature vector of the target interval.
    :param target: The ``2 × I × J`` target frame.
    :param int t: The target interval.

    """

    def __init__(self, input, external, target, t):
        self.input = input
        self.external = external
        self.target = target
        self.t = t

    def __repr__(self):
        return 'TrainingInstance(t=%d, input=%s)' % (self.t,
                                                     self.input.shape)


def make_instances(series, cfg, scaler, spec, t_range=None):
    """Builds one training instance per valid target interval.

    :param series: The :class:`~starflow.grid.FrameSeries` (unscaled).
    :param KeyframeConfig cfg: The keyframe selection.
    :param MinMaxScaler scaler: Scales inputs and targets.
    :param ExternalFeatureSpec spec: The external features.
    :param tuple t_range: Optional ``(start, stop)`` target range; targets
        without enough history are left out.
    :return: Instances in increasing ``t``.
    :raises OutOfHistoryError: If the series is not longer than the largest
        offset.

    """
    offsets = cfg.offsets()
    first = max(offsets)
    if len(series) <= first:
        raise OutOfHistoryError(len(series) - 1, first,
                                "series has only %d frames" % len(series))
    start, stop = first, len(series)
    if t_range is not None:
        start, stop = max(start, t_range[0]), min(stop, t_range[1])
    if stop <= start:
        raise ContractError("no target interval in range %r" % (t_range,))

    instances = []
    for t in range(start, stop):
        instances.append(TrainingInstance(
            scaler.scale(build_input_tensor(series, t, offsets)),
            external_features(t, series.grid, spec),
            scaler.scale(series.data[t]), t))
    logger.debug("Built %d instances for targets [%d, %d)." %
                 (len(instances), start, stop))
    return instances


def stack_instances(instances):
    """Returns the ``(inputs, externals, targets)`` batch arrays."""
    if not instances:
        raise ContractError("no instances to stack")
    inputs = np.stack([i.input for i in instances])
    externals = np.stack([i.external for i in instances])
    targets = np.stack([i.target for i in instances])
    return inputs, externals, targets
