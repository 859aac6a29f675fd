# -*- coding: utf-8 -*-
"""Training, evaluation, multi-step rollout and naive baselines.

Training runs in two phases. Phase 1 trains on all but the last
``validation_size`` instances, watches the validation RMSE after every epoch,
stops once it has not improved for ``early_stop_patience`` epochs and
restores the best weights. Phase 2 continues from those weights (and the same
optimizer state) on every instance for ``retrain_epochs`` epochs.

All RMSE values are reported on the original flow scale when a scaler is
given.

"""

import csv
import dataclasses
import logging
import time

import numpy as np

from starflow.errors import (ConfigError, ContractError, DivergenceError,
                             OutOfHistoryError, ShapeError)
from starflow.grid import FlowFrame, FrameSeries
from starflow.keyframes import (build_input_tensor, external_features,
                                stack_instances)
from starflow.model import forward
from starflow.tensor import (AdamState, Tensor, adam_step, add, backward,
                             mse_loss, reset_grads)

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class TrainConfig(object):
    """Settings of :func:`train`.

    :param int validation_size: Number of trailing instances held out for
        early stopping. If ``None``, ``validation_fraction`` of the
        instances (at least one) is used.
    :param float min_delta: The decrease of the validation RMSE that counts
        as an improvement.
    :param int test_intervals: Number of trailing intervals of a series the
        command-line tool holds out as the test span.
    :param bool check_finite: Whether every training step checks the
        parameters and gradients for NaN or Inf (slow; for debugging).

    """

    batch_size: int = 16
    learning_rate: float = 1e-3
    max_epochs: int = 100
    early_stop_patience: int = 10
    min_delta: float = 0.0
    retrain_epochs: int = 100
    validation_fraction: float = 0.1
    validation_size: int = None
    test_intervals: int = 144
    seed: int = 0
    check_finite: bool = False

    def __post_init__(self):
        checks = (
            ('batch_size', self.batch_size >= 1),
            ('learning_rate', self.learning_rate > 0),
            ('max_epochs', self.max_epochs >= 1),
            ('early_stop_patience', self.early_stop_patience >= 1),
            ('min_delta', self.min_delta >= 0),
            ('retrain_epochs', self.retrain_epochs >= 0),
            ('validation_fraction', 0 < self.validation_fraction < 1),
            ('validation_size', self.validation_size is None or
             self.validation_size >= 1),
            ('test_intervals', self.test_intervals >= 1),
        )
        for name, ok in checks:
            if not ok:
                raise ConfigError("invalid %s: %r" % (name,
                                                      getattr(self, name)),
                                  key='train.' + name)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class TrainReport(object):
    """Per-epoch history of one :func:`train` run.

    Epochs are numbered from 1 across both phases; phase-2 epochs have no
    validation RMSE.

    """

    def __init__(self):
        #: Mean training loss (MSE plus L2 terms) per epoch.
        self.train_loss = []

        #: Validation RMSE per epoch (``None`` during phase 2).
        self.val_rmse = []

        #: Seconds spent per epoch.
        self.epoch_seconds = []

        #: The last phase-1 epoch that ran.
        self.stopped_epoch = None

        #: The phase-1 epoch whose weights were restored.
        self.best_epoch = None

        #: The validation RMSE of :attr:`best_epoch`.
        self.best_val_rmse = None

    def record(self, loss, val_rmse, seconds):
        self.train_loss.append(loss)
        self.val_rmse.append(val_rmse)
        self.epoch_seconds.append(seconds)

    @property
    def epochs(self):
        return len(self.train_loss)

    def rows(self):
        for epoch, (loss, val) in enumerate(zip(self.train_loss,
                                                self.val_rmse), start=1):
            yield epoch, repr(loss), '' if val is None else repr(val)

    def to_csv(self, path):
        """Writes ``epoch,train_loss,val_rmse`` rows to *path*."""
        logger.debug("Opening file for writing: '%s'." % path)
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(('epoch', 'train_loss', 'val_rmse'))
            writer.writerows(self.rows())


def rmse(predictions, targets):
    """Returns the root mean squared error over every element."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ShapeError('rmse', ('shape',), targets.shape,
                         predictions.shape)
    if not targets.size:
        raise ContractError("RMSE of an empty set")
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


def train_step(model, state, batch, check_finite=False):
    """Runs one forward/backward pass and one Adam update.

    :param batch: ``(inputs, externals, targets)`` arrays.
    :param bool check_finite: Whether to check every parameter and gradient
        for NaN or Inf before the update.
    :return: The loss before the update.
    :rtype: float

    """
    inputs, externals, targets = batch
    params = model.parameters()
    reset_grads(params)
    loss = mse_loss(forward(model, inputs, externals), Tensor(targets))
    penalty = model.l2_penalty()
    if penalty is not None:
        loss = add(loss, penalty)
    backward(loss)
    value = loss.item()
    if check_finite:
        for param in params:
            param.check_finite()
    if np.isfinite(value):
        adam_step(params, state)
    return value


def _run_epoch(model, state, arrays, batch_size, rng, check_finite=False):
    inputs, externals, targets = arrays
    order = rng.permutation(len(inputs))
    losses = []
    for start in range(0, len(order), batch_size):
        index = order[start:start + batch_size]
        losses.append(train_step(model, state, (inputs[index],
                                                externals[index],
                                                targets[index]),
                                  check_finite))
    return float(np.mean(losses))


def validation_count(n, cfg):
    """Returns how many of *n* instances :func:`train` validates on."""
    count = cfg.validation_size
    if count is None:
        count = max(1, int(round(n * cfg.validation_fraction)))
    if count >= n:
        raise ContractError("validation span of %d leaves no training data "
                            "among %d instances" % (count, n))
    return count


def train(model, instances, cfg, scaler=None):
    """Trains *model* in place with early stopping and a retrain phase.

    :param model: A :class:`~starflow.model.StarModel`.
    :param list instances: Time-ordered training instances; the validation
        span is their last contiguous part.
    :param TrainConfig cfg: The settings.
    :param scaler: The :class:`~starflow.keyframes.MinMaxScaler` used to
        report the validation RMSE on the flow scale.
    :return: ``(model, report)``
    :raises DivergenceError: If an epoch's loss is NaN or infinite.

    """
    if not instances:
        raise ContractError("no training instances")
    held_out = validation_count(len(instances), cfg)
    fit_set, val_set = instances[:-held_out], instances[-held_out:]
    fit_arrays = stack_instances(fit_set)
    all_arrays = stack_instances(instances)
    logger.info("Training on %d instances, validating on %d." %
                (len(fit_set), len(val_set)))

    rng = np.random.default_rng(cfg.seed)
    state = AdamState(learning_rate=cfg.learning_rate)
    report = TrainReport()
    best, best_state, wait = np.inf, None, 0

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        loss = _run_epoch(model, state, fit_arrays, cfg.batch_size, rng,
                          cfg.check_finite)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss)
        val = evaluate_rmse(model, val_set, scaler, cfg.batch_size)
        report.record(loss, val, time.perf_counter() - started)
        logger.info("Epoch %d: train_loss=%.6g val_rmse=%.6g" % (epoch, loss,
                                                                 val))
        report.stopped_epoch = epoch
        if val < best - cfg.min_delta:
            best, best_state, wait = val, model.state_dict(), 0
            report.best_epoch, report.best_val_rmse = epoch, val
        else:
            wait += 1
            if wait >= cfg.early_stop_patience:
                logger.info("Early stop after epoch %d; best epoch %d." %
                            (epoch, report.best_epoch))
                break
    if best_state is None:
        raise DivergenceError(report.stopped_epoch, report.val_rmse[-1])
    model.load_state_dict(best_state)

    for epoch in range(report.epochs + 1,
                       report.epochs + cfg.retrain_epochs + 1):
        started = time.perf_counter()
        loss = _run_epoch(model, state, all_arrays, cfg.batch_size, rng,
                          cfg.check_finite)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss)
        report.record(loss, None, time.perf_counter() - started)
        logger.info("Retrain epoch %d: train_loss=%.6g" % (epoch, loss))
    return model, report


def predict(model, inputs, externals, batch_size=16):
    """Returns the normalized predictions for a batch of inputs."""
    outputs = []
    for start in range(0, len(inputs), batch_size):
        stop = start + batch_size
        outputs.append(forward(model, inputs[start:stop],
                               externals[start:stop]).data)
    return np.concatenate(outputs)


def evaluate_rmse(model, instances, scaler=None, batch_size=16):
    """Returns the RMSE of *model* over *instances*.

    Predictions and targets are unscaled with *scaler* first, so the result
    is in flow counts; without a scaler the normalized RMSE is returned.

    """
    if not instances:
        raise ContractError("no instances to evaluate")
    inputs, externals, targets = stack_instances(instances)
    predictions = predict(model, inputs, externals, batch_size)
    if scaler is not None:
        predictions = scaler.unscale(predictions.astype(np.float64))
        targets = scaler.unscale(targets.astype(np.float64))
    return rmse(predictions, targets)


def check_horizon(cfg, horizon, t_start=0):
    """Raises :exc:`~starflow.errors.ContractError` for a bad *horizon*.

    A step may only read predicted frames through its closeness offsets, so
    the horizon can't exceed the smallest period or trend offset.

    """
    if horizon < 1:
        raise ContractError("horizon must be at least 1")
    long_offsets = cfg.long_offsets()
    if long_offsets and horizon > min(long_offsets):
        raise OutOfHistoryError(
            t_start + horizon - 1, cfg.max_offset,
            "horizon %d exceeds the smallest period/trend offset %d" %
            (horizon, min(long_offsets)))


def rollout(model, series, t_start, horizon, cfg, scaler, spec):
    """Predicts *horizon* frames from ``t_start`` on, feeding each back.

    Only frames before *t_start* are read from *series*; later steps read the
    earlier predictions through their closeness offsets. External features of
    future intervals come from the calendar.

    :return: Unscaled :class:`~starflow.grid.FlowFrame` objects for
        intervals ``t_start .. t_start + horizon − 1``.

    """
    check_horizon(cfg, horizon, t_start)
    offsets = cfg.offsets()
    if t_start < max(offsets):
        raise OutOfHistoryError(t_start, max(offsets))
    if t_start > len(series):
        raise OutOfHistoryError(t_start, max(offsets),
                                "the series ends at interval %d" %
                                len(series))

    working = np.empty((t_start + horizon,) + series.grid.shape,
                       dtype=np.float32)
    working[:t_start] = series.data[:t_start]
    frames = []
    for t in range(t_start, t_start + horizon):
        history = FrameSeries(series.grid, working[:t])
        inputs = scaler.scale(build_input_tensor(history, t, offsets))
        external = external_features(t, series.grid, spec)
        output = predict(model, inputs[np.newaxis], external[np.newaxis])[0]
        working[t] = scaler.unscale(output)
        frames.append(FlowFrame(working[t].copy(), t))
    logger.debug("Rolled out %d step(s) from interval %d." % (horizon,
                                                             t_start))
    return frames


def rollout_rmse(model, series, t_starts, horizon, cfg, scaler, spec):
    """Returns the RMSE of every rollout step over several start intervals.

    Element ``h`` is the RMSE of step ``h + 1`` alone (not cumulative).

    """
    t_starts = list(t_starts)
    if not t_starts:
        raise ContractError("no rollout start intervals")
    for t_start in t_starts:
        if t_start + horizon > len(series):
            raise OutOfHistoryError(
                t_start, cfg.max_offset,
                "no ground truth for step %d" % horizon)
    predicted = np.zeros((horizon, len(t_starts)) + series.grid.shape)
    actual = np.zeros_like(predicted)
    for n, t_start in enumerate(t_starts):
        for h, frame in enumerate(rollout(model, series, t_start, horizon,
                                          cfg, scaler, spec)):
            predicted[h, n] = frame.data
            actual[h, n] = series.data[frame.t]
    return [rmse(predicted[h], actual[h]) for h in range(horizon)]


def write_rollout_csv(path, rmses):
    """Writes per-step RMSE values as ``step,rmse`` rows.

    A ``None`` value (a step without ground truth) is written as an empty
    field.

    """
    logger.debug("Opening file for writing: '%s'." % path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(('step', 'rmse'))
        writer.writerows((step, '' if value is None else repr(value))
                         for step, value in enumerate(rmses, start=1))


def baseline_persistence(series, t):
    """Predicts frame ``t − 1`` for interval *t*."""
    if t < 1 or t > len(series):
        raise OutOfHistoryError(t, 1)
    return FlowFrame(series.data[t - 1].copy(), t)


def baseline_historical_average(series, t, week_span):
    """Predicts the mean of frames ``t − k·week_span`` for every ``k ≥ 1``
    that lies inside *series*."""
    indices = [index for index in range(t - week_span, -1, -week_span)
               if index < len(series)]
    if not indices:
        raise OutOfHistoryError(t, week_span)
    mean = series.data[indices].astype(np.float64).mean(axis=0)
    return FlowFrame(mean.astype(np.float32), t)


def baseline_rmse(series, targets, predictor):
    """Returns the RMSE of *predictor* over the target intervals.

    :param series: The :class:`~starflow.grid.FrameSeries` with ground truth.
    :param targets: Interval indices to predict.
    :param predictor: ``predictor(series, t)`` returning a
        :class:`~starflow.grid.FlowFrame`.

    """
    targets = list(targets)
    if not targets:
        raise ContractError("no target intervals")
    predicted = np.stack([predictor(series, t).data for t in targets])
    return rmse(predicted, series.data[targets])
