# -*- coding: utf-8 -*-
"""The ``starflow`` command-line tool.

Subcommands::

    starflow synth   --spec S.json | --preset NAME --out PATH [--seed N]
    starflow ingest  --trajectories PATH --config C.json [--out PATH]
                     [--strict] [--cache] [--workers N]
    starflow train   --config C.json [--seed N]
    starflow eval    --config C.json [--horizon H]
    starflow predict --config C.json --horizon H [--t-start T]
                     [--heatmaps DIR]
    starflow inspect --config C.json | PATH

Exit codes: 0 on success, 1 on usage errors, 2 on data or configuration
errors and 3 on runtime errors (divergence, I/O).

"""

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np

from starflow import __version__
from starflow.config import RunConfig, load_synth_spec
from starflow.errors import (BadMagicError, ContractError, DivergenceError,
                             FormatError, ParseError, ShapeError)
from starflow.formats import (CHECKPOINT_MAGIC, SERIES_MAGIC, read_series,
                              sniff_magic, write_pgm, write_series)
from starflow.grid import INFLOW, OUTFLOW, FrameSeries
from starflow.keyframes import (ExternalFeatureSpec, KeyframeConfig,
                                MinMaxScaler, fit_scaler, make_instances)
from starflow.model import (build_model, count_parameters, load_checkpoint,
                            save_checkpoint)
from starflow.sources import open_source
from starflow.synth import synth_generate, synth_series, write_trajectories
from starflow.training import (baseline_historical_average,
                               baseline_persistence, baseline_rmse,
                               evaluate_rmse, rmse, rollout, rollout_rmse,
                               train, write_rollout_csv)
from starflow.utils import check_input_path, check_output_path

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

CHANNELS = {'inflow': INFLOW, 'outflow': OUTFLOW}


def heatmap_export(frame, channel, path):
    """Writes one channel of a frame as an 8-bit grayscale PGM image.

    Values are mapped linearly from ``[0, frame max]`` to ``[0, 255]``; an
    all-zero channel gives a black image. The image is ``cols`` pixels wide
    and ``rows`` pixels tall with the northernmost row on top.

    :param frame: A :class:`~starflow.grid.FlowFrame`.
    :param channel: ``'inflow'``, ``'outflow'`` or the channel index.
    :param str path: The output filename.

    """
    index = CHANNELS.get(channel, channel)
    if index not in (INFLOW, OUTFLOW):
        raise ContractError("unknown channel %r" % (channel,))
    values = np.maximum(frame.data[index].astype(np.float64), 0)
    peak = values.max()
    if peak > 0:
        pixels = np.rint(values / peak * 255)
    else:
        pixels = np.zeros_like(values)
    return write_pgm(path, pixels[::-1].astype(np.uint8))


def _print_json(d):
    print(json.dumps(d, indent=2, sort_keys=True))


def _load_config(args):
    check_input_path(args.config, key='--config')
    cfg = RunConfig.load(args.config)
    if getattr(args, 'seed', None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _check_grid(command, expected, series):
    """Raises ShapeError if *series* was counted on another grid size."""
    conflicts = [(name, getattr(expected, name), getattr(series.grid, name))
                 for name in ('rows', 'cols')
                 if getattr(expected, name) != getattr(series.grid, name)]
    if conflicts:
        names, wanted, found = zip(*conflicts)
        raise ShapeError(command, names, wanted, found)


def _test_start(cfg, series):
    """Returns the first interval of the held-out test span."""
    start = len(series) - cfg.train.test_intervals
    if start <= cfg.keyframes.max_offset:
        raise ContractError("a series of %d intervals is too short for a "
                            "test span of %d and keyframes reaching %d "
                            "back" % (len(series), cfg.train.test_intervals,
                                      cfg.keyframes.max_offset))
    return start


def _checkpoint_metadata(model):
    """Returns ``(scaler, keyframes, external)`` stored with a model."""
    try:
        metadata = model.metadata
        return (MinMaxScaler.from_dict(metadata['scaler']),
                KeyframeConfig.from_dict(metadata['keyframes']),
                ExternalFeatureSpec.from_dict(metadata['external']))
    except (KeyError, TypeError) as e:
        raise FormatError("checkpoint lacks run metadata: %s" % e)


def _load_run(cfg):
    """Loads the checkpoint and series of a configured run."""
    cfg.check_paths(inputs=('checkpoint', 'series'))
    model, model_cfg = load_checkpoint(cfg.path('checkpoint'))
    series = read_series(cfg.path('series'))
    _check_grid('checkpoint', model_cfg, series)
    return model, series


def command_synth(args):
    spec = load_synth_spec(path=args.spec, preset=args.preset)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    check_output_path(args.out, key='--out')
    if args.out.lower().endswith('.csv'):
        if spec.mode != 'trajectory':
            raise ContractError("CSV output needs a trajectory-mode spec")
        written = write_trajectories(synth_generate(spec), args.out)
        logger.info("Wrote %d trajectory points to '%s'." % (written,
                                                             args.out))
    else:
        write_series(synth_series(spec), args.out)
        logger.info("Wrote %d frames to '%s'." % (spec.num_intervals,
                                                  args.out))


def command_ingest(args):
    cfg = _load_config(args)
    check_input_path(args.trajectories, key='--trajectories')
    out = args.out or cfg.path('series')
    check_output_path(out, key='--out')
    source = open_source(args.trajectories, cfg.grid, strict=args.strict,
                         cache_data=args.cache, cache_dir=args.cache_dir,
                         workers=args.workers)
    series = source.read()
    if source.skipped:
        logger.warning("Skipped %d malformed line(s)." % source.skipped)
    write_series(series, out)
    _print_json({'frames': len(series), 'skipped': source.skipped,
                 'out': out})


def command_train(args):
    cfg = _load_config(args)
    outputs = ['checkpoint'] + [k for k in ('report',) if cfg.io[k]]
    cfg.check_paths(inputs=('series',), outputs=outputs)
    series = read_series(cfg.path('series'))
    _check_grid('train', cfg.grid, series)

    test_start = _test_start(cfg, series)
    scaler = fit_scaler(series.slice(0, test_start))
    instances = make_instances(series, cfg.keyframes, scaler, cfg.external,
                               t_range=(0, test_start))
    train_cfg = cfg.train
    if train_cfg.validation_size is None:
        size = min(train_cfg.test_intervals, len(instances) - 1)
        train_cfg = dataclasses.replace(train_cfg, validation_size=size)

    model_cfg = cfg.model_config()
    model = build_model(model_cfg, seed=train_cfg.seed)
    model.metadata = {'scaler': scaler.to_dict(),
                      'keyframes': cfg.keyframes.to_dict(),
                      'external': cfg.external.to_dict()}
    model, report = train(model, instances, train_cfg, scaler)
    save_checkpoint(model, model_cfg, cfg.path('checkpoint'))
    if cfg.io['report']:
        report.to_csv(cfg.path('report'))
    _print_json({'epochs': report.epochs,
                 'stopped_epoch': report.stopped_epoch,
                 'best_epoch': report.best_epoch,
                 'best_val_rmse': report.best_val_rmse,
                 'parameters': count_parameters(model)})


def command_eval(args):
    cfg = _load_config(args)
    model, series = _load_run(cfg)
    scaler, keyframes, external = _checkpoint_metadata(model)
    test_start = _test_start(cfg, series)
    targets = range(test_start, len(series))
    instances = make_instances(series, keyframes, scaler, external,
                               t_range=(test_start, len(series)))
    week = 7 * series.grid.intervals_per_day
    started = time.perf_counter()
    model_rmse = evaluate_rmse(model, instances, scaler, cfg.train.batch_size)
    test_seconds = time.perf_counter() - started
    logger.info("Predicted %d test intervals in %.3f s." % (len(targets),
                                                           test_seconds))
    result = {
        'test_intervals': len(targets),
        'model_rmse': model_rmse,
        'test_seconds': test_seconds,
        'parameters': count_parameters(model),
        'persistence_rmse': baseline_rmse(series, targets,
                                          baseline_persistence),
        'historical_average_rmse': baseline_rmse(
            series, targets, lambda s, t: baseline_historical_average(
                s, t, week)),
    }
    if args.horizon:
        t_starts = range(test_start, len(series) - args.horizon + 1)
        steps = rollout_rmse(model, series, t_starts, args.horizon,
                             keyframes, scaler, external)
        result['rollout_rmse'] = steps
        if cfg.io['rollout']:
            check_output_path(cfg.path('rollout'), key='io.rollout')
            write_rollout_csv(cfg.path('rollout'), steps)
    _print_json(result)


def command_predict(args):
    cfg = _load_config(args)
    cfg.check_paths(outputs=('predictions', 'rollout'))
    if args.heatmaps:
        check_output_path(args.heatmaps, key='--heatmaps')
    model, series = _load_run(cfg)
    scaler, keyframes, external = _checkpoint_metadata(model)
    t_start = args.t_start
    if t_start is None:
        t_start = _test_start(cfg, series)
    frames = rollout(model, series, t_start, args.horizon, keyframes, scaler,
                     external)

    predicted = FrameSeries(series.grid.shifted(t_start),
                            np.stack([f.data for f in frames]))
    write_series(predicted, cfg.path('predictions'))
    steps = [rmse(f.data, series.data[f.t]) if f.t < len(series) else None
             for f in frames]
    write_rollout_csv(cfg.path('rollout'), steps)
    if args.heatmaps:
        os.makedirs(args.heatmaps, exist_ok=True)
        for step, frame in enumerate(frames, start=1):
            for name in CHANNELS:
                path = os.path.join(args.heatmaps,
                                    'step%02d-%s.pgm' % (step, name))
                heatmap_export(frame, name, path)
    _print_json({'t_start': t_start, 'horizon': args.horizon,
                 'rmse': steps})


def command_inspect(args):
    if args.config:
        _print_json(_load_config(args).to_dict())
        return
    if not args.path:
        raise _UsageError("inspect needs --config or a file path")
    check_input_path(args.path, key='path')
    magic = sniff_magic(args.path)
    if magic == SERIES_MAGIC:
        series = read_series(args.path)
        _print_json({'kind': 'series', 'frames': len(series),
                     'grid': series.grid.to_dict(),
                     'total_inflow': float(series.data[:, INFLOW].sum()),
                     'total_outflow': float(series.data[:, OUTFLOW].sum()),
                     'integral': series.is_integral()})
    elif magic == CHECKPOINT_MAGIC:
        model, model_cfg = load_checkpoint(args.path)
        _print_json({'kind': 'checkpoint', 'model': model_cfg.to_dict(),
                     'parameters': count_parameters(model),
                     'metadata': model.metadata})
    else:
        raise BadMagicError(SERIES_MAGIC + b'|' + CHECKPOINT_MAGIC, magic)


class _UsageError(Exception):
    """Raised by commands whose arguments argparse can't validate."""


def build_parser():
    parser = argparse.ArgumentParser(
        prog='starflow', description="Citywide crowd-flow prediction.")
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help="log more (-v for info, -vv for debug)")
    commands = parser.add_subparsers(dest='command', metavar='COMMAND')

    synth = commands.add_parser('synth', help="generate synthetic data")
    source = synth.add_mutually_exclusive_group(required=True)
    source.add_argument('--spec', help="synthetic data spec (JSON)")
    source.add_argument('--preset', help="packaged spec name")
    synth.add_argument('--out', required=True,
                       help=".stf frame series or .csv trajectories")
    synth.add_argument('--seed', type=int)
    synth.set_defaults(func=command_synth)

    ingest = commands.add_parser('ingest',
                                 help="count trajectories into frames")
    ingest.add_argument('--trajectories', required=True,
                        help="trajectory CSV, zip or tar archive")
    ingest.add_argument('--config', required=True)
    ingest.add_argument('--out', help="defaults to io.series")
    ingest.add_argument('--strict', action='store_true',
                        help="fail on malformed lines")
    ingest.add_argument('--cache', action='store_true',
                        help="cache counted series")
    ingest.add_argument('--cache-dir')
    ingest.add_argument('--workers', type=int, default=1)
    ingest.set_defaults(func=command_ingest)

    train_parser = commands.add_parser('train', help="train a model")
    train_parser.add_argument('--config', required=True)
    train_parser.add_argument('--seed', type=int)
    train_parser.set_defaults(func=command_train)

    evaluate = commands.add_parser('eval', help="evaluate on the test span")
    evaluate.add_argument('--config', required=True)
    evaluate.add_argument('--horizon', type=int, default=0,
                          help="also report per-step rollout RMSE")
    evaluate.set_defaults(func=command_eval)

    predict = commands.add_parser('predict', help="multi-step prediction")
    predict.add_argument('--config', required=True)
    predict.add_argument('--horizon', type=int, required=True)
    predict.add_argument('--t-start', type=int,
                         help="first predicted interval (defaults to the "
                              "start of the test span)")
    predict.add_argument('--heatmaps', help="directory for PGM heatmaps")
    predict.set_defaults(func=command_predict)

    inspect = commands.add_parser('inspect',
                                  help="show a config, series or checkpoint")
    inspect.add_argument('--config')
    inspect.add_argument('path', nargs='?')
    inspect.set_defaults(func=command_inspect)
    return parser


def _configure_logging(verbosity):
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity,
                                                     logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format='%(levelname)s:%(name)s:%(message)s')


def dispatch(argv):
    """Runs the command line *argv* (without the program name).

    :return: The exit code.
    :rtype: int

    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _configure_logging(args.verbose)

    try:
        args.func(args)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write('starflow: error: %s\n' % e)
        return EXIT_USAGE
    except (ContractError, ShapeError, ParseError, FormatError) as e:
        sys.stderr.write('starflow: error: %s\n' % e)
        return EXIT_DATA
    except (DivergenceError, OSError) as e:
        sys.stderr.write('starflow: error: %s\n' % e)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == '__main__':
    main()
