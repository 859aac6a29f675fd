# -*- coding: utf-8 -*-
"""Unit tests for the starflow.synth module."""

import unittest

import numpy as np

from starflow import synth
from starflow.errors import ConfigError
from starflow.grid import INFLOW, OUTFLOW, FrameSeries, assign_cell
from starflow.sources import parse_trajectories
from starflow.synth import SynthSpec


def autocorrelation(x, lag):
    return np.corrcoef(x[:-lag], x[lag:])[0, 1]


class SynthSpecTestCase(unittest.TestCase):
    """Tests for the SynthSpec class."""

    def test_validation(self):
        """Tests that invalid specs raise ConfigError."""
        self.assertRaises(ConfigError, SynthSpec, mode='video')
        self.assertRaises(ConfigError, SynthSpec, intervals_per_day=7)
        self.assertRaises(ConfigError, SynthSpec, noise=-1.0)
        with self.assertRaises(ConfigError) as cm:
            SynthSpec.from_dict({'rows': 4, 'colour': 'red'})
        self.assertEqual('synth.colour', cm.exception.key)

    def test_size(self):
        """Tests the number of intervals and the derived grid."""
        spec = SynthSpec(weeks=2, extra_days=3, intervals_per_day=24)
        self.assertEqual(17 * 24, spec.num_intervals)
        self.assertEqual(3600, spec.grid.interval_seconds)
        self.assertEqual(spec, SynthSpec.from_dict(spec.to_dict()))


class FrameModeTestCase(unittest.TestCase):
    """Tests for frame-mode generation."""

    def test_shape(self):
        """Tests that frames cover the grid and every interval."""
        spec = SynthSpec(rows=4, cols=3, weeks=1)
        series = synth.synth_generate(spec)
        self.assertIsInstance(series, FrameSeries)
        self.assertEqual((336, 2, 4, 3), series.data.shape)
        self.assertTrue(np.all(series.data >= 0))

    def test_deterministic(self):
        """Tests that equal seeds give identical series."""
        spec = SynthSpec(rows=3, cols=3, weeks=1, seed=12)
        self.assertEqual(synth.synth_generate(spec),
                         synth.synth_generate(spec))
        other = SynthSpec(rows=3, cols=3, weeks=1, seed=13)
        self.assertNotEqual(synth.synth_generate(spec),
                            synth.synth_generate(other))

    def test_weekly_autocorrelation(self):
        """Tests that a weekly component peaks the autocorrelation at one
        week."""
        spec = SynthSpec(rows=2, cols=2, weeks=4, weekly_amplitude=3.0)
        series = synth.synth_series(spec)
        week = 7 * spec.intervals_per_day
        for i in range(2):
            for j in range(2):
                flows = series.data[:, INFLOW, i, j].astype(np.float64)
                self.assertGreater(autocorrelation(flows, week),
                                   autocorrelation(flows, week - 3))


class TrajectoryModeTestCase(unittest.TestCase):
    """Tests for trajectory-mode generation."""

    def setUp(self):
        self.spec = SynthSpec(rows=4, cols=4, weeks=1, mode='trajectory',
                              base_intensity=8.0, daily_amplitude=4.0,
                              weekly_amplitude=1.0, agents=200, seed=3)

    def test_points_inside(self):
        """Tests that every point lies inside the grid."""
        trajectories = synth.synth_generate(self.spec)
        self.assertGreater(len(trajectories), 0)
        grid = self.spec.grid
        for trajectory in trajectories[:200]:
            self.assertTrue(trajectory.is_sorted())
            self.assertLessEqual(len(trajectory), synth.MAX_TRIP_STEPS + 1)
            for point in trajectory.points:
                self.assertIsNotNone(assign_cell(point, grid))
                self.assertEqual(grid.interval_of(trajectory.timestamps[0]),
                                 grid.interval_of(point.timestamp))

    def test_counted_series(self):
        """Tests that counted synthetic trips conserve flow."""
        series = synth.synth_series(self.spec)
        self.assertEqual(self.spec.num_intervals, len(series))
        self.assertTrue(series.is_integral())
        self.assertEqual(series.data[:, INFLOW].sum(),
                         series.data[:, OUTFLOW].sum())
        self.assertGreater(series.data.sum(), 0)
        self.assertEqual(series, synth.synth_series(self.spec))

    def test_csv(self):
        """Tests that written trajectories parse back unchanged."""
        trajectories = synth.synth_generate(self.spec)[:50]
        text = synth.trajectories_csv(trajectories)
        parsed = parse_trajectories(text, strict=True)
        self.assertEqual([t.traj_id for t in trajectories],
                         [t.traj_id for t in parsed])
        for a, b in zip(trajectories, parsed):
            np.testing.assert_array_equal(a.timestamps, b.timestamps)
            np.testing.assert_array_equal(a.lats, b.lats)
            np.testing.assert_array_equal(a.lons, b.lons)


if __name__ == '__main__':
    unittest.main()
