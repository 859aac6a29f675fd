# -*- coding: utf-8 -*-
"""Unit tests for the starflow.keyframes module."""

import unittest

import numpy as np

from starflow import keyframes
from starflow.errors import ConfigError, ContractError, OutOfHistoryError
from starflow.grid import FrameSeries, GridSpec
from starflow.keyframes import (ExternalFeatureSpec, KeyframeConfig,
                                MinMaxScaler)

MONDAY = 1420416000


def make_series(count, rows=2, cols=3, seed=0):
    grid = GridSpec(rows=rows, cols=cols, lat_min=0.0, lat_max=1.0,
                    lon_min=0.0, lon_max=1.0, interval_seconds=1800,
                    epoch_start=MONDAY)
    rng = np.random.default_rng(seed)
    return FrameSeries(grid, rng.integers(0, 50, size=(count, 2, rows,
                                                       cols)))


def unrolled_offsets(l_c, l_p, l_q, l_r, p, q):
    """Writes the closeness, period and trend loops out one by one."""
    queue = []
    i = 1
    while i <= l_c:
        queue.append(i)
        i += 1
    i = 1
    while i <= l_p:
        r = 0
        while r <= l_r:
            queue.append(p * i + r)
            r += 1
        i += 1
    i = 1
    while i <= l_q:
        r = 0
        while r <= l_r:
            queue.append(q * i + r)
            r += 1
        i += 1
    return queue


class SelectKeyframesTestCase(unittest.TestCase):
    """Tests for the KeyframeConfig class and select_keyframes function."""

    def test_worked_example(self):
        """Tests the two-closeness, one-extra example selection."""
        cfg = KeyframeConfig(2, 1, 1, 1, 48, 336)
        self.assertEqual([1, 2, 48, 49, 336, 337],
                         keyframes.select_keyframes(400, cfg))
        self.assertEqual(cfg, KeyframeConfig.worked_example())

    def test_default_selection(self):
        """Tests the default (3, 1, 1, 2) selection."""
        self.assertEqual([1, 2, 3, 48, 49, 50, 336, 337, 338],
                         keyframes.select_keyframes(338,
                                                    KeyframeConfig.star()))
        self.assertEqual(9, KeyframeConfig().num_frames)
        self.assertEqual(338, KeyframeConfig().max_offset)

    def test_closeness_only(self):
        """Tests a selection without period or trend frames."""
        cfg = KeyframeConfig(l_c=3, l_p=0, l_q=0)
        self.assertEqual([1, 2, 3], keyframes.select_keyframes(3, cfg))

    def test_st311(self):
        """Tests the single-frame period and trend selection."""
        self.assertEqual([1, 2, 3, 48, 336], KeyframeConfig.st311().offsets())

    def test_matches_unrolled_loops(self):
        """Tests select_keyframes against unrolled loops for 100 configs."""
        rng = np.random.default_rng(42)
        for _ in range(100):
            l_c, l_p, l_q, l_r = (int(n) for n in rng.integers(0, 4, size=4))
            if l_c + l_p + l_q == 0:
                l_c = 1
            p = int(rng.integers(l_r + 1, 30))
            q = int(rng.integers(p + 1, 200))
            cfg = KeyframeConfig(l_c, l_p, l_q, l_r, p, q)
            expected = unrolled_offsets(l_c, l_p, l_q, l_r, p, q)
            offsets = keyframes.select_keyframes(cfg.max_offset, cfg)
            self.assertEqual(expected, offsets)
            self.assertEqual(l_c + (l_p + l_q) * (l_r + 1), len(offsets))
            self.assertTrue(all(o > 0 for o in offsets))
            closeness = offsets[:l_c]
            self.assertEqual(sorted(set(closeness)), closeness)
            for start in range(l_c, len(offsets), l_r + 1):
                fragment = offsets[start:start + l_r + 1]
                self.assertEqual(sorted(set(fragment)), fragment)
            period = offsets[l_c:l_c + l_p * (l_r + 1)]
            self.assertEqual(sorted(set(period)), period)

    def test_out_of_history(self):
        """Tests that a target without enough history names the minimum."""
        with self.assertRaises(OutOfHistoryError) as cm:
            keyframes.select_keyframes(100, KeyframeConfig())
        self.assertEqual(338, cm.exception.required)

    def test_validation(self):
        """Tests that invalid configurations raise ConfigError."""
        self.assertRaises(ConfigError, KeyframeConfig, l_c=-1)
        self.assertRaises(ConfigError, KeyframeConfig, p=400, q=336)
        self.assertRaises(ConfigError, KeyframeConfig, 0, 0, 0)
        with self.assertRaises(ConfigError) as cm:
            KeyframeConfig(l_c=1, l_p=2, l_q=0, l_r=3, p=2, q=10)
        self.assertEqual('keyframes.l_r', cm.exception.key)
        self.assertRaises(ConfigError, KeyframeConfig, l_c=1, l_p=0, l_q=3,
                          l_r=5, p=2, q=5)
        self.assertEqual([1, 2, 3, 4], KeyframeConfig(
            l_c=1, l_p=1, l_q=0, l_r=2, p=2, q=10).offsets())
        self.assertEqual(KeyframeConfig(),
                         KeyframeConfig.from_dict(KeyframeConfig().to_dict()))

    def test_for_intervals(self):
        """Tests that spans follow the number of intervals per day."""
        cfg = KeyframeConfig.for_intervals(24, l_r=0)
        self.assertEqual((24, 168, 0), (cfg.p, cfg.q, cfg.l_r))


class BuildInputTensorTestCase(unittest.TestCase):
    """Tests for the build_input_tensor function."""

    def setUp(self):
        self.series = make_series(400)

    def test_channel_count(self):
        """Tests that every offset contributes two channels."""
        six = KeyframeConfig.worked_example().offsets()
        self.assertEqual((12, 2, 3), keyframes.build_input_tensor(
            self.series, 399, six).shape)
        nine = KeyframeConfig.star().offsets()
        self.assertEqual((18, 2, 3), keyframes.build_input_tensor(
            self.series, 399, nine).shape)

    def test_channel_order(self):
        """Tests that channel 2k is inflow and 2k+1 outflow of frame k."""
        stacked = keyframes.build_input_tensor(self.series, 350, [1, 48])
        np.testing.assert_array_equal(self.series.data[349], stacked[0:2])
        np.testing.assert_array_equal(self.series.data[302, 0], stacked[2])
        np.testing.assert_array_equal(self.series.data[302, 1], stacked[3])

    def test_target_past_end(self):
        """Tests that the target may be one past the last frame."""
        stacked = keyframes.build_input_tensor(self.series, 400, [1])
        np.testing.assert_array_equal(self.series.data[399], stacked)
        self.assertRaises(OutOfHistoryError, keyframes.build_input_tensor,
                          self.series, 401, [1])
        self.assertRaises(OutOfHistoryError, keyframes.build_input_tensor,
                          self.series, 10, [1, 48])


class ScalerTestCase(unittest.TestCase):
    """Tests for the MinMaxScaler class."""

    def test_midpoint(self):
        """Tests that the midpoint scales to 0 and the bounds to ±1."""
        scaler = MinMaxScaler(0.0, 100.0)
        self.assertEqual(0.0, keyframes.scale(50.0, scaler))
        self.assertEqual([-1.0, 1.0],
                         keyframes.scale([0.0, 100.0], scaler).tolist())

    def test_roundtrip(self):
        """Tests that unscale inverts scale."""
        rng = np.random.default_rng(3)
        x = rng.uniform(-20, 500, size=1000)
        scaler = keyframes.fit_scaler(x)
        np.testing.assert_allclose(x, keyframes.unscale(
            keyframes.scale(x, scaler), scaler), rtol=0, atol=1e-6 * 500)
        self.assertEqual(np.float32, scaler.scale(
            x.astype(np.float32)).dtype)

    def test_degenerate(self):
        """Tests that a constant training set scales everything to 0."""
        scaler = keyframes.fit_scaler(np.full(10, 7.0))
        self.assertEqual([0.0, 0.0], scaler.scale([7.0, 100.0]).tolist())
        self.assertEqual([7.0], scaler.unscale([0.3]).tolist())

    def test_fit_series(self):
        """Tests that a scaler can be fitted on a frame series."""
        series = make_series(20)
        scaler = keyframes.fit_scaler(series)
        self.assertEqual(series.data.min(), scaler.min_val)
        self.assertEqual(series.data.max(), scaler.max_val)
        self.assertRaises(ContractError, MinMaxScaler, 2.0, 1.0)


class ExternalFeaturesTestCase(unittest.TestCase):
    """Tests for the external_features function."""

    def setUp(self):
        self.grid = make_series(1).grid

    def test_monday_midnight(self):
        """Tests the feature vector of interval 0 on a Monday."""
        spec = ExternalFeatureSpec(holiday=False)
        features = keyframes.external_features(0, self.grid, spec)
        self.assertEqual(56, len(features))
        self.assertEqual(1.0, features[0])
        self.assertEqual(1.0, features[48])
        self.assertEqual(0.0, features[55])
        self.assertEqual(2.0, features.sum())

    def test_weekend(self):
        """Tests that Saturday sets the weekend flag."""
        spec = ExternalFeatureSpec(holiday=False)
        saturday = 5 * 48 + 13
        features = keyframes.external_features(saturday, self.grid, spec)
        self.assertEqual(1.0, features[13])
        self.assertEqual(1.0, features[48 + 5])
        self.assertEqual(1.0, features[55])

    def test_holiday(self):
        """Tests that listed dates set the holiday flag."""
        spec = ExternalFeatureSpec(holidays=('2015-01-06',))
        self.assertEqual(57, spec.width)
        self.assertEqual(0.0, keyframes.external_features(
            0, self.grid, spec)[-1])
        self.assertEqual(1.0, keyframes.external_features(
            48, self.grid, spec)[-1])

    def test_extra_slots(self):
        """Tests that extra categorical slots are one-hot encoded."""
        spec = ExternalFeatureSpec(holiday=False,
                                   extra_slots=(('weather', 4),))
        features = keyframes.external_features(0, self.grid, spec,
                                               {'weather': 2})
        self.assertEqual(60, len(features))
        self.assertEqual([0.0, 0.0, 1.0, 0.0], features[-4:].tolist())
        self.assertRaises(ContractError, keyframes.external_features, 0,
                          self.grid, spec, {'weather': 4})

    def test_disabled(self):
        """Tests that a spec without features gives an empty vector."""
        spec = ExternalFeatureSpec.disabled()
        self.assertEqual(0, spec.width)
        self.assertEqual(0, len(keyframes.external_features(0, self.grid,
                                                            spec)))

    def test_width(self):
        """Tests that vectors match the declared width."""
        spec = ExternalFeatureSpec(intervals_per_day=24,
                                   extra_slots=(('wind', 3),))
        grid = GridSpec(2, 2, 0.0, 1.0, 0.0, 1.0, interval_seconds=3600,
                        epoch_start=MONDAY)
        for t in range(0, 24 * 7, 5):
            features = keyframes.external_features(t, grid, spec)
            self.assertEqual(spec.width, len(features))
            self.assertEqual(1.0, features[t % 24])


class MakeInstancesTestCase(unittest.TestCase):
    """Tests for the make_instances function."""

    def setUp(self):
        self.series = make_series(400)
        self.scaler = keyframes.fit_scaler(self.series)
        self.spec = ExternalFeatureSpec()

    def test_count(self):
        """Tests that every target with enough history gets an instance."""
        instances = keyframes.make_instances(self.series, KeyframeConfig(),
                                             self.scaler, self.spec)
        self.assertEqual(62, len(instances))
        self.assertEqual(338, instances[0].t)
        self.assertEqual(399, instances[-1].t)

    def test_scaled_target(self):
        """Tests that targets and inputs are scaled frames."""
        instances = keyframes.make_instances(self.series, KeyframeConfig(),
                                             self.scaler, self.spec)
        instance = instances[5]
        np.testing.assert_array_equal(
            keyframes.scale(self.series.data[instance.t], self.scaler),
            instance.target)
        self.assertEqual((18, 2, 3), instance.input.shape)
        self.assertEqual((57,), instance.external.shape)
        self.assertTrue(np.all(np.abs(instance.input) <= 1))

    def test_range(self):
        """Tests that t_range limits the targets."""
        instances = keyframes.make_instances(self.series, KeyframeConfig(),
                                             self.scaler, self.spec,
                                             t_range=(350, 360))
        self.assertEqual(list(range(350, 360)), [i.t for i in instances])
        inputs, externals, targets = keyframes.stack_instances(instances)
        self.assertEqual((10, 18, 2, 3), inputs.shape)
        self.assertEqual((10, 57), externals.shape)
        self.assertEqual((10, 2, 2, 3), targets.shape)

    def test_too_short(self):
        """Tests that a series no longer than the largest offset fails."""
        self.assertRaises(OutOfHistoryError, keyframes.make_instances,
                          self.series.slice(0, 338), KeyframeConfig(),
                          self.scaler, self.spec)
        self.assertRaises(ContractError, keyframes.make_instances,
                          self.series, KeyframeConfig(), self.scaler,
                          self.spec, t_range=(0, 100))


if __name__ == '__main__':
    unittest.main()
