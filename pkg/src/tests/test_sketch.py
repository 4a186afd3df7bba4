import json
import unittest

import numpy as np

from afmlens.sketch import QuantileSketch

QUANTILES = (0.0, 0.01, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0)


class TestExactRegime(unittest.TestCase):
    def test_matches_sorted_order(self):
        rng = np.random.default_rng(7)
        for size in (1, 2, 17, 100):
            values = rng.lognormal(size=size)
            sketch = QuantileSketch(100).update(values)
            for q in QUANTILES:
                with self.subTest(size=size, q=q):
                    self.assertAlmostEqual(sketch.quantile(q), np.percentile(values, q * 100), places=9)

    def test_duplicates(self):
        values = [3.0] * 40 + [1.0] * 30 + [7.5] * 30
        sketch = QuantileSketch(100).update(values)
        for q in QUANTILES:
            self.assertAlmostEqual(sketch.quantile(q), np.percentile(values, q * 100), places=9)
        self.assertEqual(len(sketch.centroids), 3)

    def test_small_merge_stays_exact(self):
        values = np.arange(60, dtype=float)
        left = QuantileSketch(100).update(values[::2])
        right = QuantileSketch(100).update(values[1::2])
        merged = left.merge(right)
        self.assertEqual(merged.count, 60)
        self.assertAlmostEqual(merged.quantile(0.5), 29.5, places=9)


class TestAccuracy(unittest.TestCase):
    def test_uniform_rank_error(self):
        for seed in (1, 2):
            values = np.random.default_rng(seed).random(100_000)
            ordered = np.sort(values)
            sketch = QuantileSketch(100).update(values)
            for q in (0.5, 0.95, 0.99):
                with self.subTest(seed=seed, q=q):
                    rank = np.searchsorted(ordered, sketch.quantile(q), side="right")
                    self.assertLessEqual(abs(rank - q * values.size), 0.005 * values.size)

    def test_monotone(self):
        values = np.random.default_rng(3).exponential(size=5000)
        sketch = QuantileSketch(50).update(values)
        estimates = [sketch.quantile(q) for q in np.linspace(0, 1, 201)]
        self.assertTrue(all(b >= a for a, b in zip(estimates, estimates[1:])))
        self.assertEqual(estimates[0], values.min())
        self.assertEqual(estimates[-1], values.max())

    def test_centroids_bounded(self):
        sketch = QuantileSketch(100).update(np.random.default_rng(4).normal(size=20_000))
        means = [mean for mean, _ in sketch.centroids]
        self.assertLessEqual(len(means), 200)
        self.assertTrue(all(b > a for a, b in zip(means, means[1:])))
        self.assertAlmostEqual(sum(weight for _, weight in sketch.centroids), 20_000)


class TestMerge(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(11)
        self.left = QuantileSketch(100).update(rng.normal(size=3000))
        self.right = QuantileSketch(100).update(rng.normal(loc=1.0, size=2000))

    def test_order_independent(self):
        one, two = self.left.merge(self.right), self.right.merge(self.left)
        self.assertEqual(one.count, 5000)
        for q in QUANTILES:
            self.assertAlmostEqual(one.quantile(q), two.quantile(q), places=9)

    def test_inputs_untouched(self):
        before = self.left.to_dict()
        self.left.merge(self.right)
        self.assertEqual(self.left.to_dict(), before)

    def test_empty(self):
        empty = QuantileSketch(100)
        self.assertAlmostEqual(self.left.merge(empty).quantile(0.5), self.left.quantile(0.5))
        self.assertAlmostEqual(empty.merge(self.left).quantile(0.5), self.left.quantile(0.5))

    def test_mismatched_compression(self):
        with self.assertRaises(ValueError):
            self.left.merge(QuantileSketch(50))


class TestSerialization(unittest.TestCase):
    def test_json(self):
        sketch = QuantileSketch(100).update(np.random.default_rng(5).random(1000))
        restored = QuantileSketch.from_dict(json.loads(json.dumps(sketch.to_dict())))
        self.assertEqual(restored.count, 1000)
        for q in QUANTILES:
            self.assertAlmostEqual(restored.quantile(q), sketch.quantile(q), places=12)

    def test_invalid(self):
        data = {'compression': 100, 'count': 2, 'min': 0.0, 'max': 1.0, 'centroids': [[1.0, 1], [0.0, 1]]}
        with self.assertRaisesRegex(ValueError, "increasing"):
            QuantileSketch.from_dict(data)
        data['centroids'] = [[0.0, 1], [1.0, 2]]
        with self.assertRaisesRegex(ValueError, "sum"):
            QuantileSketch.from_dict(data)
        data['centroids'] = [[0.0, 1], [2.0, 1]]
        with self.assertRaisesRegex(ValueError, "within"):
            QuantileSketch.from_dict(data)

    def test_empty_is_valid_json(self):
        data = json.loads(json.dumps(QuantileSketch(100).to_dict(), allow_nan=False))
        self.assertIsNone(data['min'])
        self.assertIsNone(data['max'])
        self.assertEqual(QuantileSketch.from_dict(data).count, 0)


class TestErrors(unittest.TestCase):
    def test_non_finite(self):
        with self.assertRaises(ValueError):
            QuantileSketch(100).add(float("nan"))
        with self.assertRaises(ValueError):
            QuantileSketch(100).add(float("inf"))

    def test_empty(self):
        with self.assertRaises(ValueError):
            QuantileSketch(100).quantile(0.5)

    def test_quantile_range(self):
        sketch = QuantileSketch(100).add(1.0)
        self.assertEqual(sketch.quantile(0.3), 1.0)
        with self.assertRaises(ValueError):
            sketch.quantile(1.5)

    def test_compression(self):
        with self.assertRaises(ValueError):
            QuantileSketch(0)
