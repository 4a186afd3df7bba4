import unittest

from afmlens.knee import EnvelopeCurve, build_envelope, detect_knee, difference_curve
from afmlens.model import MAU, AfmKind, JoinedSample, KneeDirection, ModelKind, QosClass, Scope
from afmlens.synthgen import GeneratorSpec, generate

LATENCY = AfmKind.parse("transmit_latency:1KiB:p99")


def curve(func, n=20, direction=KneeDirection.CONVEX_INCREASING, scale=1.0, shift=0.0):
    points = tuple((scale * i / n + shift, func(i / n)) for i in range(n + 1))
    return EnvelopeCurve(points, direction)


def sample(x, y, start=0):
    return JoinedSample(start, 300, "f1", Scope.fabric_wide(), QosClass.LOW, MAU, x, LATENCY, y)


class TestDetectKnee(unittest.TestCase):
    def test_parabola(self):
        knee = detect_knee(curve(lambda x: x * x), 0.2)
        self.assertAlmostEqual(knee.knee_x, 0.5)
        self.assertAlmostEqual(knee.curvature, 0.25)
        self.assertEqual(knee.bucket_index, 10)

    def test_threshold_not_reached(self):
        self.assertIsNone(detect_knee(curve(lambda x: x * x), 0.3))

    def test_straight_line(self):
        self.assertIsNone(detect_knee(curve(lambda x: x), 0.05))
        self.assertIsNone(detect_knee(curve(lambda x: 2.0), 0.05))

    def test_affine_invariance(self):
        base = detect_knee(curve(lambda x: x ** 4), 0.3)
        moved = detect_knee(curve(lambda x: 3 * x ** 4 + 7, scale=2, shift=1), 0.3)
        self.assertAlmostEqual(moved.knee_x, 2 * base.knee_x + 1)
        self.assertAlmostEqual(moved.curvature, base.curvature)

    def test_monotone_in_threshold(self):
        env = curve(lambda x: x ** 3)
        found = [detect_knee(env, threshold) is not None for threshold in (0.05, 0.2, 0.35, 0.4, 0.6, 0.9)]
        self.assertEqual(found, sorted(found, reverse=True))
        self.assertTrue(found[0])
        self.assertFalse(found[-1])

    def test_concave_decreasing(self):
        knee = detect_knee(curve(lambda x: 1 - x * x, direction=KneeDirection.CONCAVE_DECREASING), 0.2)
        self.assertAlmostEqual(knee.knee_x, 0.5)

    def test_difference_curve_endpoints(self):
        diff = difference_curve(curve(lambda x: x * x))
        self.assertAlmostEqual(diff[0], 0.0)
        self.assertAlmostEqual(diff[-1], 0.0)

    def test_threshold_range(self):
        with self.assertRaises(ValueError):
            detect_knee(curve(lambda x: x * x), 1.0)


class TestEnvelope(unittest.TestCase):
    def test_bucket_percentile(self):
        samples = [sample(x, float(v)) for x in (0.0, 0.3, 0.55, 0.8) for v in range(1, 101)]
        env = build_envelope(samples, 4)
        self.assertEqual(len(env.points), 4)
        self.assertAlmostEqual(env.points[0][0], 0.1)
        self.assertAlmostEqual(env.points[0][1], 95.05)
        self.assertAlmostEqual(env.bucket_width, 0.2)

    def test_sparse_buckets_dropped(self):
        samples = [sample(x, 1.0) for x in (0.0, 0.3, 0.55) for _ in range(20)]
        samples += [sample(0.8, 1.0) for _ in range(5)]
        with self.assertRaisesRegex(ValueError, "insufficient envelope"):
            build_envelope(samples, 4)

    def test_unordered_points(self):
        with self.assertRaises(ValueError):
            EnvelopeCurve(((0.0, 1.0), (0.2, 1.0), (0.1, 1.0), (0.3, 1.0)))

    def test_injected_knee(self):
        hits = 0
        for seed in range(20):
            spec = GeneratorSpec(kind=ModelKind.LINEAR, beta=2.0, c=1.0, knee_x=0.85, penalty_slope=500.0,
                                 sigma=0.05, x_lo=0.05, x_hi=0.99, n=5000, seed=seed)
            knee = detect_knee(build_envelope(generate(spec), 20), 0.5)
            if knee is not None and abs(knee.knee_x - 0.85) <= 0.05:
                hits += 1
        self.assertGreaterEqual(hits, 19)
