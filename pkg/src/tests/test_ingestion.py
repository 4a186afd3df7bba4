import json
import unittest

import numpy as np

from afmlens.ingestion import (AFM_COLUMNS, NLM_COLUMNS, AfmRecord, DataFormat, JoinKey, NlmValue, join_series,
                               parse_afm_records, parse_port_records, reaggregate_nlm)
from afmlens.metrics import PortRecord, Stage
from afmlens.model import (LINK_UTILIZATION, MAU, MLU, AfmFamily, AfmKind, QosClass, Scope, ScopeKind,
                           SizeClass)
from afmlens.sketch import QuantileSketch

GBPS = 10 ** 9
LATENCY = AfmKind.parse("transmit_latency:1KiB:p99")


def csv_bytes(header, rows):
    lines = [",".join(header)] + [",".join(str(cell) for cell in row) for row in rows]
    return ("\n".join(lines) + "\n").encode()


def nlm_row(port="p1", start=0, length=300, octets=0, stage="aggregation"):
    return ["f1", stage, port, port + "-peer", 100 * GBPS, "b1", "b2", start, length, octets, 0]


def afm_row(start=0, qos="low", stat="p99", value=0.001):
    return ["f1", start, 300, qos, "", "", "transmit_latency", "1KiB", stat, value]


def record(port="p1", start=0, length=30, util=0.5, src="b1", dst="b2"):
    octets = int(util * 100 * GBPS * length / 8)
    return PortRecord("f1", Stage.AGGREGATION, port, port + "-peer", 100 * GBPS, src, dst, start, octets, 0, length)


class TestParsePortRecords(unittest.TestCase):
    def test_csv(self):
        parsed = parse_port_records(csv_bytes(NLM_COLUMNS, [nlm_row(octets=123)]), DataFormat.CSV)
        self.assertEqual(parsed.errors, [])
        rec = parsed.records[0]
        self.assertEqual((rec.port_id, rec.stage, rec.outgoing_octets, rec.window_len),
                         ("p1", Stage.AGGREGATION, 123, 300))
        self.assertTrue(rec.is_inter_block)

    def test_jsonl(self):
        row = dict(zip(NLM_COLUMNS, nlm_row(octets=5)))
        data = (json.dumps(row) + "\n\n{broken\n").encode()
        parsed = parse_port_records(data, DataFormat.JSONL)
        self.assertEqual(len(parsed.records), 1)
        self.assertEqual(parsed.errors[0].line, 3)
        self.assertIn("invalid JSON", parsed.errors[0].message)

    def test_unknown_column(self):
        with self.assertRaisesRegex(ValueError, "unknown column"):
            parse_port_records(csv_bytes(list(NLM_COLUMNS) + ["colour"], [nlm_row() + ["red"]]))

    def test_row_errors(self):
        rows = [nlm_row(), nlm_row(stage="core"), nlm_row(octets=-4), nlm_row(port="p2")]
        parsed = parse_port_records(csv_bytes(NLM_COLUMNS, rows))
        self.assertEqual(len(parsed.records), 2)
        self.assertEqual([err.line for err in parsed.errors], [3, 4])
        self.assertEqual(parsed.errors[0].message, "unknown stage 'core'")

    def test_format_from_path(self):
        self.assertIs(DataFormat.from_path("x/nlm.CSV"), DataFormat.CSV)
        self.assertIs(DataFormat.from_path("afm.jsonl"), DataFormat.JSONL)
        with self.assertRaises(LookupError):
            DataFormat.from_path("afm.parquet")


class TestParseAfmRecords(unittest.TestCase):
    def test_scalar(self):
        parsed = parse_afm_records(csv_bytes(AFM_COLUMNS, [afm_row(value=0.002)]))
        rec = parsed.records[0]
        self.assertEqual(rec.key, JoinKey("f1", 0, Scope.fabric_wide(), QosClass.LOW))
        self.assertEqual((rec.family, rec.size_class, rec.stat, rec.value),
                         (AfmFamily.TRANSMIT_LATENCY, SizeClass.KIB_1, 99.0, 0.002))
        self.assertTrue(rec.matches(LATENCY))
        self.assertFalse(rec.matches(AfmKind.parse("transmit_latency:1KiB:p50")))

    def test_unknown_qos(self):
        parsed = parse_afm_records(csv_bytes(AFM_COLUMNS, [afm_row(), afm_row(qos="ultra")]))
        self.assertEqual(len(parsed.records), 1)
        self.assertEqual(parsed.errors[0].line, 3)
        self.assertEqual(parsed.errors[0].message, "unknown QoS 'ultra'")

    def test_latency_unit(self):
        header = list(AFM_COLUMNS) + ["unit"]
        parsed = parse_afm_records(csv_bytes(header, [afm_row(value=5) + ["ms"], afm_row(value=5) + ["min"]]))
        self.assertAlmostEqual(parsed.records[0].value, 0.005)
        self.assertIn("unit", parsed.errors[0].message)

    def test_block_scopes(self):
        rows = [afm_row(), afm_row()]
        rows[0][4:6] = ["b1", "b1"]
        rows[1][4:6] = ["b1", "b2"]
        parsed = parse_afm_records(csv_bytes(AFM_COLUMNS, rows))
        self.assertEqual([rec.key.scope.kind for rec in parsed.records], [ScopeKind.BLOCK, ScopeKind.ADJACENCY])

    def test_sketch(self):
        values = [0.001 * i for i in range(1, 52)]
        sketch = QuantileSketch(100).update(values)
        row = dict(zip(AFM_COLUMNS, afm_row()), stat="", value="", sketch_json=sketch.to_dict())
        parsed = parse_afm_records(json.dumps(row).encode(), DataFormat.JSONL)
        rec = parsed.records[0]
        self.assertIsNone(rec.value)
        self.assertAlmostEqual(rec.sketch.quantile(0.5), 0.026)
        self.assertTrue(rec.matches(AfmKind.parse("transmit_latency:1KiB:p50")))

    def test_bad_sketch(self):
        row = dict(zip(AFM_COLUMNS, afm_row()), sketch_json={'compression': 100})
        parsed = parse_afm_records(json.dumps(row).encode(), DataFormat.JSONL)
        self.assertEqual(parsed.records, [])
        self.assertIn("bad sketch", parsed.errors[0].message)

    def test_empty_sketch(self):
        empty = {'compression': 100, 'count': 0, 'min': None, 'max': None, 'centroids': []}
        row = dict(zip(AFM_COLUMNS, afm_row()), stat="", value="", sketch_json=json.dumps(empty))
        parsed = parse_afm_records(json.dumps(row).encode(), DataFormat.JSONL)
        self.assertEqual(parsed.records, [])
        self.assertEqual(parsed.errors[0].message, "bad sketch: empty")

    def test_missing_value(self):
        header = [col for col in AFM_COLUMNS if col != "value"]
        parsed = parse_afm_records(csv_bytes(header, [afm_row()[:-1]]))
        self.assertEqual(parsed.errors[0].message, "missing field 'value'")


class TestReaggregate(unittest.TestCase):
    def test_octets_summed(self):
        utils = [0.1, 0.9] * 5
        records = [record(start=i * 30, util=util) for i, util in enumerate(utils)]
        values, report = reaggregate_nlm(records, 300, [MAU, LINK_UTILIZATION])
        self.assertEqual(report.windows, 1)
        self.assertEqual(report.gaps, {})
        fabric = {val.kind: val.value for val in values if val.key.scope.kind is ScopeKind.FABRIC_WIDE}
        self.assertAlmostEqual(fabric[MAU], 0.5)
        self.assertAlmostEqual(fabric[LINK_UTILIZATION], 0.5)
        scopes = {val.key.scope for val in values}
        self.assertEqual(scopes, {Scope.fabric_wide(), Scope.adjacency("b1", "b2")})

    def test_windows_and_blocks(self):
        records = [record(start=0, length=300, util=0.2), record(start=300, length=300, util=0.4),
                   record("p2", start=0, length=300, util=0.6, src="b3", dst="b3")]
        values, report = reaggregate_nlm(records, 300, [MLU])
        self.assertEqual(report.windows, 2)
        by_key = {(val.key.window_start, val.key.scope): val.value for val in values}
        self.assertAlmostEqual(by_key[(0, Scope.fabric_wide())], 0.2)
        self.assertAlmostEqual(by_key[(300, Scope.fabric_wide())], 0.4)
        self.assertAlmostEqual(by_key[(0, Scope.block("b3"))], 0.6)

    def test_gaps(self):
        records = [record(start=i * 30, util=0.3) for i in range(9)]
        values, report = reaggregate_nlm(records, 300, [MAU])
        self.assertAlmostEqual(report.gaps[("f1", 0)], 0.1)
        self.assertAlmostEqual(values[0].value, 0.3)

    def test_straddle(self):
        with self.assertRaisesRegex(ValueError, "straddles"):
            reaggregate_nlm([record(start=280, length=30)], 300)

    def test_duplicate(self):
        with self.assertRaisesRegex(ValueError, "duplicate"):
            reaggregate_nlm([record(start=30), record(start=30)], 300)

    def test_cadence(self):
        with self.assertRaisesRegex(ValueError, "does not divide"):
            reaggregate_nlm([record(start=0, length=70)], 300)


def nlm_value(start, value=0.5):
    return NlmValue(JoinKey("f1", start, Scope.fabric_wide()), MAU, value)


def afm_record(start, value=0.001, qos=QosClass.LOW, sketch=None):
    key = JoinKey("f1", start, Scope.fabric_wide(), qos)
    if sketch is not None:
        return AfmRecord(key, 300, AfmFamily.TRANSMIT_LATENCY, SizeClass.KIB_1, sketch=sketch)
    return AfmRecord(key, 300, AfmFamily.TRANSMIT_LATENCY, SizeClass.KIB_1, 99.0, value)


class TestJoin(unittest.TestCase):
    def test_counts(self):
        nlm = [nlm_value(0), nlm_value(300), nlm_value(600)]
        afm = [afm_record(300), afm_record(600), afm_record(900)]
        samples, report = join_series(nlm, afm, MAU, LATENCY)
        self.assertEqual([s.window_start for s in samples], [300, 600])
        self.assertEqual((report.matched, report.nlm_only, report.afm_only, report.dropped_invalid), (2, 1, 1, 0))

    def test_qos_classes(self):
        nlm = [nlm_value(0, 0.7)]
        afm = [afm_record(0, 0.001, QosClass.LOW), afm_record(0, 0.002, QosClass.HIGH)]
        samples, report = join_series(nlm, afm, MAU, LATENCY)
        self.assertEqual(report.matched, 2)
        self.assertEqual({s.qos: s.afm_value for s in samples}, {QosClass.LOW: 0.001, QosClass.HIGH: 0.002})
        self.assertTrue(all(s.nlm_value == 0.7 for s in samples))

    def test_dropped_invalid(self):
        samples, report = join_series([nlm_value(0), nlm_value(300, 1.5)], [afm_record(0, -1.0), afm_record(300)],
                                      MAU, LATENCY)
        self.assertEqual(samples, [])
        self.assertEqual((report.matched, report.dropped_invalid), (2, 2))

    def test_sketch_read_at_stat(self):
        sketch = QuantileSketch(200).update(range(101))
        samples, _ = join_series([nlm_value(0)], [afm_record(0, sketch=sketch)], MAU, LATENCY)
        self.assertAlmostEqual(samples[0].afm_value, 99.0)
        samples, _ = join_series([nlm_value(0)], [afm_record(0, sketch=sketch)], MAU, LATENCY, tau_stat=0.5)
        self.assertAlmostEqual(samples[0].afm_value, 50.0)

    def test_empty_sketch_dropped(self):
        samples, report = join_series([nlm_value(0), nlm_value(300)],
                                      [afm_record(0, sketch=QuantileSketch(100)), afm_record(300)], MAU, LATENCY)
        self.assertEqual([s.window_start for s in samples], [300])
        self.assertEqual((report.matched, report.dropped_invalid), (2, 1))

    def test_order_independent(self):
        sketch = QuantileSketch(100).update([0.001 * i for i in range(1, 101)])
        nlm = [nlm_value(300 * i, 0.05 * i) for i in range(12)]
        afm = [afm_record(300 * i, 0.001 * (i + 1), qos) for i in range(2, 15) for qos in (QosClass.LOW, QosClass.HIGH)]
        afm += [afm_record(600, sketch=sketch), afm_record(3000, sketch=sketch)]
        expected, expected_report = join_series(nlm, afm, MAU, LATENCY)
        rng = np.random.default_rng(8)
        for _ in range(5):
            shuffled_nlm = [nlm[i] for i in rng.permutation(len(nlm))]
            shuffled_afm = [afm[i] for i in rng.permutation(len(afm))]
            samples, report = join_series(shuffled_nlm, shuffled_afm, MAU, LATENCY)
            self.assertEqual(samples, expected)
            self.assertEqual(report, expected_report)

    def test_scalar_wins(self):
        sketch = QuantileSketch(200).update(range(101))
        afm = [afm_record(0, sketch=sketch), afm_record(0, 0.004)]
        samples, report = join_series([nlm_value(0)], afm, MAU, LATENCY)
        self.assertEqual(report.matched, 1)
        self.assertEqual(samples[0].afm_value, 0.004)
