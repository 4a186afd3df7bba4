import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from afmlens import common, storage
from afmlens.__main__ import main
from afmlens.ingestion import AFM_COLUMNS, NLM_COLUMNS
from afmlens.pipeline import ALPHA_GRID, CURVATURE_GRID, WEEK

WINDOWS_PER_WEEK = WEEK // 300


def quiet(func, *args, **kwargs):
    """Call func with stdout captured; return its result and the output."""
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        ret = func(*args, **kwargs)
    return ret, buf.getvalue()


class CommandTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def synth(self, name, **kwargs):
        out = self.root / name
        ret, _ = quiet(common.cmd_synth, out, deterministic=True, **kwargs)
        self.assertEqual(ret, 0)
        return out / "nlm.csv", out / "afm.csv"


class TestSynthCommand(CommandTestCase):
    def test_manifest(self):
        nlm_file, afm_file = self.synth("trace", kind="queueing", beta=3, c=0.5, n=500, seed=1)
        self.assertTrue(nlm_file.is_file())
        self.assertTrue(afm_file.is_file())
        manifest = json.loads((self.root / "trace" / "manifest.json").read_text())
        self.assertEqual(manifest['seed'], 1)
        self.assertEqual(manifest['command'], "synth")
        self.assertNotIn('created', manifest)
        self.assertEqual(sorted(manifest['outputs']), sorted([str(afm_file), str(nlm_file)]))


class TestFitCommand(CommandTestCase):
    def test_accurate(self):
        nlm_file, afm_file = self.synth("queueing", kind="queueing", beta=3, c=0.5, sigma=0.05, x_hi=0.8,
                                        n=6000, seed=1)
        out = self.root / "report.json"
        ret, _ = quiet(common.cmd_fit, nlm_file, afm_file, out=out, deterministic=True)
        self.assertEqual(ret, 0)
        report = json.loads(out.read_text())['report']
        self.assertEqual(report['verdict'], "accurate")
        self.assertEqual(report['selected']['kind'], "queueing")

    def test_no_clear_relationship(self):
        nlm_file, afm_file = self.synth("noise", kind="linear", beta=0, c=1, sigma=2, n=3000, seed=2)
        ret, output = quiet(common.cmd_fit, nlm_file, afm_file)
        self.assertEqual(ret, 2)
        self.assertEqual(json.loads(output)['report']['verdict'], "no_clear_relationship")

    def test_insufficient_data(self):
        nlm_file, afm_file = self.synth("tiny", n=20)
        ret, _ = quiet(common.cmd_fit, nlm_file, afm_file)
        self.assertEqual(ret, 3)

    def test_deterministic_output(self):
        nlm_file, afm_file = self.synth("det", kind="queueing", beta=3, c=0.5, sigma=0.1, x_hi=0.8, n=3000, seed=4)
        first, second = self.root / "a.json", self.root / "b.json"
        quiet(common.cmd_fit, nlm_file, afm_file, out=first, deterministic=True)
        quiet(common.cmd_fit, nlm_file, afm_file, out=second, deterministic=True)
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_plot(self):
        nlm_file, afm_file = self.synth("plot", kind="linear", beta=2, c=1, sigma=0.05, n=3000, seed=5)
        plot = self.root / "plot.csv"
        quiet(common.cmd_fit, nlm_file, afm_file, plot=plot)
        lines = plot.read_text().splitlines()
        self.assertEqual(lines[0], "bucket_x,observed,predicted,knee")
        self.assertGreater(len(lines), 2)


class TestHarnessCommands(CommandTestCase):
    def test_sweep_default_grid(self):
        nlm_file, afm_file = self.synth("sweep", kind="linear", beta=2, c=1, sigma=0.1, n=3000, seed=6)
        ret, output = quiet(common.cmd_sweep, nlm_file, afm_file, alphas=[])
        self.assertEqual(ret, 0)
        rows = json.loads(output)['rows']
        self.assertEqual([row['alpha'] for row in rows], [0.1, 0.3, 0.5, 0.7, 0.9])

    def test_sweep_without_flags(self):
        nlm_file, afm_file = self.synth("grids", kind="linear", beta=2, c=1, sigma=0.1, n=1500, seed=6)
        ret, output = quiet(common.cmd_sweep, nlm_file, afm_file)
        self.assertEqual(ret, 0)
        rows = json.loads(output)['rows']
        self.assertEqual(len(rows), len(ALPHA_GRID) * len(CURVATURE_GRID))
        self.assertEqual(sorted({row['alpha'] for row in rows}), list(ALPHA_GRID))
        self.assertEqual(sorted({row['curvature'] for row in rows}), list(CURVATURE_GRID))

    def test_curvature_sweep_on_parabola(self):
        nlm_rows, afm_rows = [], []
        for j in range(1001):
            x = (j * 337 % 1001) / 1000
            start = 300 * j
            nlm_rows.append(["f1", "aggregation", "p1", "p1-peer", 8 * 10 ** 9, "b1", "b2", start, 300,
                             int(round(x * 1000)) * 3 * 10 ** 8, 0])
            afm_rows.append(["f1", start, 300, "low", "", "", "transmit_latency", "1KiB", "p99", 1 + 10 * x * x])
        nlm_file, afm_file = self.root / "parabola_nlm.csv", self.root / "parabola_afm.csv"
        storage.write_csv(nlm_file, NLM_COLUMNS, [dict(zip(NLM_COLUMNS, row)) for row in nlm_rows])
        storage.write_csv(afm_file, AFM_COLUMNS, [dict(zip(AFM_COLUMNS, row)) for row in afm_rows])
        ret, output = quiet(common.cmd_sweep, nlm_file, afm_file, curvatures=[])
        self.assertEqual(ret, 0)
        rows = json.loads(output)['rows']
        self.assertEqual([row['curvature'] for row in rows], list(CURVATURE_GRID))
        knees = [row['knee_x'] for row in rows]
        self.assertEqual([knee is not None for knee in knees], [True, True, False, False, False, False])
        self.assertAlmostEqual(knees[0], 0.5, delta=0.1)

    def test_stability(self):
        nlm_file, afm_file = self.synth("stability", kind="linear", beta=2, c=1, sigma=0.05,
                                        n=3 * WINDOWS_PER_WEEK, seed=9)
        table = self.root / "stability.csv"
        ret, output = quiet(common.cmd_stability, nlm_file, afm_file, train_weeks=1, test_weeks=1, step_weeks=1,
                            table=table)
        self.assertEqual(ret, 0)
        data = json.loads(output)
        self.assertEqual(len(data['windows']), 2)
        self.assertEqual(sum(data['verdicts'].values()), 2)
        self.assertEqual(table.read_text().splitlines()[0],
                         "train_start,train_end,test_end,verdict,kind,test_rarmse,knee_x")

    def test_knees(self):
        nlm_file, afm_file = self.synth("knees", n=2 * WINDOWS_PER_WEEK, seed=7)
        table = self.root / "knees.csv"
        ret, output = quiet(common.cmd_knees, nlm_file, afm_file, table=table)
        self.assertEqual(ret, 0)
        self.assertEqual(len(json.loads(output)['windows']), 2)
        self.assertEqual(len(table.read_text().splitlines()), 3)

    def test_rank(self):
        nlm_file, afm_file = self.synth("rank", kind="queueing", beta=3, c=0.5, sigma=0.05, x_hi=0.8, n=3000,
                                        seed=8)
        ret, output = quiet(common.cmd_rank, nlm_file, afm_file, nlms=["mau", "link_p90"])
        self.assertEqual(ret, 0)
        ranking = json.loads(output)['ranking']
        self.assertEqual(sorted(row['nlm'] for row in ranking), ["link_p90", "mau"])


class TestMain(CommandTestCase):
    def run_main(self, *argv):
        stderr = io.StringIO()
        with mock.patch("sys.argv", ["afmlens", *argv]), contextlib.redirect_stderr(stderr), \
                self.assertRaises(SystemExit) as ctx:
            quiet(main)
        return ctx.exception.code, stderr.getvalue()

    def test_missing_file(self):
        missing = str(self.root / "missing.csv")
        code, err = self.run_main("fit", "--nlm-file", missing, "--afm-file", missing)
        self.assertEqual(code, 1)
        self.assertIn("Unable to fit 'mau'", err)

    def test_synth(self):
        code, _ = self.run_main("synth", "--n", "50", "--out", str(self.root / "cli"))
        self.assertEqual(code, 0)
        self.assertTrue((self.root / "cli" / "manifest.json").is_file())
