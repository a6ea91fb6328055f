import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from estimator.core import data as data_io
from estimator.core import evaluation, ukf
from estimator.core.bundle import build_bundle
from estimator.exceptions import DataValidationError, ReportError, ShapeError

WEIGHTS = (0.25, 0.25, 0.25, 0.25)


class MetricsTests(SimpleTestCase):
    def test_metrics_of_known_errors(self):
        truth = np.zeros((4, 4))
        estimate = np.tile([[1.0, 0.0, 0.0, 0.0]], (4, 1))
        estimate[3, 0] = 3.0
        report = evaluation.compute_metrics([estimate], [truth], WEIGHTS)
        # per-step weighted abs errors 0.25, 0.25, 0.25, 0.75
        self.assertAlmostEqual(report.mae, 0.375)
        self.assertAlmostEqual(report.mse, (0.25 * 3 + 0.25 * 9) / 4)
        self.assertAlmostEqual(report.ae99, 0.25 + 0.97 * 0.5)
        self.assertAlmostEqual(report.per_state["vx"]["mae"], 1.5)
        self.assertEqual(report.per_state["vy"]["mse"], 0.0)
        self.assertEqual(report.sequences, 1)

    def test_burn_in_drops_leading_samples(self):
        truth = np.zeros((5, 4))
        estimate = np.zeros((5, 4))
        estimate[:2] = 10.0
        report = evaluation.compute_metrics([estimate], [truth], WEIGHTS, burn_in=2)
        self.assertEqual(report.mse, 0.0)

    def test_friction_column_is_ignored(self):
        truth = np.zeros((3, 4))
        estimate = np.column_stack([np.zeros((3, 4)), np.full(3, 0.6)])
        self.assertEqual(evaluation.compute_metrics([estimate], [truth], WEIGHTS).mse, 0.0)

    def test_misaligned_inputs(self):
        with self.assertRaises(ShapeError):
            evaluation.compute_metrics([np.zeros((3, 4))], [np.zeros((2, 4))], WEIGHTS)
        with self.assertRaises(ShapeError):
            evaluation.compute_metrics([np.zeros((3, 4))], [], WEIGHTS)
        with self.assertRaises(DataValidationError):
            evaluation.compute_metrics([np.zeros((3, 4))], [np.zeros((3, 4))], WEIGHTS, burn_in=3)


class ReportTests(SimpleTestCase):
    def setUp(self):
        self.report = evaluation.compute_metrics(
            [np.ones((3, 4))], [np.zeros((3, 4))], WEIGHTS, model="pc", dataset="sim"
        )

    def test_csv_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = evaluation.emit_report([self.report, self.report], Path(tmp) / "report.csv")
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns[:6]), evaluation.REPORT_COLUMNS)
        self.assertEqual(len(frame), 2)
        self.assertIn("mse_vx", frame.columns)
        self.assertAlmostEqual(frame["mse"][0], 1.0)

    def test_json_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = evaluation.emit_report([self.report], Path(tmp) / "report.json", fmt="json")
            payload = json.loads(path.read_text())
        self.assertEqual(payload[0]["model"], "pc")
        self.assertEqual(payload[0]["per_state"]["r"], {"mse": 1.0, "mae": 1.0})

    def test_report_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ReportError):
                evaluation.emit_report([], Path(tmp) / "report.csv")
            with self.assertRaises(ReportError):
                evaluation.emit_report([self.report], Path(tmp) / "report.xml", fmt="xml")
            with self.assertRaises(ReportError):
                evaluation.emit_report([self.report], Path(tmp) / "missing" / "report.csv")


class EstimationTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cfg = data_io.SimConfig(
            duration=2.0, segment_seconds=1.0, maneuvers=("sine_steer",), substeps=1, seed=4
        )
        cls.dataset = data_io.simulate_dataset(cfg)

    def test_exact_model_has_no_prediction_error(self):
        errors = evaluation.prediction_metrics(self.dataset, build_bundle("pc", augmented=True))
        self.assertEqual(set(errors), {"vx", "vy", "r", "omega_s"})
        self.assertLess(max(errors.values()), 1e-10)

    def test_estimates_cover_evaluation_windows(self):
        bundle = build_bundle("pc", augmented=True)
        estimates = evaluation.estimate_windows(self.dataset, bundle, ukf.UkfConfig(), length=40)
        self.assertEqual([(e.start, e.stop) for e in estimates], [(0, 40), (40, 80), (100, 140), (140, 180)])
        self.assertEqual(estimates[0].means.shape, (40, 5))
        friction = evaluation.final_friction(estimates)
        self.assertEqual(len(friction), 4)
        self.assertTrue(((friction >= 0.05) & (friction <= 1.5)).all())

    def test_frame_round_trip_scores_identically(self):
        bundle = build_bundle("pc")
        estimates = evaluation.estimate_windows(self.dataset, bundle, ukf.UkfConfig(), length=50)
        frame = evaluation.estimates_frame(self.dataset, estimates, augmented=False)
        self.assertEqual(list(frame.columns), ["row", "t", "window", "vx", "vy", "r", "omega_s"])
        restored = evaluation.estimates_from_frame(frame)
        direct = evaluation.score_estimates(self.dataset, estimates, WEIGHTS)
        again = evaluation.score_estimates(self.dataset, restored, WEIGHTS)
        self.assertEqual(direct.mse, again.mse)
        self.assertEqual(direct.dataset, self.dataset.name)

    def test_frame_validation(self):
        with self.assertRaises(DataValidationError):
            evaluation.estimates_from_frame(pd.DataFrame({"row": [0], "window": [0]}))
        frame = pd.DataFrame(
            {"row": [0, 2], "window": [0, 0], "vx": [1.0, 1.0], "vy": [0.0, 0.0], "r": [0.0, 0.0], "omega_s": [1.0, 1.0]}
        )
        with self.assertRaises(DataValidationError):
            evaluation.estimates_from_frame(frame)

    def test_estimates_beyond_dataset(self):
        estimate = evaluation.Estimate(190, 210, np.zeros((20, 4)))
        with self.assertRaises(DataValidationError):
            evaluation.score_estimates(self.dataset, [estimate], WEIGHTS)
