import contextlib
import io
import json
import shutil
import tempfile
from pathlib import Path

import pandas as pd
import yaml
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from estimator.cli import dispatch

RUN_CONFIG = {
    "model": {"kind": "pc"},
    "sim": {"duration": 4.0, "segment_seconds": 2.0, "maneuvers": ["sine_steer"], "seed": 3},
    "train": {"pretrain_epochs": 1, "finetune_epochs": 1, "seq_len": 20, "batch_size": 2, "pretrain_batch_size": 256},
    "eval": {"sequence_seconds": 0.2},
}


def run_command(name, *args):
    """Run a subcommand and return its parsed JSON outcome."""
    stdout, stderr = io.StringIO(), io.StringIO()
    call_command(name, *args, stdout=stdout, stderr=stderr, verbosity=0)
    return json.loads(stdout.getvalue())


def write_run_config(directory, **sections):
    config = {**RUN_CONFIG, **sections, "paths": {"out_dir": str(directory)}}
    path = Path(directory) / "run.yaml"
    path.write_text(yaml.safe_dump(config))
    return path


class PipelineTests(SimpleTestCase):
    """simulate -> pretrain -> finetune -> estimate -> evaluate on a tiny run."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = Path(tempfile.mkdtemp())
        cls.config = str(write_run_config(cls.tmp))
        cls.dataset = str(cls.tmp / "sim.csv")
        cls.simulated = run_command("simulate", "--config", cls.config, "--out", cls.dataset)
        cls.pretrained = run_command("pretrain", "--config", cls.config, "--dataset", cls.dataset)
        cls.finetuned = run_command(
            "finetune",
            "--config",
            cls.config,
            "--dataset",
            cls.dataset,
            "--checkpoint",
            cls.pretrained["data"]["checkpoint"],
            "--log",
            str(cls.tmp / "finetune-log.csv"),
        )
        cls.checkpoint = cls.finetuned["data"]["checkpoint"]

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)
        super().tearDownClass()

    def test_simulate(self):
        self.assertEqual(self.simulated["status"], "success")
        self.assertEqual(self.simulated["data"]["rows"], 400)
        self.assertEqual(self.simulated["data"]["segments"], 2)
        self.assertTrue(Path(self.dataset).exists())

    def test_training_commands_write_checkpoints(self):
        self.assertEqual(self.pretrained["data"]["checkpoint"], str(self.tmp / "pc-pretrained.json"))
        self.assertEqual(self.pretrained["data"]["epochs"], 1)
        self.assertEqual(self.finetuned["data"]["checkpoint"], str(self.tmp / "pc-finetuned.json"))
        self.assertTrue(Path(self.checkpoint).exists())
        log = pd.read_csv(self.tmp / "finetune-log.csv")
        self.assertEqual(log["phase"].tolist(), ["finetune"])

    def test_estimates_file_scores_like_running_the_filter(self):
        estimates = str(self.tmp / "estimates.csv")
        estimated = run_command(
            "estimate", "--config", self.config, "--dataset", self.dataset, "--checkpoint", self.checkpoint,
            "--out", estimates,
        )
        self.assertGreater(estimated["data"]["windows"], 0)
        self.assertIn("final_mu_mean", estimated["data"])
        from_file = run_command(
            "evaluate", "--config", self.config, "--dataset", self.dataset, "--checkpoint", self.checkpoint,
            "--estimates", estimates, "--report", str(self.tmp / "report.json"), "--format", "json",
        )
        direct = run_command(
            "evaluate", "--config", self.config, "--dataset", self.dataset, "--checkpoint", self.checkpoint,
            "--run-filter",
        )
        self.assertAlmostEqual(from_file["data"]["report"]["mse"], direct["data"]["report"]["mse"], places=12)
        report = json.loads((self.tmp / "report.json").read_text())
        self.assertEqual(report[0]["model"], "pc")

    def test_prediction_error(self):
        outcome = run_command(
            "prediction_error", self.pretrained["data"]["checkpoint"], self.checkpoint,
            "--config", self.config, "--dataset", self.dataset, "--split", "all",
        )
        rows = outcome["data"]["rows"]
        self.assertEqual(len(rows), 2)
        self.assertEqual(set(rows[0]) - {"model", "checkpoint"}, {"vx", "vy", "r", "omega_s"})

    def test_ablate_mixed_crosses_every_pair(self):
        outcome = run_command(
            "ablate_mixed", self.pretrained["data"]["checkpoint"], self.checkpoint,
            "--config", self.config, "--dataset", self.dataset, "--split", "all",
        )
        labels = [pairing["model"] for pairing in outcome["data"]["pairings"]]
        self.assertEqual(
            labels,
            ["pc-pretrained/pc-pretrained", "pc-pretrained/pc-finetuned", "pc-finetuned/pc-pretrained",
             "pc-finetuned/pc-finetuned"],
        )

    def test_sweep_skips_lengths_without_windows(self):
        out = self.tmp / "sweep.csv"
        outcome = run_command(
            "sweep_seqlen", "--config", self.config, "--dataset", self.dataset, "--checkpoint", self.checkpoint,
            "--lengths", "8", "1000", "--out", str(out),
        )
        self.assertEqual([row["seq_len"] for row in outcome["data"]["rows"]], [8])
        self.assertEqual(pd.read_csv(out)["seq_len"].tolist(), [8])

    def test_gradcheck(self):
        outcome = run_command("gradcheck", "--config", self.config, "--steps", "10", "--samples", "5")
        self.assertLess(outcome["data"]["max_relative_error"], 1e-4)


class CommandErrorTests(SimpleTestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = Path(tmp.name)

    def test_evaluate_requires_checkpoint(self):
        with self.assertRaises(CommandError):
            run_command("evaluate", "--estimates", str(self.tmp / "estimates.csv"))

    def test_invalid_config_reports_key(self):
        config = write_run_config(self.tmp, train={"lr": -1})
        stdout = io.StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command("simulate", "--config", str(config), stdout=stdout, verbosity=0)
        self.assertEqual(ctx.exception.returncode, 1)
        outcome = json.loads(stdout.getvalue())
        self.assertEqual(outcome["status"], "fail")
        self.assertIn("train.lr", outcome["errors"])

    def test_runtime_failure_names_error_type(self):
        config = write_run_config(self.tmp)
        stdout = io.StringIO()
        with self.assertRaises(CommandError):
            call_command("estimate", "--config", str(config), "--dataset", str(self.tmp / "absent.csv"),
                         "--checkpoint", str(self.tmp / "absent.json"), stdout=stdout, verbosity=0)
        outcome = json.loads(stdout.getvalue())
        self.assertEqual(outcome["status"], "error")
        self.assertEqual(outcome["errors"]["type"], "DataValidationError")

    def test_missing_output_location(self):
        with self.assertRaises(CommandError):
            run_command("simulate", "--duration", "0.1")

    def test_ingest_builds_dataset_from_log(self):
        config = str(write_run_config(self.tmp))
        dataset = str(self.tmp / "sim.csv")
        raw = str(self.tmp / "raw.csv")
        run_command("simulate", "--config", config, "--out", dataset, "--duration", "1", "--raw-log", raw)
        ingested = str(self.tmp / "ingested.csv")
        outcome = run_command("ingest", raw, "--config", config, "--out", ingested, "--tire-label", "C")
        self.assertEqual(outcome["data"]["dataset"], ingested)
        self.assertGreaterEqual(outcome["data"]["rows"], 99)

        joined = str(self.tmp / "joined.csv")
        outcome = run_command("ingest", raw, raw, "--config", config, "--out", joined)
        self.assertEqual(outcome["data"]["segments"], 2)
        frame = pd.read_csv(joined)
        self.assertEqual(sorted(frame["segment"].unique()), [0, 1])
        self.assertTrue((frame["t"].diff().dropna() > 0).all())


class DispatchTests(SimpleTestCase):
    def dispatch(self, argv):
        stream = io.StringIO()
        with contextlib.redirect_stdout(stream), contextlib.redirect_stderr(stream):
            return dispatch(argv), stream.getvalue()

    def test_unknown_subcommand_is_a_usage_error(self):
        code, text = self.dispatch(["train-everything"])
        self.assertEqual(code, 2)
        self.assertIn("sweep-seqlen", text)

    def test_no_arguments(self):
        self.assertEqual(self.dispatch([])[0], 2)

    def test_help(self):
        code, text = self.dispatch(["--help"])
        self.assertEqual(code, 0)
        self.assertIn("usage: velest", text)
