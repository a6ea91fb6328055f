import tempfile
from pathlib import Path

import numpy as np
import yaml
from django.test import SimpleTestCase

from estimator.config import dump_config, env_overrides, load_config, validate_config
from estimator.core import data as data_io
from estimator.core.bundle import ModelKind
from estimator.exceptions import ConfigError


def write_yaml(directory, data):
    path = Path(directory) / "run.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


class DefaultsTests(SimpleTestCase):
    def test_empty_config_takes_defaults(self):
        config = validate_config({})
        self.assertEqual(config.model["kind"], "nntf")
        self.assertTrue(config.model["augmented"])
        self.assertEqual(config.train["lr"], 5e-4)
        self.assertEqual(config.ukf["alpha"], 1.0)
        self.assertEqual(config.data["split"], [0.7, 0.2, 0.1])
        self.assertIsNone(config.paths["dataset"])

    def test_null_section_is_empty(self):
        self.assertEqual(validate_config({"train": None}).train["seq_len"], 500)

    def test_augmentation_follows_kind(self):
        self.assertFalse(validate_config({"model": {"kind": "nn"}}).model["augmented"])
        self.assertTrue(validate_config({"model": {"kind": "pc"}}).model["augmented"])
        fixed = validate_config({"model": {"kind": "nntf", "fixed_mu": 0.5}})
        self.assertFalse(fixed.model["augmented"])

    def test_builds_typed_configs(self):
        config = validate_config({"model": {"kind": "pc", "augmented": False}, "train": {"state_weights": [1, 1, 1, 1]}})
        self.assertEqual(config.train_config().state_weights, (1.0, 1.0, 1.0, 1.0))
        self.assertEqual(config.ukf_config().mu_prior, 0.6)
        self.assertEqual(config.sim_config().delta_max, 0.45)
        bundle = config.new_bundle()
        self.assertEqual(bundle.kind, ModelKind.PC)
        self.assertEqual(bundle.n_x, 4)

    def test_state_weights_from_variability(self):
        ds = data_io.simulate_dataset(data_io.SimConfig(duration=1.0, segment_seconds=1.0, seed=1))
        fixed = validate_config({})
        self.assertEqual(fixed.train_config(ds).state_weights, (0.223, 0.506, 0.157, 0.114))
        derived = validate_config({"train": {"variability_weights": True}})
        with self.assertLogs("estimator.config", level="INFO"):
            weights = derived.train_config(ds).state_weights
        np.testing.assert_allclose(weights, data_io.variability_weights(ds))
        self.assertEqual(derived.train_config().state_weights, (0.223, 0.506, 0.157, 0.114))

    def test_eval_weights_default_to_training_weights_without_omega(self):
        config = validate_config({})
        self.assertEqual(config.eval_weights(), (0.223, 0.506, 0.157, 0.0))
        self.assertEqual(config.eval_length(), 1000)
        self.assertEqual(config.eval_length(rate_hz=50.0), 500)


class ValidationTests(SimpleTestCase):
    def assertKeyPath(self, raw, key_path):
        with self.assertRaises(ConfigError) as ctx:
            validate_config(raw)
        self.assertEqual(ctx.exception.key_path, key_path)

    def test_negative_learning_rate_names_key(self):
        self.assertKeyPath({"train": {"lr": -1}}, "train.lr")

    def test_unknown_keys_and_sections(self):
        self.assertKeyPath({"train": {"learning_rate": 0.1}}, "train.learning_rate")
        self.assertKeyPath({"optimizer": {}}, "optimizer")

    def test_cross_field_rules(self):
        self.assertKeyPath({"model": {"kind": "nn", "augmented": True}}, "model.augmented")
        self.assertKeyPath({"model": {"kind": "pc", "fixed_mu": 0.5}}, "model.fixed_mu")
        self.assertKeyPath({"model": {"kind": "nntf", "augmented": False}}, "model.fixed_mu")
        self.assertKeyPath({"ukf": {"mu_min": 1.0, "mu_max": 0.5}}, "ukf.mu_max")
        self.assertKeyPath({"data": {"split": [0.5, 0.5, 0.5]}}, "data.split")
        self.assertKeyPath({"data": {"savgol_window": 8}}, "data.savgol_window")
        self.assertKeyPath({"noise": {"process_diag": [0.1] * 4}}, "noise.process_diag")
        self.assertKeyPath({"sim": {"tires": ["Z"]}}, "sim.tires")

    def test_config_must_be_a_mapping(self):
        with self.assertRaises(ConfigError):
            validate_config([1, 2])


class LoadingTests(SimpleTestCase):
    def test_precedence_is_file_then_environment_then_flags(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_yaml(tmp, {"train": {"lr": 0.1, "seed": 1, "workers": 2}})
            environ = {"VELEST_TRAIN__SEED": "7", "VELEST_TRAIN__WORKERS": "3"}
            config = load_config(path, flags={"train.workers": 4, "train.lr": None}, environ=environ)
        self.assertEqual(config.train["lr"], 0.1)
        self.assertEqual(config.train["seed"], 7)
        self.assertEqual(config.train["workers"], 4)

    def test_environment_values_are_yaml_scalars(self):
        overrides = env_overrides({"VELEST_MODEL__KIND": "pc", "VELEST_TRAIN__LR": "0.001", "HOME": "/root"})
        self.assertEqual(overrides, {"model": {"kind": "pc"}, "train": {"lr": 0.001}})

    def test_unknown_environment_section(self):
        with self.assertRaises(ConfigError):
            env_overrides({"VELEST_OPTIM__LR": "1"})

    def test_dump_and_reload_is_stable(self):
        config = load_config(environ={}, flags={"model.kind": "pcr"})
        text = dump_config(config)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "dumped.yaml"
            path.write_text(text)
            reloaded = load_config(path, environ={})
        self.assertEqual(reloaded, config)
        self.assertEqual(dump_config(reloaded), text)

    def test_file_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                load_config(Path(tmp) / "absent.yaml", environ={})
            bad = Path(tmp) / "bad.yaml"
            bad.write_text("train: [unclosed\n")
            with self.assertRaises(ConfigError):
                load_config(bad, environ={})
            scalar = Path(tmp) / "scalar.yaml"
            scalar.write_text("3\n")
            with self.assertRaises(ConfigError):
                load_config(scalar, environ={})
