import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from estimator.checkpoints import load_checkpoint, save_checkpoint
from estimator.core import noise
from estimator.core.bundle import MixedBundle, ModelKind, build_bundle, friction_frozen
from estimator.exceptions import CheckpointError, ParameterError


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "model.json"

    def test_saved_bundle_is_restored_exactly(self):
        bundle = build_bundle("nntf", augmented=True, hidden=(6, 5), noise_mode=noise.HETEROSCEDASTIC, name="tire")
        save_checkpoint(bundle, self.path, extra={"stage": "pretrain"})
        restored = load_checkpoint(self.path)
        self.assertEqual(restored.kind, ModelKind.NNTF)
        self.assertTrue(restored.augmented)
        self.assertEqual(restored.label, "tire")
        self.assertEqual(restored.meta["stage"], "pretrain")
        self.assertEqual(restored.meta["hidden"], [6, 5])
        self.assertEqual(list(restored.parameters), list(bundle.parameters))
        np.testing.assert_array_equal(restored.parameters.flat(), bundle.parameters.flat())

    def test_missing_file(self):
        with self.assertRaisesMessage(CheckpointError, "not found"):
            load_checkpoint(self.path)

    def test_corrupt_json(self):
        self.path.write_text("{not json")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_wrong_version_names_key(self):
        save_checkpoint(build_bundle("pc"), self.path)
        payload = json.loads(self.path.read_text())
        payload["version"] = 99
        self.path.write_text(json.dumps(payload))
        with self.assertRaisesMessage(CheckpointError, "version"):
            load_checkpoint(self.path)

    def test_tensor_size_must_match_shape(self):
        save_checkpoint(build_bundle("pc"), self.path)
        payload = json.loads(self.path.read_text())
        payload["tensors"][0]["values"].append(1.0)
        self.path.write_text(json.dumps(payload))
        with self.assertRaisesMessage(CheckpointError, "tensors.0.values"):
            load_checkpoint(self.path)

    def test_missing_noise_tensor(self):
        save_checkpoint(build_bundle("pc"), self.path)
        payload = json.loads(self.path.read_text())
        payload["tensors"] = [entry for entry in payload["tensors"] if entry["name"] != "noise.l_q"]
        self.path.write_text(json.dumps(payload))
        with self.assertRaisesMessage(CheckpointError, "noise.l_q"):
            load_checkpoint(self.path)

    def rewrite(self, bundle, edit):
        save_checkpoint(bundle, self.path)
        payload = json.loads(self.path.read_text())
        edit(payload)
        self.path.write_text(json.dumps(payload))

    def drop(self, name):
        def edit(payload):
            payload["tensors"] = [entry for entry in payload["tensors"] if entry["name"] != name]

        return edit

    def test_missing_tire_coefficient(self):
        self.rewrite(build_bundle("pc"), self.drop("pacejka.bx"))
        with self.assertRaisesMessage(CheckpointError, "pacejka.bx"):
            load_checkpoint(self.path)

    def test_missing_network_bias(self):
        self.rewrite(build_bundle("nn", hidden=(4,)), self.drop("dynamics_net.b1"))
        with self.assertRaisesMessage(CheckpointError, "dynamics_net.b1"):
            load_checkpoint(self.path)

    def test_tensors_must_fit_the_kind(self):
        def relabel(payload):
            payload["meta"]["kind"] = "pc"

        self.rewrite(build_bundle("nn", hidden=(4,)), relabel)
        with self.assertRaisesMessage(CheckpointError, "pacejka"):
            load_checkpoint(self.path)

    def test_network_output_must_fit_the_state(self):
        def narrow(payload):
            for entry in payload["tensors"]:
                if entry["name"] == "dynamics_net.w1":
                    entry["shape"], entry["values"] = [4, 3], [0.0] * 12
                if entry["name"] == "dynamics_net.b1":
                    entry["shape"], entry["values"] = [3], [0.0] * 3

        self.rewrite(build_bundle("nn", hidden=(4,)), narrow)
        with self.assertRaisesMessage(CheckpointError, "dynamics_net maps 9 -> 3"):
            load_checkpoint(self.path)


class BundleTests(SimpleTestCase):
    def test_parameter_groups(self):
        bundle = build_bundle("pcr", hidden=(4,))
        self.assertIn("pacejka.bx", bundle.model_parameter_names)
        self.assertIn("dynamics_net.w0", bundle.model_parameter_names)
        self.assertEqual(bundle.noise_parameter_names, ["noise.l_r", "noise.l_q"])

    def test_friction_rules(self):
        with self.assertRaises(ParameterError):
            build_bundle("nn", augmented=True)
        with self.assertRaises(ParameterError):
            build_bundle("nntf")
        self.assertEqual(build_bundle("nntf", fixed_mu=0.5).n_x, 4)

    def test_freezing_friction_drops_the_fifth_state(self):
        bundle = build_bundle("nntf", augmented=True, hidden=(4,))
        frozen = friction_frozen(bundle, 0.43)
        self.assertFalse(frozen.augmented)
        self.assertEqual(frozen.fixed_mu, 0.43)
        self.assertEqual(frozen.parameters["noise.l_r"].shape, (noise.tril_count(4),))
        lower = noise.lower_from_entries(bundle.parameters["noise.l_r"], 5).values
        np.testing.assert_array_equal(
            noise.lower_from_entries(frozen.parameters["noise.l_r"], 4).values, lower[:4, :4]
        )
        with self.assertRaises(ParameterError):
            friction_frozen(build_bundle("pc", augmented=True), 0.5)

    def test_mixed_bundle_namespaces_parameters(self):
        predictor = build_bundle("pc", name="p")
        corrector = build_bundle("nn", hidden=(4,), name="u")
        mixed = MixedBundle(predictor, corrector)
        self.assertEqual(mixed.label, "p/u")
        self.assertEqual(mixed.parameters.size, predictor.parameters.size + corrector.parameters.size)
        self.assertTrue(all(name.startswith(("predict.", "update.")) for name in mixed.parameters))
        view = mixed.view()
        x, u = np.array([2.0, 0.1, 0.2, 2.1]), np.array([0.05, 4.0])
        np.testing.assert_array_equal(
            mixed.transition(view, x, u, 0.01).values, predictor.transition(predictor.view(), x, u, 0.01).values
        )
        np.testing.assert_array_equal(mixed.observe(view, x, u).values, corrector.observe(corrector.view(), x, u).values)

    def test_mixed_bundle_requires_same_state(self):
        with self.assertRaises(ParameterError):
            MixedBundle(build_bundle("pc", augmented=True), build_bundle("nn", hidden=(4,)))
