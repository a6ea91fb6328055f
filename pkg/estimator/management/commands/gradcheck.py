from dataclasses import replace

from estimator.core import autodiff as ad
from estimator.core.data import Window, simulate_dataset
from estimator.core.training import sequence_loss
from estimator.exceptions import GradientMismatchError
from estimator.management.base import EstimatorCommand

TOLERANCE = 1e-4


class Command(EstimatorCommand):
    help = "Compare tape gradients of a filter rollout loss with central finite differences."

    config_flags = {**EstimatorCommand.config_flags, "model": "model.kind"}

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--model", help="override model.kind")
        parser.add_argument("--steps", type=int, default=50, help="filter steps in the rollout (default: 50)")
        parser.add_argument("--samples", type=int, default=20, help="parameter coordinates to perturb")
        parser.add_argument("--eps", type=float, default=1e-6, help="finite-difference step")
        parser.add_argument("--floor", type=float, default=1e-6, help="gradients below this compare absolutely")

    def run(self, config, options):
        steps = options["steps"]
        ukf_cfg = config.ukf_config()
        rate = 1.0 / ukf_cfg.ts
        sim = replace(
            config.sim_config(),
            duration=steps / rate,
            segment_seconds=steps / rate,
            maneuvers=("sine_steer",),
            rate=rate,
        )
        ds = simulate_dataset(sim, config.vehicle_params(), config.pacejka_params())
        window = Window.of(ds, 0, len(ds))
        bundle = config.new_bundle()
        weights = config.train_config().state_weights

        error = ad.grad_check(
            lambda view: sequence_loss(bundle, window, ukf_cfg, weights, view),
            bundle.parameters,
            eps=options["eps"],
            samples=options["samples"],
            seed=config.train["seed"],
            floor=options["floor"],
        )
        self.stderr.write(f"max relative gradient error: {error:.3e}")
        if not error < TOLERANCE:
            raise GradientMismatchError(error, TOLERANCE)
        data = {"model": bundle.label, "steps": len(window.truth), "max_relative_error": error}
        return data, f"Gradients agree to {error:.3e}."
