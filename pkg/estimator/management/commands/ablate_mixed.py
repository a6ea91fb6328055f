from dataclasses import replace
from pathlib import Path

from estimator.checkpoints import load_checkpoint
from estimator.core.bundle import MixedBundle
from estimator.core.evaluation import emit_report, estimate_windows, score_estimates
from estimator.exceptions import ConfigError
from estimator.management.base import EstimatorCommand, add_split_argument


class Command(EstimatorCommand):
    help = "Score every pairing of prediction and update models taken from several checkpoints."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("checkpoints", nargs="+", help="checkpoints to cross, e.g. pretrained and fine-tuned")
        parser.add_argument("--dataset", help="dataset CSV (default: paths.dataset)")
        parser.add_argument("--report", help="report CSV, one row per pairing (default: paths.report)")
        add_split_argument(parser)

    def run(self, config, options):
        if len(options["checkpoints"]) < 2:
            raise ConfigError("checkpoints", "at least two checkpoints are needed to cross")
        ds = self.load_split(config, options)
        # checkpoint file names tell apart bundles of the same kind
        bundles = []
        for path in options["checkpoints"]:
            bundle = load_checkpoint(path)
            bundles.append(replace(bundle, name=bundle.name or Path(path).stem))
        ukf_cfg = config.ukf_config()
        length = config.eval_length(ds.rate)
        weights = config.eval_weights()
        burn_in = config.eval["burn_in"]

        reports = []
        for predictor in bundles:
            for corrector in bundles:
                mixed = MixedBundle(predictor, corrector)
                estimates = estimate_windows(ds, mixed, ukf_cfg, length=length)
                reports.append(score_estimates(ds, estimates, weights, burn_in=burn_in, model=mixed.label))

        data = {"pairings": [{"model": r.model, "mse": r.mse, "mae": r.mae, "ae99": r.ae99} for r in reports]}
        path = options.get("report") or config.paths["report"]
        if path:
            data["path"] = str(emit_report(reports, path))
        best = min(reports, key=lambda report: report.mse)
        return data, f"Best pairing {best.model}: MSE {best.mse:.6g}"
