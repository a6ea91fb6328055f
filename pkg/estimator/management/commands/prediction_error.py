import pandas as pd

from estimator.checkpoints import load_checkpoint
from estimator.core.evaluation import prediction_metrics
from estimator.core.vehicle import STATE_NAMES
from estimator.exceptions import ReportError
from estimator.management.base import EstimatorCommand, add_split_argument


class Command(EstimatorCommand):
    help = "One-step prediction error per state, from ground-truth states and inputs."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("checkpoints", nargs="+", help="checkpoints to compare")
        parser.add_argument("--dataset", help="dataset CSV (default: paths.dataset)")
        parser.add_argument("--out", help="also write the table as CSV")
        add_split_argument(parser)

    def run(self, config, options):
        ds = self.load_split(config, options)
        ts = config.ukf["ts"]
        rows = []
        for path in options["checkpoints"]:
            bundle = load_checkpoint(path)
            rows.append({"model": bundle.label, "checkpoint": str(path), **prediction_metrics(ds, bundle, ts)})

        data = {"rows": rows}
        if options.get("out"):
            try:
                pd.DataFrame(rows, columns=["model", "checkpoint", *STATE_NAMES]).to_csv(options["out"], index=False)
            except OSError as exc:
                raise ReportError(f"cannot write {options['out']}: {exc}") from exc
            data["path"] = options["out"]
        return data, f"Prediction errors of {len(rows)} model(s)."
