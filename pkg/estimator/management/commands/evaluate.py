import pandas as pd
from django.db import DatabaseError

from estimator.core.evaluation import (
    REPORT_FORMATS,
    emit_report,
    estimate_windows,
    estimates_from_frame,
    final_friction,
    score_estimates,
)
from estimator.exceptions import DataValidationError, ReportError
from estimator.management.base import EstimatorCommand, add_split_argument
from estimator.models import EvaluationRecord
from estimator.serializers import EvaluationRecordSerializer


class Command(EstimatorCommand):
    help = "Score state estimates against ground truth: weighted MSE, MAE and 99% absolute error."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--checkpoint", required=True, help="checkpoint the estimates belong to")
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--estimates", help="estimates CSV written by the estimate command")
        source.add_argument("--run-filter", action="store_true", help="filter the dataset with the checkpoint first")
        parser.add_argument("--dataset", help="dataset CSV (default: paths.dataset)")
        parser.add_argument("--fixed-mu", type=float, help="replace the friction state of an nntf model by this value")
        parser.add_argument("--mu-prior", type=float, help="override ukf.mu_prior, the initial friction estimate")
        parser.add_argument("--burn-in", type=int, help="override eval.burn_in (samples dropped per window)")
        parser.add_argument("--report", help="report file (default: paths.report)")
        parser.add_argument("--format", choices=REPORT_FORMATS, default="csv", help="report format")
        parser.add_argument("--record", action="store_true", help="store the result in the evaluation database")
        add_split_argument(parser)

    def run(self, config, options):
        ds = self.load_split(config, options)
        bundle = self.load_bundle(config, options)
        if options["run_filter"]:
            estimates = estimate_windows(
                ds, bundle, config.ukf_config(), length=config.eval_length(ds.rate), mu_prior=options.get("mu_prior")
            )
        else:
            estimates = estimates_from_frame(read_estimates(options["estimates"]))

        burn_in = config.eval["burn_in"] if options.get("burn_in") is None else options["burn_in"]
        report = score_estimates(ds, estimates, config.eval_weights(), burn_in=burn_in, model=bundle.label)
        data = {"report": report.as_row()}
        mu = final_friction(estimates)
        if mu.size:
            data["final_mu_mean"] = float(mu.mean())

        path = options.get("report") or config.paths["report"]
        if path:
            data["path"] = str(emit_report([report], path, options["format"]))
        if options["record"]:
            try:
                record = EvaluationRecord.from_report(report, burn_in=burn_in, checkpoint=options["checkpoint"])
            except DatabaseError as exc:
                raise ReportError(f"cannot record the evaluation (is the database migrated?): {exc}") from exc
            data["record"] = EvaluationRecordSerializer(record).data
        return data, f"{bundle.label}: MSE {report.mse:.6g}"


def read_estimates(path):
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise DataValidationError(f"{path}: file not found") from None
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: no data rows") from None
