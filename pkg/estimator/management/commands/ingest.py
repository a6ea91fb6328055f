from pathlib import Path

from estimator.core.data import build_dataset, concat_datasets, load_log, save_dataset
from estimator.management.base import EstimatorCommand


class Command(EstimatorCommand):
    help = (
        "Turn recorded multi-rate logs into one synchronized dataset with derived velocities. "
        "Each log becomes its own segment."
    )

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("logs", nargs="+", help="log CSVs with t, sensor, control and pose columns")
        parser.add_argument("--out", help="dataset CSV to write (default: <paths.out_dir>/<first log name>.csv)")
        parser.add_argument("--tire-label", help="override data.tire_label")

    def run(self, config, options):
        settings = config.data
        paths = [Path(log) for log in options["logs"]]
        datasets = [
            build_dataset(
                load_log(path),
                rate_hz=settings["rate_hz"],
                window_samples=settings["savgol_window"],
                poly_order=settings["savgol_order"],
                tire_label=options.get("tire_label") or settings["tire_label"],
                delta_max=config.vehicle["delta_max"],
            )
            for path in paths
        ]
        ds = concat_datasets(datasets, name=paths[0].stem)
        out = self.output_path(config, options, f"{paths[0].stem}.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out)
        data = {"dataset": str(out), "rows": len(ds), "segments": len(datasets)}
        return data, f"Ingested {len(ds)} samples from {len(datasets)} log(s)."
