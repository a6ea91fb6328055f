from estimator.core.data import rear_slip_percentile, save_dataset, save_log, simulate_dataset, to_raw_log
from estimator.management.base import EstimatorCommand


class Command(EstimatorCommand):
    help = "Simulate a ground-truth dataset with the single-track/Pacejka model."

    config_flags = {"seed": "sim.seed", "duration": "sim.duration"}

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--out", help="dataset CSV to write (default: <paths.out_dir>/sim-<seed>.csv)")
        parser.add_argument("--duration", type=float, help="override sim.duration (seconds)")
        parser.add_argument("--raw-log", help="also write the multi-rate sensor log of the run")

    def run(self, config, options):
        sim = config.sim_config()
        ds = simulate_dataset(sim, config.vehicle_params(), config.pacejka_params())
        out = self.output_path(config, options, f"sim-{sim.seed}.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out)
        data = {
            "dataset": str(out),
            "rows": len(ds),
            "segments": len(ds.segment_bounds()),
            "rear_slip_p99_deg": rear_slip_percentile(ds, config.vehicle_params()),
        }
        if options.get("raw_log"):
            data["raw_log"] = str(save_log(to_raw_log(ds, config.data["imu_rate"]), options["raw_log"]))
        return data, f"Simulated {len(ds)} samples."
