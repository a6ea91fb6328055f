from estimator.core.evaluation import estimate_windows, estimates_frame, final_friction
from estimator.management.base import EstimatorCommand, add_split_argument


class Command(EstimatorCommand):
    help = "Run the filter over a dataset and write the per-step posterior means."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--dataset", help="dataset CSV (default: paths.dataset)")
        parser.add_argument("--checkpoint", help="trained checkpoint (default: paths.checkpoint)")
        parser.add_argument("--out", help="estimates CSV (default: <paths.out_dir>/<model>-estimates.csv)")
        parser.add_argument("--fixed-mu", type=float, help="replace the friction state of an nntf model by this value")
        parser.add_argument("--mu-prior", type=float, help="override ukf.mu_prior, the initial friction estimate")
        add_split_argument(parser)

    def run(self, config, options):
        ds = self.load_split(config, options)
        bundle = self.load_bundle(config, options)
        estimates = estimate_windows(
            ds, bundle, config.ukf_config(), length=config.eval_length(ds.rate), mu_prior=options.get("mu_prior")
        )
        out = self.output_path(config, options, f"{bundle.label}-estimates.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        estimates_frame(ds, estimates, bundle.augmented).to_csv(out, index=False)

        data = {"estimates": str(out), "model": bundle.label, "windows": len(estimates)}
        mu = final_friction(estimates)
        if mu.size:
            data["final_mu_mean"] = float(mu.mean())
        return data, f"Estimated {len(estimates)} window(s)."
