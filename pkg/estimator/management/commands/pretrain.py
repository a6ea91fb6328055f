from estimator.checkpoints import save_checkpoint
from estimator.core.training import one_step_pretrain
from estimator.management.base import EstimatorCommand


class Command(EstimatorCommand):
    help = "Fit a fresh model to one-step ground-truth transitions."

    config_flags = {
        **EstimatorCommand.config_flags,
        "model": "model.kind",
        "epochs": "train.pretrain_epochs",
        "lr": "train.lr",
    }

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--dataset", help="training dataset CSV (default: paths.dataset)")
        parser.add_argument("--out", help="checkpoint to write (default: <paths.out_dir>/<model>-pretrained.json)")
        parser.add_argument("--model", help="override model.kind")
        parser.add_argument("--epochs", type=int, help="override train.pretrain_epochs")
        parser.add_argument("--lr", type=float, help="override train.lr")
        parser.add_argument("--log", help="per-epoch loss CSV (default: paths.log)")

    def run(self, config, options):
        blocks = self.load_blocks(config, options)
        train, val = blocks["train"], blocks["val"]
        bundle = config.new_bundle()
        out = self.output_path(config, options, f"{bundle.label}-pretrained.json")

        result = one_step_pretrain(
            train,
            bundle,
            config.train_config(train),
            ts=config.ukf["ts"],
            val=val,
            checkpoint=self.checkpoint_hook(out),
        )
        save_checkpoint(result.bundle, out, extra={"stage": "pretrain"})
        losses = result.log.losses("pretrain")
        data = {
            "checkpoint": str(out),
            "model": result.bundle.label,
            "parameters": result.bundle.parameters.size,
            "epochs": len(losses),
            "train_loss": losses[-1] if losses else None,
            "log": self.write_training_log(config, options, result.log),
        }
        return data, f"Pretrained {result.bundle.label}."
