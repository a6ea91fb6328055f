from estimator.checkpoints import save_checkpoint
from estimator.core.training import ukf_finetune
from estimator.management.base import EstimatorCommand


class Command(EstimatorCommand):
    help = "Train a model end to end on the filter's state-estimation error."

    config_flags = {
        **EstimatorCommand.config_flags,
        "epochs": "train.finetune_epochs",
        "seq_len": "train.seq_len",
        "batch_size": "train.batch_size",
        "lr": "train.lr",
        "learn_noise": "train.learn_noise",
    }

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--dataset", help="training dataset CSV (default: paths.dataset)")
        parser.add_argument("--checkpoint", help="starting checkpoint, usually pretrained (default: paths.checkpoint)")
        parser.add_argument("--out", help="checkpoint to write (default: <paths.out_dir>/<model>-finetuned.json)")
        parser.add_argument("--epochs", type=int, help="override train.finetune_epochs")
        parser.add_argument("--seq-len", type=int, help="override train.seq_len")
        parser.add_argument("--batch-size", type=int, help="override train.batch_size")
        parser.add_argument("--lr", type=float, help="override train.lr")
        parser.add_argument(
            "--no-learn-noise",
            dest="learn_noise",
            action="store_const",
            const=False,
            help="keep the noise parameters fixed",
        )
        parser.add_argument("--log", help="per-epoch loss CSV (default: paths.log)")

    def run(self, config, options):
        blocks = self.load_blocks(config, options)
        bundle = self.load_bundle(config, options)
        out = self.output_path(config, options, f"{bundle.label}-finetuned.json")
        val = blocks["val"]

        result = ukf_finetune(
            blocks["train"],
            bundle,
            config.train_config(blocks["train"]),
            config.ukf_config(),
            val=val,
            val_length=min(config.eval_length(val.rate), len(val)),
            checkpoint=self.checkpoint_hook(out),
        )
        save_checkpoint(result.bundle, out, extra={"stage": "finetune"})
        losses = result.log.losses("finetune")
        data = {
            "checkpoint": str(out),
            "model": result.bundle.label,
            "epochs": len(losses),
            "train_loss": losses[-1] if losses else None,
            "best_val_loss": result.best_val,
            "log": self.write_training_log(config, options, result.log),
        }
        return data, f"Fine-tuned {result.bundle.label}."
