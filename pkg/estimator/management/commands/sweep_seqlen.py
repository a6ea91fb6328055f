import logging
from dataclasses import replace

import pandas as pd

from estimator.core.evaluation import estimate_windows, score_estimates
from estimator.core.training import FINETUNE, ukf_finetune
from estimator.exceptions import ParameterError, ReportError
from estimator.management.base import EstimatorCommand

logger = logging.getLogger(__name__)

SEQUENCE_LENGTHS = (8, 32, 128, 500, 1000)
COLUMNS = ["seq_len", "test_mse", "train_loss", "epoch_seconds", "epochs"]


class Command(EstimatorCommand):
    help = "Fine-tune one starting model at several training sequence lengths and compare held-out error."

    config_flags = {**EstimatorCommand.config_flags, "epochs": "train.finetune_epochs"}

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--dataset", help="dataset CSV (default: paths.dataset)")
        parser.add_argument("--checkpoint", help="starting checkpoint (default: paths.checkpoint)")
        parser.add_argument(
            "--lengths",
            type=int,
            nargs="+",
            default=list(SEQUENCE_LENGTHS),
            help="training sequence lengths in samples",
        )
        parser.add_argument("--epochs", type=int, help="override train.finetune_epochs")
        parser.add_argument("--out", help="result CSV (default: <paths.out_dir>/seqlen-sweep.csv)")

    def run(self, config, options):
        blocks = self.load_blocks(config, options)
        train, test = blocks["train"], blocks["test"]
        start = self.load_bundle(config, options)
        ukf_cfg = config.ukf_config()
        length = config.eval_length(test.rate)
        weights = config.eval_weights()

        rows = []
        for seq_len in options["lengths"]:
            cfg = replace(config.train_config(train), seq_len=seq_len)
            try:
                result = ukf_finetune(train, start, cfg, ukf_cfg)
            except ParameterError as exc:
                logger.warning("skipping sequence length %d: %s", seq_len, exc)
                continue
            report = score_estimates(
                test, estimate_windows(test, result.bundle, ukf_cfg, length), weights, model=f"{start.label}@{seq_len}"
            )
            frame = result.log.to_frame()
            epochs = frame[frame["phase"] == FINETUNE]
            rows.append(
                {
                    "seq_len": seq_len,
                    "test_mse": report.mse,
                    "train_loss": float(epochs["train_loss"].iloc[-1]) if len(epochs) else None,
                    "epoch_seconds": float(epochs["wall_time"].mean()) if len(epochs) else None,
                    "epochs": len(epochs),
                }
            )

        out = self.output_path(config, options, "seqlen-sweep.csv")
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            pd.DataFrame(rows, columns=COLUMNS).to_csv(out, index=False)
        except OSError as exc:
            raise ReportError(f"cannot write {out}: {exc}") from exc
        return {"path": str(out), "rows": rows}, f"Swept {len(rows)} sequence length(s)."
