import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from estimator.checkpoints import load_checkpoint, save_checkpoint
from estimator.config import load_config
from estimator.core.bundle import friction_frozen
from estimator.core.data import load_dataset, split_dataset
from estimator.exceptions import ConfigError, EstimationError
from shared.responses import handle_error, handle_success, handle_validation_error, render_outcome

logger = logging.getLogger("estimator")

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO}


class EstimatorCommand(BaseCommand):
    """Shared plumbing of the estimator subcommands.

    Subclasses implement :meth:`run` and return ``(data, message)``. The
    outcome is printed as one JSON line; estimator failures become
    :class:`CommandError` with exit status 1.
    """

    # flags that override a config key, as {dest: "section.key"}
    config_flags = {"seed": "train.seed", "workers": "train.workers"}

    def add_arguments(self, parser):
        parser.add_argument("--config", help="YAML run configuration")
        parser.add_argument("--seed", type=int, help="override train.seed")
        parser.add_argument("--workers", type=int, help="override train.workers")

    def load_run_config(self, options):
        flags = {key: options.get(dest) for dest, key in self.config_flags.items()}
        return load_config(options.get("config"), flags=flags)

    def handle(self, *args, **options):
        logger.setLevel(VERBOSITY_LEVELS.get(options["verbosity"], logging.DEBUG))
        try:
            config = self.load_run_config(options)
            data, message = self.run(config, options)
        except ConfigError as exc:
            response, code = handle_validation_error(
                errors={exc.key_path or "config": str(exc)}, message="Invalid configuration."
            )
            self.stdout.write(render_outcome(response))
            raise CommandError(str(exc), returncode=code) from exc
        except EstimationError as exc:
            logger.error("%s failed: %s", self.command_name, exc)
            response, code = handle_error(errors={"type": type(exc).__name__}, message=str(exc))
            self.stdout.write(render_outcome(response))
            raise CommandError(str(exc), returncode=code) from exc
        response, _ = handle_success(data=data, message=message)
        self.stdout.write(render_outcome(response))

    @property
    def command_name(self):
        return self.__module__.rsplit(".", 1)[-1].replace("_", "-")

    def run(self, config, options):
        raise NotImplementedError

    # -- helpers shared by several subcommands

    def dataset_path(self, config, options):
        path = options.get("dataset") or config.paths["dataset"]
        if not path:
            raise ConfigError("paths.dataset", "a dataset is required (--dataset or paths.dataset)")
        return Path(path)

    def load_blocks(self, config, options):
        """The dataset under ``"all"`` plus its train/val/test blocks."""
        ds = load_dataset(self.dataset_path(config, options), config.vehicle["delta_max"])
        train, val, test = split_dataset(ds, config.data["split"], seed=config.train["seed"])
        return {"all": ds, "train": train, "val": val, "test": test}

    def load_split(self, config, options, split=None):
        split = split or options.get("split") or "all"
        if split == "all":
            return load_dataset(self.dataset_path(config, options), config.vehicle["delta_max"])
        return self.load_blocks(config, options)[split]

    def checkpoint_path(self, config, options, key="checkpoint"):
        path = options.get(key) or config.paths["checkpoint"]
        if not path:
            raise ConfigError("paths.checkpoint", "a checkpoint is required (--checkpoint or paths.checkpoint)")
        return Path(path)

    def load_bundle(self, config, options):
        bundle = load_checkpoint(self.checkpoint_path(config, options))
        if options.get("fixed_mu") is not None:
            bundle = friction_frozen(bundle, options["fixed_mu"])
        return bundle

    def output_path(self, config, options, default_name):
        if options.get("out"):
            return Path(options["out"])
        out_dir = config.paths["out_dir"]
        if not out_dir:
            raise ConfigError("paths.out_dir", "an output path is required (--out or paths.out_dir)")
        return Path(out_dir) / default_name

    def checkpoint_hook(self, out, keep=("best",)):
        """Training callback saving ``<out stem>-<tag>.json`` beside ``out``.

        The final bundle is written by the command itself; periodic tags
        (``pretrain-50``...) are always kept.
        """

        def hook(tag, bundle):
            if tag in keep or tag.rsplit("-", 1)[-1].isdigit():
                save_checkpoint(bundle, out.with_name(f"{out.stem}-{tag}{out.suffix}"), extra={"tag": tag})

        return hook

    def write_training_log(self, config, options, log):
        path = options.get("log") or config.paths["log"]
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            log.write(path)
        return path


def add_split_argument(parser, default="test"):
    parser.add_argument(
        "--split",
        choices=["all", "train", "val", "test"],
        default=default,
        help=f"block of the dataset split to use (default: {default})",
    )
