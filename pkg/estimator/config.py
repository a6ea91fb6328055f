"""Run configuration: YAML file, environment overrides and command-line flags.

Precedence is file < environment < flags. Environment overrides use
``VELEST_<SECTION>__<KEY>=<yaml scalar>``, e.g. ``VELEST_TRAIN__LR=0.001``.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .conf import velest_setting
from .core import vehicle
from .core.bundle import build_bundle
from .core.data import SimConfig, variability_weights
from .core.training import TrainConfig
from .core.ukf import UkfConfig
from .exceptions import ConfigError
from .serializers import RunConfigSerializer, flatten_errors

logger = logging.getLogger(__name__)

SECTIONS = tuple(RunConfigSerializer().fields)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration, one dict per section."""

    model: dict
    vehicle: dict
    pacejka: dict
    ukf: dict
    noise: dict
    train: dict
    sim: dict
    data: dict
    eval: dict
    paths: dict

    def as_dict(self):
        return {name: getattr(self, name) for name in SECTIONS}

    def vehicle_params(self):
        fields = {key: value for key, value in self.vehicle.items() if key != "delta_max"}
        return vehicle.VehicleParams(**fields)

    def pacejka_params(self):
        return vehicle.PacejkaParams(**self.pacejka)

    def ukf_config(self):
        return UkfConfig(**self.ukf)

    def train_config(self, dataset=None):
        """Training options; with ``train.variability_weights`` the state weights come from ``dataset``."""
        values = dict(self.train)
        derived = values.pop("variability_weights")
        values["state_weights"] = tuple(values["state_weights"])
        if derived and dataset is not None:
            values["state_weights"] = tuple(float(w) for w in variability_weights(dataset))
            logger.info("state weights from variability: %s", ", ".join(f"{w:.3f}" for w in values["state_weights"]))
        return TrainConfig(**values)

    def sim_config(self):
        values = dict(self.sim)
        for key in ("maneuvers", "tires", "noise_std"):
            values[key] = tuple(values[key])
        return SimConfig(**values, delta_max=self.vehicle["delta_max"])

    def eval_weights(self):
        weights = self.eval["state_weights"]
        if weights is None:
            return self.train_config().eval_weights
        return tuple(weights)

    def eval_length(self, rate_hz=None):
        rate = self.data["rate_hz"] if rate_hz is None else rate_hz
        return max(int(round(self.eval["sequence_seconds"] * rate)), 1)

    def new_bundle(self, seed=None):
        model, noise = self.model, self.noise
        return build_bundle(
            model["kind"],
            vehicle_params=self.vehicle_params(),
            pacejka=self.pacejka_params(),
            noise_mode=noise["mode"],
            augmented=model["augmented"],
            fixed_mu=model["fixed_mu"],
            hidden=model["hidden"],
            seed=self.train["seed"] if seed is None else seed,
            process_diag=noise["process_diag"],
            measurement_diag=noise["measurement_diag"],
            epsilon=noise["epsilon"],
            name=model["name"],
        )


def env_overrides(environ=None):
    """``{section: {key: value}}`` from ``VELEST_<SECTION>__<KEY>`` variables."""
    environ = os.environ if environ is None else environ
    prefix = velest_setting("ENV_PREFIX")
    overrides = {}
    for name, raw in environ.items():
        if not name.startswith(prefix) or "__" not in name:
            continue
        section, _, key = name[len(prefix) :].partition("__")
        section, key = section.lower(), key.lower()
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section in environment variable {name}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{section}.{key}", f"cannot parse {name}: {exc}") from exc
        overrides.setdefault(section, {})[key] = value
    return overrides


def _merge(base, overrides):
    merged = {key: dict(value) if isinstance(value, dict) else value for key, value in base.items()}
    for section, values in overrides.items():
        current = merged.get(section)
        if current is None:
            current = {}
        if not isinstance(current, dict):
            raise ConfigError(section, "section must be a mapping")
        merged[section] = {**current, **values}
    return merged


def validate_config(raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a mapping of sections")
    serializer = RunConfigSerializer(data=raw)
    if not serializer.is_valid():
        key_path, message = flatten_errors(serializer.errors)[0]
        raise ConfigError(key_path, message)
    # plain lists and dicts only
    data = json.loads(json.dumps(serializer.validated_data))
    return RunConfig(**data)


def load_config(path=None, flags=None, environ=None):
    """Read, merge and validate a run configuration.

    ``flags`` are dotted-path overrides from the command line; ``None``
    values are ignored.
    """
    raw = {}
    if path:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except FileNotFoundError:
            raise ConfigError("", f"config file {path} not found") from None
        except yaml.YAMLError as exc:
            raise ConfigError("", f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("", f"{path}: config must be a mapping of sections")
    raw = _merge(raw, env_overrides(environ))

    cli = {}
    for dotted, value in (flags or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        cli.setdefault(section, {})[key] = value
    raw = _merge(raw, cli)
    config = validate_config(raw)
    logger.debug("loaded config from %s", path or "defaults")
    return config


def dump_config(config):
    """Canonical YAML text: every section and key, sorted."""
    return yaml.safe_dump(config.as_dict(), sort_keys=True, default_flow_style=False)
