"""Bundle checkpoints as a JSON manifest of named tensors."""

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .conf import velest_setting
from .core import autodiff as ad
from .core.bundle import ModelBundle
from .core.noise import make_noise_model
from .core.vehicle import VehicleParams
from .exceptions import CheckpointError, ShapeError
from .serializers import CheckpointSerializer, flatten_errors, render_json

logger = logging.getLogger(__name__)


def checkpoint_payload(bundle, extra=None):
    meta = {
        "kind": bundle.kind.value,
        "augmented": bundle.augmented,
        "fixed_mu": bundle.fixed_mu,
        "noise_mode": bundle.noise.mode,
        "epsilon": bundle.noise.epsilon,
        "name": bundle.name,
        "vehicle": asdict(bundle.vehicle),
        "extra": {**bundle.meta, **(extra or {})},
    }
    tensors = [
        {"name": name, "shape": list(array.shape), "values": array.ravel().tolist()}
        for name, array in bundle.parameters.items()
    ]
    return {"version": velest_setting("CHECKPOINT_VERSION"), "meta": meta, "tensors": tensors}


def save_checkpoint(bundle, path, extra=None):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(render_json(checkpoint_payload(bundle, extra)))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("saved %s checkpoint (%d parameters) to %s", bundle.label, bundle.parameters.size, path)
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} not found") from None
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    serializer = CheckpointSerializer(data=payload)
    if not serializer.is_valid():
        key_path, message = flatten_errors(serializer.errors)[0]
        raise CheckpointError(f"{path}: {key_path}: {message}")
    data = serializer.validated_data
    meta = data["meta"]

    parameters = ad.ParameterSet()
    for entry in data["tensors"]:
        parameters.add(entry["name"], np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"]))
    vehicle = {key: value for key, value in meta["vehicle"].items() if key != "delta_max"}
    n_x = 5 if meta["augmented"] else 4
    noise = make_noise_model(meta["noise_mode"], n_x, 4, meta["epsilon"])
    missing = [name for name in noise.parameter_names if name not in parameters]
    if missing:
        raise CheckpointError(f"{path}: missing noise tensor(s) {', '.join(missing)}")
    try:
        return ModelBundle(
            kind=meta["kind"],
            vehicle=VehicleParams(**vehicle),
            noise=noise,
            parameters=parameters,
            augmented=meta["augmented"],
            fixed_mu=meta["fixed_mu"],
            name=meta["name"],
            meta=dict(meta.get("extra", {})),
        ).check_layout()
    except (ValueError, ShapeError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
