"""Model bundles: one dynamics variant plus its noise model and parameters.

A bundle is what the filter and the training loops see. Its methods take a
parameter *view* (``{name: Tensor}``), either leaves attached to a tape or
plain constants, so the same bundle serves training and inference.
"""

import enum
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from estimator.conf import velest_setting
from estimator.core import autodiff as ad
from estimator.core import nets, noise, vehicle
from estimator.exceptions import ParameterError, ShapeError


class ModelKind(str, enum.Enum):
    PC = "pc"
    PCR = "pcr"
    NN = "nn"
    NNT = "nnt"
    NNTF = "nntf"

    @classmethod
    def choices(cls):
        return [kind.value for kind in cls]


AUGMENTABLE = (ModelKind.PC, ModelKind.NNTF)


@dataclass(frozen=True)
class ModelBundle:
    kind: ModelKind
    vehicle: vehicle.VehicleParams
    noise: object
    parameters: ad.ParameterSet
    augmented: bool = False
    fixed_mu: float | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.augmented and kind not in AUGMENTABLE:
            raise ParameterError(f"model {kind.value} cannot carry friction in its state")
        if kind == ModelKind.NNTF and not self.augmented and self.fixed_mu is None:
            raise ParameterError("nntf needs either the augmented state or a fixed friction value")
        if self.noise.n_x != self.n_x:
            raise ParameterError(f"noise model is sized for n_x={self.noise.n_x}, bundle has {self.n_x}")

    @property
    def n_x(self):
        return 5 if self.augmented else 4

    @property
    def n_y(self):
        return 4

    @property
    def label(self):
        return self.name or self.kind.value

    @property
    def noise_parameter_names(self):
        return list(self.noise.parameter_names)

    @property
    def model_parameter_names(self):
        noise_names = set(self.noise_parameter_names)
        return [name for name in self.parameters if name not in noise_names]

    def with_parameters(self, parameters):
        return replace(self, parameters=parameters)

    def view(self, tape=None):
        """Parameters as tracked leaves on ``tape`` or as constants."""
        return self.parameters.attach(tape) if tape is not None else self.parameters.constants()

    def check_layout(self):
        """Raise if the parameters do not fit the dynamics kind and noise model."""
        template = self.noise.initial_parameters(np.ones(self.n_x), np.ones(self.n_y))
        for name, array in template.items():
            if name not in self.parameters:
                raise ParameterError(f"missing noise tensor {name}")
            if self.parameters[name].shape != array.shape:
                raise ShapeError(f"{name} has shape {self.parameters[name].shape}, expected {array.shape}")
        if self.kind in (ModelKind.PC, ModelKind.PCR):
            vehicle.PacejkaParams.from_view(self.view())
        for prefix, outputs in self.networks():
            nn = nets.MlpParams.from_view(self.parameters, prefix)
            if nn.input_dim != nets.FEATURE_DIM or nn.output_dim != outputs:
                raise ShapeError(
                    f"{prefix} maps {nn.input_dim} -> {nn.output_dim}, expected {nets.FEATURE_DIM} -> {outputs}"
                )
        return self

    def networks(self):
        """``(prefix, output size)`` of every network the dynamics variant uses."""
        if self.kind in (ModelKind.PCR, ModelKind.NN):
            return [(nets.DYNAMICS_NET, self.n_x)]
        if self.kind in (ModelKind.NNT, ModelKind.NNTF):
            return [(nets.TIRE_NET, 4)]
        return []

    def state_friction(self, x):
        """Friction column of an augmented state, floored at ``FRICTION_FLOOR``."""
        return ad.maximum(vehicle.friction_of(ad.as_tensor(x)), velest_setting("FRICTION_FLOOR"))

    def derivative(self, view, x, u):
        """Continuous-time state derivative of the bundle's dynamics variant."""
        p = self.vehicle
        if self.kind == ModelKind.PC:
            pp = vehicle.PacejkaParams.from_view(view)
            mu = self.state_friction(x) if self.augmented else None
            forces = vehicle.pacejka_forces(vehicle.compute_slip(x, u, p), pp, mu=mu)
            return vehicle.single_track_derivative(x, u, p, forces)
        if self.kind == ModelKind.PCR:
            pp = vehicle.PacejkaParams.from_view(view)
            nn = nets.MlpParams.from_view(view, nets.DYNAMICS_NET)
            return vehicle.residual_neural_derivative(x, u, p, pp, nn)
        if self.kind == ModelKind.NN:
            nn = nets.MlpParams.from_view(view, nets.DYNAMICS_NET)
            return vehicle.full_neural_derivative(x, u, nn, p)
        nn = nets.MlpParams.from_view(view, nets.TIRE_NET)
        if self.kind == ModelKind.NNT:
            forces = vehicle.neural_tire_forces(x, u, nn, p)
        else:
            mu = self.state_friction(x) if self.augmented else self.fixed_mu
            forces = vehicle.friction_scaled_tire_forces(x, u, nn, p, mu=mu)
        return vehicle.single_track_derivative(x, u, p, forces)

    def derivative_fn(self, view):
        return partial(self.derivative, view)

    def transition(self, view, x, u, ts):
        return vehicle.rk4_step(self.derivative_fn(view), x, u, ts)

    def observe(self, view, x, u):
        return vehicle.measurement_model(x, u, self.derivative_fn(view))

    def process_covariance(self, view, x_hat):
        return self.noise.process_covariance(view, x_hat)

    def measurement_covariance(self, view, x_hat):
        return self.noise.measurement_covariance(view, x_hat)


def default_hidden(kind):
    kind = ModelKind(kind)
    if kind in (ModelKind.PCR, ModelKind.NN):
        return nets.DYNAMICS_HIDDEN
    return nets.TIRE_HIDDEN


def build_bundle(
    kind,
    vehicle_params=None,
    pacejka=None,
    noise_mode=noise.HOMOSCEDASTIC,
    augmented=False,
    fixed_mu=None,
    hidden=None,
    seed=0,
    process_diag=None,
    measurement_diag=None,
    epsilon=1e-7,
    name="",
):
    """Fresh bundle with initialized network and noise parameters."""
    kind = ModelKind(kind)
    vehicle_params = vehicle_params or vehicle.VehicleParams()
    pacejka = pacejka or vehicle.PacejkaParams()
    hidden = tuple(default_hidden(kind) if hidden is None else hidden)
    n_x = 5 if augmented else 4

    parameters = ad.ParameterSet()
    if kind in (ModelKind.PC, ModelKind.PCR):
        parameters = parameters.merged(pacejka.to_parameters())
    if kind in (ModelKind.PCR, ModelKind.NN):
        dims = [nets.FEATURE_DIM, *hidden, n_x]
        parameters = parameters.merged(nets.network_parameters(nets.DYNAMICS_NET, dims, seed))
    if kind in (ModelKind.NNT, ModelKind.NNTF):
        dims = [nets.FEATURE_DIM, *hidden, 4]
        parameters = parameters.merged(nets.network_parameters(nets.TIRE_NET, dims, seed))

    noise_model, noise_params = noise.init_noise(noise_mode, n_x, 4, process_diag, measurement_diag, epsilon)
    meta = {"hidden": list(hidden), "seed": seed}
    return ModelBundle(
        kind=kind,
        vehicle=vehicle_params,
        noise=noise_model,
        parameters=parameters.merged(noise_params),
        augmented=augmented,
        fixed_mu=fixed_mu,
        name=name,
        meta=meta,
    )


def _prefixed_view(view, prefix):
    start = len(prefix) + 1
    return {name[start:]: value for name, value in view.items() if name.startswith(prefix + ".")}


@dataclass(frozen=True)
class MixedBundle:
    """Predict with one trained bundle and update with another.

    Parameters of the two bundles are namespaced ``predict.*`` and
    ``update.*`` so both stay trainable through one tape.
    """

    predictor: ModelBundle
    corrector: ModelBundle

    def __post_init__(self):
        if self.predictor.augmented != self.corrector.augmented:
            raise ParameterError("mixed bundles must agree on friction augmentation")

    @property
    def n_x(self):
        return self.predictor.n_x

    @property
    def n_y(self):
        return 4

    @property
    def augmented(self):
        return self.predictor.augmented

    @property
    def label(self):
        return f"{self.predictor.label}/{self.corrector.label}"

    @property
    def parameters(self):
        params = ad.ParameterSet()
        for prefix, bundle in (("predict", self.predictor), ("update", self.corrector)):
            for name, array in bundle.parameters.items():
                params.add(f"{prefix}.{name}", array)
        return params

    def view(self, tape=None):
        return self.parameters.attach(tape) if tape is not None else self.parameters.constants()

    def transition(self, view, x, u, ts):
        return self.predictor.transition(_prefixed_view(view, "predict"), x, u, ts)

    def process_covariance(self, view, x_hat):
        return self.predictor.process_covariance(_prefixed_view(view, "predict"), x_hat)

    def observe(self, view, x, u):
        return self.corrector.observe(_prefixed_view(view, "update"), x, u)

    def measurement_covariance(self, view, x_hat):
        return self.corrector.measurement_covariance(_prefixed_view(view, "update"), x_hat)


def friction_frozen(bundle, mu):
    """Copy of an augmented NNTF bundle that uses a constant friction instead."""
    if bundle.kind != ModelKind.NNTF:
        raise ParameterError("only nntf bundles can freeze friction")
    noise_model = type(bundle.noise)(n_x=4, n_y=bundle.noise.n_y, epsilon=bundle.noise.epsilon)
    parameters = ad.ParameterSet()
    for name, array in bundle.parameters.items():
        parameters.add(name, _drop_friction(name, array, noise_model, bundle.noise))
    return replace(bundle, noise=noise_model, parameters=parameters, augmented=False, fixed_mu=float(mu))


def _drop_friction(name, array, target, source):
    """Restrict a noise parameter from the 5-state layout to the 4-state one."""
    short = name.rsplit(".", 1)[-1]
    if short in ("l_r", "b_r"):
        return _tril_restrict(array, source.n_x, target.n_x)
    if short == "w_r":
        return _tril_restrict(array, source.n_x, target.n_x)[:, : target.n_x]
    if short == "w_q":
        return array[:, : target.n_x]
    return array


def _tril_restrict(entries, n_from, n_to):
    rows, cols = np.tril_indices(n_from)
    keep = (rows < n_to) & (cols < n_to)
    return np.asarray(entries)[keep]
