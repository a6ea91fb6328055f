"""Single-track vehicle dynamics with interchangeable tire/dynamics models.

States and controls are tensors whose last axis holds the components, so
every function accepts one state ``(n,)`` or a batch ``(N, n)`` (sigma
points, minibatches, simulated segments). The state layout is
``[vx, vy, r, omega_s]`` with ``mu`` appended in friction-augmented mode;
controls are ``[delta, iq]``.
"""

from collections.abc import Callable
from dataclasses import asdict, dataclass, fields

import numpy as np

from estimator.conf import velest_setting
from estimator.core import autodiff as ad
from estimator.core.autodiff import Tensor, as_tensor
from estimator.core.nets import mlp_forward
from estimator.exceptions import IntegrationError, NonFiniteError, ParameterError, ShapeError

STATE_NAMES = ("vx", "vy", "r", "omega_s")
AUGMENTED_STATE_NAMES = STATE_NAMES + ("mu",)
MEASUREMENT_NAMES = ("ax", "ay", "gyro_z", "omega_s")
CONTROL_NAMES = ("delta", "iq")

DerivativeFn = Callable[[Tensor, Tensor], Tensor]


def check_controls(controls, delta_max=0.45):
    """Row index of the first ``[delta, iq]`` row that is non-finite or steers past ``delta_max``, else None."""
    controls = np.asarray(controls, dtype=np.float64).reshape(-1, 2)
    bad = ~np.isfinite(controls).all(axis=1)
    with np.errstate(invalid="ignore"):
        bad |= np.abs(controls[:, 0]) > delta_max
    rows = np.flatnonzero(bad)
    return int(rows[0]) if rows.size else None


@dataclass(frozen=True)
class VehicleParams:
    m: float = 4.5
    iz: float = 0.1
    lf: float = 0.17
    lr: float = 0.16
    wheel_radius: float = 0.05
    ie: float = 0.25
    k_phi: float = 0.04
    k_tc: float = 0.02
    k_tv: float = 0.04
    c_drag: float = 0.1

    def __post_init__(self):
        for name in ("m", "iz", "lf", "lr", "wheel_radius", "ie", "k_phi"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"vehicle.{name} must be positive")
        for name in ("k_tc", "k_tv", "c_drag"):
            if getattr(self, name) < 0:
                raise ParameterError(f"vehicle.{name} must be non-negative")


@dataclass(frozen=True)
class PacejkaParams:
    """Magic Formula coefficients.

    Longitudinal coefficients are shared by both axles; lateral ones are per
    axle. Fields are floats for a fixed tire or 0-d tensors when the tire
    model is trained.
    """

    bx: float = 4.0
    cx: float = 1.6
    dx: float = 22.0
    ex: float = 0.1
    by_f: float = 5.0
    cy_f: float = 1.4
    dy_f: float = 23.0
    ey_f: float = -0.2
    by_r: float = 6.0
    cy_r: float = 1.5
    dy_r: float = 21.0
    ey_r: float = -0.1
    mu: float = 0.65

    def __post_init__(self):
        for field_ in fields(self):
            value = getattr(self, field_.name)
            if isinstance(value, Tensor):
                continue
            if field_.name[0] in "bcd" and not value > 0:
                raise ParameterError(f"pacejka.{field_.name} must be positive")
            if field_.name[0] == "e" and not value < 1:
                raise ParameterError(f"pacejka.{field_.name} must be below 1")

    def to_parameters(self, prefix="pacejka"):
        return ad.ParameterSet({f"{prefix}.{name}": np.array(value) for name, value in asdict(self).items()})

    @classmethod
    def from_view(cls, view, prefix="pacejka"):
        missing = [f"{prefix}.{field_.name}" for field_ in fields(cls) if f"{prefix}.{field_.name}" not in view]
        if missing:
            raise ParameterError(f"missing tire coefficient(s) {', '.join(missing)}")
        return cls(**{field_.name: view[f"{prefix}.{field_.name}"] for field_ in fields(cls)})


@dataclass(frozen=True)
class TireForces:
    fx_r: Tensor
    fx_f: Tensor
    fy_r: Tensor
    fy_f: Tensor

    def scaled(self, factor):
        return TireForces(*(force * factor for force in self.as_tuple()))

    def as_tuple(self):
        return self.fx_r, self.fx_f, self.fy_r, self.fy_f

    def stacked(self):
        return ad.stack(self.as_tuple(), axis=-1)


@dataclass(frozen=True)
class SlipQuantities:
    kappa: Tensor
    alpha_f: Tensor
    alpha_r: Tensor

    def negated(self):
        return SlipQuantities(-self.kappa, -self.alpha_f, -self.alpha_r)


def _component(x, i):
    return x[..., i]


def _like(value, reference):
    value = as_tensor(value)
    if value.shape == reference.shape:
        return value
    return reference * 0.0 + value


def friction_of(x):
    if x.shape[-1] < 5:
        raise ShapeError("state has no friction component")
    return _component(x, 4)


def compute_slip(x, u, p, v_eps=None):
    x, u = as_tensor(x), as_tensor(u)
    v_eps = velest_setting("SLIP_V_EPS") if v_eps is None else v_eps
    vx, vy, r, omega_s = (_component(x, i) for i in range(4))
    delta = _component(u, 0)
    vx_guarded = ad.maximum(vx, v_eps)
    alpha_f = delta - ad.atan2(vy + r * p.lf, vx_guarded)
    alpha_r = -ad.atan2(vy - r * p.lr, vx_guarded)
    kappa = (omega_s - vx) / ad.maximum(ad.absolute(vx), v_eps)
    return SlipQuantities(kappa, alpha_f, alpha_r)


def magic_formula(slip, b, c, d, e, mu):
    bs = slip * b
    return mu * d * ad.sin(c * ad.arctan(bs - e * (bs - ad.arctan(bs))))


def pacejka_forces(s, pp, mu=None):
    """Magic Formula forces; ``mu`` overrides ``pp.mu`` (state or per-row friction)."""
    mu = pp.mu if mu is None else mu
    fx = magic_formula(s.kappa, pp.bx, pp.cx, pp.dx, pp.ex, mu)
    return TireForces(
        fx_r=fx,
        fx_f=fx,
        fy_r=magic_formula(s.alpha_r, pp.by_r, pp.cy_r, pp.dy_r, pp.ey_r, mu),
        fy_f=magic_formula(s.alpha_f, pp.by_f, pp.cy_f, pp.dy_f, pp.ey_f, mu),
    )


def single_track_derivative(x, u, p, f, smooth_sign=True):
    x, u = as_tensor(x), as_tensor(u)
    vx, vy, r, omega_s = (_component(x, i) for i in range(4))
    delta, iq = _component(u, 0), _component(u, 1)
    cos_d, sin_d = ad.cos(delta), ad.sin(delta)

    drag = vx * ad.absolute(vx) * p.c_drag
    if smooth_sign:
        sign = ad.tanh(omega_s / velest_setting("SMOOTH_SIGN_WIDTH"))
    else:
        sign = Tensor(np.sign(omega_s.values))
    tau_t = sign * p.k_tc + omega_s * p.k_tv

    front_lateral = f.fx_f * sin_d + f.fy_f * cos_d
    vx_dot = (f.fx_r + f.fx_f * cos_d - f.fy_f * sin_d - drag + vy * r * p.m) / p.m
    vy_dot = (front_lateral + f.fy_r - vx * r * p.m) / p.m
    r_dot = (front_lateral * p.lf - f.fy_r * p.lr) / p.iz
    omega_dot = (iq * p.k_phi - f.fx_f * p.wheel_radius - f.fx_r * p.wheel_radius - tau_t) / p.ie

    columns = [_like(column, vx) for column in (vx_dot, vy_dot, r_dot, omega_dot)]
    if x.shape[-1] == 5:
        # friction is constant over a step
        columns.append(_component(x, 4) * 0.0)
    return ad.stack(columns, axis=-1)


def encode_features(x, u, p, scales=None):
    """Normalized network input ``[vx, vy, r, omega_s, delta, iq, kappa, alpha_f, alpha_r]``.

    Friction is not an input: it scales the network output instead.
    """
    x, u = as_tensor(x), as_tensor(u)
    scales = np.asarray(velest_setting("FEATURE_SCALES") if scales is None else scales, dtype=np.float64)
    slip = compute_slip(x, u, p)
    vx = _component(x, 0)
    raw = [
        vx,
        _component(x, 1),
        _component(x, 2),
        _component(x, 3),
        _component(u, 0),
        _component(u, 1),
        slip.kappa,
        slip.alpha_f,
        slip.alpha_r,
    ]
    features = ad.stack([_like(column, vx) for column in raw], axis=-1)
    return features / scales


def neural_tire_forces(x, u, nn, p, force_scale=None):
    if nn.output_dim != 4:
        raise ShapeError(f"tire network must output 4 forces, got {nn.output_dim}")
    force_scale = velest_setting("FORCE_SCALE") if force_scale is None else force_scale
    out = mlp_forward(nn, encode_features(x, u, p)) * force_scale
    return TireForces(*(out[..., i] for i in range(4)))


def friction_scaled_tire_forces(x, u, nn, p, mu=None):
    """Network forces scaled by friction, taken from the state unless ``mu`` is given."""
    x = as_tensor(x)
    mu = friction_of(x) if mu is None else mu
    return neural_tire_forces(x, u, nn, p).scaled(mu)


def derivative_scales(n):
    scales = list(velest_setting("DERIVATIVE_SCALES"))
    return np.asarray(scales + [1.0] * (n - len(scales)), dtype=np.float64)[:n]


def full_neural_derivative(x, u, nn, p, scales=None):
    x = as_tensor(x)
    if nn.output_dim != x.shape[-1]:
        raise ShapeError(f"dynamics network outputs {nn.output_dim} values for a {x.shape[-1]}-state")
    scales = derivative_scales(nn.output_dim) if scales is None else np.asarray(scales, dtype=np.float64)
    return mlp_forward(nn, encode_features(x, u, p)) * scales


def residual_neural_derivative(x, u, p, pp, nn):
    forces = pacejka_forces(compute_slip(x, u, p), pp)
    return single_track_derivative(x, u, p, forces) + full_neural_derivative(x, u, nn, p)


def rk4_step(derivative_fn: DerivativeFn, x, u, ts=0.01):
    """Classical RK4 step with ``u`` held over the step."""
    if not ts > 0:
        raise ParameterError(f"step duration must be positive, got {ts}")
    x = as_tensor(x)
    stages = []
    points = (0.0, 0.5 * ts, 0.5 * ts, ts)
    for stage, offset in enumerate(points, start=1):
        try:
            point = x if not stages else x + stages[-1] * offset
            stages.append(as_tensor(derivative_fn(point, u)))
        except NonFiniteError as exc:
            raise IntegrationError(f"k{stage}", str(exc)) from exc
    k1, k2, k3, k4 = stages
    try:
        return x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ts / 6.0)
    except NonFiniteError as exc:
        raise IntegrationError("combine", str(exc)) from exc


def measurement_model(x, u, derivative_fn: DerivativeFn):
    """Predicted ``[ax, ay, r, omega_s]``: body accelerations plus measured rates."""
    x = as_tensor(x)
    derivative = derivative_fn(x, u)
    vx, vy, r, omega_s = (_component(x, i) for i in range(4))
    ax = _component(derivative, 0) - r * vy
    ay = _component(derivative, 1) + r * vx
    return ad.stack([ax, ay, r, omega_s], axis=-1)
