"""Process (R) and measurement (Q) covariance models built as ``L L^T + eps I``.

``L`` is stored as its lower-triangular entries in row-major order. The
homoscedastic model learns the entries directly; the heteroscedastic one
predicts them from the normalized state estimate with a linear map.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from estimator.conf import velest_setting
from estimator.core import autodiff as ad
from estimator.core.autodiff import as_tensor
from estimator.exceptions import ParameterError, ShapeError

logger = logging.getLogger(__name__)

HOMOSCEDASTIC = "homoscedastic"
HETEROSCEDASTIC = "heteroscedastic"
NOISE_MODES = (HOMOSCEDASTIC, HETEROSCEDASTIC)

# per-step std of the model error of each state; friction drifts slowly
DEFAULT_PROCESS_DIAG = 0.02
DEFAULT_FRICTION_DIAG = 0.003
# accel m/s^2, gyro rad/s, wheel speed m/s
DEFAULT_MEASUREMENT_DIAG = (0.5, 0.5, 0.05, 0.1)


def tril_count(n):
    return n * (n + 1) // 2


def _selection_matrix(n):
    """Constant ``(n*n, tril_count(n))`` matrix scattering entries into ``vec(L)``."""
    rows, cols = np.tril_indices(n)
    selection = np.zeros((n * n, len(rows)))
    selection[rows * n + cols, np.arange(len(rows))] = 1.0
    return selection


def _diagonal_entries(diag):
    diag = np.asarray(diag, dtype=np.float64)
    n = diag.shape[0]
    rows, cols = np.tril_indices(n)
    entries = np.zeros(len(rows))
    entries[rows == cols] = diag
    return entries


def lower_from_entries(entries, n):
    entries = as_tensor(entries)
    if entries.shape != (tril_count(n),):
        raise ShapeError(f"expected {tril_count(n)} lower-triangular entries, got {entries.shape}")
    return ad.reshape(ad.matmul(_selection_matrix(n), entries), (n, n))


def covariance_from_entries(entries, n, epsilon):
    lower = lower_from_entries(entries, n)
    return ad.matmul(lower, lower.T) + np.eye(n) * epsilon


@dataclass(frozen=True)
class HomoscedasticNoise:
    n_x: int
    n_y: int = 4
    epsilon: float = 1e-7
    prefix: str = "noise"

    mode = HOMOSCEDASTIC

    @property
    def parameter_names(self):
        return [f"{self.prefix}.l_r", f"{self.prefix}.l_q"]

    def initial_parameters(self, process_diag, measurement_diag):
        return ad.ParameterSet(
            {
                f"{self.prefix}.l_r": _diagonal_entries(process_diag),
                f"{self.prefix}.l_q": _diagonal_entries(measurement_diag),
            }
        )

    def process_covariance(self, view, x_hat=None):
        return covariance_from_entries(view[f"{self.prefix}.l_r"], self.n_x, self.epsilon)

    def measurement_covariance(self, view, x_hat=None):
        return covariance_from_entries(view[f"{self.prefix}.l_q"], self.n_y, self.epsilon)


@dataclass(frozen=True)
class HeteroscedasticNoise:
    """Linear regression from the state estimate to the entries of ``L``.

    With zero weights it reproduces the homoscedastic model whose entries are
    the biases.
    """

    n_x: int
    n_y: int = 4
    epsilon: float = 1e-7
    prefix: str = "noise"

    mode = HETEROSCEDASTIC

    @property
    def parameter_names(self):
        return [f"{self.prefix}.{name}" for name in ("w_r", "b_r", "w_q", "b_q")]

    @cached_property
    def state_scales(self):
        scales = list(velest_setting("FEATURE_SCALES")[:4]) + [1.0]
        return np.asarray(scales[: self.n_x], dtype=np.float64)

    def initial_parameters(self, process_diag, measurement_diag):
        return ad.ParameterSet(
            {
                f"{self.prefix}.w_r": np.zeros((tril_count(self.n_x), self.n_x)),
                f"{self.prefix}.b_r": _diagonal_entries(process_diag),
                f"{self.prefix}.w_q": np.zeros((tril_count(self.n_y), self.n_x)),
                f"{self.prefix}.b_q": _diagonal_entries(measurement_diag),
            }
        )

    def _entries(self, view, x_hat, which):
        if x_hat is None:
            raise ShapeError("heteroscedastic noise needs a state estimate")
        x_hat = as_tensor(x_hat)
        if x_hat.shape != (self.n_x,):
            raise ShapeError(f"state estimate shape {x_hat.shape} != ({self.n_x},)")
        features = x_hat / self.state_scales
        return ad.matmul(view[f"{self.prefix}.w_{which}"], features) + view[f"{self.prefix}.b_{which}"]

    def process_covariance(self, view, x_hat=None):
        return covariance_from_entries(self._entries(view, x_hat, "r"), self.n_x, self.epsilon)

    def measurement_covariance(self, view, x_hat=None):
        return covariance_from_entries(self._entries(view, x_hat, "q"), self.n_y, self.epsilon)


def make_noise_model(mode, n_x, n_y=4, epsilon=1e-7):
    if mode not in NOISE_MODES:
        raise ParameterError(f"unknown noise mode {mode!r}, expected one of {NOISE_MODES}")
    model_cls = HomoscedasticNoise if mode == HOMOSCEDASTIC else HeteroscedasticNoise
    return model_cls(n_x=n_x, n_y=n_y, epsilon=epsilon)


def default_process_diag(n_x):
    diag = [DEFAULT_PROCESS_DIAG] * 4
    if n_x == 5:
        diag.append(DEFAULT_FRICTION_DIAG)
    return diag[:n_x]


def init_noise(mode, n_x, n_y=4, process_diag=None, measurement_diag=None, epsilon=1e-7):
    """Build a noise model and its initial parameters with diagonal ``L``."""
    if mode not in NOISE_MODES:
        raise ParameterError(f"unknown noise mode {mode!r}, expected one of {NOISE_MODES}")
    process_diag = np.asarray(default_process_diag(n_x) if process_diag is None else process_diag, dtype=np.float64)
    measurement_diag = np.asarray(
        DEFAULT_MEASUREMENT_DIAG if measurement_diag is None else measurement_diag, dtype=np.float64
    )
    if process_diag.shape != (n_x,) or measurement_diag.shape != (n_y,):
        raise ShapeError(
            f"diagonal scales of length {process_diag.shape} / {measurement_diag.shape} "
            f"do not match n_x={n_x}, n_y={n_y}"
        )
    if not (process_diag > 0).all() or not (measurement_diag > 0).all():
        raise ParameterError("noise diagonal scales must be positive")
    if not epsilon > 0:
        raise ParameterError("noise epsilon must be positive")

    model = make_noise_model(mode, n_x, n_y, epsilon)
    logger.debug("initialized %s noise model for n_x=%d, n_y=%d", mode, n_x, n_y)
    return model, model.initial_parameters(process_diag, measurement_diag)


def process_covariance(model, view, x_hat=None):
    return model.process_covariance(view, x_hat)


def measurement_covariance(model, view, x_hat=None):
    return model.measurement_covariance(view, x_hat)
