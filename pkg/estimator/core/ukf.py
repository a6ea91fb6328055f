"""Scaled unscented Kalman filter, differentiable end to end.

Every step is built from tape ops, so a rollout started from a tracked
parameter view can be backpropagated through predictions, Kalman gains and
Cholesky factorizations alike.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from estimator.core import autodiff as ad
from estimator.core.autodiff import Tensor, as_tensor
from estimator.exceptions import (
    DataValidationError,
    FilterDivergenceError,
    IntegrationError,
    NonFiniteError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    ParameterError,
    ShapeError,
)

logger = logging.getLogger(__name__)

MU_INDEX = 4


@dataclass(frozen=True)
class UkfConfig:
    alpha: float = 1.0
    beta: float = 2.0
    kappa_ut: float = 0.0
    ts: float = 0.01
    mu_min: float = 0.05
    mu_max: float = 1.5
    mu_prior: float = 0.6
    mu_var: float = 0.04
    p0_diag: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ParameterError(f"beta must be non-negative, got {self.beta}")
        if not self.ts > 0:
            raise ParameterError(f"ts must be positive, got {self.ts}")
        if not 0 < self.mu_min < self.mu_max:
            raise ParameterError("friction bounds must satisfy 0 < mu_min < mu_max")
        if not (self.mu_var > 0 and self.p0_diag > 0):
            raise ParameterError("initial variances must be positive")

    def lam(self, n):
        lam = self.alpha**2 * (n + self.kappa_ut) - n
        if not lam > -n:
            raise ParameterError(f"lambda = {lam} must exceed -n = {-n}")
        return lam

    def weights(self, n):
        """Mean and covariance weights of the ``2n + 1`` sigma points."""
        lam = self.lam(n)
        wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + (1.0 - self.alpha**2 + self.beta)
        return wm, wc


@dataclass(frozen=True)
class GaussianBelief:
    mean: Tensor
    cov: Tensor

    def __post_init__(self):
        mean, cov = as_tensor(self.mean), as_tensor(self.cov)
        n = mean.shape[0] if mean.ndim == 1 else -1
        if mean.ndim != 1 or cov.shape != (n, n):
            raise ShapeError(f"belief mean {mean.shape} and covariance {cov.shape} do not conform")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self):
        return self.mean.shape[0]


@dataclass
class Trajectory:
    means: list = field(default_factory=list)
    covs: list = field(default_factory=list)

    def __len__(self):
        return len(self.means)

    def stacked_means(self):
        return ad.stack(self.means, axis=0)

    def mean_array(self):
        if not self.means:
            return np.zeros((0, 0))
        return np.stack([mean.values for mean in self.means])

    def cov_array(self):
        if not self.covs:
            return np.zeros((0, 0, 0))
        return np.stack([cov.values for cov in self.covs])


def sigma_points(belief, cfg):
    n = belief.n
    chol = ad.robust_cholesky(belief.cov)
    offsets = chol.T * float(np.sqrt(n + cfg.lam(n)))
    mean = belief.mean
    return ad.concat([ad.reshape(mean, (1, n)), mean + offsets, mean - offsets], axis=0)


def _recombine(points, cfg, n):
    wm, wc = cfg.weights(n)
    mean = ad.matmul(wm, points)
    deviations = points - mean
    cov = ad.matmul(deviations.T, deviations * wc[:, None])
    return mean, deviations, cov


def predict(belief, u, bundle, cfg, view):
    n = belief.n
    points = bundle.transition(view, sigma_points(belief, cfg), u, cfg.ts)
    mean, _, cov = _recombine(points, cfg, n)
    if bundle.augmented:
        # friction is a constant of the process model
        mean = ad.concat([mean[:MU_INDEX], belief.mean[MU_INDEX:]])
    cov = ad.symmetrize(cov + bundle.process_covariance(view, belief.mean))
    return GaussianBelief(mean, cov)


def update(belief, y, u, bundle, cfg, view):
    n = belief.n
    y = as_tensor(y)
    if y.shape != (4,):
        raise ShapeError(f"measurement must have 4 entries, got {y.shape}")
    if not np.isfinite(y.values).all():
        raise DataValidationError(f"measurement {y.values.tolist()} is not finite")
    points = sigma_points(belief, cfg)
    observed = bundle.observe(view, points, u)
    y_hat, y_dev, p_yy = _recombine(observed, cfg, n)
    _, wc = cfg.weights(n)
    p_xy = ad.matmul((points - belief.mean).T, y_dev * wc[:, None])

    s = ad.symmetrize(p_yy + bundle.measurement_covariance(view, belief.mean))
    chol = ad.robust_cholesky(s)
    # K^T = S^-1 P_xy^T through two triangular solves
    gain = ad.solve_lower(chol, ad.solve_lower(chol, p_xy.T), transpose=True).T

    mean = belief.mean + ad.matmul(gain, y - y_hat)
    cov = ad.symmetrize(belief.cov - ad.matmul(ad.matmul(gain, s), gain.T))
    if bundle.augmented:
        mu = ad.clamp(mean[MU_INDEX:], cfg.mu_min, cfg.mu_max)
        mean = ad.concat([mean[:MU_INDEX], mu])
    return GaussianBelief(mean, cov)


def run_sequence(initial, controls, measurements, bundle, cfg, view=None):
    """Filter a whole sequence: update on every sample, predict between samples.

    Returns the posterior belief at every step. Numerical failures inside
    the filter surface as :class:`FilterDivergenceError` with the step index.
    """
    controls = np.asarray(controls, dtype=np.float64)
    measurements = np.asarray(measurements, dtype=np.float64)
    if len(controls) != len(measurements):
        raise ShapeError(f"{len(controls)} controls for {len(measurements)} measurements")
    bad = np.flatnonzero(~np.isfinite(measurements).all(axis=-1)) if len(measurements) else []
    if len(bad):
        raise DataValidationError(f"measurement at step {bad[0]} is not finite")
    view = bundle.view() if view is None else view

    trajectory = Trajectory()
    belief = initial
    for k in range(len(measurements)):
        try:
            if k > 0:
                belief = predict(belief, controls[k - 1], bundle, cfg, view)
            belief = update(belief, measurements[k], controls[k], bundle, cfg, view)
        except (NotPositiveDefiniteError, NotSymmetricError, NonFiniteError, IntegrationError) as exc:
            logger.error("filter diverged at step %d: %s", k, exc)
            raise FilterDivergenceError(k, str(exc)) from exc
        trajectory.means.append(belief.mean)
        trajectory.covs.append(belief.cov)
    return trajectory


def augment_with_friction(belief, mu_prior, mu_var, cfg=None):
    """Append friction to a 4-state belief, uncorrelated with the velocities."""
    cfg = cfg or UkfConfig()
    if not cfg.mu_min <= mu_prior <= cfg.mu_max:
        raise ParameterError(f"friction prior {mu_prior} outside [{cfg.mu_min}, {cfg.mu_max}]")
    if not mu_var > 0:
        raise ParameterError("friction prior variance must be positive")
    if belief.n != 4:
        raise ShapeError(f"expected a 4-state belief, got {belief.n}")
    mean = ad.concat([belief.mean, np.array([mu_prior])])
    top = ad.concat([belief.cov, np.zeros((4, 1))], axis=1)
    bottom = np.concatenate([np.zeros((1, 4)), [[mu_var]]], axis=1)
    return GaussianBelief(mean, ad.concat([top, bottom], axis=0))


def initial_belief(y0, cfg, augmented=False, mu_prior=None):
    """Belief built from the first measurement ``[ax, ay, gyro_z, omega_s]``."""
    y0 = np.asarray(y0, dtype=np.float64)
    mean = np.array([y0[3], 0.0, y0[2], y0[3]])
    belief = GaussianBelief(Tensor(mean), Tensor(np.eye(4) * cfg.p0_diag))
    if augmented:
        belief = augment_with_friction(belief, cfg.mu_prior if mu_prior is None else mu_prior, cfg.mu_var, cfg)
    return belief


def filter_sequence(bundle, controls, measurements, cfg, view=None, mu_prior=None):
    """Run the filter from the standard initial belief of ``measurements[0]``."""
    if len(measurements) == 0:
        return Trajectory()
    initial = initial_belief(measurements[0], cfg, bundle.augmented, mu_prior)
    return run_sequence(initial, controls, measurements, bundle, cfg, view)
