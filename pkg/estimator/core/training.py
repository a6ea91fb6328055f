"""Pretraining on one-step predictions and fine-tuning through the filter."""

import logging
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from estimator.core import autodiff as ad
from estimator.core import data as data_io
from estimator.core import ukf
from estimator.core.autodiff import as_tensor
from estimator.exceptions import (
    FilterDivergenceError,
    IntegrationError,
    NonFiniteError,
    ParameterError,
    ShapeError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)

STATE_WEIGHTS = (0.223, 0.506, 0.157, 0.114)
PRETRAIN = "pretrain"
FINETUNE = "finetune"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    pretrain_epochs: int = 1000
    finetune_epochs: int = 1000
    seq_len: int = 500
    batch_size: int = 256
    pretrain_batch_size: int = 1024
    state_weights: tuple = STATE_WEIGHTS
    eval_omega_weight: float = 0.0
    seed: int = 0
    learn_noise: bool = True
    clip_norm: float = 10.0
    checkpoint_every: int = 0
    workers: int = 1
    divergence_tolerance: float = 0.1

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError("lr must be positive")
        if self.seq_len < 2:
            raise ParameterError("seq_len must be at least 2")
        if len(self.state_weights) != 4 or min(self.state_weights) < 0:
            raise ParameterError("state_weights needs four non-negative entries")
        if self.batch_size < 1 or self.pretrain_batch_size < 1 or self.workers < 1:
            raise ParameterError("batch sizes and worker count must be positive")

    @property
    def eval_weights(self):
        return (*self.state_weights[:3], self.eval_omega_weight)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, names=None):
    """One bias-corrected Adam update of ``names`` (default: all of ``grads``)."""
    names = list(grads) if names is None else list(names)
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    updated = params.copy()
    for name in names:
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        updated.replace(name, params[name] - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
    return updated


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def clip_gradients(grads, max_norm):
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        return {name: g * factor for name, g in grads.items()}, norm
    return grads, norm


def weighted_state_loss(estimates, truths, weights=STATE_WEIGHTS):
    """Mean over time and states of ``w_i * (x_hat_i - x_i)^2``."""
    estimates = as_tensor(estimates)
    truths = np.asarray(truths, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if estimates.shape != truths.shape:
        raise ShapeError(f"estimates {estimates.shape} and truths {truths.shape} are not aligned")
    if estimates.shape[-1] != weights.shape[0]:
        raise ShapeError(f"{weights.shape[0]} weights for {estimates.shape[-1]} states")
    return ad.reduce_mean(ad.square(estimates - truths) * weights)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "phase", "train_loss", "val_loss", "wall_time")

    def record(self, epoch, phase, train_loss, val_loss, wall_time):
        self.rows.append(
            {"epoch": epoch, "phase": phase, "train_loss": train_loss, "val_loss": val_loss, "wall_time": wall_time}
        )
        logger.info(
            "%s epoch %d: train %.6g, val %s, %.2fs",
            phase,
            epoch,
            train_loss,
            "-" if val_loss is None else f"{val_loss:.6g}",
            wall_time,
        )

    def losses(self, phase):
        return [row["train_loss"] for row in self.rows if row["phase"] == phase]

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=list(self.COLUMNS))

    def write(self, path):
        self.to_frame().to_csv(path, index=False)


@dataclass
class TrainingResult:
    bundle: object
    log: TrainingLog
    best_bundle: object = None
    best_val: float | None = None


CheckpointHook = Callable[[str, object], None]


def _no_checkpoint(tag, bundle):
    pass


# -- pretraining --------------------------------------------------------------------


def one_step_loss(bundle, view, x, u, x_next, ts, weights):
    predicted = bundle.transition(view, x, u, ts)
    return weighted_state_loss(predicted[:, :4], x_next[:, :4], weights)


def _view(bundle, tape, trainable):
    """Tape leaves for ``trainable`` parameters, constants for the rest."""
    constants = bundle.parameters.constants()
    leaves = bundle.parameters.subset(trainable).attach(tape)
    return {**constants, **leaves}


def one_step_pretrain(dataset, bundle, cfg, ts=0.01, log=None, val=None, checkpoint=_no_checkpoint):
    """Minibatch Adam on the one-step prediction error of ground-truth states.

    Only model parameters move; the noise model is left to fine-tuning.
    """
    log = log or TrainingLog()
    x, u, x_next = dataset.state_pairs(bundle.augmented)
    if len(x) == 0:
        raise ParameterError("dataset has no consecutive ground-truth pairs")
    names = bundle.model_parameter_names
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    val_pairs = val.state_pairs(bundle.augmented) if val is not None else None

    for epoch in range(1, cfg.pretrain_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(x))
        losses = []
        for begin in range(0, len(order), cfg.pretrain_batch_size):
            batch = order[begin : begin + cfg.pretrain_batch_size]
            tape = ad.Tape()
            try:
                loss = one_step_loss(
                    bundle, _view(bundle, tape, names), x[batch], u[batch], x_next[batch], ts, cfg.state_weights
                )
            except (NonFiniteError, IntegrationError) as exc:
                raise TrainingDivergedError(epoch, str(exc)) from exc
            grads = tape.backward(loss)
            if not np.isfinite(global_norm({name: grads[name] for name in names})):
                raise TrainingDivergedError(epoch, "gradient is not finite")
            bundle = bundle.with_parameters(adam_step(bundle.parameters, grads, state, cfg.lr, names))
            losses.append(loss.item() * len(batch))
        train_loss = float(np.sum(losses) / len(x))
        if not np.isfinite(train_loss):
            raise TrainingDivergedError(epoch, "loss is NaN")
        val_loss = None
        if val_pairs is not None and len(val_pairs[0]):
            val_loss = one_step_loss(bundle, bundle.view(), *val_pairs, ts, cfg.state_weights).item()
        log.record(epoch, PRETRAIN, train_loss, val_loss, time.perf_counter() - started)
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            checkpoint(f"{PRETRAIN}-{epoch}", bundle)
    return TrainingResult(bundle=bundle, log=log)


# -- fine-tuning through the filter ------------------------------------------------


def sequence_loss(bundle, window, ukf_cfg, weights, view=None):
    trajectory = ukf.filter_sequence(bundle, window.controls, window.measurements, ukf_cfg, view)
    return weighted_state_loss(trajectory.stacked_means()[:, :4], window.truth, weights)


def sequence_gradient(bundle, window, ukf_cfg, weights, trainable):
    """Loss and gradients of one filtered window on its own tape."""
    tape = ad.Tape()
    try:
        loss = sequence_loss(bundle, window, ukf_cfg, weights, _view(bundle, tape, trainable))
    except FilterDivergenceError as exc:
        logger.warning("window [%d, %d) diverged: %s", window.start, window.stop, exc)
        return None, None
    grads = tape.backward(loss)
    return loss.item(), {name: grads[name] for name in trainable}


def evaluate_loss(bundle, dataset, ukf_cfg, weights, length):
    """Mean filter loss over the evaluation windows of ``dataset``."""
    losses = []
    for start, stop in data_io.evaluation_windows(dataset, length):
        window = data_io.Window.of(dataset, start, stop)
        try:
            losses.append(sequence_loss(bundle, window, ukf_cfg, weights).item())
        except FilterDivergenceError:
            losses.append(np.inf)
    return float(np.mean(losses)) if losses else None


def ukf_finetune(
    dataset,
    bundle,
    cfg,
    ukf_cfg=None,
    val=None,
    val_length=1000,
    log=None,
    checkpoint=_no_checkpoint,
):
    """Train dynamics and noise parameters on the filter's estimation error.

    Each epoch draws fresh windows, filters them in parallel, averages their
    gradients in window order and takes one clipped Adam step. With ``val``
    the best bundle by validation loss is kept, starting from ``bundle``.
    """
    ukf_cfg = ukf_cfg or ukf.UkfConfig()
    log = log or TrainingLog()
    dataset.require_truth()
    rng = np.random.default_rng(cfg.seed)
    trainable = list(bundle.model_parameter_names)
    if cfg.learn_noise:
        trainable += bundle.noise_parameter_names
    state = AdamState()
    best_bundle, best_val = bundle, None
    if val is not None:
        # the starting bundle is the baseline; "best" never scores worse than it
        best_val = evaluate_loss(bundle, val, ukf_cfg, cfg.state_weights, val_length)
        checkpoint("best", bundle)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for epoch in range(1, cfg.finetune_epochs + 1):
            started = time.perf_counter()
            windows = data_io.training_windows(dataset, cfg.seq_len, rng)
            if not windows:
                raise ParameterError(f"no segment holds a {cfg.seq_len}-sample window")
            if len(windows) > cfg.batch_size:
                picks = np.sort(rng.choice(len(windows), size=cfg.batch_size, replace=False))
                windows = [windows[i] for i in picks]
            batch = [data_io.Window.of(dataset, start, stop) for start, stop in windows]

            current = bundle
            results = list(
                pool.map(
                    lambda window: sequence_gradient(current, window, ukf_cfg, cfg.state_weights, trainable),
                    batch,
                )
            )
            finished = [(loss, grads) for loss, grads in results if loss is not None]
            diverged = len(results) - len(finished)
            if diverged > cfg.divergence_tolerance * len(results) or not finished:
                raise TrainingDivergedError(epoch, f"{diverged} of {len(results)} sequences diverged")

            accumulator = ad.GradientAccumulator(bundle.parameters.subset(trainable))
            for _, grads in finished:
                accumulator.add(grads)
            grads, norm = clip_gradients(accumulator.mean(), cfg.clip_norm)
            if not np.isfinite(norm):
                raise TrainingDivergedError(epoch, "gradient is not finite")
            bundle = bundle.with_parameters(adam_step(bundle.parameters, grads, state, cfg.lr, trainable))

            train_loss = float(np.mean([loss for loss, _ in finished]))
            val_loss = None
            if val is not None:
                val_loss = evaluate_loss(bundle, val, ukf_cfg, cfg.state_weights, val_length)
                if val_loss is not None and (best_val is None or val_loss < best_val):
                    best_bundle, best_val = bundle, val_loss
                    checkpoint("best", bundle)
            log.record(epoch, FINETUNE, train_loss, val_loss, time.perf_counter() - started)
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                checkpoint(f"{FINETUNE}-{epoch}", bundle)

    checkpoint("final", bundle)
    return TrainingResult(bundle=bundle, log=log, best_bundle=best_bundle, best_val=best_val)
