"""Estimation metrics, one-step prediction errors and report files."""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from estimator.core import data as data_io
from estimator.core import ukf
from estimator.core.vehicle import AUGMENTED_STATE_NAMES, STATE_NAMES
from estimator.exceptions import DataValidationError, FilterDivergenceError, ReportError, ShapeError

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("csv", "json")
REPORT_COLUMNS = ["model", "dataset", "sequences", "mse", "mae", "ae99"]


@dataclass
class MetricsReport:
    mse: float
    mae: float
    ae99: float
    per_state: dict = field(default_factory=dict)
    model: str = ""
    dataset: str = ""
    sequences: int = 0

    def as_row(self):
        row = {"model": self.model, "dataset": self.dataset, "sequences": self.sequences}
        row.update(mse=self.mse, mae=self.mae, ae99=self.ae99)
        for state, values in self.per_state.items():
            for metric, value in values.items():
                row[f"{metric}_{state}"] = value
        return row


def compute_metrics(estimates, truths, state_weights, burn_in=0, model="", dataset="", state_names=None):
    """Weighted MSE, MAE and 99th-percentile absolute error over all timesteps.

    Per timestep the weighted errors are ``sum_i w_i e_i^2`` and
    ``sum_i w_i |e_i|``; the percentile is linear-interpolated. The first
    ``burn_in`` samples of each sequence are dropped.
    """
    if len(estimates) != len(truths):
        raise ShapeError(f"{len(estimates)} estimate sequences for {len(truths)} truth sequences")
    weights = np.asarray(state_weights, dtype=np.float64)
    errors = []
    for est, truth in zip(estimates, truths):
        est = np.asarray(est, dtype=np.float64)[:, : len(weights)]
        truth = np.asarray(truth, dtype=np.float64)[:, : len(weights)]
        if est.shape != truth.shape:
            raise ShapeError(f"estimate {est.shape} and truth {truth.shape} are not aligned")
        errors.append(est[burn_in:] - truth[burn_in:])
    errors = np.concatenate(errors) if errors else np.zeros((0, len(weights)))
    if errors.size == 0:
        raise DataValidationError("no estimates to evaluate")

    weighted_sq = np.square(errors) @ weights
    weighted_abs = np.abs(errors) @ weights
    names = state_names or (STATE_NAMES if len(weights) == 4 else [f"s{i}" for i in range(len(weights))])
    per_state = {
        name: {"mse": float(np.mean(np.square(errors[:, i]))), "mae": float(np.mean(np.abs(errors[:, i])))}
        for i, name in enumerate(names)
    }
    return MetricsReport(
        mse=float(np.mean(weighted_sq)),
        mae=float(np.mean(weighted_abs)),
        ae99=float(np.quantile(weighted_abs, 0.99)),
        per_state=per_state,
        model=model,
        dataset=dataset,
        sequences=len(estimates),
    )


def emit_report(reports, path, fmt="csv"):
    """Write reports as CSV (one row each) or as a JSON list."""
    from estimator.serializers import MetricsReportSerializer, render_json

    if not reports:
        raise ReportError("no reports to write")
    if fmt not in REPORT_FORMATS:
        raise ReportError(f"unknown report format {fmt!r}")
    path = Path(path)
    try:
        if fmt == "csv":
            rows = [report.as_row() for report in reports]
            extra = sorted({key for row in rows for key in row} - set(REPORT_COLUMNS))
            pd.DataFrame(rows, columns=REPORT_COLUMNS + extra).to_csv(path, index=False)
        else:
            payload = MetricsReportSerializer([asdict(report) for report in reports], many=True).data
            path.write_bytes(render_json(payload))
    except OSError as exc:
        raise ReportError(f"cannot write report to {path}: {exc}") from exc
    logger.info("wrote %d report(s) to %s", len(reports), path)
    return path


def prediction_metrics(ds, bundle, ts=0.01):
    """Per-state mean squared one-step prediction error from ground-truth inputs."""
    x, u, x_next = ds.state_pairs(bundle.augmented)
    if len(x) == 0:
        raise DataValidationError("dataset has no consecutive ground-truth pairs")
    predicted = bundle.transition(bundle.view(), x, u, ts).values
    errors = predicted[:, :4] - x_next[:, :4]
    return {name: float(np.mean(np.square(errors[:, i]))) for i, name in enumerate(STATE_NAMES)}


@dataclass
class Estimate:
    start: int
    stop: int
    means: np.ndarray


def estimate_windows(ds, bundle, ukf_cfg, length=1000, mu_prior=None):
    """Filter every evaluation window; diverged windows are skipped and logged."""
    estimates = []
    for start, stop in data_io.evaluation_windows(ds, length):
        window = data_io.Window.of(ds, start, stop)
        try:
            trajectory = ukf.filter_sequence(bundle, window.controls, window.measurements, ukf_cfg, mu_prior=mu_prior)
        except FilterDivergenceError as exc:
            logger.error("window [%d, %d) diverged: %s", start, stop, exc)
            continue
        estimates.append(Estimate(start, stop, trajectory.mean_array()))
    return estimates


def estimates_frame(ds, estimates, augmented):
    names = AUGMENTED_STATE_NAMES if augmented else STATE_NAMES
    frames = []
    for index, estimate in enumerate(estimates):
        frame = pd.DataFrame(estimate.means, columns=list(names))
        frame.insert(0, "window", index)
        frame.insert(0, "t", ds.t[estimate.start : estimate.stop])
        frame.insert(0, "row", np.arange(estimate.start, estimate.stop))
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["row", "t", "window", *names])
    return pd.concat(frames, ignore_index=True)


def estimates_from_frame(frame):
    """Inverse of :func:`estimates_frame`."""
    missing = [column for column in ("row", "window", *STATE_NAMES) if column not in frame.columns]
    if missing:
        raise DataValidationError(f"estimates file lacks column(s) {', '.join(missing)}")
    names = [name for name in AUGMENTED_STATE_NAMES if name in frame.columns]
    estimates = []
    for _, group in frame.groupby("window", sort=True):
        rows = group["row"].to_numpy(dtype=np.int64)
        if (np.diff(rows) != 1).any():
            raise DataValidationError("estimate windows must cover consecutive rows")
        estimates.append(Estimate(int(rows[0]), int(rows[-1]) + 1, group[names].to_numpy(dtype=np.float64)))
    return estimates


def score_estimates(ds, estimates, weights, burn_in=0, model="", dataset=""):
    truth = ds.require_truth()
    if any(estimate.stop > len(truth) for estimate in estimates):
        raise DataValidationError("estimates refer to rows beyond the dataset")
    return compute_metrics(
        [estimate.means for estimate in estimates],
        [truth[estimate.start : estimate.stop] for estimate in estimates],
        weights,
        burn_in=burn_in,
        model=model,
        dataset=dataset or ds.name,
    )


def final_friction(estimates):
    """Last friction estimate of every window (augmented runs only)."""
    return np.array([estimate.means[-1, 4] for estimate in estimates if estimate.means.shape[1] > 4])
