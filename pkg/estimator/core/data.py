"""Dataset ingestion, synthetic simulation and sequence slicing.

Logs are CSV files with a ``t`` column and one column per channel; a blank
cell means the channel was not sampled at that instant, which is how
multi-rate recordings share one file. Synced datasets are uniform-rate and
carry ground truth, a tire label and a segment id per row. Segments are
independent recordings: no window, split boundary statistic or finite
difference crosses one.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.signal import savgol_filter

from estimator.conf import velest_setting
from estimator.core import autodiff as ad
from estimator.core import vehicle
from estimator.exceptions import (
    DataValidationError,
    IntegrationError,
    NonFiniteError,
    ParameterError,
    SimulationError,
)

logger = logging.getLogger(__name__)

MEASUREMENT_COLUMNS = ["ax", "ay", "gyro_z", "omega_s"]
CONTROL_COLUMNS = ["delta", "iq"]
POSE_COLUMNS = ["px", "py", "yaw"]
TRUTH_COLUMNS = ["gt_vx", "gt_vy", "gt_r", "gt_omega_s"]
REQUIRED_LOG_COLUMNS = ["t", *MEASUREMENT_COLUMNS, *CONTROL_COLUMNS]
IMU_COLUMNS = ["ax", "ay", "gyro_z"]

MANEUVERS = ("sine_steer", "launch", "brake_and_turn", "drift_arc", "idle")


@dataclass
class RawLog:
    """Per-channel ``(times, values)`` series as recorded."""

    channels: dict
    source: str = ""

    @property
    def has_pose(self):
        return all(name in self.channels for name in POSE_COLUMNS)

    def samples(self, name):
        return len(self.channels[name][0])

    def span(self, name):
        times = self.channels[name][0]
        return float(times[0]), float(times[-1])


@dataclass
class SyncedDataset:
    t: np.ndarray
    measurements: np.ndarray
    controls: np.ndarray
    truth: np.ndarray | None = None
    tire_labels: np.ndarray | None = None
    segments: np.ndarray | None = None
    pose: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        n = len(self.t)
        if self.tire_labels is None:
            self.tire_labels = np.full(n, "A", dtype=object)
        if self.segments is None:
            self.segments = np.zeros(n, dtype=np.int64)
        self.tire_labels = np.asarray(self.tire_labels, dtype=object)
        self.segments = np.asarray(self.segments, dtype=np.int64)
        arrays = [self.measurements, self.controls, self.tire_labels, self.segments]
        arrays += [a for a in (self.truth, self.pose) if a is not None]
        if any(len(a) != n for a in arrays):
            raise DataValidationError("dataset columns have different lengths")
        for label, a in (("measurements", self.measurements), ("controls", self.controls), ("truth", self.truth)):
            if a is not None and not np.isfinite(a).all():
                raise DataValidationError(f"{label} contain NaN or Inf")

    def __len__(self):
        return len(self.t)

    @property
    def rate(self):
        if len(self.t) < 2:
            return 100.0
        return float(round(1.0 / np.median(np.diff(self.t)), 9))

    @property
    def friction(self):
        """Per-row friction coefficient from the tire label."""
        table = velest_setting("TIRE_FRICTION")
        unknown = set(self.tire_labels) - set(table)
        if unknown:
            raise DataValidationError(f"unknown tire labels {sorted(unknown)}")
        return np.array([table[label] for label in self.tire_labels], dtype=np.float64)

    def require_truth(self):
        if self.truth is None:
            raise DataValidationError(f"dataset {self.name or '<unnamed>'} has no ground truth")
        return self.truth

    def slice(self, start, stop):
        def cut(a):
            return None if a is None else a[start:stop]

        return SyncedDataset(
            t=self.t[start:stop],
            measurements=self.measurements[start:stop],
            controls=self.controls[start:stop],
            truth=cut(self.truth),
            tire_labels=self.tire_labels[start:stop],
            segments=self.segments[start:stop],
            pose=cut(self.pose),
            name=self.name,
        )

    def segment_bounds(self):
        """``(start, stop)`` of every run of rows sharing a segment id."""
        if len(self) == 0:
            return []
        breaks = np.flatnonzero(np.diff(self.segments) != 0) + 1
        edges = [0, *breaks.tolist(), len(self)]
        return list(zip(edges[:-1], edges[1:]))

    def states(self, augmented=False):
        truth = self.require_truth()
        if augmented:
            return np.column_stack([truth, self.friction])
        return truth

    def state_pairs(self, augmented=False):
        """Ground-truth ``(x_k, u_k, x_k+1)`` triples that stay inside a segment."""
        states = self.states(augmented)
        index = np.array([k for start, stop in self.segment_bounds() for k in range(start, stop - 1)], dtype=np.int64)
        if index.size == 0:
            return np.zeros((0, states.shape[1])), np.zeros((0, 2)), np.zeros((0, states.shape[1]))
        return states[index], self.controls[index], states[index + 1]


# -- logs ---------------------------------------------------------------------------


def _parse_cell(text, column, line):
    text = text.strip()
    if text == "":
        return np.nan
    try:
        value = float(text)
    except ValueError:
        raise DataValidationError(f"column {column!r}: cannot parse {text!r} as a number", line=line) from None
    if not math.isfinite(value):
        raise DataValidationError(f"column {column!r}: non-finite value {text!r}", line=line)
    return value


def load_log(path):
    """Read a log CSV into per-channel series.

    Line numbers in errors are file lines, the header being line 1.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: no data rows") from None
    except FileNotFoundError:
        raise DataValidationError(f"{path}: file not found") from None

    frame.columns = [str(column).strip() for column in frame.columns]
    missing = [column for column in REQUIRED_LOG_COLUMNS if column not in frame.columns]
    if missing:
        raise DataValidationError(f"{path}: missing required column(s) {', '.join(missing)}")
    pose_present = [column for column in POSE_COLUMNS if column in frame.columns]
    if pose_present and len(pose_present) != len(POSE_COLUMNS):
        raise DataValidationError(f"{path}: pose needs all of {', '.join(POSE_COLUMNS)}")
    if frame.empty:
        raise DataValidationError(f"{path}: no data rows")

    columns = REQUIRED_LOG_COLUMNS + pose_present
    values = np.empty((len(frame), len(columns)))
    for row, record in enumerate(frame[columns].itertuples(index=False)):
        line = row + 2
        for j, (column, text) in enumerate(zip(columns, record)):
            values[row, j] = _parse_cell(text, column, line)
        if np.isnan(values[row, 0]):
            raise DataValidationError("missing timestamp", line=line)
        if row and values[row, 0] <= values[row - 1, 0]:
            raise DataValidationError(
                f"timestamp {values[row, 0]!r} does not increase (previous {values[row - 1, 0]!r})", line=line
            )

    t = values[:, 0]
    channels = {}
    for j, column in enumerate(columns[1:], start=1):
        present = ~np.isnan(values[:, j])
        if not present.any():
            raise DataValidationError(f"{path}: channel {column!r} has no samples")
        channels[column] = (t[present], values[present, j])
    logger.info("loaded %s: %d rows, %d channels", path, len(frame), len(channels))
    return RawLog(channels=channels, source=str(path))


def save_log(log, path):
    times = np.unique(np.concatenate([times for times, _ in log.channels.values()]))
    frame = pd.DataFrame({"t": times})
    for name, (channel_t, channel_v) in log.channels.items():
        column = pd.Series(np.nan, index=frame.index, dtype=np.float64)
        column.iloc[np.searchsorted(times, channel_t)] = channel_v
        frame[name] = column
    frame.to_csv(path, index=False, na_rep="")
    return Path(path)


def resample_sync(log, rate_hz=100.0, tire_label="A"):
    """Linear interpolation of every channel onto a common uniform grid.

    The grid starts at the latest channel start and covers the intersection
    of all channel time ranges.
    """
    if not rate_hz > 0:
        raise ParameterError(f"rate must be positive, got {rate_hz}")
    start = max(times[0] for times, _ in log.channels.values())
    end = min(times[-1] for times, _ in log.channels.values())
    if end < start:
        raise DataValidationError(f"channel time ranges do not overlap ({start} > {end})")
    count = math.floor((end - start) * rate_hz + 1e-9) + 1
    grid = start + np.arange(count) / rate_hz

    def interp(name, unwrap=False):
        times, values = log.channels[name]
        if unwrap:
            values = np.unwrap(values)
        return np.interp(grid, times, values)

    measurements = np.column_stack([interp(name) for name in MEASUREMENT_COLUMNS])
    controls = np.column_stack([interp(name) for name in CONTROL_COLUMNS])
    pose = None
    if log.has_pose:
        pose = np.column_stack([interp("px"), interp("py"), interp("yaw", unwrap=True)])
    logger.debug("resampled %s to %d samples at %g Hz", log.source or "log", count, rate_hz)
    return SyncedDataset(
        t=grid,
        measurements=measurements,
        controls=controls,
        pose=pose,
        tire_labels=np.full(count, tire_label, dtype=object),
        name=Path(log.source).stem if log.source else "",
    )


def savgol_velocity(positions, yaw, window_samples=9, poly_order=2, rate_hz=100.0):
    """Body-frame ``(vx, vy, r)`` from planar positions and heading."""
    positions = np.asarray(positions, dtype=np.float64)
    yaw = np.unwrap(np.asarray(yaw, dtype=np.float64))
    if window_samples % 2 == 0 or window_samples < poly_order + 2:
        raise ParameterError(f"window of {window_samples} samples must be odd and at least {poly_order + 2}")
    if len(yaw) < window_samples or len(positions) != len(yaw):
        raise DataValidationError(f"series of {len(yaw)} samples is shorter than the {window_samples}-sample window")

    def derivative(series):
        return savgol_filter(series, window_samples, poly_order, deriv=1, delta=1.0 / rate_hz, mode="interp")

    vel_x = derivative(positions[:, 0])
    vel_y = derivative(positions[:, 1])
    cos_yaw, sin_yaw = np.cos(yaw), np.sin(yaw)
    vx = cos_yaw * vel_x + sin_yaw * vel_y
    vy = -sin_yaw * vel_x + cos_yaw * vel_y
    return vx, vy, derivative(yaw)


def build_dataset(log, rate_hz=100.0, window_samples=9, poly_order=2, tire_label="A", delta_max=0.45):
    """Resample a log and derive ground truth from its pose channels."""
    if not log.has_pose:
        raise DataValidationError("log has no pose channels to derive ground truth from")
    ds = resample_sync(log, rate_hz, tire_label)
    row = vehicle.check_controls(ds.controls, delta_max)
    if row is not None:
        raise DataValidationError(
            f"control {ds.controls[row].tolist()} at t={ds.t[row]:.3f} exceeds |delta| <= {delta_max}"
        )
    vx, vy, r = savgol_velocity(ds.pose[:, :2], ds.pose[:, 2], window_samples, poly_order, rate_hz)
    ds.truth = np.column_stack([vx, vy, r, ds.measurements[:, 3]])
    return ds


def to_raw_log(ds, imu_rate=400.0):
    """Multi-rate log of a dataset: IMU channels re-sampled at ``imu_rate``."""
    if not imu_rate > 0:
        raise ParameterError("imu rate must be positive")
    channels = {}
    imu_t = ds.t[0] + np.arange(math.floor((ds.t[-1] - ds.t[0]) * imu_rate + 1e-9) + 1) / imu_rate
    for j, name in enumerate(MEASUREMENT_COLUMNS):
        if name in IMU_COLUMNS:
            channels[name] = (imu_t, np.interp(imu_t, ds.t, ds.measurements[:, j]))
        else:
            channels[name] = (ds.t.copy(), ds.measurements[:, j].copy())
    for j, name in enumerate(CONTROL_COLUMNS):
        channels[name] = (ds.t.copy(), ds.controls[:, j].copy())
    if ds.pose is not None:
        for j, name in enumerate(POSE_COLUMNS):
            channels[name] = (ds.t.copy(), ds.pose[:, j].copy())
    return RawLog(channels=channels, source=ds.name)


def save_dataset(ds, path):
    frame = pd.DataFrame({"t": ds.t})
    for j, name in enumerate(MEASUREMENT_COLUMNS):
        frame[name] = ds.measurements[:, j]
    for j, name in enumerate(CONTROL_COLUMNS):
        frame[name] = ds.controls[:, j]
    if ds.pose is not None:
        for j, name in enumerate(POSE_COLUMNS):
            frame[name] = ds.pose[:, j]
    truth = ds.require_truth()
    for j, name in enumerate(TRUTH_COLUMNS):
        frame[name] = truth[:, j]
    frame["tire_label"] = ds.tire_labels
    frame["segment"] = ds.segments
    frame.to_csv(path, index=False)
    logger.info("wrote %d rows to %s", len(ds), path)
    return Path(path)


def load_dataset(path, delta_max=0.45):
    """Read a synced dataset CSV; rows steering past ``delta_max`` are rejected."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"tire_label": str})
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: no data rows") from None
    except FileNotFoundError:
        raise DataValidationError(f"{path}: file not found") from None
    required = REQUIRED_LOG_COLUMNS + TRUTH_COLUMNS + ["tire_label"]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise DataValidationError(f"{path}: missing required column(s) {', '.join(missing)}")
    if frame.empty:
        raise DataValidationError(f"{path}: no data rows")
    numeric = frame[REQUIRED_LOG_COLUMNS + TRUTH_COLUMNS].apply(pd.to_numeric, errors="coerce")
    frame[numeric.columns] = numeric
    if numeric.isna().any().any():
        line = int(np.flatnonzero(numeric.isna().any(axis=1).to_numpy())[0]) + 2
        raise DataValidationError("blank or unparsable value", line=line)
    t = frame["t"].to_numpy(dtype=np.float64)
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        raise DataValidationError("timestamps must increase", line=int(bad[0]) + 3)
    row = vehicle.check_controls(frame[CONTROL_COLUMNS].to_numpy(dtype=np.float64), delta_max)
    if row is not None:
        raise DataValidationError(f"steering angle exceeds |delta| <= {delta_max}", line=row + 2)
    pose = frame[POSE_COLUMNS].to_numpy(dtype=np.float64) if set(POSE_COLUMNS) <= set(frame.columns) else None
    segments = frame["segment"].to_numpy(dtype=np.int64) if "segment" in frame.columns else None
    return SyncedDataset(
        t=t,
        measurements=frame[MEASUREMENT_COLUMNS].to_numpy(dtype=np.float64),
        controls=frame[CONTROL_COLUMNS].to_numpy(dtype=np.float64),
        truth=frame[TRUTH_COLUMNS].to_numpy(dtype=np.float64),
        tire_labels=frame["tire_label"].to_numpy(dtype=object),
        segments=segments,
        pose=pose,
        name=path.stem,
    )


def concat_datasets(datasets, name=""):
    """Stack datasets, renumbering segments so they stay distinct.

    A dataset whose clock does not start after the previous one ends is
    shifted to follow it one sample period later, so time keeps increasing.
    """
    parts, offset, last_t = [], 0, None
    for ds in datasets:
        if not len(ds):
            continue
        segments = ds.segments - ds.segments.min() + offset
        offset = int(segments.max()) + 1
        t = ds.t
        if last_t is not None and t[0] <= last_t:
            period = 1.0 / parts[-1].rate
            t = t - t[0] + last_t + period
        last_t = float(t[-1])
        parts.append(replace(ds, t=t, segments=segments))
    if not parts:
        raise DataValidationError("nothing to concatenate")

    def stack(attr):
        arrays = [getattr(ds, attr) for ds in parts]
        return None if any(a is None for a in arrays) else np.concatenate(arrays)

    return SyncedDataset(
        t=stack("t"),
        measurements=stack("measurements"),
        controls=stack("controls"),
        truth=stack("truth"),
        tire_labels=stack("tire_labels"),
        segments=stack("segments"),
        pose=stack("pose"),
        name=name,
    )


# -- simulation -------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    duration: float = 300.0
    segment_seconds: float = 20.0
    maneuvers: tuple = MANEUVERS[:4]
    tires: tuple = ("A",)
    noise_std: tuple = (0.3, 0.3, 0.02, 0.05)
    substeps: int = 10
    rate: float = 100.0
    initial_speed: float = 2.0
    delta_max: float = 0.45
    seed: int = 0

    def __post_init__(self):
        if not (self.duration > 0 and self.segment_seconds > 0 and self.rate > 0):
            raise ParameterError("duration, segment length and rate must be positive")
        if self.substeps < 1:
            raise ParameterError("at least one integration substep is required")
        if len(self.noise_std) != 4 or min(self.noise_std) < 0:
            raise ParameterError("noise_std needs four non-negative entries")
        unknown = set(self.maneuvers) - set(MANEUVERS)
        if unknown or not self.maneuvers:
            raise ParameterError(f"unknown maneuvers {sorted(unknown)}")
        missing = set(self.tires) - set(velest_setting("TIRE_FRICTION"))
        if missing or not self.tires:
            raise ParameterError(f"unknown tire labels {sorted(missing)}")


def _maneuver_controls(name, t, rng, delta_max):
    """Scripted ``(delta, iq)`` series for one segment."""
    if name == "idle":
        return np.zeros((len(t), 2))
    cruise = rng.uniform(3.0, 6.0)
    if name == "sine_steer":
        amplitude, freq = rng.uniform(0.1, 0.3), rng.uniform(0.3, 1.0)
        delta = amplitude * np.sin(2.0 * np.pi * freq * t)
        iq = np.full_like(t, cruise)
    elif name == "launch":
        boost = rng.uniform(12.0, 20.0)
        period = rng.uniform(4.0, 8.0)
        phase = np.mod(t, period)
        iq = np.where(phase < 1.5, boost, np.where(phase < 3.0, -0.5 * cruise, cruise))
        delta = 0.05 * np.sin(2.0 * np.pi * 0.2 * t)
    elif name == "brake_and_turn":
        period = rng.uniform(3.0, 5.0)
        phase = np.mod(t, period)
        braking = (phase > 0.6 * period) & (phase < 0.8 * period)
        iq = np.where(braking, -cruise, cruise + 2.0)
        delta = np.where(phase > 0.6 * period, rng.uniform(0.2, 0.35), 0.0) * np.sign(np.sin(np.pi * t / period))
    else:  # drift_arc
        boost = rng.uniform(15.0, 25.0)
        side = rng.choice([-1.0, 1.0])
        ramp = np.clip(t / 2.0, 0.0, 1.0)
        delta = side * ramp * rng.uniform(0.3, 0.42) * (1.0 - 1.6 * (np.mod(t, 6.0) > 4.0))
        iq = cruise + ramp * boost
    return np.column_stack([np.clip(delta, -delta_max, delta_max), iq])


def _world_velocity(x, yaw):
    vx, vy = x[:, 0], x[:, 1]
    return np.column_stack([vx * np.cos(yaw) - vy * np.sin(yaw), vx * np.sin(yaw) + vy * np.cos(yaw)])


def _measure(x, u, p, pp, mu):
    x, u = ad.Tensor(x), ad.Tensor(u)
    forces = vehicle.pacejka_forces(vehicle.compute_slip(x, u, p), pp, mu=mu)
    derivative = vehicle.single_track_derivative(x, u, p, forces, smooth_sign=False)
    return vehicle.measurement_model(x, u, lambda *_: derivative).values


def simulate_dataset(cfg, vehicle_params=None, pacejka=None):
    """Integrate the single-track/Pacejka model as ground truth.

    Segments are simulated side by side as rows of one batched state. Each
    segment drives one maneuver on one tire set; tires are assigned to
    segments in order, in equal blocks. Friction enters by the tire label.
    """
    p = vehicle_params or vehicle.VehicleParams()
    pp = pacejka or vehicle.PacejkaParams()
    rng = np.random.default_rng(cfg.seed)
    total = max(int(round(cfg.duration * cfg.rate)), 1)
    seg_len = min(max(int(round(cfg.segment_seconds * cfg.rate)), 2), total)
    n_seg = math.ceil(total / seg_len)
    t_local = np.arange(seg_len) / cfg.rate

    maneuvers = [cfg.maneuvers[k % len(cfg.maneuvers)] for k in range(n_seg)]
    tires = [cfg.tires[k * len(cfg.tires) // n_seg] for k in range(n_seg)]
    mu = ad.Tensor([velest_setting("TIRE_FRICTION")[label] for label in tires])
    controls = np.stack([_maneuver_controls(name, t_local, rng, cfg.delta_max) for name in maneuvers], axis=1)

    speed0 = np.array([0.0 if name == "idle" else cfg.initial_speed for name in maneuvers])
    x = np.column_stack([speed0, np.zeros(n_seg), np.zeros(n_seg), speed0])
    pose = np.zeros((n_seg, 3))
    truth = np.empty((seg_len, n_seg, 4))
    poses = np.empty((seg_len, n_seg, 3))
    clean = np.empty((seg_len, n_seg, 4))
    h = 1.0 / (cfg.rate * cfg.substeps)
    max_speed = velest_setting("MAX_SPEED")

    def derivative(state, u):
        forces = vehicle.pacejka_forces(vehicle.compute_slip(state, u, p), pp, mu=mu)
        return vehicle.single_track_derivative(state, u, p, forces, smooth_sign=False)

    for k in range(seg_len):
        u = controls[k]
        truth[k], poses[k] = x, pose
        try:
            clean[k] = _measure(x, u, p, pp, mu)
            for _ in range(cfg.substeps):
                x_next = vehicle.rk4_step(derivative, ad.Tensor(x), ad.Tensor(u), h).values
                yaw_next = pose[:, 2] + 0.5 * h * (x[:, 2] + x_next[:, 2])
                # trapezoidal pose update
                velocity = 0.5 * (_world_velocity(x, pose[:, 2]) + _world_velocity(x_next, yaw_next))
                pose = np.column_stack([pose[:, :2] + h * velocity, yaw_next])
                x = x_next
        except (IntegrationError, NonFiniteError) as exc:
            raise SimulationError(k, str(exc)) from exc
        if np.abs(x[:, 0]).max() > max_speed:
            raise SimulationError(k + 1, f"|vx| exceeded {max_speed} m/s")

    noise = rng.normal(0.0, 1.0, size=clean.shape) * np.asarray(cfg.noise_std)
    measurements = clean + noise

    def rows(a):
        return np.concatenate([a[:, s] for s in range(n_seg)])[:total]

    ds = SyncedDataset(
        t=np.arange(total) / cfg.rate,
        measurements=rows(measurements),
        controls=rows(controls),
        truth=rows(truth),
        tire_labels=np.repeat(np.array(tires, dtype=object), seg_len)[:total],
        segments=np.repeat(np.arange(n_seg), seg_len)[:total],
        pose=rows(poses),
        name=f"sim-{cfg.seed}",
    )
    percentile = rear_slip_percentile(ds, p)
    logger.info("simulated %d segments, %d samples; 99th percentile rear slip %.1f deg", n_seg, total, percentile)
    if "drift_arc" in maneuvers and percentile < 40.0:
        logger.warning("drift segments reached only %.1f deg of rear slip (99th percentile)", percentile)
    return ds


# -- statistics and slicing ---------------------------------------------------------


def rear_slip_percentile(ds, p=None, q=99.0):
    p = p or vehicle.VehicleParams()
    truth = ds.require_truth()
    vx = np.maximum(truth[:, 0], velest_setting("SLIP_V_EPS"))
    alpha_r = -np.arctan2(truth[:, 1] - p.lr * truth[:, 2], vx)
    return float(np.percentile(np.degrees(np.abs(alpha_r)), q))


def variability_weights(ds):
    """Inverse mean absolute sample-to-sample change per state, normalized to sum 1."""
    truth = ds.require_truth()
    diffs = [np.abs(np.diff(truth[start:stop], axis=0)) for start, stop in ds.segment_bounds() if stop - start > 1]
    if not diffs:
        raise DataValidationError("need at least two samples in one segment")
    variability = np.concatenate(diffs).mean(axis=0)
    if not (variability > 0).all():
        raise DataValidationError("a state does not vary; its weight is undefined")
    inverse = 1.0 / variability
    return inverse / inverse.sum()


def split_dataset(ds, fractions=(0.7, 0.2, 0.1), seed=0, min_len=2):
    """Contiguous train/val/test blocks; ``seed`` permutes their order in time."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or (fractions < 0).any() or not math.isclose(fractions.sum(), 1.0, abs_tol=1e-9):
        raise ParameterError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(ds)
    sizes = np.floor(fractions * n + 1e-9).astype(int)
    sizes[0] += n - sizes.sum()
    if (sizes < min_len).any():
        raise DataValidationError(f"{n} rows cannot be split into blocks of at least {min_len} rows: {sizes.tolist()}")
    order = np.random.default_rng(seed).permutation(3)
    starts, offset = {}, 0
    for which in order:
        starts[which] = offset
        offset += sizes[which]
    return tuple(ds.slice(starts[i], starts[i] + sizes[i]) for i in range(3))


def training_windows(ds, seq_len, rng):
    """Non-overlapping windows tiled from a random offset inside every segment."""
    if seq_len < 2:
        raise ParameterError("sequence length must be at least 2")
    windows = []
    for start, stop in ds.segment_bounds():
        room = stop - start - seq_len
        if room < 0:
            continue
        offset = int(rng.integers(0, min(seq_len, room + 1)))
        windows.extend((begin, begin + seq_len) for begin in range(start + offset, stop - seq_len + 1, seq_len))
    return windows


def evaluation_windows(ds, length=1000):
    """Consecutive non-overlapping windows of exactly ``length`` rows."""
    if length < 1:
        raise ParameterError("window length must be positive")
    return [
        (begin, begin + length)
        for start, stop in ds.segment_bounds()
        for begin in range(start, stop - length + 1, length)
    ]


@dataclass
class Window:
    start: int
    stop: int
    controls: np.ndarray = field(repr=False)
    measurements: np.ndarray = field(repr=False)
    truth: np.ndarray | None = field(repr=False, default=None)

    @classmethod
    def of(cls, ds, start, stop):
        truth = None if ds.truth is None else ds.truth[start:stop]
        return cls(start, stop, ds.controls[start:stop], ds.measurements[start:stop], truth)
