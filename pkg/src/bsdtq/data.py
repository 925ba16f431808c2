"""Dataset handling: synthetic generation, CSV ingestion, preprocessing.

A :class:`SeriesDataset` is a flat row store over one or more time series:
rows are grouped by series and strictly ordered in time within each group.
Preprocessing follows the sequential-prediction discipline throughout:
every engineered feature at time ``t`` depends only on values strictly
before ``t``, and target scaling statistics come from the training region
only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError

__all__ = [
    "SynthSpec",
    "SeriesDataset",
    "SplitSpec",
    "CsvSchema",
    "generate_synthetic",
    "load_csv",
    "save_csv",
    "minmax_scale",
    "inverse_scale",
    "engineer_features",
    "split",
    "DEFAULT_LAGS",
    "DEFAULT_ROLL_WINDOWS",
    "DEFAULT_ROLL_STATS",
    "DEFAULT_CALENDAR_PERIODS",
]

# Canonical engineered-feature list: 24 lags + 4 windows x 4 stats + 5
# sin/cos period pairs = 50 columns.  Periods cover common sampling grids
# (quarterly, monthly, daily-hourly, daily-15min, weekly-hourly).
DEFAULT_LAGS = tuple(range(1, 25))
DEFAULT_ROLL_WINDOWS = (4, 8, 16, 24)
DEFAULT_ROLL_STATS = ("mean", "std", "min", "max")
DEFAULT_CALENDAR_PERIODS = (4, 12, 24, 96, 168)

_ROLL_FUNCS = {
    "mean": lambda w: w.mean(axis=1),
    "std": lambda w: w.std(axis=1),
    "min": lambda w: w.min(axis=1),
    "max": lambda w: w.max(axis=1),
}


@dataclass(frozen=True)
class SynthSpec:
    """Geometry and noise level of the synthetic linear-target generator."""

    n_series: int = 50
    horizon: int = 196
    n_relevant: int = 5
    n_irrelevant: int = 45
    noise_std: float = 0.1
    weight_low: float = 0.5
    weight_high: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.n_series < 1 or self.horizon < 1:
            raise ValueError("n_series and horizon must be >= 1")
        if self.n_relevant < 1 or self.n_irrelevant < 0:
            raise ValueError("need n_relevant >= 1 and n_irrelevant >= 0")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.weight_low > self.weight_high:
            raise ValueError("weight_low must not exceed weight_high")


@dataclass(frozen=True)
class SeriesDataset:
    """Feature matrix with aligned targets and (series, time) row identity."""

    features: np.ndarray              # (n_rows, d)
    target: np.ndarray                # (n_rows,)
    series_id: np.ndarray             # (n_rows,) int
    time_index: np.ndarray            # (n_rows,) int
    feature_names: tuple[str, ...]
    scaling: dict[int, tuple[float, float]] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        target = np.asarray(self.target, dtype=np.float64)
        sids = np.asarray(self.series_id, dtype=np.int64)
        times = np.asarray(self.time_index, dtype=np.int64)
        names = tuple(self.feature_names)
        n = feats.shape[0]
        if feats.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {feats.shape}")
        if target.shape != (n,) or sids.shape != (n,) or times.shape != (n,):
            raise DataError("features, target, series_id, time_index disagree on length")
        if len(names) != feats.shape[1]:
            raise DataError(
                f"{len(names)} feature names for {feats.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise DataError("duplicate feature names")
        seen = set()
        for sid, block in _blocks(sids):
            if sid in seen:
                raise DataError(f"rows of series {sid} are not contiguous")
            seen.add(sid)
            t = times[block]
            if np.any(np.diff(t) <= 0):
                raise DataError(f"time_index not strictly increasing in series {sid}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "series_id", sids)
        object.__setattr__(self, "time_index", times)
        object.__setattr__(self, "feature_names", names)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def series_ids(self) -> list[int]:
        """Series identifiers in row order."""
        return [sid for sid, _ in _blocks(self.series_id)]

    def iter_series(self):
        """Yield (series_id, row slice) in row order."""
        yield from _blocks(self.series_id)


def _blocks(sids: np.ndarray):
    """Contiguous (series_id, slice) blocks of a grouped id column."""
    n = len(sids)
    start = 0
    while start < n:
        stop = start
        while stop < n and sids[stop] == sids[start]:
            stop += 1
        yield int(sids[start]), slice(start, stop)
        start = stop


@dataclass(frozen=True)
class SplitSpec:
    """Per-series split: a fixed-length test suffix plus sampled train rows."""

    test_len: int = 96
    train_samples: int = 100
    seed: int = 0
    mode: str = "random"  # "random": uniform subset; "prefix": first rows

    def __post_init__(self):
        if self.test_len < 1:
            raise ValueError(f"test_len must be >= 1, got {self.test_len}")
        if self.train_samples < 1:
            raise ValueError(f"train_samples must be >= 1, got {self.train_samples}")
        if self.mode not in ("random", "prefix"):
            raise ValueError(f"mode must be 'random' or 'prefix', got {self.mode!r}")


def generate_synthetic(spec: SynthSpec) -> tuple[SeriesDataset, np.ndarray]:
    """Generate the linear-target benchmark and return it with the true weights.

    Every feature column is standard normal; the target of each row is the
    weighted sum of its relevant columns plus Gaussian noise.  The weights
    are drawn once, uniform on [weight_low, weight_high], and shared by all
    series.
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.n_relevant + spec.n_irrelevant
    n = spec.n_series * spec.horizon
    weights = rng.uniform(spec.weight_low, spec.weight_high, spec.n_relevant)
    features = rng.standard_normal((n, d))
    noise = spec.noise_std * rng.standard_normal(n)
    target = features[:, : spec.n_relevant] @ weights + noise
    names = tuple(f"rel_{i}" for i in range(spec.n_relevant)) + tuple(
        f"irr_{j}" for j in range(spec.n_irrelevant)
    )
    ds = SeriesDataset(
        features=features,
        target=target,
        series_id=np.repeat(np.arange(spec.n_series), spec.horizon),
        time_index=np.tile(np.arange(spec.horizon), spec.n_series),
        feature_names=names,
    )
    return ds, weights


@dataclass(frozen=True)
class CsvSchema:
    """Column names expected in an input CSV."""

    time_col: str = "time"
    target_col: str = "y"
    series_col: str | None = "series_id"
    feature_cols: tuple[str, ...] | None = None  # None: every other column


def _parse_time(raw: str, line_no: int) -> int:
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError:
        raise DataError(
            f"line {line_no}: time value {raw!r} is neither an integer nor ISO-8601"
        ) from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def load_csv(path, schema: CsvSchema = CsvSchema()) -> SeriesDataset:
    """Parse a CSV into a SeriesDataset; parse errors carry line numbers."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None

        col_idx = {name: i for i, name in enumerate(header)}
        for required in (schema.time_col, schema.target_col):
            if required not in col_idx:
                raise DataError(f"{path}: missing column {required!r}")
        if schema.series_col is not None and schema.series_col not in col_idx:
            raise DataError(f"{path}: missing column {schema.series_col!r}")

        if schema.feature_cols is None:
            reserved = {schema.time_col, schema.target_col, schema.series_col}
            feature_cols = tuple(c for c in header if c not in reserved)
        else:
            feature_cols = tuple(schema.feature_cols)
            for c in feature_cols:
                if c not in col_idx:
                    raise DataError(f"{path}: missing feature column {c!r}")

        rows = []
        seen_keys = {}
        for record in reader:
            line_no = reader.line_num
            if len(record) != len(header):
                raise DataError(
                    f"line {line_no}: expected {len(header)} fields, "
                    f"got {len(record)}"
                )
            series_raw = (record[col_idx[schema.series_col]]
                          if schema.series_col is not None else "0")
            time_val = _parse_time(record[col_idx[schema.time_col]], line_no)
            key = (series_raw, time_val)
            if key in seen_keys:
                raise DataError(
                    f"line {line_no}: duplicate (series, time) key {key}, "
                    f"first seen on line {seen_keys[key]}"
                )
            seen_keys[key] = line_no
            try:
                target = float(record[col_idx[schema.target_col]])
            except ValueError:
                raise DataError(
                    f"line {line_no}: non-numeric target "
                    f"{record[col_idx[schema.target_col]]!r}"
                ) from None
            feats = np.empty(len(feature_cols))
            for j, c in enumerate(feature_cols):
                try:
                    feats[j] = float(record[col_idx[c]])
                except ValueError:
                    raise DataError(
                        f"line {line_no}: non-numeric value "
                        f"{record[col_idx[c]]!r} in column {c!r}"
                    ) from None
            rows.append((series_raw, time_val, target, feats))

    if not rows:
        raise DataError(f"{path}: no data rows")

    labels = sorted({r[0] for r in rows}, key=_series_sort_key)
    all_numeric = all(isinstance(_series_sort_key(lb), int) for lb in labels)
    label_to_id = {lb: (int(lb) if all_numeric else i)
                   for i, lb in enumerate(labels)}
    rows.sort(key=lambda r: (label_to_id[r[0]], r[1]))

    return SeriesDataset(
        features=np.array([r[3] for r in rows]),
        target=np.array([r[2] for r in rows]),
        series_id=np.array([label_to_id[r[0]] for r in rows], dtype=np.int64),
        time_index=np.array([r[1] for r in rows], dtype=np.int64),
        feature_names=feature_cols,
    )


def _series_sort_key(label: str):
    try:
        return int(label)
    except ValueError:
        return label


def save_csv(ds: SeriesDataset, path) -> None:
    """Write the dataset in the same schema load_csv reads, floats via repr."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id", "time", "y", *ds.feature_names])
        for i in range(ds.n_rows):
            writer.writerow([
                int(ds.series_id[i]),
                int(ds.time_index[i]),
                repr(float(ds.target[i])),
                *(repr(float(v)) for v in ds.features[i]),
            ])


def minmax_scale(ds: SeriesDataset, test_len: int = 0) -> SeriesDataset:
    """Map each series' target onto [-1, 1] using training-region min/max.

    The last ``test_len`` rows of each series are excluded from the min/max
    computation (they are the hold-out window); the transform itself is
    applied to every row.  The per-series (min, max) pair is stored so
    :func:`inverse_scale` can undo the mapping.
    """
    if test_len < 0:
        raise ValueError(f"test_len must be >= 0, got {test_len}")
    target = ds.target.copy()
    scaling: dict[int, tuple[float, float]] = {}
    for sid, block in ds.iter_series():
        y = ds.target[block]
        train_region = y[: len(y) - test_len] if test_len else y
        if len(train_region) == 0:
            raise DataError(f"series {sid}: no training rows before test window")
        lo, hi = float(train_region.min()), float(train_region.max())
        if lo == hi:
            raise DataError(f"series {sid}: constant training target, cannot scale")
        target[block] = 2.0 * (y - lo) / (hi - lo) - 1.0
        scaling[sid] = (lo, hi)
    return replace(ds, target=target, scaling=scaling)


def inverse_scale(ds: SeriesDataset) -> SeriesDataset:
    """Undo :func:`minmax_scale` using the stored per-series (min, max)."""
    if ds.scaling is None:
        raise DataError("dataset carries no scaling metadata")
    target = ds.target.copy()
    for sid, block in ds.iter_series():
        if sid not in ds.scaling:
            raise DataError(f"series {sid}: missing scaling metadata")
        lo, hi = ds.scaling[sid]
        target[block] = (ds.target[block] + 1.0) * (hi - lo) / 2.0 + lo
    return replace(ds, target=target, scaling=None)


def engineer_features(ds: SeriesDataset,
                      lags=DEFAULT_LAGS,
                      roll_windows=DEFAULT_ROLL_WINDOWS,
                      roll_stats=DEFAULT_ROLL_STATS,
                      calendar_periods=DEFAULT_CALENDAR_PERIODS) -> SeriesDataset:
    """Add strictly causal lag / rolling-statistic / calendar columns.

    The lag-``l`` column at time ``t`` is ``y[t-l]``; a window-``w`` rolling
    statistic at time ``t`` summarizes ``y[t-w] .. y[t-1]`` (never ``y[t]``).
    Rows without full history (the first ``max(lags, windows)`` of each
    series) are dropped.  Calendar columns are sin/cos pairs of the time
    index at the given periods.  Original exogenous columns are kept.
    """
    lags = tuple(int(l) for l in lags)
    roll_windows = tuple(int(w) for w in roll_windows)
    roll_stats = tuple(roll_stats)
    calendar_periods = tuple(int(p) for p in calendar_periods)
    if any(l < 1 for l in lags):
        raise ValueError("lags must be >= 1")
    if any(w < 2 for w in roll_windows):
        raise ValueError("rolling windows must be >= 2")
    for stat in roll_stats:
        if stat not in _ROLL_FUNCS:
            raise ValueError(f"unknown rolling stat {stat!r}")
    if any(p < 1 for p in calendar_periods):
        raise ValueError("calendar periods must be >= 1")

    history = max((*lags, *roll_windows), default=0)
    names = (
        [f"lag_{l}" for l in lags]
        + [f"roll{w}_{s}" for w in roll_windows for s in roll_stats]
        + [x for p in calendar_periods for x in (f"cal_sin_{p}", f"cal_cos_{p}")]
        + list(ds.feature_names)
    )

    feat_blocks, target_parts, sid_parts, time_parts = [], [], [], []
    for sid, block in ds.iter_series():
        y = ds.target[block]
        t_len = len(y)
        if t_len <= history:
            raise DataError(
                f"series {sid} has {t_len} rows but needs more than {history}"
            )
        kept = slice(history, t_len)
        cols = [y[history - l: t_len - l] for l in lags]
        for w in roll_windows:
            windows = sliding_window_view(y, w)[history - w: t_len - w]
            for s in roll_stats:
                cols.append(_ROLL_FUNCS[s](windows))
        times = ds.time_index[block][kept]
        for p in calendar_periods:
            phase = 2.0 * np.pi * times / p
            cols.append(np.sin(phase))
            cols.append(np.cos(phase))
        base = ds.features[block][kept]
        feat_blocks.append(np.column_stack(cols + [base]) if cols
                           else base.copy())
        target_parts.append(y[kept])
        sid_parts.append(ds.series_id[block][kept])
        time_parts.append(times)

    return SeriesDataset(
        features=np.vstack(feat_blocks),
        target=np.concatenate(target_parts),
        series_id=np.concatenate(sid_parts),
        time_index=np.concatenate(time_parts),
        feature_names=tuple(names),
        scaling=ds.scaling,
    )


def split(ds: SeriesDataset, spec: SplitSpec) -> tuple[SeriesDataset, SeriesDataset]:
    """Cut each series into a training subset and a fixed test suffix.

    The last ``test_len`` rows of every series form the test set.  From the
    remaining rows, ``train_samples`` are taken: a uniform sample without
    replacement in "random" mode, the first rows in "prefix" mode.  Row
    order (series grouping, time order) is preserved in both outputs.
    """
    rng = np.random.default_rng(spec.seed)
    train_idx, test_idx = [], []
    for sid, block in ds.iter_series():
        length = block.stop - block.start
        available = length - spec.test_len
        if available < spec.train_samples:
            raise DataError(
                f"series {sid}: {length} rows leave {max(available, 0)} for "
                f"training, need {spec.train_samples}"
            )
        test_idx.append(np.arange(block.stop - spec.test_len, block.stop))
        pool = np.arange(block.start, block.start + available)
        if spec.mode == "prefix":
            chosen = pool[: spec.train_samples]
        else:
            chosen = np.sort(rng.choice(pool, size=spec.train_samples,
                                        replace=False))
        train_idx.append(chosen)

    def take(indices: list[np.ndarray]) -> SeriesDataset:
        idx = np.concatenate(indices)
        return replace(
            ds,
            features=ds.features[idx],
            target=ds.target[idx],
            series_id=ds.series_id[idx],
            time_index=ds.time_index[idx],
        )

    return take(train_idx), take(test_idx)
