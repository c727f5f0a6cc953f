"""Hourly CSV ingestion, cleaning, standardization, splitting and windowing.

The cleaning rules, applied in order:

1. drop buildings whose missing fraction is >= 10%
2. linearly interpolate remaining gaps (edges take the nearest observation)
3. drop columns with more than 3000 zero values

Standardization transforms each load series with its own train-split mean
and standard deviation; weather covariates are standardized the same way
so optimizer behaviour does not depend on raw units. Splits are
chronological and contiguous with boundaries at ``floor(fraction * T)``.

Input files are UTF-8 CSV, first column ISO-8601 hourly timestamps.
Columns named after the six reserved weather features are covariates;
every other column is a building load series. Cleaned datasets persist as
a CSV of standardized values plus a JSON sidecar holding the schema,
standardization parameters, split boundaries and removal log.
"""

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, FormatError

WEATHER_FEATURES = (
    "airTemperature",
    "dewTemperature",
    "seaLvlPressure",
    "windDirection",
    "windSpeed",
    "cloudCoverage",
)

FEATURE_ABBREV = {
    "airTemperature": "AT",
    "dewTemperature": "DT",
    "seaLvlPressure": "SLP",
    "windDirection": "WD",
    "windSpeed": "WS",
    "cloudCoverage": "CC",
}

HOUR = np.timedelta64(1, "h")

SPLIT_ROLES = ("train", "val", "test")
PAD_ROLE = "pad"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered set of present weather features."""

    features: tuple = ()

    def __post_init__(self):
        unknown = [f for f in self.features if f not in WEATHER_FEATURES]
        if unknown:
            raise ConfigError(f"unknown weather features: {unknown}")
        ordered = tuple(f for f in WEATHER_FEATURES if f in self.features)
        object.__setattr__(self, "features", ordered)

    @property
    def width(self):
        return len(self.features)

    def abbreviations(self):
        return tuple(FEATURE_ABBREV[f] for f in self.features)

    def __contains__(self, name):
        return name in self.features

    def union(self, other):
        return FeatureSchema(tuple(set(self.features) | set(other.features)))


@dataclass
class RawDataset:
    """Aligned hourly panel straight from CSV; gaps are NaN."""

    dataset_id: str
    timestamps: np.ndarray
    buildings: dict
    weather: dict
    metadata: dict = field(default_factory=dict)
    removed_buildings: list = field(default_factory=list)
    removed_columns: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.timestamps)
        for name, series in list(self.buildings.items()) + list(self.weather.items()):
            if len(series) != n:
                raise FormatError(f"column {name!r} has {len(series)} rows, expected {n}")

    @property
    def n_rows(self):
        return len(self.timestamps)

    @property
    def schema(self):
        return FeatureSchema(tuple(self.weather.keys()))


@dataclass(frozen=True)
class SplitBounds:
    """Contiguous chronological train/val/test row ranges."""

    train: tuple
    val: tuple
    test: tuple

    @property
    def sizes(self):
        return tuple(e - s for s, e in (self.train, self.val, self.test))

    def segments(self):
        return (("train",) + self.train, ("val",) + self.val, ("test",) + self.test)


def split_chronological(n_rows, train_frac=0.70, val_frac=0.10, test_frac=0.20):
    """Boundary indices at floor(fraction * T); all three splits nonempty."""
    if abs(train_frac + val_frac + test_frac - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {(train_frac, val_frac, test_frac)}")
    train_end = int(np.floor(train_frac * n_rows))
    val_end = train_end + int(np.floor(val_frac * n_rows))
    bounds = SplitBounds((0, train_end), (train_end, val_end), (val_end, n_rows))
    for role, size in zip(SPLIT_ROLES, bounds.sizes):
        if size <= 0:
            raise ConfigError(f"{role} split is empty for fractions {(train_frac, val_frac, test_frac)}")
    return bounds


@dataclass
class CleanDataset:
    """Gap-free standardized panel with provenance and split metadata.

    ``buildings`` maps building key -> standardized load series and
    ``building_source`` maps the same key to the dataset the series came
    from (itself for single-site datasets, the member id for combined
    ones). Weather is kept per source so combined datasets retain each
    member's own covariates.
    """

    dataset_id: str
    timestamps: np.ndarray
    buildings: dict
    building_source: dict
    weather_by_source: dict
    schema: FeatureSchema
    norm: dict
    weather_norm: dict
    segments: tuple  # ((role, start, end), ...) in row order
    pad_mask: np.ndarray = None
    metadata: dict = field(default_factory=dict)
    removed_buildings: list = field(default_factory=list)
    removed_columns: list = field(default_factory=list)
    # combined datasets keep each member's own split geometry
    segments_by_source: dict = None
    pad_by_source: dict = None

    def __post_init__(self):
        if self.pad_mask is None:
            self.pad_mask = np.zeros(len(self.timestamps), dtype=bool)

    @property
    def n_rows(self):
        return len(self.timestamps)

    @property
    def building_count(self):
        return len(self.buildings)

    @property
    def is_combined(self):
        return self.segments_by_source is not None

    def split_range(self, role, source=None):
        segments = self.segments
        if source is not None and self.segments_by_source is not None:
            segments = self.segments_by_source.get(source, self.segments)
        for seg_role, start, end in segments:
            if seg_role == role:
                return (start, end)
        raise ConfigError(f"dataset {self.dataset_id!r} has no {role!r} segment")

    def pad_for(self, source):
        if self.pad_by_source is not None and source in self.pad_by_source:
            return self.pad_by_source[source]
        return self.pad_mask

    def invert(self, building, values):
        """Map standardized load values back to the original scale."""
        mean, std = self.norm[building]
        return np.asarray(values) * std + mean

    def sources(self):
        return tuple(self.weather_by_source.keys())


def load_csv(path, dataset_id=None):
    """Parse a raw hourly CSV into a RawDataset.

    Unparseable or blank numeric cells become NaN. Timestamps must be
    unique, strictly increasing and hourly spaced.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        rows = list(reader)
    if len(header) < 2:
        raise FormatError(f"{path}: need a timestamp column plus at least one data column")
    if not rows:
        raise FormatError(f"{path}: no data rows")

    stamps = []
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise FormatError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        try:
            stamps.append(np.datetime64(row[0].strip().replace(" ", "T"), "s"))
        except ValueError:
            raise FormatError(f"{path}: row {i + 2}: bad timestamp {row[0]!r}") from None
    timestamps = np.array(stamps, dtype="datetime64[s]")
    diffs = np.diff(timestamps)
    if len(np.unique(timestamps)) != len(timestamps):
        raise FormatError(f"{path}: duplicate timestamps")
    if (diffs <= np.timedelta64(0, "s")).any():
        raise FormatError(f"{path}: timestamps are not strictly increasing")
    if (diffs != HOUR).any():
        raise FormatError(f"{path}: timestamps are not hourly spaced")

    columns = {name: np.full(len(rows), np.nan) for name in header[1:]}
    for i, row in enumerate(rows):
        for j, name in enumerate(header[1:], start=1):
            cell = row[j].strip()
            if not cell:
                continue
            try:
                columns[name][i] = float(cell)
            except ValueError:
                pass  # unparseable cell stays a missing marker

    weather = {name: columns.pop(name) for name in WEATHER_FEATURES if name in columns}
    if dataset_id is None:
        dataset_id = os.path.splitext(os.path.basename(path))[0]
    return RawDataset(dataset_id, timestamps, columns, weather)


def drop_sparse_buildings(ds, threshold=0.10):
    """Remove buildings whose missing fraction is >= threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    kept, removed = {}, list(ds.removed_buildings)
    for name, series in ds.buildings.items():
        frac = float(np.isnan(series).mean())
        if frac >= threshold:
            removed.append({"building": name, "reason": f"missing fraction {frac:.4f} >= {threshold}"})
        else:
            kept[name] = series
    return replace(ds, buildings=kept, removed_buildings=removed)


def interpolate_linear(ds):
    """Fill gaps: interior linearly, leading/trailing with the nearest value."""

    def fill(name, series):
        observed = np.flatnonzero(~np.isnan(series))
        if observed.size == 0:
            raise DataError(f"series {name!r} has no observed values")
        if observed.size == len(series):
            return series
        return np.interp(np.arange(len(series)), observed, series[observed])

    buildings = {name: fill(name, s) for name, s in ds.buildings.items()}
    weather = {name: fill(name, s) for name, s in ds.weather.items()}
    return replace(ds, buildings=buildings, weather=weather)


def drop_zero_columns(ds, max_zeros=3000):
    """Remove any column with more than ``max_zeros`` zero values.

    Applied to building and weather columns alike; meant to run after
    interpolation so filled gaps count toward the zero tally.
    """
    removed = list(ds.removed_columns)

    def keep(group):
        kept = {}
        for name, series in group.items():
            zeros = int((series == 0.0).sum())
            if zeros > max_zeros:
                removed.append({"column": name, "reason": f"{zeros} zero values > {max_zeros}"})
            else:
                kept[name] = series
        return kept

    return replace(ds, buildings=keep(ds.buildings), weather=keep(ds.weather), removed_columns=removed)


def clean(ds, missing_threshold=0.10, max_zeros=3000):
    """Apply the three cleaning rules in order."""
    return drop_zero_columns(interpolate_linear(drop_sparse_buildings(ds, missing_threshold)), max_zeros)


def standardize(ds, bounds=None):
    """Standardize a gap-free RawDataset into a CleanDataset.

    Every load series is transformed with its own train-split mean/std;
    the parameters are stored for inversion and nothing outside the train
    split contributes to them. A constant load series is an error; a
    constant weather series is merely centered.
    """
    if bounds is None:
        bounds = split_chronological(ds.n_rows)
    t0, t1 = bounds.train
    buildings, norm = {}, {}
    for name, series in ds.buildings.items():
        if np.isnan(series).any():
            raise DataError(f"series {name!r} still has missing values; interpolate first")
        mean = float(series[t0:t1].mean())
        std = float(series[t0:t1].std())
        if std == 0.0:
            raise DataError(f"series {name!r} is constant on the train split (std = 0)")
        buildings[name] = (series - mean) / std
        norm[name] = (mean, std)
    weather, wnorm = {}, {}
    for name, series in ds.weather.items():
        if np.isnan(series).any():
            raise DataError(f"weather {name!r} still has missing values; interpolate first")
        mean = float(series[t0:t1].mean())
        std = float(series[t0:t1].std())
        if std == 0.0:
            std = 1.0  # constant covariate: center only
        weather[name] = (series - mean) / std
        wnorm[name] = (mean, std)
    return CleanDataset(
        dataset_id=ds.dataset_id,
        timestamps=ds.timestamps,
        buildings=buildings,
        building_source={name: ds.dataset_id for name in buildings},
        weather_by_source={ds.dataset_id: weather},
        schema=FeatureSchema(tuple(weather.keys())),
        norm=norm,
        weather_norm={ds.dataset_id: wnorm},
        segments=bounds.segments(),
        metadata=dict(ds.metadata),
        removed_buildings=list(ds.removed_buildings),
        removed_columns=list(ds.removed_columns),
    )


def prepare_dataset(path, dataset_id=None, fractions=(0.70, 0.10, 0.20), missing_threshold=0.10, max_zeros=3000):
    """Full pipeline: load, clean, split, standardize."""
    raw = clean(load_csv(path, dataset_id), missing_threshold, max_zeros)
    bounds = split_chronological(raw.n_rows, *fractions)
    return standardize(raw, bounds)


# --- model-facing feature layout and windowing -------------------------------


@dataclass(frozen=True)
class FeatureLayout:
    """Channel layout of model inputs.

    Channels, in order: standardized load, one channel per weather feature
    (zero-filled when the series' source lacks it), one presence-mask
    channel per feature, then sin/cos of hour-of-day and day-of-week.
    """

    features: tuple

    @property
    def width(self):
        return 1 + 2 * len(self.features) + 4

    @staticmethod
    def for_dataset(ds):
        return FeatureLayout(ds.schema.features)


def calendar_channels(timestamps):
    """Cyclic encodings of hour-of-day and day-of-week, shape [T, 4]."""
    hours = timestamps.astype("datetime64[h]").astype(np.int64)
    hod = hours % 24
    dow = (hours // 24 + 3) % 7  # epoch day 0 was a Thursday
    return np.stack(
        [
            np.sin(2 * np.pi * hod / 24.0),
            np.cos(2 * np.pi * hod / 24.0),
            np.sin(2 * np.pi * dow / 7.0),
            np.cos(2 * np.pi * dow / 7.0),
        ],
        axis=1,
    )


@dataclass
class WindowSet:
    """Materialized forecasting windows for one split of one dataset."""

    x: np.ndarray  # [n, L, F]
    y: np.ndarray  # [n, H]
    series: list  # building key per row
    sources: list  # provenance dataset id per row
    split: str
    target_start: np.ndarray  # datetime64 per row: first target timestamp
    layout: FeatureLayout

    def __len__(self):
        return self.x.shape[0]

    @staticmethod
    def concat(sets):
        sets = [s for s in sets if len(s) > 0]
        if not sets:
            raise DataError("cannot concatenate zero windows")
        layout = sets[0].layout
        split = sets[0].split
        for s in sets[1:]:
            if s.layout != layout:
                raise ConfigError("window sets have different feature layouts")
        return WindowSet(
            x=np.concatenate([s.x for s in sets]),
            y=np.concatenate([s.y for s in sets]),
            series=sum((s.series for s in sets), []),
            sources=sum((s.sources for s in sets), []),
            split=split,
            target_start=np.concatenate([s.target_start for s in sets]),
            layout=layout,
        )


def series_channels(ds, building, layout):
    """Full-length channel matrix [T, layout.width] for one building."""
    source = ds.building_source[building]
    weather = ds.weather_by_source[source]
    T = ds.n_rows
    cols = [ds.buildings[building]]
    for feat in layout.features:
        cols.append(weather.get(feat, np.zeros(T)))
    for feat in layout.features:
        cols.append(np.full(T, 1.0 if feat in weather else 0.0))
    channels = np.stack(cols, axis=1)
    return np.concatenate([channels, calendar_channels(ds.timestamps)], axis=1)


def make_windows(ds, split, lookback, horizon, stride=1, layout=None):
    """Sliding windows over one split of every building.

    Windows never cross split boundaries. Per series the count is
    ``T_split - L - H + 1`` (at stride 1) before pad filtering: training
    windows touching any padded timestamp are dropped, and validation/test
    windows are dropped when their target range touches padding.
    """
    if split not in SPLIT_ROLES:
        raise ConfigError(f"split must be one of {SPLIT_ROLES}, got {split!r}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if layout is None:
        layout = FeatureLayout.for_dataset(ds)
    span = lookback + horizon

    offsets_cache = {}

    def offsets_for(source):
        if source in offsets_cache:
            return offsets_cache[source]
        start, end = ds.split_range(split, source)
        if end - start < span:
            raise ConfigError(
                f"{split} split of {ds.dataset_id!r} (source {source!r}) has "
                f"{end - start} rows; need at least L+H = {span}"
            )
        offsets = np.arange(start, end - span + 1, stride)
        pad = ds.pad_for(source)
        if pad.any():
            keep = []
            for t0 in offsets:
                if split == "train":
                    blocked = pad[t0 : t0 + span].any()
                else:
                    blocked = pad[t0 + lookback : t0 + span].any()
                if not blocked:
                    keep.append(t0)
            offsets = np.array(keep, dtype=np.int64)
        offsets_cache[source] = offsets
        return offsets

    xs, ys, series, sources, starts = [], [], [], [], []
    for building in ds.buildings:
        source = ds.building_source[building]
        offsets = offsets_for(source)
        channels = series_channels(ds, building, layout)
        for t0 in offsets:
            xs.append(channels[t0 : t0 + lookback])
            ys.append(ds.buildings[building][t0 + lookback : t0 + span])
        series.extend([building] * len(offsets))
        sources.extend([source] * len(offsets))
        if len(offsets):
            starts.append(ds.timestamps[offsets + lookback])

    n = len(xs)
    x = np.stack(xs) if n else np.empty((0, lookback, layout.width))
    y = np.stack(ys) if n else np.empty((0, horizon))
    target_start = np.concatenate(starts) if n else np.empty(0, dtype="datetime64[s]")
    return WindowSet(x, y, series, sources, split, target_start, layout)


# --- persistence --------------------------------------------------------------


def _column_name(source, name, single_source):
    return name if single_source else f"{source}:{name}"


def save_clean(ds, out_dir):
    """Persist a CleanDataset as CSV (standardized values) + JSON sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{ds.dataset_id}.csv")
    json_path = os.path.join(out_dir, f"{ds.dataset_id}.json")
    single = len(ds.weather_by_source) == 1 and ds.sources()[0] == ds.dataset_id

    headers = ["timestamp"]
    columns = []
    for name in ds.buildings:
        # combined datasets already carry "source:name" building keys
        headers.append(name)
        columns.append(ds.buildings[name])
    for source, weather in ds.weather_by_source.items():
        for feat, series in weather.items():
            headers.append(_column_name(source, feat, single))
            columns.append(series)

    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        stamps = np.datetime_as_string(ds.timestamps, unit="s")
        for i in range(ds.n_rows):
            # repr(float) round-trips float64 exactly through text
            writer.writerow([stamps[i]] + [repr(float(col[i])) for col in columns])

    sidecar = {
        "dataset_id": ds.dataset_id,
        "scale": "standardized",
        "schema": list(ds.schema.features),
        "building_source": dict(ds.building_source),
        "norm": {k: list(v) for k, v in ds.norm.items()},
        "weather_norm": {s: {k: list(v) for k, v in w.items()} for s, w in ds.weather_norm.items()},
        "segments": [list(seg) for seg in ds.segments],
        "pad_ranges": _mask_to_ranges(ds.pad_mask),
        "segments_by_source": (
            None
            if ds.segments_by_source is None
            else {s: [list(seg) for seg in segs] for s, segs in ds.segments_by_source.items()}
        ),
        "pad_ranges_by_source": (
            None
            if ds.pad_by_source is None
            else {s: _mask_to_ranges(mask) for s, mask in ds.pad_by_source.items()}
        ),
        "metadata": ds.metadata,
        "removed_buildings": ds.removed_buildings,
        "removed_columns": ds.removed_columns,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return csv_path, json_path


def _mask_to_ranges(mask):
    ranges = []
    in_run = False
    for i, flag in enumerate(mask):
        if flag and not in_run:
            ranges.append([i, i + 1])
            in_run = True
        elif flag:
            ranges[-1][1] = i + 1
        else:
            in_run = False
    return ranges


def load_clean(directory, dataset_id):
    """Reload a CleanDataset written by :func:`save_clean`."""
    csv_path = os.path.join(directory, f"{dataset_id}.csv")
    json_path = os.path.join(directory, f"{dataset_id}.json")
    with open(json_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)

    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    timestamps = np.array(
        [np.datetime64(r[0].replace(" ", "T"), "s") for r in rows], dtype="datetime64[s]"
    )
    data = {name: np.array([float(r[j]) for r in rows]) for j, name in enumerate(header) if j > 0}

    building_source = sidecar["building_source"]
    buildings = {name: data[name] for name in building_source}
    weather_by_source = {}
    single = set(sidecar["weather_norm"].keys()) == {sidecar["dataset_id"]}
    for source, wnorm in sidecar["weather_norm"].items():
        weather_by_source[source] = {}
        for feat in wnorm:
            col = feat if single else f"{source}:{feat}"
            weather_by_source[source][feat] = data[col]

    def ranges_to_mask(ranges):
        mask = np.zeros(len(timestamps), dtype=bool)
        for s, e in ranges:
            mask[s:e] = True
        return mask

    segs_by_source = sidecar.get("segments_by_source")
    if segs_by_source is not None:
        segs_by_source = {
            s: tuple(tuple(seg) for seg in segs) for s, segs in segs_by_source.items()
        }
    pads_by_source = sidecar.get("pad_ranges_by_source")
    if pads_by_source is not None:
        pads_by_source = {s: ranges_to_mask(r) for s, r in pads_by_source.items()}

    return CleanDataset(
        dataset_id=sidecar["dataset_id"],
        timestamps=timestamps,
        buildings=buildings,
        building_source=dict(building_source),
        weather_by_source=weather_by_source,
        schema=FeatureSchema(tuple(sidecar["schema"])),
        norm={k: tuple(v) for k, v in sidecar["norm"].items()},
        weather_norm={s: {k: tuple(v) for k, v in w.items()} for s, w in sidecar["weather_norm"].items()},
        segments=tuple(tuple(seg) for seg in sidecar["segments"]),
        pad_mask=ranges_to_mask(sidecar["pad_ranges"]),
        metadata=sidecar.get("metadata", {}),
        removed_buildings=sidecar.get("removed_buildings", []),
        removed_columns=sidecar.get("removed_columns", []),
        segments_by_source=segs_by_source,
        pad_by_source=pads_by_source,
    )
