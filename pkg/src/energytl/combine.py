"""Dataset truncation and combination for multi-source training corpora.

Three truncation kinds mirror how derived datasets differ from their
parents: dropping weather feature columns, keeping a prefix of buildings,
and zero-padding excluded time ranges while preserving the hourly grid.

Combining datasets unions their building columns under provenance-tagged
keys (``member:building``); the weather feature space is the union of the
member schemas, with absent features zero-filled and flagged through a
per-feature presence-mask channel at window time. Each member keeps its
own split layout, so windows generated from a combined corpus respect the
member's train/val/test (and padding) geometry.
"""

from dataclasses import dataclass, replace

import numpy as np

from .data import PAD_ROLE, SPLIT_ROLES, CleanDataset, FeatureSchema
from .errors import ConfigError, DataError

# BDGP2 site registry: building count, ASHRAE climate zone, weather features
BDGP2_SITES = {
    "Bear": (73, "3C", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Bobcat": (7, "5B", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Bull": (41, "2A", ("airTemperature", "dewTemperature", "seaLvlPressure")),
    "Cockatoo": (1, "6A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Crow": (4, "6A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Eagle": (87, "4A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Fox": (127, "2B", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Gator": (29, "2A", ()),
    "Hog": (24, "6A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Lamb": (41, "4A", ("airTemperature", "dewTemperature", "windDirection", "windSpeed")),
    "Moose": (9, "6A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Mouse": (3, "4A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Peacock": (36, "5A", ("airTemperature", "dewTemperature", "seaLvlPressure")),
    "Rat": (251, "4A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Robin": (50, "4A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed")),
    "Wolf": (36, "5A", ("airTemperature", "dewTemperature", "seaLvlPressure", "windDirection", "windSpeed", "cloudCoverage")),
}

CATEGORY_TAGS = (
    "unmodified-combined",
    "uniform",
    "climate-variant",
    "building-count-variant",
    "weather-feature-variant",
    "temporal-range-variant",
    "full-ensemble",
)


@dataclass(frozen=True)
class FeatureTruncate:
    """Drop the named weather feature columns."""

    drop: tuple

    kind = "feature"


@dataclass(frozen=True)
class BuildingTruncate:
    """Keep the first ``keep_count`` buildings in column order."""

    keep_count: int

    kind = "building"


@dataclass(frozen=True)
class TemporalTruncate:
    """Ordered (role, fraction) segments; ``pad`` segments are zeroed.

    Roles are ``train``, ``pad`` (zero-padded, excluded from windows),
    ``val`` and ``test``. Fractions must sum to 1 and train/val/test must
    each appear exactly once.
    """

    layout: tuple

    kind = "temporal"

    def __post_init__(self):
        roles = [role for role, _ in self.layout]
        fracs = [frac for _, frac in self.layout]
        for role in roles:
            if role not in SPLIT_ROLES + (PAD_ROLE,):
                raise ConfigError(f"unknown segment role {role!r}")
        for role in SPLIT_ROLES:
            if roles.count(role) != 1:
                raise ConfigError(f"layout must contain exactly one {role!r} segment")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"layout fractions must sum to 1, got {fracs}")
        if any(f < 0 for f in fracs):
            raise ConfigError("layout fractions must be nonnegative")


@dataclass(frozen=True)
class CombinationSpec:
    """Recipe for a combined dataset: members plus a category tag."""

    combo_id: str
    members: tuple  # ((dataset_id, directive-or-None), ...)
    category: str = "unmodified-combined"

    def __post_init__(self):
        if not self.members:
            raise ConfigError(f"combination {self.combo_id!r} has no members")
        if self.category not in CATEGORY_TAGS:
            raise ConfigError(f"unknown category {self.category!r}; expected one of {CATEGORY_TAGS}")
        ids = [m[0] for m in self.members]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"combination {self.combo_id!r} lists a member twice")

    def member_ids(self):
        return tuple(m[0] for m in self.members)


def _layout_boundaries(layout, n_rows):
    bounds = []
    cum = 0.0
    start = 0
    for i, (role, frac) in enumerate(layout):
        cum += frac
        end = n_rows if i == len(layout) - 1 else int(np.floor(cum * n_rows))
        bounds.append((role, start, end))
        start = end
    return tuple(bounds)


def truncate(ds, directive):
    """Apply one truncation directive to a cleaned dataset."""
    if directive is None:
        return ds
    if directive.kind == "feature":
        missing = [f for f in directive.drop if f not in ds.schema]
        if missing:
            raise ConfigError(f"cannot drop features absent from {ds.dataset_id!r}: {missing}")
        weather = {
            src: {f: s for f, s in feats.items() if f not in directive.drop}
            for src, feats in ds.weather_by_source.items()
        }
        wnorm = {
            src: {f: v for f, v in feats.items() if f not in directive.drop}
            for src, feats in ds.weather_norm.items()
        }
        schema = FeatureSchema(tuple(f for f in ds.schema.features if f not in directive.drop))
        return replace(ds, weather_by_source=weather, weather_norm=wnorm, schema=schema)

    if directive.kind == "building":
        if directive.keep_count < 1 or directive.keep_count > ds.building_count:
            raise ConfigError(
                f"keep_count {directive.keep_count} out of range for "
                f"{ds.dataset_id!r} with {ds.building_count} buildings"
            )
        kept = list(ds.buildings)[: directive.keep_count]
        return replace(
            ds,
            buildings={k: ds.buildings[k] for k in kept},
            building_source={k: ds.building_source[k] for k in kept},
            norm={k: ds.norm[k] for k in kept},
        )

    if directive.kind == "temporal":
        return _temporal_truncate(ds, directive)
    raise ConfigError(f"unknown truncation directive {directive!r}")


def _temporal_truncate(ds, directive):
    if ds.is_combined:
        raise ConfigError("temporal truncation applies to member datasets before combining")
    segments = _layout_boundaries(directive.layout, ds.n_rows)
    train_range = next((s, e) for role, s, e in segments if role == "train")
    pad_ranges = [(s, e) for role, s, e in segments if role == PAD_ROLE and e > s]

    same_train = train_range == ds.split_range("train")
    if not pad_ranges and same_train:
        return replace(ds, segments=segments)

    # The train segment moved: re-standardize every series on the new
    # train rows (using pre-padding values) so no statistic leaks across
    # split boundaries, then zero the excluded rows.
    t0, t1 = train_range
    buildings, norm = {}, {}
    for name, series in ds.buildings.items():
        raw = series * ds.norm[name][1] + ds.norm[name][0]
        mean = float(raw[t0:t1].mean())
        std = float(raw[t0:t1].std())
        if std == 0.0:
            raise DataError(f"series {name!r} is constant on the truncated train segment")
        buildings[name] = (raw - mean) / std
        norm[name] = (mean, std)
    weather_by_source, weather_norm = {}, {}
    for src, feats in ds.weather_by_source.items():
        weather_by_source[src], weather_norm[src] = {}, {}
        for fname, series in feats.items():
            old_mean, old_std = ds.weather_norm[src][fname]
            raw = series * old_std + old_mean
            mean = float(raw[t0:t1].mean())
            std = float(raw[t0:t1].std())
            if std == 0.0:
                std = 1.0
            weather_by_source[src][fname] = (raw - mean) / std
            weather_norm[src][fname] = (mean, std)

    pad_mask = np.zeros(ds.n_rows, dtype=bool)
    for s, e in pad_ranges:
        pad_mask[s:e] = True
    for series in buildings.values():
        series[pad_mask] = 0.0
    for feats in weather_by_source.values():
        for series in feats.values():
            series[pad_mask] = 0.0

    return replace(
        ds,
        buildings=buildings,
        norm=norm,
        weather_by_source=weather_by_source,
        weather_norm=weather_norm,
        segments=segments,
        pad_mask=pad_mask,
    )


def combine(spec, registry):
    """Materialize a CombinationSpec into one combined CleanDataset.

    Members must share an identical hourly timestamp grid; building keys
    are prefixed with the member id, weather panels are kept per member
    and the schema is the union of the member schemas.
    """
    members = []
    for dataset_id, directive in spec.members:
        if dataset_id not in registry:
            raise ConfigError(f"combination {spec.combo_id!r} references unknown dataset {dataset_id!r}")
        members.append((dataset_id, truncate(registry[dataset_id], directive)))

    base_ts = members[0][1].timestamps
    for dataset_id, ds in members[1:]:
        if len(ds.timestamps) == len(base_ts) and (ds.timestamps == base_ts).all():
            continue
        lo = max(ds.timestamps[0], base_ts[0])
        hi = min(ds.timestamps[-1], base_ts[-1])
        if lo > hi:
            raise DataError(f"member {dataset_id!r} has a disjoint timestamp range")
        raise DataError(
            f"member {dataset_id!r} timestamp grid differs from {members[0][0]!r}; "
            "members must be aligned on the shared hourly range before combining"
        )

    buildings, building_source, norm = {}, {}, {}
    weather_by_source, weather_norm = {}, {}
    segments_by_source, pad_by_source = {}, {}
    schema = FeatureSchema(())
    combined_pad = np.zeros(len(base_ts), dtype=bool)
    for member_id, ds in members:
        for name, series in ds.buildings.items():
            src = ds.building_source[name]
            key = name if name.startswith(f"{src}:") else f"{src}:{name}"
            if key in buildings:
                raise ConfigError(f"duplicate building key {key!r} while combining {spec.combo_id!r}")
            buildings[key] = series
            building_source[key] = src
            norm[key] = ds.norm[name]
        member_segs = ds.segments_by_source or {}
        member_pads = ds.pad_by_source or {}
        for src, feats in ds.weather_by_source.items():
            weather_by_source[src] = dict(feats)
            weather_norm[src] = dict(ds.weather_norm[src])
            segments_by_source[src] = member_segs.get(src, ds.segments)
            pad_by_source[src] = member_pads.get(src, ds.pad_mask)
        schema = schema.union(ds.schema)
        combined_pad |= ds.pad_mask

    first = members[0][1]
    return CleanDataset(
        dataset_id=spec.combo_id,
        timestamps=base_ts,
        buildings=buildings,
        building_source=building_source,
        weather_by_source=weather_by_source,
        schema=schema,
        norm=norm,
        weather_norm=weather_norm,
        segments=first.segments,
        pad_mask=combined_pad,
        metadata={"category": spec.category, "members": list(spec.member_ids())},
        segments_by_source=segments_by_source,
        pad_by_source=pad_by_source,
    )


def build_full_ensemble(registry, combo_id="FullEnsemble", expected_members=None):
    """Combine every dataset in the registry.

    ``expected_members`` (when given) must all be present; the resulting
    building count is the sum over members.
    """
    if expected_members is not None:
        missing = [m for m in expected_members if m not in registry]
        if missing:
            raise ConfigError(f"full ensemble is missing member datasets: {missing}")
    if not registry:
        raise ConfigError("cannot build a full ensemble from an empty registry")
    spec = CombinationSpec(
        combo_id=combo_id,
        members=tuple((name, None) for name in registry),
        category="full-ensemble",
    )
    return combine(spec, registry)
