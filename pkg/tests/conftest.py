"""Shared synthetic-data builders for the test suite."""

import numpy as np
import pytest

from energytl.data import RawDataset, standardize, split_chronological

START = np.datetime64("2016-01-01T00:00:00", "s")
HOUR = np.timedelta64(3600, "s")


def hourly_timestamps(n_rows, start=START):
    return start + np.arange(n_rows) * HOUR


def synth_raw(dataset_id, n_rows, n_buildings, features=("airTemperature",), seed=0,
              noise=0.1, start=START):
    """Sine-plus-noise load panel with daily and weekly structure."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_rows)
    buildings = {}
    for i in range(n_buildings):
        phase = rng.uniform(0.0, 2 * np.pi)
        daily = rng.uniform(0.5, 2.0) * np.sin(2 * np.pi * t / 24.0 + phase)
        weekly = 0.5 * np.sin(2 * np.pi * t / 168.0)
        scale = rng.uniform(5.0, 50.0)
        buildings[f"b{i}"] = scale * (3.0 + daily + weekly + noise * rng.normal(size=n_rows))
    weather = {
        f: 10.0 + 5.0 * np.sin(2 * np.pi * t / 24.0 + j) + 0.2 * rng.normal(size=n_rows)
        for j, f in enumerate(features)
    }
    return RawDataset(dataset_id, hourly_timestamps(n_rows, start), buildings, weather)


def synth_clean(dataset_id, n_rows=240, n_buildings=2, features=("airTemperature",), seed=0,
                fractions=(0.70, 0.10, 0.20), **kwargs):
    bounds = split_chronological(n_rows, *fractions)
    return standardize(synth_raw(dataset_id, n_rows, n_buildings, features, seed, **kwargs), bounds)


@pytest.fixture
def toy_registry():
    """Three small cleaned datasets with overlapping feature schemas."""
    return {
        "SiteA": synth_clean("SiteA", 240, 2, ("airTemperature", "dewTemperature"), seed=11),
        "SiteB": synth_clean("SiteB", 240, 2, ("airTemperature",), seed=22),
        "SiteC": synth_clean("SiteC", 240, 3, ("airTemperature", "dewTemperature", "windSpeed"), seed=33),
    }


def write_csv(path, timestamps, columns, missing=()):
    """Write a raw CSV fixture; ``missing`` lists (row, column-name) blanks."""
    names = list(columns)
    blank = set(missing)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestamp," + ",".join(names) + "\n")
        stamps = np.datetime_as_string(timestamps, unit="s")
        for i in range(len(timestamps)):
            cells = []
            for name in names:
                cells.append("" if (i, name) in blank else repr(float(columns[name][i])))
            fh.write(stamps[i] + "," + ",".join(cells) + "\n")
    return path
