"""Shared fixtures: the canonical surrogate demand profile and minute builders."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from capflow import WeibullParams
from capflow.experiments import canonical_demand, theoretical_bounds
from capflow.pipeline import FlowInterval

T0 = datetime(2016, 9, 14, 6, 0, tzinfo=timezone.utc)


def make_minutes(speeds, intensities=None):
    """Contiguous one-minute intervals; a None speed marks an empty minute."""
    if intensities is None:
        intensities = [10] * len(speeds)
    minutes = []
    for i, (speed, intensity) in enumerate(zip(speeds, intensities)):
        empty = speed is None
        minutes.append(
            FlowInterval(
                start=T0 + timedelta(minutes=i),
                width=1,
                intensity=0 if empty else intensity,
                mean_speed=None if empty else float(speed),
                vehicle_count=0 if empty else max(1, intensity),
            )
        )
    return minutes


@pytest.fixture(scope="session")
def true_params():
    return WeibullParams(150.0, 6.5)


@pytest.fixture(scope="session")
def demand_profile(true_params):
    return canonical_demand(params=true_params)


@pytest.fixture(scope="session")
def bounds(demand_profile, true_params):
    return theoretical_bounds(demand_profile, true_params)
