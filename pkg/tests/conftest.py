"""Shared fixtures: seeded synthetic sessions and small hand-built streams."""

from pathlib import Path

import numpy as np
import pytest

from impactlab.classify import classify_market
from impactlab.constants import EventKind, Side
from impactlab.events import OrderEvent, write_events
from impactlab.replay import replay
from impactlab.synth import MarketConfig, generate


def make_event(ts, stock, kind, side, price, volume, order_id) -> OrderEvent:
    """OrderEvent from plain values, kinds and sides by name."""
    return OrderEvent(ts, stock, EventKind(kind), Side(side), price, volume, order_id)


@pytest.fixture
def event():
    return make_event


@pytest.fixture(scope="session")
def small_market() -> MarketConfig:
    """Four stocks, two minutes, self impact 2 ticks and cross impact 1 tick."""
    return MarketConfig.build(
        4,
        120_000,
        self_impact=2.0,
        cross_impact=1.0,
        trade_intensity=2.0,
        quote_intensity=6.0,
        seed=7,
    )


@pytest.fixture(scope="session")
def small_events(small_market):
    return generate(small_market)


@pytest.fixture(scope="session")
def small_replays(small_events):
    return replay(small_events)


@pytest.fixture(scope="session")
def small_classification(small_replays, small_market):
    return classify_market(small_replays, small_market.symbols)


@pytest.fixture(scope="session")
def pipeline_market() -> MarketConfig:
    """Eight stocks: enough singular-vector entries for every distribution fit."""
    return MarketConfig.build(
        8,
        60_000,
        self_impact=2.0,
        cross_impact=1.0,
        trade_intensity=2.0,
        quote_intensity=4.0,
        seed=11,
    )


@pytest.fixture
def pipeline_config_file(tmp_path: Path, pipeline_market: MarketConfig) -> Path:
    """A pipeline config over one synthetic day, written next to its event file."""
    write_events(tmp_path / "day1.csv", generate(pipeline_market))
    text = "\n".join(
        [
            "# synthetic single-day run",
            "events = day1.csv",
            f"universe = {', '.join(pipeline_market.symbols)}",
            "null_replicates = 4",
            "output_dir = bundle",
            "seed = 5",
            "workers = 2",
            "",
        ]
    )
    path = tmp_path / "pipeline.conf"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
