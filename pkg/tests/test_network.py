from __future__ import annotations

import math

import pytest

from sim.network import (
    ChannelKind,
    ChannelSpec,
    DeliveryStatus,
    LinkLedger,
    Message,
    Network,
    default_backhaul,
    default_cv2x,
    default_fiveg,
    deliver,
)
from sim.simcore import RngStream


def _spec(**kw) -> ChannelSpec:
    base = dict(kind=ChannelKind.CV2X, base_latency_ms=20, jitter_min_ms=0, jitter_max_ms=0,
                loss_prob=0.0, coverage_m=300.0, bandwidth_Bps=1.5e6)
    base.update(kw)
    return ChannelSpec(**base)


def test_arrival_is_base_plus_jitter_within_bounds():
    spec = _spec(jitter_min_ms=3, jitter_max_ms=10)
    rng = RngStream(1, "net.cv2x")
    arrivals = set()
    for t in range(0, 5000, 50):
        d = deliver(Message("sor1", "sov-ego", t, 500, None), spec, (0, 0), (100, 0), rng)
        assert d.status is DeliveryStatus.DELIVERED
        arrivals.add(d.arrival - t)
    assert min(arrivals) >= 23
    assert max(arrivals) <= 30
    assert len(arrivals) > 1


def test_out_of_coverage_never_arrives():
    d = deliver(Message("a", "b", 0, 100, None), _spec(), (0, 0), (301, 0), RngStream(0, "x"))
    assert d.status is DeliveryStatus.OUT_OF_COVERAGE
    assert d.arrival is None


def test_certain_loss_drops_everything():
    rng = RngStream(0, "loss")
    spec = _spec(loss_prob=1.0)
    for t in range(10):
        assert deliver(Message("a", "b", t, 100, None), spec, (0, 0), (1, 0), rng).status is DeliveryStatus.DROPPED


def test_outage_overlapping_flight_drops_the_message():
    spec = _spec(base_latency_ms=20, outages=((1000, 2000),))
    rng = RngStream(0, "outage")
    # leaves before the outage but would land inside it
    assert deliver(Message("a", "b", 990, 100, None), spec, (0, 0), (1, 0), rng).status is DeliveryStatus.DROPPED
    assert deliver(Message("a", "b", 1500, 100, None), spec, (0, 0), (1, 0), rng).status is DeliveryStatus.DROPPED
    after = deliver(Message("a", "b", 2000, 100, None), spec, (0, 0), (1, 0), rng)
    assert after.status is DeliveryStatus.DELIVERED
    assert after.arrival == 2020
    assert spec.in_outage(960, 980) is False


def test_mean_latency_matches_base_plus_mean_jitter():
    spec = _spec(jitter_min_ms=3, jitter_max_ms=10)
    rng = RngStream(7, "net.cv2x")
    latencies = [
        deliver(Message("sor1", "sov-ego", t, 300, None), spec, (0, 0), (50, 0), rng).arrival - t
        for t in range(10_000)
    ]
    expected = 20 + (3 + 10) / 2
    assert abs(sum(latencies) / len(latencies) - expected) <= 0.05 * expected


def test_messages_lost_to_an_outage_leave_the_bucket_untouched():
    spec = _spec(bandwidth_Bps=1000.0, outages=((0, 100),))
    ledger = LinkLedger()
    rng = RngStream(0, "outage")
    for _ in range(5):
        lost = deliver(Message("a", "b", 50, 500, None), spec, (0, 0), (1, 0), rng, ledger)
        assert lost.status is DeliveryStatus.DROPPED
    assert ledger.links == {}
    assert ledger.max_rate_Bps() == 0
    after = deliver(Message("a", "b", 100, 500, None), spec, (0, 0), (1, 0), rng, ledger)
    assert after.status is DeliveryStatus.DELIVERED
    assert after.queue_delay_ms == 0
    assert after.arrival == 120


def test_token_bucket_queues_back_to_back_messages():
    spec = _spec(bandwidth_Bps=1000.0)
    ledger = LinkLedger()
    link = ("a", "b", ChannelKind.CV2X)
    assert ledger.account_bandwidth(link, Message("a", "b", 0, 500, None), spec) == 0
    # 500 bytes still queued at 1000 B/s -> 500 ms
    assert ledger.account_bandwidth(link, Message("a", "b", 0, 500, None), spec) == 500
    # after 600 ms, 400 bytes remain -> 400 ms
    assert ledger.account_bandwidth(link, Message("a", "b", 600, 10, None), spec) == 400


def test_queue_delay_rounds_up_and_links_are_independent():
    spec = _spec(bandwidth_Bps=3000.0)
    ledger = LinkLedger()
    ledger.account_bandwidth(("a", "b", ChannelKind.CV2X), Message("a", "b", 0, 1000, None), spec)
    assert ledger.account_bandwidth(("a", "b", ChannelKind.CV2X), Message("a", "b", 0, 1, None), spec) == 334
    assert ledger.account_bandwidth(("a", "c", ChannelKind.CV2X), Message("a", "c", 0, 1, None), spec) == 0


def test_ledger_reports_peak_per_second_rate():
    spec = _spec()
    ledger = LinkLedger()
    link = ("sor1", "sov", ChannelKind.CV2X)
    for t in range(0, 1000, 50):
        ledger.account_bandwidth(link, Message("sor1", "sov", t, 300, None), spec)
    ledger.account_bandwidth(link, Message("sor1", "sov", 1000, 300, None), spec)
    assert ledger.max_rate_Bps(ChannelKind.CV2X) == 6000
    assert ledger.max_rate_Bps(ChannelKind.FIVE_G) == 0


def test_network_counts_outcomes_per_channel():
    specs = {ChannelKind.CV2X: default_cv2x(), ChannelKind.FIVE_G: default_fiveg()}
    streams = {k: RngStream(5, f"net.{k.value}") for k in specs}
    net = Network(specs, streams)
    net.send(Message("a", "b", 0, 100, None), ChannelKind.CV2X, (0, 0), (10, 0))
    net.send(Message("a", "b", 0, 100, None), ChannelKind.CV2X, (0, 0), (1000, 0))
    net.send(Message("a", "b", 0, 100, None), ChannelKind.FIVE_G, (0, 0), (1e6, 0))

    assert net.stats[ChannelKind.CV2X].sent == 2
    assert net.stats[ChannelKind.CV2X].out_of_coverage == 1
    assert net.stats[ChannelKind.CV2X].bytes_delivered == 100
    assert net.stats[ChannelKind.FIVE_G].sent == 1


def test_default_channels():
    assert default_cv2x().mean_latency_ms == pytest.approx(26.5)
    assert math.isinf(default_fiveg().coverage_m)
    assert default_backhaul().bandwidth_Bps > default_cv2x().bandwidth_Bps


def test_invalid_channel_parameters_are_rejected():
    with pytest.raises(ValueError):
        _spec(jitter_min_ms=10, jitter_max_ms=5)
    with pytest.raises(ValueError):
        _spec(loss_prob=1.5)
    with pytest.raises(ValueError):
        _spec(bandwidth_Bps=0.0)
    with pytest.raises(ValueError):
        Message("a", "b", 0, 0, None)
