import pytest

from ptxlink import frames
from ptxlink.arq import ArqChannel, ArqEndpoint, ChannelClosed, DeliveryFailed, send_reliable
from ptxlink.linkmodel import DelayDist, Link, LinkProfile
from ptxlink.seeding import RngHub
from ptxlink.sim import Scheduler


def det_profile(median_ms, per_byte_us=0.0, loss=0.0, corrupt=0.0):
    return LinkProfile("det", DelayDist(median_ms * 1000.0, 0.0), per_byte_us,
                       loss_prob=loss, corrupt_prob=corrupt)


def make_channel(profile, seed=1, reverse_profile=None, **kw):
    sched = Scheduler()
    hub = RngHub(seed)
    fwd = Link("ab", profile, sched, hub.rng("ab.d"), hub.rng("ab.e"))
    rev = Link("ba", reverse_profile or profile, sched, hub.rng("ba.d"), hub.rng("ba.e"))
    channel = ArqChannel(sched, fwd, rev, record_delivered=True, **kw)
    return sched, channel


class ScriptedTransport:
    """Drops transmissions whose 1-based index is in ``drop``; duplicates
    those in ``dupe``; fixed delay otherwise."""

    def __init__(self, scheduler, delay_us, drop=(), dupe=()):
        self.scheduler = scheduler
        self.delay_us = delay_us
        self.drop = set(drop)
        self.dupe = set(dupe)
        self.calls = 0

    def delay_hint_us(self, size):
        return self.delay_us

    def transmit(self, data, deliver, seq=0, msg_type=0):
        self.calls += 1
        if self.calls in self.drop:
            return
        self.scheduler.schedule_in(lambda: deliver(data), self.delay_us)
        if self.calls in self.dupe:
            self.scheduler.schedule_in(lambda: deliver(data), self.delay_us + 1)


def scripted_channel(sched, delay_us, drop=(), dupe=(), **kw):
    fwd = ScriptedTransport(sched, delay_us, drop=drop, dupe=dupe)
    rev = ScriptedTransport(sched, delay_us)
    channel = ArqChannel(sched, fwd, rev, record_delivered=True, **kw)
    return channel, fwd


def test_lossless_deterministic_acked_after_one_round_trip():
    d_ms = 7.0
    sched, channel = make_channel(det_profile(d_ms))
    handle = send_reliable(channel.a, sched, frames.COMMAND, b"go")
    assert handle.status == "acked"
    assert handle.completed_at == 2 * int(d_ms * 1000)
    assert channel.b.delivered == [(frames.COMMAND, b"go")]
    assert channel.a.tx_log[0]["attempts"] == 1


def test_first_copy_lost_retransmit_at_timeout():
    # deterministic link d; timeout T = 3d from the delay hint
    d_us = 10_000
    sched = Scheduler()
    channel, fwd = scripted_channel(sched, d_us, drop={1})
    handle = send_reliable(channel.a, sched, frames.COMMAND, b"x")
    T = 3 * d_us
    assert handle.status == "acked"
    assert handle.completed_at == T + 2 * d_us
    assert channel.a.tx_log[0]["attempts"] == 2
    assert channel.b.delivered == [(frames.COMMAND, b"x")]


def test_delivery_failed_after_max_retries_exhausted():
    sched, channel = make_channel(det_profile(5.0, loss=1.0), max_retries=3)
    with pytest.raises(DeliveryFailed):
        send_reliable(channel.a, sched, frames.COMMAND, b"x")
    assert channel.a.tx_log[0]["attempts"] == 4  # 1 original + 3 retries
    assert channel.a.tx_log[0]["status"] == "failed"
    assert channel.a.closed


def test_send_on_closed_channel_rejected():
    sched, channel = make_channel(det_profile(5.0, loss=1.0), max_retries=1)
    with pytest.raises(DeliveryFailed):
        send_reliable(channel.a, sched, frames.COMMAND, b"x")
    with pytest.raises(ChannelClosed):
        channel.a.send_message(frames.COMMAND, b"y")
    channel.reconnect()
    handle = channel.a.send_message(frames.COMMAND, b"z")  # still lossy link
    assert handle.status == "in_flight"


def test_duplicate_delivery_acked_but_delivered_once():
    sched = Scheduler()
    channel, fwd = scripted_channel(sched, 1000, dupe={1})
    handle = send_reliable(channel.a, sched, frames.COMMAND, b"once")
    sched.run()
    assert handle.status == "acked"
    assert channel.b.delivered == [(frames.COMMAND, b"once")]
    assert channel.b.rx_log["duplicates"] == 1


def test_multi_frame_message_reassembled_in_order():
    sched, channel = make_channel(det_profile(2.0, per_byte_us=0.1), window=4, mtu=100)
    payload = bytes(range(256)) * 4  # 1024 bytes -> 11 chunks
    handle = send_reliable(channel.a, sched, frames.TELEMETRY, payload)
    assert handle.status == "acked"
    assert channel.b.delivered == [(frames.TELEMETRY, payload)]
    assert handle.last_seq - handle.first_seq + 1 == 11


def test_stop_and_wait_default_window_is_one():
    sched, channel = make_channel(det_profile(1.0))
    assert channel.a.window == 1
    payload = b"z" * 3000  # 3 chunks at default mtu 1400
    handle = send_reliable(channel.a, sched, frames.TELEMETRY, payload)
    assert handle.status == "acked"
    # stop-and-wait: 3 sequential round trips of 2 ms each
    assert handle.completed_at == 3 * 2 * 1000
    assert channel.b.delivered == [(frames.TELEMETRY, payload)]


def test_exactly_once_in_order_under_random_loss_and_corruption():
    for trial in range(40):
        profile = det_profile(1.0, loss=0.25, corrupt=0.15)
        sched, channel = make_channel(profile, seed=1000 + trial,
                                      window=4, max_retries=60, mtu=64)
        sent = []
        for i in range(5):
            payload = bytes([i]) * (i * 40 + 1)
            sent.append((frames.TELEMETRY, payload))
            channel.a.send_message(frames.TELEMETRY, payload)
        sched.run()
        assert channel.b.delivered == sent, f"trial {trial} diverged"


def test_corrupted_frames_not_acked_then_recovered():
    sched, channel = make_channel(det_profile(1.0, corrupt=1.0), max_retries=2)
    with pytest.raises(DeliveryFailed):
        send_reliable(channel.a, sched, frames.COMMAND, b"x")
    assert channel.b.rx_log["corrupted"] >= 1
    assert channel.b.delivered == []


def test_rtt_estimate_converges_to_deterministic_round_trip():
    d_ms = 4.0
    sched, channel = make_channel(det_profile(d_ms))
    for _ in range(5):
        send_reliable(channel.a, sched, frames.COMMAND, b"ping")
    assert channel.a.srtt_us == pytest.approx(2 * d_ms * 1000, rel=1e-9)
    # timeout = 3x estimated one-way delay
    assert channel.a._timeout_us() == pytest.approx(3 * d_ms * 1000, rel=1e-9)


def test_tx_log_partitions_into_terminal_states():
    sched, channel = make_channel(det_profile(1.0, loss=0.3), seed=9,
                                  window=2, max_retries=40, mtu=50)
    channel.a.send_message(frames.TELEMETRY, b"q" * 400)
    sched.run()
    states = {entry["status"] for entry in channel.a.tx_log.values()}
    assert states == {"acked"}
    attempts = sum(e["attempts"] for e in channel.a.tx_log.values())
    assert attempts >= len(channel.a.tx_log)


def test_ack_loss_triggers_retransmit_but_single_delivery():
    # forward path perfect, reverse path drops the first ack
    sched = Scheduler()
    fwd = ScriptedTransport(sched, 1000)
    rev = ScriptedTransport(sched, 1000, drop={1})
    channel = ArqChannel(sched, fwd, rev, record_delivered=True)
    handle = send_reliable(channel.a, sched, frames.COMMAND, b"only-once")
    sched.run()
    assert handle.status == "acked"
    assert channel.b.delivered == [(frames.COMMAND, b"only-once")]
    assert channel.b.rx_log["duplicates"] == 1


def test_retransmitted_frames_carry_the_flag():
    sched = Scheduler()
    captured = []

    class TapTransport(ScriptedTransport):
        def transmit(self, data, deliver, seq=0, msg_type=0):
            if msg_type != frames.ACK:
                captured.append(data)
            super().transmit(data, deliver, seq=seq, msg_type=msg_type)

    fwd = TapTransport(sched, 1000, drop={1})
    rev = ScriptedTransport(sched, 1000)
    channel = ArqChannel(sched, fwd, rev)
    send_reliable(channel.a, sched, frames.COMMAND, b"again")
    assert len(captured) == 2
    first, second = (frames.decode_frame(d) for d in captured)
    assert not first.retransmission
    assert second.retransmission
