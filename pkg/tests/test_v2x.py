import math
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from v2xcollab.errors import BadMagic, BadVersion, ContractViolation, EncodingError, Truncated
from v2xcollab.geometry import Box, PointCloud, Pose
from v2xcollab.v2x import (
    DET_ENTRY_BYTES,
    DET_HEADER_BYTES,
    EARLY_HEADER_BYTES,
    EARLY_POINT_BYTES,
    DetectionMessage,
    EarlyMessage,
    MessageBus,
    decode_detection,
    decode_early,
    encode_detection,
    encode_early,
    publish,
    query,
)

f32 = st.floats(-1e4, 1e4, width=32, allow_nan=False)
pos32 = st.floats(0.125, 100, width=32)
yaw32 = st.floats(-3.0, 3.0, width=32)


@st.composite
def detection_messages(draw):
    n = draw(st.integers(0, 8))
    entries = []
    for _ in range(n):
        b = Box(
            (draw(f32), draw(f32), draw(f32)),
            (draw(pos32), draw(pos32), draw(pos32)),
            draw(yaw32),
            draw(st.floats(0, 1, width=32)),
            draw(st.integers(0, 255)),
        )
        entries.append((b, (draw(f32), draw(f32), draw(f32))))
    pose = Pose.from_yaw(draw(st.floats(-math.pi, math.pi)), (draw(f32), draw(f32), draw(f32)))
    return DetectionMessage(draw(st.integers(0, 255)), draw(st.floats(0, 1e6)), pose, draw(pos32), tuple(entries))


def random_detection(r: np.random.Generator) -> DetectionMessage:
    n = int(r.integers(0, 12))
    c = r.uniform(-100, 100, (n, 3)).astype(np.float32)
    s = r.uniform(0.1, 10, (n, 3)).astype(np.float32)
    yaw = r.uniform(-3.14, 3.14, n).astype(np.float32)
    score = r.random(n).astype(np.float32)
    f = r.normal(0, 2, (n, 3)).astype(np.float32)
    entries = tuple((Box(c[i], s[i], yaw[i], score[i], int(r.integers(256))), tuple(f[i])) for i in range(n))
    pose = Pose.from_yaw(r.uniform(-math.pi, math.pi), r.normal(0, 50, 3))
    return DetectionMessage(int(r.integers(256)), float(r.uniform(0, 100)), pose, float(np.float32(r.uniform(0.1, 1))), entries)


def random_early(r: np.random.Generator) -> EarlyMessage:
    n = int(r.integers(0, 50))
    pc = PointCloud(
        r.normal(0, 30, (n, 3)).astype(np.float32), r.random(n).astype(np.float32), r.random(n).astype(np.float32),
        "agent3", 0.0,
    )
    t = float(r.uniform(0, 100))
    pc = PointCloud(pc.positions, pc.intensity, pc.time_lag, "agent3", t)
    return EarlyMessage(3, t, Pose.from_yaw(r.uniform(-3, 3), r.normal(0, 5, 3)), pc)


def test_empty_detection_size():
    msg = DetectionMessage(1, 0.5, Pose.identity(), 0.4)
    assert len(encode_detection(msg)) == DET_HEADER_BYTES == 116


def test_hundred_entries():
    entries = tuple((Box((i, 0, 0), (1, 2, 1)), (0, 0, 0)) for i in range(100))
    data = encode_detection(DetectionMessage(1, 0.5, Pose.identity(), 0.4, entries))
    assert len(data) == 116 + 100 * 45
    assert len(data) / 1e6 < 0.01


def test_early_size():
    pc = PointCloud(np.zeros((30000, 3)), 0.5, 0.0, "agent2", 1.0)
    assert len(encode_early(EarlyMessage(2, 1.0, Pose.identity(), pc))) == 110 + 4 + 600000


def test_roundtrip_ten_thousand_cases():
    r = np.random.default_rng(2024)
    for _ in range(10_000):
        m = random_detection(r)
        assert decode_detection(encode_detection(m)) == m
    for _ in range(10_000):
        m = random_early(r)
        assert decode_early(encode_early(m)) == m


@given(detection_messages())
def test_detection_roundtrip(m):
    assert decode_detection(encode_detection(m)) == m


@given(st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_sizes_are_affine(n, seed):
    r = np.random.default_rng(seed)
    entries = tuple((Box(r.random(3), (1, 1, 1)), (0, 0, 0)) for _ in range(n))
    assert len(encode_detection(DetectionMessage(0, 0.0, Pose.identity(), 1.0, entries))) == DET_HEADER_BYTES + n * DET_ENTRY_BYTES
    pc = PointCloud(r.random((n, 3)), 0.1, 0.0, "agent0", 0.0)
    assert len(encode_early(EarlyMessage(0, 0.0, Pose.identity(), pc))) == EARLY_HEADER_BYTES + n * EARLY_POINT_BYTES


def test_empty_early_roundtrip():
    m = EarlyMessage(4, 2.0, Pose.identity(), PointCloud.empty("agent4", 2.0))
    assert decode_early(encode_early(m)) == m


class TestParseErrors:
    def data(self):
        entries = tuple((Box((i, 0, 0), (1, 2, 1)), (0, 0, 0)) for i in range(3))
        return encode_detection(DetectionMessage(1, 0.5, Pose.identity(), 0.4, entries))

    def test_bad_magic(self):
        d = bytearray(self.data())
        d[0] ^= 0xFF
        with pytest.raises(BadMagic, match="bad magic"):
            decode_detection(bytes(d))

    def test_wrong_kind(self):
        with pytest.raises(BadMagic):
            decode_early(self.data())

    def test_bad_version(self):
        d = bytearray(self.data())
        d[4] = 99
        with pytest.raises(BadVersion):
            decode_detection(bytes(d))

    @pytest.mark.parametrize("cut", [0, 3, 50, DET_HEADER_BYTES - 1, DET_HEADER_BYTES + DET_ENTRY_BYTES])
    def test_truncated(self, cut):
        with pytest.raises(Truncated, match="truncated"):
            decode_detection(self.data()[:cut])

    def test_count_overflow(self):
        entries = ((Box((0, 0, 0), (1, 1, 1)), (0, 0, 0)),) * 65536
        with pytest.raises(EncodingError):
            encode_detection(DetectionMessage(1, 0.5, Pose.identity(), 0.4, entries))

    def test_agent_id_overflow(self):
        with pytest.raises(EncodingError):
            encode_detection(DetectionMessage(256, 0.5, Pose.identity(), 0.4))


def msg(agent, t):
    return DetectionMessage(agent, t, Pose.identity(), 0.4)


class TestBus:
    def test_empty(self):
        assert query(MessageBus(), 1.0) == {}

    def test_latest_prior(self):
        bus = MessageBus()
        publish(bus, msg(2, 0.0))
        publish(bus, msg(2, 0.2))
        assert query(bus, 0.3)[2].t_i == 0.2
        assert query(bus, 0.1)[2].t_i == 0.0

    def test_latency(self):
        bus = MessageBus()
        rec = publish(bus, msg(2, 1.0), latency=0.1)
        assert rec.available_from == pytest.approx(1.1)
        assert query(bus, 1.05) == {}
        assert query(bus, 1.1)[2].t_i == 1.0

    def test_zero_latency(self):
        bus = MessageBus()
        publish(bus, msg(2, 1.0))
        assert 2 in query(bus, 1.0)

    def test_out_of_order(self):
        bus = MessageBus()
        publish(bus, msg(2, 1.0))
        with pytest.raises(ContractViolation):
            publish(bus, msg(2, 0.5))

    def test_querier_excluded(self):
        bus = MessageBus()
        publish(bus, msg(1, 0.0))
        publish(bus, msg(2, 0.0))
        assert list(query(bus, 1.0, querier=1)) == [2]

    def test_concurrent_publishers(self):
        bus = MessageBus()
        threads = [
            threading.Thread(target=lambda a=a: [bus.publish(msg(a, 0.2 * k)) for k in range(50)]) for a in range(6)
        ]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        got = bus.query(100.0)
        assert sorted(got) == list(range(6)) and len(bus) == 300

    @given(
        st.lists(st.tuples(st.integers(0, 3), st.floats(0, 10), st.floats(0, 0.5)), max_size=30),
        st.floats(0, 12),
        st.floats(0, 2),
    )
    def test_monotone_and_never_future(self, pubs, t, dt):
        bus = MessageBus()
        last = {}
        for a, ti, lat in sorted(pubs, key=lambda p: p[1]):
            bus.publish(msg(a, ti), lat)
            last[a] = ti
        early, late = bus.query(t), bus.query(t + dt)
        assert all(m.t_i <= t for m in early.values())
        for a, m in early.items():
            assert late[a].t_i >= m.t_i
